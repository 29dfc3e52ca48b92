pub mod curve;
pub mod harness;
pub mod mc;
pub mod momentum;
pub mod parallelogram;
pub mod rect;
pub mod scalar;
pub mod sectorization;
pub mod vec2;

pub use curve::{make_curve, CurveError, CurveSpec, FermiCurve};
pub use harness::{emit_plotdata, run_suite, ExperimentConfig, SuiteResult};
pub use rect::OrientedRect;
pub use vec2::Vec2;

pub type Curve = FermiCurve<f64>;
pub type CurveF32 = FermiCurve<f32>;
pub type Point = Vec2<f64>;
pub type Rect = OrientedRect<f64>;
pub type Sectors = sectorization::Sectorization<f64>;
