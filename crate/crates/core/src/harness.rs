//! Experiment configuration, suite orchestration and report output.
//!
//! A suite is a fixed list of [`Check`]s. Each check runs on every configured
//! curve and produces a [`CheckResult`] plus zero or more [`SweepTable`]s that
//! [`emit_plotdata`] writes as CSV.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::curve::{make_curve, CurveSpec, FermiCurve};
use crate::mc::chunk_rng;
use crate::momentum::{
    enumerate_cons, enumerate_mom, loglog_fit, minkowski_feasible, rects_intersect, Calibration,
    ConsQuery, CountReport, MomQuery, DEFAULT_MAX_TUPLES,
};
use crate::parallelogram::{
    area_formula_check, jacobian_sin_theta, measure_ratio, preimage_count,
    preimage_count_with_grid, AntipodalWindow, ParamRect, RegionRect, DEFAULT_GRID, MIN_SAMPLES,
};
use crate::rect::OrientedRect;
use crate::scalar::angle_diff;
use crate::sectorization::{
    anisotropic_sectorization, validate_sectorization, Scale, Sectorization,
};
use crate::vec2::Vec2;

const INVOLUTION_TOL: f64 = 1e-9;
const PARALLEL_TOL: f64 = 1e-9;
const GRAPH_TOL: f64 = 1e-4;
const GRAPH_STEP: f64 = 1e-3;
const MONOTONE_STEP: f64 = 1e-3;
const JACOBIAN_TOL: f64 = 1e-6;
const JACOBIAN_STEP: f64 = 1e-5;
const AREA_FLOOR: f64 = 0.02;
const AREA_SIGMAS: f64 = 3.0;
/// Regions for the area check keep `|sin θ|` above this on a 17 × 17 grid.
const AREA_MIN_SIN: f64 = 0.05;
const MAX_PREIMAGES: usize = 4;
const MAX_DEGENERATE_FRACTION: f64 = 0.01;
const MIN_STABLE_FRACTION: f64 = 0.99;
/// Query annulus for preimage counts: `Q_INNER <= |q| <= Q_OUTER * r_max`.
pub const Q_INNER: f64 = 0.1;
pub const Q_OUTER: f64 = 1.9;
const MEASURE_SLOPE: f64 = -1.0;
const MEASURE_SLOPE_TOL: f64 = 0.15;
const MOM_SPREAD: f64 = 2.0;
const MOM_EXPONENT_N2: (f64, f64) = (1.0, 0.3);
const MOM_EXPONENT_N3: (f64, f64) = (3.0, 0.5);
const CONS_EXPONENT: (f64, f64) = (0.5, 0.15);
const FEASIBILITY_BAND: f64 = 1e-9;
/// Tolerance used when solving for the closing momenta of a configuration.
const CONFIG_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("could not parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{0}")]
    Setup(String),
    #[error("{context}: {source}")]
    Module {
        context: String,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        HarnessError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Errors caused by the configuration rather than by a run.
    pub fn is_config(&self) -> bool {
        matches!(self, HarnessError::Config { .. } | HarnessError::Parse(_))
    }
}

trait Context<T> {
    fn context<F: FnOnce() -> String>(self, what: F) -> Result<T, HarnessError>;
}

impl<T, E: std::error::Error + Send + Sync + 'static> Context<T> for Result<T, E> {
    fn context<F: FnOnce() -> String>(self, what: F) -> Result<T, HarnessError> {
        self.map_err(|e| HarnessError::Module {
            context: what(),
            source: Box::new(e),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Geometry,
    Sectorization,
    Parallelogram,
    Measure,
    Mom,
    Cons,
    #[default]
    All,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Geometry,
        Suite::Sectorization,
        Suite::Parallelogram,
        Suite::Measure,
        Suite::Mom,
        Suite::Cons,
        Suite::All,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Geometry => "geometry",
            Suite::Sectorization => "sectorization",
            Suite::Parallelogram => "parallelogram",
            Suite::Measure => "measure",
            Suite::Mom => "mom",
            Suite::Cons => "cons",
            Suite::All => "all",
        }
    }

    pub fn checks(self) -> &'static [Check] {
        use Check::*;
        match self {
            Suite::Geometry => &[GeometryInvariants, JacobianIdentity],
            Suite::Sectorization => &[SectorizationInvariants],
            Suite::Parallelogram => &[AreaFormula, ParallelogramBound],
            Suite::Measure => &[MeasureScaling],
            Suite::Mom => &[MomBoundedness, MomExponent, FeasibilityOracle],
            Suite::Cons => &[ConsExponent],
            Suite::All => &Check::ALL,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| format!("unknown suite `{s}`"))
    }
}

/// Named checks, numbered by acceptance criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Check {
    GeometryInvariants = 1,
    JacobianIdentity = 2,
    AreaFormula = 3,
    ParallelogramBound = 4,
    MeasureScaling = 5,
    MomBoundedness = 6,
    MomExponent = 7,
    ConsExponent = 8,
    SectorizationInvariants = 9,
    FeasibilityOracle = 10,
}

impl Check {
    pub const ALL: [Check; 10] = [
        Check::GeometryInvariants,
        Check::JacobianIdentity,
        Check::AreaFormula,
        Check::ParallelogramBound,
        Check::MeasureScaling,
        Check::MomBoundedness,
        Check::MomExponent,
        Check::ConsExponent,
        Check::SectorizationInvariants,
        Check::FeasibilityOracle,
    ];

    pub fn criterion(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Check::GeometryInvariants => "geometry_invariants",
            Check::JacobianIdentity => "jacobian_identity",
            Check::AreaFormula => "area_formula",
            Check::ParallelogramBound => "parallelogram_bound",
            Check::MeasureScaling => "measure_scaling",
            Check::MomBoundedness => "mom_boundedness",
            Check::MomExponent => "mom_exponent",
            Check::ConsExponent => "cons_exponent",
            Check::SectorizationInvariants => "sectorization_invariants",
            Check::FeasibilityOracle => "feasibility_oracle",
        }
    }

    /// Wall-clock budget in seconds for the default configuration.
    pub fn budget_s(self) -> f64 {
        match self {
            Check::GeometryInvariants => 10.0,
            Check::JacobianIdentity => 20.0,
            Check::AreaFormula => 60.0,
            Check::ParallelogramBound => 120.0,
            Check::MeasureScaling => 120.0,
            Check::MomBoundedness => 300.0,
            Check::MomExponent => 600.0,
            Check::ConsExponent => 600.0,
            Check::SectorizationInvariants => 5.0,
            Check::FeasibilityOracle => 60.0,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One curve of the experiment, also accepted as a string such as
/// `circle:1`, `ellipse:2,1` or `radial_series:1;3,0.05,0`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum CurveConfig {
    Circle {
        radius: f64,
    },
    Ellipse {
        a: f64,
        b: f64,
    },
    RadialSeries {
        r0: f64,
        /// `(m, a_m, b_m)` harmonics.
        #[serde(default)]
        terms: Vec<(u32, f64, f64)>,
    },
}

impl CurveConfig {
    /// Circle, 2:1 ellipse and the three-fold perturbed circle.
    pub fn defaults() -> Vec<CurveConfig> {
        vec![
            CurveConfig::Circle { radius: 1.0 },
            CurveConfig::Ellipse { a: 2.0, b: 1.0 },
            CurveConfig::RadialSeries {
                r0: 1.0,
                terms: vec![(3, 0.05, 0.0)],
            },
        ]
    }

    pub fn spec(&self) -> CurveSpec<f64> {
        match self {
            CurveConfig::Circle { radius } => CurveSpec::circle(*radius),
            CurveConfig::Ellipse { a, b } => CurveSpec::ellipse(*a, *b),
            CurveConfig::RadialSeries { r0, terms } => CurveSpec::radial_series(*r0, terms),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            CurveConfig::Circle { .. } => "circle",
            CurveConfig::Ellipse { .. } => "ellipse",
            CurveConfig::RadialSeries { .. } => "radial_series",
        }
    }

    pub fn build(&self) -> Result<FermiCurve<f64>, HarnessError> {
        make_curve(self.spec()).context(|| format!("building curve {self}"))
    }
}

impl fmt::Display for CurveConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CurveConfig::Circle { radius } => write!(f, "circle:{radius}"),
            CurveConfig::Ellipse { a, b } => write!(f, "ellipse:{a},{b}"),
            CurveConfig::RadialSeries { r0, terms } => {
                write!(f, "radial_series:{r0}")?;
                for (m, a, b) in terms {
                    write!(f, ";{m},{a},{b}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for CurveConfig {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (family, args) = s
            .split_once(':')
            .ok_or_else(|| format!("expected `family:params`, got `{s}`"))?;
        let nums = |part: &str| -> Result<Vec<f64>, String> {
            part.split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}")))
                .collect()
        };
        match family.trim() {
            "circle" => match nums(args)?.as_slice() {
                [r] => Ok(CurveConfig::Circle { radius: *r }),
                _ => Err("circle takes one radius".into()),
            },
            "ellipse" => match nums(args)?.as_slice() {
                [a, b] => Ok(CurveConfig::Ellipse { a: *a, b: *b }),
                _ => Err("ellipse takes two semi-axes".into()),
            },
            "radial_series" | "radial" => {
                let mut parts = args.split(';');
                let r0 = match nums(parts.next().unwrap_or_default())?.as_slice() {
                    [r0] => *r0,
                    _ => return Err("radial series starts with one base radius".into()),
                };
                let terms = parts
                    .map(|t| match nums(t)?.as_slice() {
                        [m, a, b] if *m >= 1.0 && m.fract() == 0.0 => Ok((*m as u32, *a, *b)),
                        _ => Err(format!("harmonic `{t}` must be `m,a,b` with integer m ≥ 1")),
                    })
                    .collect::<Result<_, _>>()?;
                Ok(CurveConfig::RadialSeries { r0, terms })
            }
            other => Err(format!("unknown curve family `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    /// Random parameters per curve for the pointwise invariants.
    pub points: usize,
    /// Random parameter pairs per curve for the Jacobian identity.
    pub pairs: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            points: 1_000,
            pairs: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SectorizationConfig {
    pub scales: Vec<u32>,
}

impl Default for SectorizationConfig {
    fn default() -> Self {
        SectorizationConfig {
            scales: vec![2, 3, 4, 5, 6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParallelogramConfig {
    pub q_samples: usize,
    pub tol: f64,
    pub grid: usize,
    /// Random regions per curve for the area formula.
    pub regions: usize,
}

impl Default for ParallelogramConfig {
    fn default() -> Self {
        ParallelogramConfig {
            q_samples: 10_000,
            tol: 1e-9,
            grid: DEFAULT_GRID,
            regions: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureConfig {
    /// Window center parameter.
    pub p: f64,
    pub omega2: f64,
    pub omegas: Vec<f64>,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig {
            p: 0.3,
            omega2: 0.5,
            omegas: vec![0.2, 0.1, 0.05, 0.025],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomConfig {
    /// Target parameter.
    pub p: f64,
    /// `δ/l` for the scale comparison.
    pub delta_over_l: f64,
    /// Scale of the `δ/l` sweeps.
    pub sweep_scale: u32,
    pub sweep_n2: Vec<f64>,
    pub sweep_n3: Vec<f64>,
    /// Sub-sector offsets per axis when maximizing over placements.
    pub phases: usize,
    pub safety: f64,
    pub max_tuples: f64,
}

impl Default for MomConfig {
    fn default() -> Self {
        MomConfig {
            p: 0.3,
            delta_over_l: 3.0,
            sweep_scale: 4,
            sweep_n2: vec![1.0, 2.0, 4.0, 8.0],
            sweep_n3: vec![1.0, 2.0, 4.0],
            phases: 8,
            safety: 1.5,
            max_tuples: DEFAULT_MAX_TUPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsConfig {
    /// Parameter of the fixed momentum.
    pub p: f64,
    pub coarse_scale: u32,
    pub gaps: Vec<u32>,
    pub n: usize,
    pub k_tol: f64,
    pub safety: f64,
    pub max_tuples: f64,
}

impl Default for ConsConfig {
    fn default() -> Self {
        ConsConfig {
            p: 0.3,
            coarse_scale: 2,
            gaps: vec![1, 2, 3],
            n: 3,
            k_tol: 1.0,
            safety: 1.5,
            max_tuples: DEFAULT_MAX_TUPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeasibilityConfig {
    pub instances: usize,
    /// Oracle sample points per instance.
    pub samples: usize,
}

impl Default for FeasibilityConfig {
    fn default() -> Self {
        FeasibilityConfig {
            instances: 100,
            samples: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub suite: Suite,
    pub curves: Vec<CurveConfig>,
    #[serde(rename = "M", alias = "base")]
    pub base: f64,
    /// Scales `j` of the single-scale comparison.
    pub scales: Vec<u32>,
    /// Leg parameter of the single-scale comparison.
    pub n: usize,
    pub seed: u64,
    /// Monte Carlo samples per estimate.
    pub samples: usize,
    pub output: Option<PathBuf>,
    pub geometry: GeometryConfig,
    pub sectorization: SectorizationConfig,
    pub parallelogram: ParallelogramConfig,
    pub measure: MeasureConfig,
    pub mom: MomConfig,
    pub cons: ConsConfig,
    pub feasibility: FeasibilityConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            suite: Suite::All,
            curves: CurveConfig::defaults(),
            base: 10.0,
            scales: vec![2, 3, 4],
            n: 2,
            seed: 0,
            samples: 1_000_000,
            output: None,
            geometry: GeometryConfig::default(),
            sectorization: SectorizationConfig::default(),
            parallelogram: ParallelogramConfig::default(),
            measure: MeasureConfig::default(),
            mom: MomConfig::default(),
            cons: ConsConfig::default(),
            feasibility: FeasibilityConfig::default(),
        }
    }
}

fn check_scales(path: &str, scales: &[u32]) -> Result<(), HarnessError> {
    if scales.is_empty() {
        return Err(HarnessError::config(path, "at least one scale is required"));
    }
    match scales.iter().position(|&j| j < 2) {
        Some(k) => Err(HarnessError::config(
            format!("{path}[{k}]"),
            format!("scale index must be at least 2, got {}", scales[k]),
        )),
        None => Ok(()),
    }
}

fn check_positive(path: &str, values: &[f64]) -> Result<(), HarnessError> {
    if values.len() < 2 {
        return Err(HarnessError::config(
            path,
            "a sweep needs at least two points",
        ));
    }
    match values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        Some(k) => Err(HarnessError::config(
            format!("{path}[{k}]"),
            format!("sweep values must be positive, got {}", values[k]),
        )),
        None => Ok(()),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        use HarnessError as E;
        if self.curves.is_empty() {
            return Err(E::config("curves", "at least one curve is required"));
        }
        for (k, c) in self.curves.iter().enumerate() {
            if let Err(e) = make_curve(c.spec()) {
                return Err(E::config(format!("curves[{k}]"), e.to_string()));
            }
        }
        if !(self.base.is_finite() && self.base > 1.0) {
            return Err(E::config(
                "M",
                format!("base must exceed 1, got {}", self.base),
            ));
        }
        check_scales("scales", &self.scales)?;
        if !(2..=3).contains(&self.n) {
            return Err(E::config("n", format!("n must be 2 or 3, got {}", self.n)));
        }
        if self.samples < MIN_SAMPLES {
            return Err(E::config(
                "samples",
                format!("at least {MIN_SAMPLES} samples are required"),
            ));
        }
        if self.geometry.points == 0 {
            return Err(E::config("geometry.points", "must be positive"));
        }
        if self.geometry.pairs == 0 {
            return Err(E::config("geometry.pairs", "must be positive"));
        }
        check_scales("sectorization.scales", &self.sectorization.scales)?;

        let par = &self.parallelogram;
        if !(1e-10..=1e-4).contains(&par.tol) {
            return Err(E::config("parallelogram.tol", "must lie in [1e-10, 1e-4]"));
        }
        if par.grid < 16 {
            return Err(E::config(
                "parallelogram.grid",
                "at least 16 scan points are required",
            ));
        }
        if par.q_samples == 0 {
            return Err(E::config("parallelogram.q_samples", "must be positive"));
        }
        if par.regions == 0 {
            return Err(E::config("parallelogram.regions", "must be positive"));
        }

        let m = &self.measure;
        if !(m.omega2.is_finite() && m.omega2 > 0.0) {
            return Err(E::config("measure.omega2", "must be positive"));
        }
        check_positive("measure.omegas", &m.omegas)?;
        if let Some(k) = m.omegas.iter().position(|&w| 2.0 * w >= m.omega2) {
            return Err(E::config(
                format!("measure.omegas[{k}]"),
                format!(
                    "ω₁ = {} must be below ω₂/2 = {}",
                    m.omegas[k],
                    m.omega2 / 2.0
                ),
            ));
        }

        let mom = &self.mom;
        if !(mom.delta_over_l >= 1.0) {
            return Err(E::config(
                "mom.delta_over_l",
                "intervals must be at least one sector long",
            ));
        }
        check_scales("mom.sweep_scale", &[mom.sweep_scale])?;
        check_positive("mom.sweep_n2", &mom.sweep_n2)?;
        check_positive("mom.sweep_n3", &mom.sweep_n3)?;
        if mom.phases == 0 {
            return Err(E::config("mom.phases", "must be positive"));
        }
        if !(mom.safety >= 1.0) {
            return Err(E::config("mom.safety", "safety factor must be at least 1"));
        }

        let cons = &self.cons;
        check_scales("cons.coarse_scale", &[cons.coarse_scale])?;
        if cons.gaps.is_empty() {
            return Err(E::config("cons.gaps", "at least one scale gap is required"));
        }
        if let Some(k) = cons.gaps.iter().position(|&g| g == 0) {
            return Err(E::config(
                format!("cons.gaps[{k}]"),
                "scale gap must be positive",
            ));
        }
        if !(3..=5).contains(&cons.n) {
            return Err(E::config(
                "cons.n",
                format!("n must lie in 3..=5, got {}", cons.n),
            ));
        }
        if !(cons.k_tol.is_finite() && cons.k_tol > 0.0) {
            return Err(E::config("cons.k_tol", "must be positive"));
        }
        if !(cons.safety >= 1.0) {
            return Err(E::config("cons.safety", "safety factor must be at least 1"));
        }

        if self.feasibility.instances == 0 {
            return Err(E::config("feasibility.instances", "must be positive"));
        }
        if self.feasibility.samples == 0 {
            return Err(E::config("feasibility.samples", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub check: Check,
    /// Whether the measured values meet the criterion.
    pub values_ok: bool,
    /// `(key, value)` pairs, keys prefixed by the curve label where per-curve.
    pub measured: Vec<(String, f64)>,
    pub notes: Vec<String>,
    pub runtime_s: f64,
}

impl CheckResult {
    pub fn within_budget(&self) -> bool {
        self.runtime_s <= self.check.budget_s()
    }

    pub fn passed(&self) -> bool {
        self.values_ok && self.within_budget()
    }

    pub fn value(&self, key: &str) -> Option<f64> {
        self.measured
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| *v)
    }

    /// One line: criterion, name, status and the measured values.
    pub fn line(&self) -> String {
        let values: Vec<String> = self
            .measured
            .iter()
            .map(|(k, v)| format!("{k}={}", format_value(*v)))
            .collect();
        format!(
            "criterion {:>2} {:<25} {}  {}",
            self.check.criterion(),
            self.check.name(),
            if self.values_ok { "PASS" } else { "FAIL" },
            values.join(" ")
        )
    }
}

/// Integers as integers, everything else in scientific notation.
pub fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e12 {
        format!("{}", v as i64)
    } else if v.is_finite() {
        format!("{v:.4e}")
    } else {
        v.to_string()
    }
}

/// Rows of one sweep, written to `<curve>/<file>`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub curve: String,
    pub file: String,
    pub header: String,
    pub rows: Vec<Vec<f64>>,
}

impl SweepTable {
    fn new(curve: &str, file: &str, header: &str) -> Self {
        SweepTable {
            curve: curve.to_string(),
            file: file.to_string(),
            header: header.to_string(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", self.header);
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub suite: Suite,
    pub seed: u64,
    pub curves: Vec<String>,
    pub checks: Vec<CheckResult>,
    pub tables: Vec<SweepTable>,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn check(&self, check: Check) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.check == check)
    }

    /// Human-readable summary without timings.
    pub fn summary_text(&self) -> String {
        let mut out = format!(
            "suite {} seed {}\ncurves {}\n",
            self.suite,
            self.seed,
            self.curves.join(" ")
        );
        for c in &self.checks {
            out.push_str(&c.line());
            out.push('\n');
            for note in &c.notes {
                out.push_str(&format!("    {note}\n"));
            }
        }
        out
    }

    /// `criterion,check,status,key,value`, one row per measured value.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("criterion,check,status,key,value\n");
        for c in &self.checks {
            let status = if c.values_ok { "pass" } else { "fail" };
            for (k, v) in &c.measured {
                out.push_str(&format!(
                    "{},{},{status},{k},{v}\n",
                    c.check.criterion(),
                    c.check.name()
                ));
            }
        }
        out
    }

    pub fn timings_csv(&self) -> String {
        let mut out = String::from("criterion,check,runtime_s,budget_s,within_budget\n");
        for c in &self.checks {
            out.push_str(&format!(
                "{},{},{:.3},{},{}\n",
                c.check.criterion(),
                c.check.name(),
                c.runtime_s,
                c.check.budget_s(),
                c.within_budget()
            ));
        }
        out
    }
}

/// Writes the sweep tables, `summary.txt`, `summary.csv` and `timings.csv`.
///
/// Everything except `timings.csv` depends only on the configuration and seed.
pub fn emit_plotdata(result: &SuiteResult, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for table in &result.tables {
        let sub = dir.join(&table.curve);
        fs::create_dir_all(&sub)?;
        let path = sub.join(&table.file);
        fs::write(&path, table.to_csv())?;
        written.push(path);
    }
    for (name, body) in [
        ("summary.txt", result.summary_text()),
        ("summary.csv", result.summary_csv()),
        ("timings.csv", result.timings_csv()),
    ] {
        let path = dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

/// Runs every check of the configured suite and writes the outputs if an
/// output directory is set.
pub fn run_suite(config: &ExperimentConfig) -> Result<SuiteResult, HarnessError> {
    config.validate()?;
    let runner = Runner::new(config)?;
    let mut result = SuiteResult {
        suite: config.suite,
        seed: config.seed,
        curves: runner.curves.iter().map(|c| c.config.to_string()).collect(),
        checks: Vec::new(),
        tables: Vec::new(),
    };
    for &check in config.suite.checks() {
        let (res, tables) = runner.run(check)?;
        result.checks.push(res);
        result.tables.extend(tables);
    }
    if let Some(dir) = &config.output {
        emit_plotdata(&result, dir)?;
    }
    Ok(result)
}

/// Runs a single check regardless of the configured suite.
pub fn run_check(
    config: &ExperimentConfig,
    check: Check,
) -> Result<(CheckResult, Vec<SweepTable>), HarnessError> {
    config.validate()?;
    Runner::new(config)?.run(check)
}

struct CurveRun {
    config: CurveConfig,
    /// Directory name for its tables.
    slug: String,
    curve: FermiCurve<f64>,
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    curves: Vec<CurveRun>,
}

/// Accumulates the measured values of one check.
struct Outcome {
    ok: bool,
    measured: Vec<(String, f64)>,
    notes: Vec<String>,
    tables: Vec<SweepTable>,
}

impl Outcome {
    fn new() -> Self {
        Outcome {
            ok: true,
            measured: Vec::new(),
            notes: Vec::new(),
            tables: Vec::new(),
        }
    }

    fn put(&mut self, curve: &CurveRun, key: &str, value: f64) {
        self.measured
            .push((format!("{}.{key}", curve.config), value));
    }

    fn require(&mut self, curve: &CurveRun, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.ok = false;
            self.notes.push(format!("{}: {}", curve.config, what()));
        }
    }
}

fn stream_rng(seed: u64, check: Check, curve: usize) -> ChaCha8Rng {
    chunk_rng(seed, ((check.criterion() as u64) << 32) | curve as u64)
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Result<Self, HarnessError> {
        let curves = cfg
            .curves
            .iter()
            .enumerate()
            .map(|(k, c)| {
                Ok(CurveRun {
                    config: c.clone(),
                    slug: format!("{k}_{}", c.family()),
                    curve: c.build()?,
                })
            })
            .collect::<Result<_, HarnessError>>()?;
        Ok(Runner { cfg, curves })
    }

    fn run(&self, check: Check) -> Result<(CheckResult, Vec<SweepTable>), HarnessError> {
        let start = Instant::now();
        let out = match check {
            Check::GeometryInvariants => self.geometry_invariants(),
            Check::JacobianIdentity => self.jacobian_identity(),
            Check::AreaFormula => self.area_formula(),
            Check::ParallelogramBound => self.parallelogram_bound(),
            Check::MeasureScaling => self.measure_scaling(),
            Check::MomBoundedness => self.mom_boundedness(),
            Check::MomExponent => self.mom_exponent(),
            Check::ConsExponent => self.cons_exponent(),
            Check::SectorizationInvariants => self.sectorization_invariants(),
            Check::FeasibilityOracle => self.feasibility_oracle(),
        }?;
        let result = CheckResult {
            check,
            values_ok: out.ok,
            measured: out.measured,
            notes: out.notes,
            runtime_s: start.elapsed().as_secs_f64(),
        };
        Ok((result, out.tables))
    }

    fn scale(&self, j: u32) -> Result<Scale<f64>, HarnessError> {
        Scale::new(j, self.cfg.base).context(|| format!("scale j = {j}"))
    }

    fn anisotropic(&self, curve: &CurveRun, j: u32) -> Result<Sectorization<f64>, HarnessError> {
        anisotropic_sectorization(&curve.curve, self.scale(j)?)
            .context(|| format!("sectorizing {} at j = {j}", curve.config))
    }

    /// Curve whose counts calibrate the bound constants: the first circle, else the first curve.
    fn calibration_curve(&self) -> usize {
        self.curves
            .iter()
            .position(|c| matches!(c.config, CurveConfig::Circle { .. }))
            .unwrap_or(0)
    }

    fn geometry_invariants(&self) -> Result<Outcome, HarnessError> {
        let mut out = Outcome::new();
        for (idx, run) in self.curves.iter().enumerate() {
            let mut rng = stream_rng(self.cfg.seed, Check::GeometryInvariants, idx);
            let phis: Vec<f64> = (0..self.cfg.geometry.points)
                .map(|_| rng.gen_range(0.0..TAU))
                .collect();
            let errs = phis
                .par_iter()
                .map(|&phi| geometry_errors(&run.curve, phi))
                .collect::<Result<Vec<_>, _>>()
                .context(|| format!("geometry invariants on {}", run.config))?;
            let worst = |k: usize| errs.iter().map(|e| e[k]).fold(0.0, f64::max);
            let min_step = errs.iter().map(|e| e[3]).fold(f64::INFINITY, f64::min);
            let failures = errs
                .iter()
                .filter(|e| {
                    e[0] > INVOLUTION_TOL || e[1] > PARALLEL_TOL || e[2] > GRAPH_TOL || e[3] <= 0.0
                })
                .count();
            out.put(run, "involution_err", worst(0));
            out.put(run, "parallel_err", worst(1));
            out.put(run, "graph_err", worst(2));
            out.put(run, "min_psi_step", min_step);
            out.put(run, "failures", failures as f64);
            out.require(run, failures == 0, || {
                format!("{failures} of {} points fail", errs.len())
            });
        }
        Ok(out)
    }

    fn jacobian_identity(&self) -> Result<Outcome, HarnessError> {
        let mut out = Outcome::new();
        for (idx, run) in self.curves.iter().enumerate() {
            let curve = &run.curve;
            let total = curve.length();
            let mut rng = stream_rng(self.cfg.seed, Check::JacobianIdentity, idx);
            let pairs: Vec<(f64, f64)> = (0..self.cfg.geometry.pairs)
                .map(|_| (rng.gen_range(0.0..total), rng.gen_range(0.0..total)))
                .collect();
            let worst = pairs
                .par_iter()
                .map(|&(s1, s2)| {
                    let tangent = |s: f64| {
                        (curve.position(curve.phi_at_arclen(s + JACOBIAN_STEP))
                            - curve.position(curve.phi_at_arclen(s - JACOBIAN_STEP)))
                            * (0.5 / JACOBIAN_STEP)
                    };
                    let det = tangent(s1).cross(tangent(s2)).abs();
                    let j =
                        jacobian_sin_theta(curve, curve.phi_at_arclen(s1), curve.phi_at_arclen(s2));
                    (det - j).abs()
                })
                .reduce(|| 0.0, f64::max);
            out.put(run, "max_abs_err", worst);
            out.require(run, worst <= JACOBIAN_TOL, || {
                format!("max error {worst:.3e} exceeds {JACOBIAN_TOL:e}")
            });
        }
        Ok(out)
    }

    fn area_formula(&self) -> Result<Outcome, HarnessError> {
        let mut out = Outcome::new();
        for (idx, run) in self.curves.iter().enumerate() {
            let curve = &run.curve;
            let mut rng = stream_rng(self.cfg.seed, Check::AreaFormula, idx);
            let mut worst = 0.0f64;
            let mut failed = 0;
            for k in 0..self.cfg.parallelogram.regions {
                let region = random_region(curve, &mut rng).ok_or_else(|| {
                    HarnessError::Setup(format!("no non-degenerate region found on {}", run.config))
                })?;
                let check = area_formula_check(curve, &region, self.cfg.samples, rng.gen())
                    .context(|| format!("area formula on {} region {k}", run.config))?;
                worst = worst.max(check.rel_err);
                if !check.passes(AREA_FLOOR, AREA_SIGMAS) {
                    failed += 1;
                    out.notes.push(format!(
                        "{}: region {k} lhs {:.6} rhs {:.6} ± {:.2e}",
                        run.config, check.lhs, check.rhs, check.stderr
                    ));
                }
            }
            out.put(run, "max_rel_err", worst);
            out.put(run, "failed_regions", failed as f64);
            if failed > 0 {
                out.ok = false;
            }
        }
        Ok(out)
    }

    fn parallelogram_bound(&self) -> Result<Outcome, HarnessError> {
        let par = &self.cfg.parallelogram;
        let mut out = Outcome::new();
        for (idx, run) in self.curves.iter().enumerate() {
            let curve = &run.curve;
            let mut rng = stream_rng(self.cfg.seed, Check::ParallelogramBound, idx);
            let qs: Vec<Vec2<f64>> = (0..par.q_samples)
                .map(|_| sample_query(curve, &mut rng))
                .collect();
            let results = qs
                .par_iter()
                .map(|&q| {
                    let coarse = preimage_count_with_grid(curve, q, par.tol, par.grid)?;
                    let fine = preimage_count_with_grid(curve, q, par.tol, 2 * par.grid)?;
                    Ok((coarse, fine.count))
                })
                .collect::<Result<Vec<_>, crate::parallelogram::ParallelogramError>>()
                .context(|| format!("preimage counts on {}", run.config))?;
            let mut histogram = std::collections::BTreeMap::<usize, usize>::new();
            let mut degenerate = 0;
            let mut stable = 0;
            for (r, refined) in &results {
                let finite = r.count.finite();
                if r.degenerate || finite.is_none() {
                    degenerate += 1;
                } else if let Some(n) = finite {
                    *histogram.entry(n).or_default() += 1;
                }
                if r.count == *refined {
                    stable += 1;
                }
            }
            let total = results.len() as f64;
            let max_count = histogram.keys().next_back().copied().unwrap_or(0);
            let degenerate_fraction = degenerate as f64 / total;
            let stable_fraction = stable as f64 / total;
            out.put(run, "max_count", max_count as f64);
            out.put(run, "degenerate_fraction", degenerate_fraction);
            out.put(run, "stable_fraction", stable_fraction);
            out.require(run, max_count <= MAX_PREIMAGES, || {
                let over: usize = histogram.range(MAX_PREIMAGES + 1..).map(|(_, v)| v).sum();
                format!("{over} points have more than {MAX_PREIMAGES} preimages (max {max_count})")
            });
            out.require(run, degenerate_fraction < MAX_DEGENERATE_FRACTION, || {
                format!("degenerate fraction {degenerate_fraction}")
            });
            out.require(run, stable_fraction >= MIN_STABLE_FRACTION, || {
                format!("stable fraction {stable_fraction}")
            });
            let mut table = SweepTable::new(&run.slug, "preimage_counts.csv", "count,points");
            table.rows = histogram
                .iter()
                .map(|(&n, &c)| vec![n as f64, c as f64])
                .collect();
            out.tables.push(table);
        }
        Ok(out)
    }

    fn measure_scaling(&self) -> Result<Outcome, HarnessError> {
        let m = &self.cfg.measure;
        let mut out = Outcome::new();
        for (idx, run) in self.curves.iter().enumerate() {
            let mut rng = stream_rng(self.cfg.seed, Check::MeasureScaling, idx);
            let mut table = SweepTable::new(&run.slug, "measure_scan.csv", "omega1,ratio,stderr");
            for &omega1 in &m.omegas {
                let r = measure_point(
                    &run.curve,
                    m.p,
                    omega1,
                    m.omega2,
                    self.cfg.samples,
                    rng.gen(),
                )
                .context(|| format!("measure ratio on {} at ω₁ = {omega1}", run.config))?;
                table.rows.push(vec![omega1, r.ratio, r.stderr]);
            }
            let ratios: Vec<f64> = table.rows.iter().map(|r| r[1]).collect();
            let fit = loglog_fit(&m.omegas, &ratios)
                .context(|| format!("measure slope on {}", run.config))?;
            out.put(run, "slope", fit.exponent);
            out.put(run, "slope_stderr", fit.stderr);
            out.require(
                run,
                (fit.exponent - MEASURE_SLOPE).abs() <= MEASURE_SLOPE_TOL,
                || {
                    format!(
                        "slope {:.4} outside {MEASURE_SLOPE} ± {MEASURE_SLOPE_TOL}",
                        fit.exponent
                    )
                },
            );
            out.tables.push(table);
        }
        Ok(out)
    }

    fn max_mom(
        &self,
        run: &CurveRun,
        sec: &Sectorization<f64>,
        n: usize,
        delta_over_l: f64,
    ) -> Result<CountReport, HarnessError> {
        let mom = &self.cfg.mom;
        let centers = mom_configuration(&run.curve, mom.p, n)?;
        max_mom_count(
            sec,
            mom.p,
            &centers,
            delta_over_l * sec.length,
            mom.phases,
            mom.max_tuples,
        )
        .context(|| {
            format!(
                "Mom count on {} at j = {}, n = {n}, δ/l = {delta_over_l}",
                run.config, sec.scale.j
            )
        })
    }

    fn mom_boundedness(&self) -> Result<Outcome, HarnessError> {
        let mom = &self.cfg.mom;
        let mut out = Outcome::new();
        let mut reports = Vec::new();
        for run in &self.curves {
            let mut row = Vec::new();
            for &j in &self.cfg.scales {
                let sec = self.anisotropic(run, j)?;
                row.push(self.max_mom(run, &sec, self.cfg.n, mom.delta_over_l)?);
            }
            reports.push(row);
        }
        let calibration = Calibration::fit(&reports[self.calibration_curve()], mom.safety);
        for (run, row) in self.curves.iter().zip(&reports) {
            let counts: Vec<u64> = row.iter().map(|r| r.exact_count).collect();
            let max = *counts.iter().max().unwrap_or(&0) as f64;
            let min = *counts.iter().min().unwrap_or(&0) as f64;
            let spread = if min > 0.0 { max / min } else { f64::INFINITY };
            let violations = row
                .iter()
                .filter(|r| r.exact_count as f64 > calibration.constant * r.shape)
                .count();
            let hypothesis_failures = row.iter().filter(|r| !r.hypotheses_hold).count();
            for (&j, &c) in self.cfg.scales.iter().zip(&counts) {
                out.put(run, &format!("count_j{j}"), c as f64);
            }
            out.put(run, "spread", spread);
            out.put(run, "bound_violations", violations as f64);
            out.put(run, "hypothesis_failures", hypothesis_failures as f64);
            out.require(run, spread <= MOM_SPREAD, || {
                format!("max/min count over scales is {spread:.3}")
            });
            let mut table = SweepTable::new(&run.slug, "mom_scales.csv", "j,count,bound");
            table.rows = self
                .cfg
                .scales
                .iter()
                .zip(row)
                .map(|(&j, r)| {
                    vec![
                        j as f64,
                        r.exact_count as f64,
                        calibration.constant * r.shape,
                    ]
                })
                .collect();
            out.tables.push(table);
        }
        out.measured
            .push(("calibrated_constant".into(), calibration.constant));
        Ok(out)
    }

    fn mom_exponent(&self) -> Result<Outcome, HarnessError> {
        let mom = &self.cfg.mom;
        let mut out = Outcome::new();
        let sweeps = [
            (2usize, &mom.sweep_n2, "mom_sweep.csv", MOM_EXPONENT_N2),
            (3, &mom.sweep_n3, "mom_sweep_n3.csv", MOM_EXPONENT_N3),
        ];
        let mut reports: Vec<Vec<Vec<CountReport>>> = Vec::new();
        for run in &self.curves {
            let sec = self.anisotropic(run, mom.sweep_scale)?;
            let mut per_n = Vec::new();
            for (n, ratios, _, _) in &sweeps {
                per_n.push(
                    ratios
                        .iter()
                        .map(|&d| self.max_mom(run, &sec, *n, d))
                        .collect::<Result<Vec<_>, _>>()?,
                );
            }
            reports.push(per_n);
        }
        let calibration = Calibration::fit(
            reports[self.calibration_curve()].iter().flatten(),
            mom.safety,
        );
        for (run, per_n) in self.curves.iter().zip(&reports) {
            for ((n, ratios, file, (target, tol)), row) in sweeps.iter().zip(per_n) {
                let counts: Vec<f64> = row.iter().map(|r| r.exact_count as f64).collect();
                let fit = loglog_fit(ratios, &counts)
                    .context(|| format!("Mom exponent fit on {}", run.config))?;
                let hypothesis_failures = row.iter().filter(|r| !r.hypotheses_hold).count();
                out.put(run, &format!("n{n}.exponent"), fit.exponent);
                out.put(run, &format!("n{n}.exponent_stderr"), fit.stderr);
                out.put(
                    run,
                    &format!("n{n}.hypothesis_failures"),
                    hypothesis_failures as f64,
                );
                out.require(run, (fit.exponent - target).abs() <= *tol, || {
                    format!(
                        "n = {n} exponent {:.3} outside {target} ± {tol}",
                        fit.exponent
                    )
                });
                let mut table = SweepTable::new(&run.slug, file, "delta_over_l,count,bound");
                table.rows = ratios
                    .iter()
                    .zip(row)
                    .map(|(&d, r)| vec![d, r.exact_count as f64, calibration.constant * r.shape])
                    .collect();
                out.tables.push(table);
            }
        }
        out.measured
            .push(("calibrated_constant".into(), calibration.constant));
        Ok(out)
    }

    fn cons_exponent(&self) -> Result<Outcome, HarnessError> {
        let cons = &self.cfg.cons;
        let mut out = Outcome::new();
        let mut reports = Vec::new();
        for run in &self.curves {
            let coarse = self.anisotropic(run, cons.coarse_scale)?;
            let legs = cons_configuration(&run.curve, cons.p, cons.n)?;
            let mut row = Vec::new();
            for &gap in &cons.gaps {
                let fine = self.anisotropic(run, cons.coarse_scale + gap)?;
                let report =
                    max_cons_count(&fine, &coarse, cons.p, &legs, cons.k_tol, cons.max_tuples)
                        .context(|| format!("Cons count on {} at j − i = {gap}", run.config))?;
                row.push(report);
            }
            reports.push(row);
        }
        let calibration = Calibration::fit(&reports[self.calibration_curve()], cons.safety);
        for (run, row) in self.curves.iter().zip(&reports) {
            let xs: Vec<f64> = cons
                .gaps
                .iter()
                .map(|&g| self.cfg.base.powi(g as i32))
                .collect();
            let counts: Vec<f64> = row.iter().map(|r| r.exact_count as f64).collect();
            for (&g, &c) in cons.gaps.iter().zip(&counts) {
                out.put(run, &format!("count_gap{g}"), c);
            }
            let hypothesis_failures = row.iter().filter(|r| !r.hypotheses_hold).count();
            out.put(run, "hypothesis_failures", hypothesis_failures as f64);
            match loglog_fit(&xs, &counts) {
                Ok(fit) => {
                    out.put(run, "exponent", fit.exponent);
                    out.put(run, "exponent_stderr", fit.stderr);
                    let (target, tol) = CONS_EXPONENT;
                    out.require(run, (fit.exponent - target).abs() <= tol, || {
                        format!("exponent {:.3} outside {target} ± {tol}", fit.exponent)
                    });
                }
                Err(e) => out.require(run, false, || format!("no exponent: {e}")),
            }
            let mut table = SweepTable::new(&run.slug, "cons_sweep.csv", "scale_gap,count,bound");
            table.rows = cons
                .gaps
                .iter()
                .zip(row)
                .map(|(&g, r)| {
                    vec![
                        g as f64,
                        r.exact_count as f64,
                        calibration.constant * r.shape,
                    ]
                })
                .collect();
            out.tables.push(table);
        }
        out.measured
            .push(("calibrated_constant".into(), calibration.constant));
        Ok(out)
    }

    fn sectorization_invariants(&self) -> Result<Outcome, HarnessError> {
        let mut out = Outcome::new();
        for run in &self.curves {
            let mut violations = 0;
            let mut fill = 0.0f64;
            for &j in &self.cfg.sectorization.scales {
                let sec = self.anisotropic(run, j)?;
                let found = validate_sectorization(&sec);
                violations += found.len();
                for v in found.iter().take(3) {
                    out.notes.push(format!("{} j = {j}: {v}", run.config));
                }
                fill = fill.max(sec.len() as f64 / sec.count_bound());
            }
            out.put(run, "violations", violations as f64);
            out.put(run, "max_count_over_bound", fill);
            if violations > 0 {
                out.ok = false;
            }
        }
        Ok(out)
    }

    fn feasibility_oracle(&self) -> Result<Outcome, HarnessError> {
        let cfg = &self.cfg.feasibility;
        let mut rng = stream_rng(self.cfg.seed, Check::FeasibilityOracle, 0);
        let instances: Vec<(FeasibilityInstance, u64)> = (0..cfg.instances)
            .map(|_| (FeasibilityInstance::random(&mut rng), rng.gen()))
            .collect();
        let verdicts: Vec<(bool, OracleVerdict)> = instances
            .par_iter()
            .map(|(inst, seed)| {
                (
                    minkowski_feasible(&inst.rects, &inst.target),
                    sampled_feasible(&inst.rects, &inst.target, cfg.samples, *seed),
                )
            })
            .collect();
        let mut out = Outcome::new();
        let mut disagreements = 0;
        let mut in_band = 0;
        for (k, (exact, oracle)) in verdicts.iter().enumerate() {
            if *exact != oracle.feasible {
                if oracle.margin.abs() <= FEASIBILITY_BAND {
                    in_band += 1;
                } else {
                    disagreements += 1;
                    out.notes.push(format!(
                        "instance {k}: exact {exact}, oracle {} (margin {:.3e})",
                        oracle.feasible, oracle.margin
                    ));
                }
            }
        }
        let feasible = verdicts.iter().filter(|(e, _)| *e).count();
        out.measured
            .push(("instances".into(), verdicts.len() as f64));
        out.measured.push(("feasible".into(), feasible as f64));
        out.measured
            .push(("disagreements".into(), disagreements as f64));
        out.measured
            .push(("band_disagreements".into(), in_band as f64));
        out.ok = disagreements == 0;
        Ok(out)
    }
}

/// `[involution, antiparallel, graph, ψ step]` errors at `phi`.
fn geometry_errors(
    curve: &FermiCurve<f64>,
    phi: f64,
) -> Result<[f64; 4], crate::curve::CurveError> {
    let a = curve.antipodal(phi)?;
    let back = curve.antipodal(a)?;
    let involution = angle_diff(phi, back).abs();
    let parallel = (curve.tangent(phi) + curve.tangent(a)).norm();
    let h = GRAPH_STEP.min(0.5 * curve.chart_radius());
    let second = (curve.local_graph(phi, h)? + curve.local_graph(phi, -h)?) / (h * h);
    let graph = (second - curve.curvature(phi)).abs();
    let step = angle_diff(
        curve.tangent_angle(phi),
        curve.tangent_angle(phi + MONOTONE_STEP),
    );
    Ok([involution, parallel, graph, step])
}

fn random_region(curve: &FermiCurve<f64>, rng: &mut ChaCha8Rng) -> Option<ParamRect<f64>> {
    for _ in 0..1000 {
        let a1 = rng.gen_range(0.0..TAU);
        let a2 = rng.gen_range(0.0..TAU);
        let w1 = rng.gen_range(0.2..0.8);
        let w2 = rng.gen_range(0.2..0.8);
        let e = ParamRect::new((a1, a1 + w1), (a2, a2 + w2));
        if e.min_sin_theta(curve, 17) >= AREA_MIN_SIN {
            return Some(e);
        }
    }
    None
}

/// Measure ratio for a square of side `ω₁²/10` normal to the curve at `p`,
/// centered on the image of two points `1.5 ω₁` apart around `p`.
/// Uniform (by area) draw from the query annulus of `curve`.
pub fn sample_query<R: Rng>(curve: &FermiCurve<f64>, rng: &mut R) -> Vec2<f64> {
    let (a, b) = (Q_INNER * Q_INNER, (Q_OUTER * curve.r_max()).powi(2));
    let r = rng.gen_range(a..b).sqrt();
    Vec2::from_angle(rng.gen_range(0.0..TAU)) * r
}

pub fn measure_point(
    curve: &FermiCurve<f64>,
    p: f64,
    omega1: f64,
    omega2: f64,
    samples: usize,
    seed: u64,
) -> Result<crate::parallelogram::MeasureRatio, crate::parallelogram::ParallelogramError> {
    let window = AntipodalWindow::new(p, omega1, omega2)?;
    let sp = curve.arclen_at(p);
    let x1 = curve.phi_at_arclen(sp - 0.75 * omega1);
    let x2 = curve.phi_at_arclen(sp + 0.75 * omega1);
    let side = 0.1 * omega1 * omega1;
    let a = RegionRect::new(
        curve.position(x1) + curve.position(x2),
        curve.normal(p),
        side,
        side,
    )?;
    measure_ratio(curve, &window, &a, samples, seed)
}

/// Parameters of `2n − 1` points whose positions sum to the point at `p`.
///
/// The first `2n − 3` are placed at fixed offsets from `p`; the last two close
/// the sum and come from the preimage solver.
pub fn mom_configuration(
    curve: &FermiCurve<f64>,
    p: f64,
    n: usize,
) -> Result<Vec<f64>, HarnessError> {
    let free: Vec<f64> = match n {
        2 => vec![p + 2.0 * PI / 3.0],
        3 => vec![p + PI / 3.0, p - PI / 3.0, p + PI / 2.0],
        _ => {
            return Err(HarnessError::Setup(format!(
                "no Mom configuration for n = {n}"
            )))
        }
    };
    let target = curve.position(p);
    close_configuration(curve, free, target)
}

/// Parameters of `n − 1` points whose positions sum to minus the point at `p`.
pub fn cons_configuration(
    curve: &FermiCurve<f64>,
    p: f64,
    n: usize,
) -> Result<Vec<f64>, HarnessError> {
    let free: Vec<f64> = match n {
        3 => vec![],
        4 => vec![p + PI / 2.0],
        5 => vec![p + 2.0 * PI / 5.0, p - 2.0 * PI / 5.0],
        _ => {
            return Err(HarnessError::Setup(format!(
                "no Cons configuration for n = {n}"
            )))
        }
    };
    let target = -curve.position(p);
    close_configuration(curve, free, target)
}

fn close_configuration(
    curve: &FermiCurve<f64>,
    mut free: Vec<f64>,
    target: Vec2<f64>,
) -> Result<Vec<f64>, HarnessError> {
    let q = target - free.iter().map(|&f| curve.position(f)).sum();
    let r =
        preimage_count(curve, q, CONFIG_TOL).context(|| "closing the configuration".to_string())?;
    let &(a, b) = r.solutions.first().ok_or_else(|| {
        HarnessError::Setup(format!(
            "configuration cannot be closed: no preimage of {q:?}"
        ))
    })?;
    free.push(a.rem_euclid(TAU));
    free.push(b.rem_euclid(TAU));
    Ok(free.into_iter().map(|f| f.rem_euclid(TAU)).collect())
}

/// Largest Mom count over `phases × phases` sub-sector shifts of the target
/// and of the interval centers.
pub fn max_mom_count(
    sec: &Sectorization<f64>,
    p: f64,
    centers: &[f64],
    delta: f64,
    phases: usize,
    max_tuples: f64,
) -> Result<CountReport, crate::momentum::CountError> {
    let curve = sec.curve();
    let l = sec.length;
    let sp = curve.arclen_at(p);
    let shift = |k: usize| l * k as f64 / phases as f64;
    let reports = (0..phases * phases)
        .into_par_iter()
        .map(|k| {
            let (op, oi) = (k / phases, k % phases);
            let target = curve.phi_at_arclen(sp + shift(op) - 0.5 * l);
            let moved: Vec<f64> = centers
                .iter()
                .map(|&c| curve.phi_at_arclen(curve.arclen_at(c) + shift(oi)))
                .collect();
            let mut q = MomQuery::centered(sec, target, &moved, delta);
            q.max_tuples = max_tuples;
            enumerate_mom(&q)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(pick_max(reports))
}

fn pick_max(reports: Vec<CountReport>) -> CountReport {
    let mut best: Option<CountReport> = None;
    for r in reports {
        if best.as_ref().is_none_or(|b| r.exact_count > b.exact_count) {
            best = Some(r);
        }
    }
    best.expect("at least one report")
}

/// Sector whose center is closest in arc length to the point at `phi`.
pub fn nearest_sector(sec: &Sectorization<f64>, phi: f64) -> usize {
    let total = sec.curve().length();
    let s = sec.curve().arclen_at(phi);
    let dist = |c: f64| {
        let d = (c - s).rem_euclid(total);
        d.min(total - d)
    };
    sec.sectors
        .iter()
        .min_by(|a, b| dist(a.center_arclen).total_cmp(&dist(b.center_arclen)))
        .map(|s| s.index)
        .unwrap_or(0)
}

/// Largest Cons count over the fine sectors meeting the coarse sector at `p`.
///
/// Coarse legs are the coarse sectors nearest to `legs`. The `l < l′/4`
/// hypothesis is reported, not enforced.
pub fn max_cons_count(
    fine: &Sectorization<f64>,
    coarse: &Sectorization<f64>,
    p: f64,
    legs: &[f64],
    k_tol: f64,
    max_tuples: f64,
) -> Result<CountReport, crate::momentum::CountError> {
    let home = &coarse.sectors[nearest_sector(coarse, p)];
    let coarse_legs: Vec<usize> = legs
        .iter()
        .map(|&phi| nearest_sector(coarse, phi))
        .collect();
    let fixed: Vec<usize> = fine
        .sectors
        .iter()
        .filter(|s| rects_intersect(&s.rect, &home.rect))
        .map(|s| s.index)
        .collect();
    let reports = fixed
        .par_iter()
        .map(|&s1| {
            let mut q = ConsQuery::new(fine, coarse, s1, coarse_legs.clone());
            q.k_tol = k_tol;
            q.max_tuples = max_tuples;
            q.strict = false;
            enumerate_cons(&q)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(pick_max(reports))
}

/// Randomized rotated-rectangle instance for the feasibility oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityInstance {
    pub rects: Vec<OrientedRect<f64>>,
    pub target: OrientedRect<f64>,
}

impl FeasibilityInstance {
    /// One to three rectangles at random angles, and a target near their sum.
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let rect = |rng: &mut ChaCha8Rng, center: Vec2<f64>| {
            OrientedRect::new(
                center,
                Vec2::from_angle(rng.gen_range(0.0..PI)),
                rng.gen_range(0.05..0.5),
                rng.gen_range(0.05..0.5),
            )
        };
        let k = rng.gen_range(1..=3);
        let rects: Vec<OrientedRect<f64>> = (0..k)
            .map(|_| {
                let c = Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                rect(rng, c)
            })
            .collect();
        let sum: Vec2<f64> = rects.iter().map(|r| r.center).sum();
        let offset = Vec2::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
        let target = rect(rng, sum + offset);
        FeasibilityInstance { rects, target }
    }
}

/// Sampling verdict. `margin` is the depth of the deepest sampled common point
/// when feasible, and minus the boundary distance of the two polygons otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleVerdict {
    pub feasible: bool,
    pub margin: f64,
}

/// Tests sampled target points and all vertices against the hull of the
/// corner sums of `rects`.
pub fn sampled_feasible(
    rects: &[OrientedRect<f64>],
    target: &OrientedRect<f64>,
    samples: usize,
    seed: u64,
) -> OracleVerdict {
    let mut sums = vec![Vec2::zero()];
    for r in rects {
        let corners = r.corners();
        sums = sums
            .iter()
            .flat_map(|s| corners.iter().map(move |c| *s + *c))
            .collect();
    }
    let hull = convex_hull(sums);
    let corners = target.corners();
    let mut depth = f64::NEG_INFINITY;
    let mut probe = |p: Vec2<f64>| {
        let d = polygon_depth(&hull, p).min(polygon_depth(&corners, p));
        if d >= 0.0 {
            depth = depth.max(d);
        }
    };
    corners.iter().for_each(|&c| probe(c));
    hull.iter().for_each(|&v| probe(v));
    let mut rng = chunk_rng(seed, 0);
    for _ in 0..samples {
        let u = rng.gen_range(-1.0..=1.0);
        let v = rng.gen_range(-1.0..=1.0);
        let [g0, g1] = target.generators();
        probe(target.center + g0 * u + g1 * v);
    }
    if depth >= 0.0 {
        return OracleVerdict {
            feasible: true,
            margin: depth,
        };
    }
    OracleVerdict {
        feasible: false,
        margin: -polygon_gap(&hull, &corners),
    }
}

/// Andrew's monotone chain, counter-clockwise without collinear points.
fn convex_hull(mut pts: Vec<Vec2<f64>>) -> Vec<Vec2<f64>> {
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Vec2<f64>> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vec2<f64>>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2
                && (hull[hull.len() - 1] - hull[hull.len() - 2]).cross(p - hull[hull.len() - 2])
                    <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Distance from `p` to the boundary of a CCW polygon, negative outside.
fn polygon_depth(poly: &[Vec2<f64>], p: Vec2<f64>) -> f64 {
    let m = poly.len();
    let mut inside = true;
    let mut dist = f64::INFINITY;
    for i in 0..m {
        let (a, b) = (poly[i], poly[(i + 1) % m]);
        if (b - a).cross(p - a) < 0.0 {
            inside = false;
        }
        dist = dist.min(segment_distance(p, a, b));
    }
    if inside {
        dist
    } else {
        -dist
    }
}

fn segment_distance(p: Vec2<f64>, a: Vec2<f64>, b: Vec2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_sq();
    let t = if len2 > 0.0 {
        ((p - a).dot(ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}

fn segments_cross(a: Vec2<f64>, b: Vec2<f64>, c: Vec2<f64>, d: Vec2<f64>) -> bool {
    let o = |p: Vec2<f64>, q: Vec2<f64>, r: Vec2<f64>| (q - p).cross(r - p);
    let (d1, d2) = (o(a, b, c), o(a, b, d));
    let (d3, d4) = (o(c, d, a), o(c, d, b));
    d1 * d2 <= 0.0 && d3 * d4 <= 0.0
}

/// Distance between the boundaries of two polygons (0 if they cross).
fn polygon_gap(p: &[Vec2<f64>], q: &[Vec2<f64>]) -> f64 {
    let mut gap = f64::INFINITY;
    for i in 0..p.len() {
        let (a, b) = (p[i], p[(i + 1) % p.len()]);
        for j in 0..q.len() {
            let (c, d) = (q[j], q[(j + 1) % q.len()]);
            if segments_cross(a, b, c, d) {
                return 0.0;
            }
            gap = gap
                .min(segment_distance(a, c, d))
                .min(segment_distance(b, c, d))
                .min(segment_distance(c, a, b))
                .min(segment_distance(d, a, b));
        }
    }
    gap
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_strings_round_trip() {
        for c in CurveConfig::defaults() {
            let parsed: CurveConfig = c.to_string().parse().unwrap();
            assert_eq!(parsed, c);
        }
        assert_eq!(
            "radial:1;3,0.05,0".parse::<CurveConfig>().unwrap(),
            CurveConfig::RadialSeries {
                r0: 1.0,
                terms: vec![(3, 0.05, 0.0)]
            }
        );
        assert!("square:1".parse::<CurveConfig>().is_err());
        assert!("ellipse:1".parse::<CurveConfig>().is_err());
    }

    #[test]
    fn invalid_scale_names_field() {
        let cfg = ExperimentConfig::from_toml_str("suite = \"all\"\nscales = [1, 3]\n").unwrap();
        match cfg.validate() {
            Err(HarnessError::Config { path, .. }) => assert_eq!(path, "scales[0]"),
            other => panic!("unexpected {other:?}"),
        }
        let cfg = ExperimentConfig::from_toml_str("cons = { gaps = [1, 0] }\n").unwrap();
        match cfg.validate() {
            Err(HarnessError::Config { path, .. }) => assert_eq!(path, "cons.gaps[1]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml_str("sede = 3\n").is_err());
    }

    #[test]
    fn hull_of_square_sums() {
        let sq = OrientedRect::axis_aligned(Vec2::new(0.0, 0.0), 1.0, 1.0);
        let v = sampled_feasible(
            &[sq, sq],
            &OrientedRect::axis_aligned(Vec2::new(2.5, 0.0), 1.0, 1.0),
            1000,
            1,
        );
        assert!(v.feasible);
        assert!((v.margin - 0.25).abs() < 0.05);
        let v = sampled_feasible(
            &[sq, sq],
            &OrientedRect::axis_aligned(Vec2::new(4.5, 0.0), 0.25, 0.25),
            1000,
            1,
        );
        assert!(!v.feasible);
        assert!((v.margin + 2.25).abs() < 1e-12);
    }

    #[test]
    fn configurations_close() {
        let curve = CurveConfig::Ellipse { a: 2.0, b: 1.0 }.build().unwrap();
        let c = mom_configuration(&curve, 0.3, 2).unwrap();
        let sum: Vec2<f64> = c.iter().map(|&f| curve.position(f)).sum();
        assert!((sum - curve.position(0.3)).norm() < 1e-7);
        let c = cons_configuration(&curve, 0.3, 3).unwrap();
        let sum: Vec2<f64> = c.iter().map(|&f| curve.position(f)).sum();
        assert!((sum + curve.position(0.3)).norm() < 1e-7);
    }
}
