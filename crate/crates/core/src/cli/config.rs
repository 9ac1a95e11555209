//! Run configuration: strict JSON schema, defaults and cross-field checks.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::estimators::{Channel, XiMethod};
use crate::ising::{KzRampConfig, ThermalProtocol, T_C};
use crate::rydberg::{ArrayGeometry, DetuningMask, DriveSegment, EvolveOptions, RydbergParams};
use crate::scaling::{Amplitudes, CriticalExponents, ExponentRegistry, MicroScales, RampProtocol, StopSide};
use crate::tfim::DEFAULT_TOLERANCE;

pub const SCHEMA_VERSION: u32 = 1;

const TOP_LEVEL_KEYS: [&str; 7] = ["schema_version", "name", "engine", "params", "seeds", "output", "snapshots"];

/// One validation failure, located by a dotted path into the config.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigIssue>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} configuration error(s):", self.0.len())?;
        for issue in &self.0 {
            writeln!(f, "  - {issue}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    Scaling,
    Tfim1d,
    Ising2d,
    Rydberg,
    Estimate,
    Collapse,
}

impl EngineKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Scaling => "scaling",
            Self::Tfim1d => "tfim1d",
            Self::Ising2d => "ising2d",
            Self::Rydberg => "rydberg",
            Self::Estimate => "estimate",
            Self::Collapse => "collapse",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Self::Scaling, Self::Tfim1d, Self::Ising2d, Self::Rydberg, Self::Estimate, Self::Collapse]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

/// Universality class: a registry name or an explicit exponent set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassRef {
    Named(String),
    Explicit(CriticalExponents),
}

impl Default for ClassRef {
    fn default() -> Self {
        Self::Named("ising-2+1d".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalFunction {
    /// `f_p(x)` on `x`.
    #[serde(rename = "f")]
    Sweep,
    /// `F(x, x_s)` on `x`.
    #[serde(rename = "F")]
    Stopped,
    /// `h(y)` on `y`.
    #[serde(rename = "h")]
    Thermal,
    /// `x*(x_s)` on `x_s`.
    XStar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalingParams {
    Scales {
        #[serde(default)]
        class: ClassRef,
        #[serde(default)]
        registry: Option<PathBuf>,
        #[serde(default)]
        micro: MicroScales,
        protocol: RampProtocol,
    },
    Exponent {
        #[serde(default)]
        class: ClassRef,
        #[serde(default)]
        registry: Option<PathBuf>,
        #[serde(default = "one")]
        p: f64,
    },
    Classify {
        #[serde(default)]
        class: ClassRef,
        #[serde(default)]
        registry: Option<PathBuf>,
        #[serde(default)]
        micro: MicroScales,
        protocol: RampProtocol,
        side: StopSide,
        #[serde(default)]
        amplitudes: Amplitudes,
        #[serde(default)]
        x_c: Option<f64>,
    },
    Eval {
        #[serde(default)]
        class: ClassRef,
        #[serde(default)]
        registry: Option<PathBuf>,
        function: EvalFunction,
        points: Vec<f64>,
        #[serde(default = "one")]
        p: f64,
        #[serde(default)]
        x_s: Option<f64>,
        #[serde(default)]
        amplitudes: Amplitudes,
        #[serde(default)]
        x_c: Option<f64>,
        #[serde(default)]
        y_c: Option<f64>,
    },
}

fn one() -> f64 {
    1.0
}

/// Kink density of the chain across a list of ramp times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TfimParams {
    pub l: usize,
    pub taus: Vec<f64>,
    #[serde(default = "one")]
    pub p: f64,
    /// Default: `-max(1, 10 tau^(-p/(p+1)))` per ramp.
    #[serde(default)]
    pub g_start: Option<f64>,
    #[serde(default = "one")]
    pub g_end: f64,
    #[serde(default = "tfim_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub fit_window: Option<(f64, f64)>,
    /// Also write the per-mode excitation probabilities of every ramp.
    #[serde(default)]
    pub write_modes: bool,
}

fn tfim_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LengthEstimator {
    /// Inverse wall density, per replica.
    #[default]
    Walls,
    /// Inverse excess wall density over equilibrium at the bath temperature, per replica.
    ExcessWalls,
    /// Two-point second-moment length of the pooled structure factor.
    SecondMoment,
    /// Ornstein-Zernike fit of the pooled structure factor.
    OrnsteinZernike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case", deny_unknown_fields)]
pub enum IsingParams {
    Protocol {
        lx: usize,
        ly: usize,
        protocol: ThermalProtocol,
        #[serde(default)]
        length: LengthEstimator,
        #[serde(default = "yes")]
        write_snapshots: bool,
    },
    KzRamp {
        lx: usize,
        ly: usize,
        taus: Vec<u64>,
        #[serde(default = "two_tc")]
        t_high: f64,
        #[serde(default = "tc")]
        t_low: f64,
        #[serde(default = "pre_hold")]
        pre_hold: u64,
        #[serde(default = "oz")]
        method: XiMethod,
    },
}

fn yes() -> bool {
    true
}
fn two_tc() -> f64 {
    2.0 * T_C
}
fn tc() -> f64 {
    T_C
}
fn pre_hold() -> u64 {
    100
}
fn oz() -> XiMethod {
    XiMethod::OrnsteinZernike
}

impl IsingParams {
    pub fn kz_config(&self, seeds: &[u64]) -> Option<KzRampConfig> {
        match self {
            Self::KzRamp { lx, ly, taus, t_high, t_low, pre_hold, method } => Some(KzRampConfig {
                lx: *lx,
                ly: *ly,
                seeds: seeds.to_vec(),
                taus: taus.clone(),
                t_high: *t_high,
                t_low: *t_low,
                pre_hold: *pre_hold,
                method: *method,
            }),
            Self::Protocol { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RydbergInitial {
    Neel,
    /// Neel background with a `height x width` block in the other registration.
    Domain { row: usize, col: usize, height: usize, width: usize },
    Mask { offsets: Vec<f64> },
    Basis { index: usize },
    Checkpoint { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveSettings {
    #[serde(default = "dt_max")]
    pub dt_max: f64,
    #[serde(default = "krylov_dim")]
    pub krylov_dim: usize,
    #[serde(default = "evolve_tol")]
    pub tolerance: f64,
}

impl Default for EvolveSettings {
    fn default() -> Self {
        let d = EvolveOptions::default();
        Self { dt_max: d.dt_max, krylov_dim: d.krylov_dim, tolerance: d.tolerance }
    }
}

fn dt_max() -> f64 {
    EvolveOptions::default().dt_max
}
fn krylov_dim() -> usize {
    EvolveOptions::default().krylov_dim
}
fn evolve_tol() -> f64 {
    EvolveOptions::default().tolerance
}

impl From<EvolveSettings> for EvolveOptions {
    fn from(s: EvolveSettings) -> Self {
        Self { dt_max: s.dt_max, krylov_dim: s.krylov_dim, tolerance: s.tolerance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RydbergRunParams {
    pub geometry: ArrayGeometry,
    pub hamiltonian: RydbergParams,
    pub schedule: Vec<DriveSegment>,
    #[serde(default = "neel")]
    pub initial: RydbergInitial,
    /// Also evolve the uniform Neel state and report the excess density against it.
    #[serde(default)]
    pub reference: bool,
    #[serde(default)]
    pub evolve: EvolveSettings,
    #[serde(default = "yes")]
    pub checkpoint: bool,
}

fn neel() -> RydbergInitial {
    RydbergInitial::Neel
}

impl RydbergRunParams {
    pub fn mask(&self) -> Option<DetuningMask> {
        match &self.initial {
            RydbergInitial::Neel => Some(DetuningMask::uniform(self.geometry.sites())),
            RydbergInitial::Domain { row, col, height, width } => {
                DetuningMask::block(&self.geometry, *row, *col, *height, *width).ok()
            }
            RydbergInitial::Mask { offsets } => Some(DetuningMask { offsets: offsets.clone() }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimateParams {
    /// Power-law fit of a `t,y[,err]` CSV series.
    Fit {
        series: PathBuf,
        #[serde(default)]
        window: Option<(f64, f64)>,
        #[serde(default = "resamples")]
        resamples: usize,
    },
    /// Length versus time from a snapshot index written by an ising2d run.
    Lengths {
        index: PathBuf,
        #[serde(default)]
        length: LengthEstimator,
        #[serde(default = "magnetization")]
        channel: Channel,
        #[serde(default)]
        fit_window: Option<(f64, f64)>,
    },
}

fn resamples() -> usize {
    200
}
fn magnetization() -> Channel {
    Channel::Magnetization
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseParams {
    /// CSV with columns `tau,t,l`.
    pub curves: PathBuf,
    #[serde(default = "bandwidth")]
    pub bandwidth: f64,
    #[serde(default = "unit_range")]
    pub alpha_xi_range: (f64, f64),
    #[serde(default = "unit_range")]
    pub alpha_t_range: (f64, f64),
    #[serde(default = "grid")]
    pub grid: usize,
}

fn bandwidth() -> f64 {
    0.05
}
fn unit_range() -> (f64, f64) {
    (0.0, 1.0)
}
fn grid() -> usize {
    41
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "engine", content = "params", rename_all = "snake_case")]
pub enum EngineParams {
    Scaling(ScalingParams),
    Tfim1d(TfimParams),
    Ising2d(IsingParams),
    Rydberg(RydbergRunParams),
    Estimate(EstimateParams),
    Collapse(CollapseParams),
}

impl EngineParams {
    pub fn kind(&self) -> EngineKind {
        match self {
            Self::Scaling(_) => EngineKind::Scaling,
            Self::Tfim1d(_) => EngineKind::Tfim1d,
            Self::Ising2d(_) => EngineKind::Ising2d,
            Self::Rydberg(_) => EngineKind::Rydberg,
            Self::Estimate(_) => EngineKind::Estimate,
            Self::Collapse(_) => EngineKind::Collapse,
        }
    }
}

/// A validated run with every default filled in. Relative paths inside the
/// parameter block have been resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub name: Option<String>,
    pub seeds: Vec<u64>,
    pub output: Option<PathBuf>,
    pub snapshots: Vec<f64>,
    #[serde(flatten)]
    pub engine: EngineParams,
}

impl RunConfig {
    pub fn kind(&self) -> EngineKind {
        self.engine.kind()
    }
}

/// Read and validate a config file.
pub fn validate_config(path: &Path) -> Result<RunConfig, ConfigErrors> {
    let text = fs::read_to_string(path).map_err(|e| issue_list("$", format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&text, &base)
}

fn issue_list(path: &str, message: impl Into<String>) -> ConfigErrors {
    ConfigErrors(vec![ConfigIssue { path: path.into(), message: message.into() }])
}

#[derive(Default)]
struct Issues(Vec<ConfigIssue>);

impl Issues {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(ConfigIssue { path: path.into(), message: message.into() });
    }

    fn typed<T: DeserializeOwned>(&mut self, path: &str, value: &Value) -> Option<T> {
        let de = value.clone();
        match serde_path_to_error::deserialize::<_, T>(de) {
            Ok(v) => Some(v),
            Err(e) => {
                let inner = e.path().to_string();
                let full = if inner == "." || inner.is_empty() { path.to_string() } else { format!("{path}.{inner}") };
                self.push(full, e.into_inner().to_string());
                None
            }
        }
    }
}

/// Validate config text; relative file references resolve against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<RunConfig, ConfigErrors> {
    let root: Value = serde_json::from_str(text).map_err(|e| issue_list("$", format!("invalid JSON: {e}")))?;
    let Value::Object(map) = &root else {
        return Err(issue_list("$", "config must be a JSON object"));
    };
    let mut issues = Issues::default();
    for key in map.keys() {
        if !TOP_LEVEL_KEYS.contains(&key.as_str()) {
            issues.push(key.clone(), format!("unknown key; expected one of {}", TOP_LEVEL_KEYS.join(", ")));
        }
    }

    let schema_version = match map.get("schema_version") {
        None => SCHEMA_VERSION,
        Some(v) => match v.as_u64() {
            Some(n) if n == SCHEMA_VERSION as u64 => SCHEMA_VERSION,
            _ => {
                issues.push("schema_version", format!("unsupported schema version {v}; this build reads {SCHEMA_VERSION}"));
                SCHEMA_VERSION
            }
        },
    };
    let name = map.get("name").and_then(|v| issues.typed::<String>("name", v));
    let output = map.get("output").and_then(|v| issues.typed::<PathBuf>("output", v));
    let seeds = match map.get("seeds") {
        None => vec![0],
        Some(v) => issues.typed::<Vec<u64>>("seeds", v).unwrap_or_default(),
    };
    if map.contains_key("seeds") && seeds.is_empty() && !issues.0.iter().any(|i| i.path.starts_with("seeds")) {
        issues.push("seeds", "at least one seed is required");
    }
    if seeds.iter().collect::<BTreeSet<_>>().len() != seeds.len() {
        issues.push("seeds", "seeds must be distinct");
    }
    let snapshots = match map.get("snapshots") {
        None => Vec::new(),
        Some(v) => issues.typed::<Vec<f64>>("snapshots", v).unwrap_or_default(),
    };
    for (i, t) in snapshots.iter().enumerate() {
        if !(t.is_finite() && *t >= 0.0) {
            issues.push(format!("snapshots[{i}]"), format!("snapshot time must be finite and >= 0, got {t}"));
        }
    }

    let kind = match map.get("engine") {
        None => {
            issues.push("engine", "missing; expected one of scaling, tfim1d, ising2d, rydberg, estimate, collapse");
            None
        }
        Some(Value::String(s)) => {
            let k = EngineKind::parse(s);
            if k.is_none() {
                issues.push("engine", format!("unknown engine `{s}`; expected one of scaling, tfim1d, ising2d, rydberg, estimate, collapse"));
            }
            k
        }
        Some(other) => {
            issues.push("engine", format!("expected a string, got {other}"));
            None
        }
    };
    let params = map.get("params").cloned().unwrap_or_else(|| {
        issues.push("params", "missing engine parameter block");
        Value::Null
    });

    let engine = match kind {
        Some(_) if params.is_null() => None,
        Some(EngineKind::Scaling) => issues.typed("params", &params).map(EngineParams::Scaling),
        Some(EngineKind::Tfim1d) => issues.typed("params", &params).map(EngineParams::Tfim1d),
        Some(EngineKind::Ising2d) => issues.typed("params", &params).map(EngineParams::Ising2d),
        Some(EngineKind::Rydberg) => issues.typed("params", &params).map(EngineParams::Rydberg),
        Some(EngineKind::Estimate) => issues.typed("params", &params).map(EngineParams::Estimate),
        Some(EngineKind::Collapse) => issues.typed("params", &params).map(EngineParams::Collapse),
        None => None,
    };

    let mut config = engine.map(|engine| RunConfig { schema_version, name, seeds, output, snapshots, engine });
    if let Some(cfg) = config.as_mut() {
        resolve_paths(&mut cfg.engine, base);
        check_semantics(cfg, &mut issues);
    }
    match config {
        Some(cfg) if issues.0.is_empty() => Ok(cfg),
        _ => Err(ConfigErrors(issues.0)),
    }
}

fn resolve(p: &mut PathBuf, base: &Path) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn resolve_paths(engine: &mut EngineParams, base: &Path) {
    match engine {
        EngineParams::Scaling(
            ScalingParams::Scales { registry, .. }
            | ScalingParams::Exponent { registry, .. }
            | ScalingParams::Classify { registry, .. }
            | ScalingParams::Eval { registry, .. },
        ) => {
            if let Some(r) = registry {
                resolve(r, base);
            }
        }
        EngineParams::Rydberg(RydbergRunParams { initial: RydbergInitial::Checkpoint { path }, .. }) => resolve(path, base),
        EngineParams::Estimate(EstimateParams::Fit { series: p, .. } | EstimateParams::Lengths { index: p, .. }) => resolve(p, base),
        EngineParams::Collapse(c) => resolve(&mut c.curves, base),
        _ => {}
    }
}

fn require_file(issues: &mut Issues, path: &str, file: &Path) {
    if !file.is_file() {
        issues.push(path, format!("file {} does not exist", file.display()));
    }
}

fn check_range(issues: &mut Issues, path: &str, r: (f64, f64)) {
    if !(r.0.is_finite() && r.1.is_finite() && r.0 < r.1) {
        issues.push(path, format!("range must satisfy lo < hi, got [{}, {}]", r.0, r.1));
    }
}

fn check_class(issues: &mut Issues, class: &ClassRef, registry: &Option<PathBuf>) {
    let reg = match registry {
        Some(path) => {
            if !path.is_file() {
                issues.push("params.registry", format!("file {} does not exist", path.display()));
                return;
            }
            match ExponentRegistry::load(path) {
                Ok(r) => ExponentRegistry::default().merged(r),
                Err(e) => {
                    issues.push("params.registry", e.to_string());
                    return;
                }
            }
        }
        None => ExponentRegistry::default(),
    };
    match class {
        ClassRef::Named(name) => {
            if let Err(e) = reg.get(name) {
                let known: Vec<&str> = reg.names().collect();
                issues.push("params.class", format!("{e}; known: {}", known.join(", ")));
            }
        }
        ClassRef::Explicit(e) => {
            if let Err(err) = e.validate() {
                issues.push("params.class", err.to_string());
            }
        }
    }
}

fn check_semantics(cfg: &RunConfig, issues: &mut Issues) {
    match &cfg.engine {
        EngineParams::Scaling(s) => match s {
            ScalingParams::Scales { class, registry, micro, protocol } => {
                check_class(issues, class, registry);
                if let Err(e) = micro.validate() {
                    issues.push("params.micro", e.to_string());
                }
                if let Err(e) = protocol.validate() {
                    issues.push("params.protocol", e.to_string());
                }
            }
            ScalingParams::Exponent { class, registry, p } => {
                check_class(issues, class, registry);
                if !(p.is_finite() && *p > 0.0) {
                    issues.push("params.p", format!("sweep power must be positive, got {p}"));
                }
            }
            ScalingParams::Classify { class, registry, micro, protocol, amplitudes, .. } => {
                check_class(issues, class, registry);
                for (path, r) in [("params.micro", micro.validate()), ("params.protocol", protocol.validate()), ("params.amplitudes", amplitudes.validate())] {
                    if let Err(e) = r {
                        issues.push(path, e.to_string());
                    }
                }
            }
            ScalingParams::Eval { class, registry, function, points, x_s, amplitudes, .. } => {
                check_class(issues, class, registry);
                if points.is_empty() {
                    issues.push("params.points", "at least one evaluation point is required");
                }
                if *function == EvalFunction::Stopped && x_s.is_none() {
                    issues.push("params.x_s", "required for function F");
                }
                if let Err(e) = amplitudes.validate() {
                    issues.push("params.amplitudes", e.to_string());
                }
            }
        },
        EngineParams::Tfim1d(t) => {
            if t.taus.is_empty() {
                issues.push("params.taus", "at least one ramp time is required");
            }
            for (i, &tau) in t.taus.iter().enumerate() {
                let mut spec = crate::tfim::ChainSpec::new(t.l, tau, t.p);
                spec.g_end = t.g_end;
                spec.tolerance = t.tolerance;
                if let Some(g) = t.g_start {
                    spec.g_start = g;
                }
                if let Err(e) = spec.validate() {
                    issues.push(format!("params.taus[{i}]"), e.to_string());
                }
            }
            if let Some(w) = t.fit_window {
                check_range(issues, "params.fit_window", w);
            }
        }
        EngineParams::Ising2d(p) => match p {
            IsingParams::Protocol { lx, ly, protocol, .. } => {
                if let Err(e) = crate::ising::SpinLattice::new(*lx, *ly, 0) {
                    issues.push("params.lx", e.to_string());
                }
                if let Err(e) = protocol.validate() {
                    issues.push("params.protocol", e.to_string());
                }
                let total = protocol.total_duration();
                for (i, &t) in cfg.snapshots.iter().enumerate() {
                    if t.fract() != 0.0 {
                        issues.push(format!("snapshots[{i}]"), format!("ising2d snapshot times are whole sweeps, got {t}"));
                    } else if t > total as f64 {
                        issues.push(format!("snapshots[{i}]"), format!("time {t} lies beyond the protocol end {total}"));
                    }
                }
            }
            IsingParams::KzRamp { lx, ly, taus, t_high, t_low, .. } => {
                if let Err(e) = crate::ising::SpinLattice::new(*lx, *ly, 0) {
                    issues.push("params.lx", e.to_string());
                }
                if taus.iter().filter(|&&t| t >= crate::ising::KZ_MIN_TAU).count() < 2 {
                    issues.push("params.taus", format!("need at least two ramp times >= {} sweeps", crate::ising::KZ_MIN_TAU));
                }
                if !(t_high > t_low && *t_low >= 0.0) {
                    issues.push("params.t_high", "ramp must cool: t_high > t_low >= 0");
                }
            }
        },
        EngineParams::Rydberg(r) => {
            if let Err(e) = r.geometry.validate() {
                issues.push("params.geometry", e.to_string());
            }
            if let Err(e) = r.hamiltonian.validate() {
                issues.push("params.hamiltonian", e.to_string());
            }
            if r.schedule.is_empty() {
                issues.push("params.schedule", "at least one drive segment is required");
            }
            for (i, seg) in r.schedule.iter().enumerate() {
                if !(seg.duration.is_finite() && seg.duration > 0.0) {
                    issues.push(format!("params.schedule[{i}].duration"), "must be positive");
                }
                if seg.omega.0 < 0.0 || seg.omega.1 < 0.0 {
                    issues.push(format!("params.schedule[{i}].omega"), "Rabi frequency must be >= 0");
                }
            }
            let n = r.geometry.sites();
            match &r.initial {
                RydbergInitial::Domain { row, col, height, width } => {
                    if row + height > r.geometry.rows || col + width > r.geometry.cols || *height == 0 || *width == 0 {
                        issues.push("params.initial", "domain must be non-empty and lie inside the array");
                    }
                }
                RydbergInitial::Mask { offsets } if offsets.len() != n => {
                    issues.push("params.initial.offsets", format!("expected {n} entries, got {}", offsets.len()));
                }
                RydbergInitial::Basis { index } if n <= crate::rydberg::MAX_SITES && *index >= 1usize << n => {
                    issues.push("params.initial.index", format!("basis index out of range for {n} sites"));
                }
                RydbergInitial::Checkpoint { path } => require_file(issues, "params.initial.path", path),
                _ => {}
            }
            if r.reference && r.mask().is_none() {
                issues.push("params.reference", "the Neel reference needs a neel, domain or mask initial state");
            }
            let e = r.evolve;
            if !(e.dt_max > 0.0 && e.krylov_dim >= 2 && e.tolerance > 0.0) {
                issues.push("params.evolve", "dt_max and tolerance must be positive and krylov_dim >= 2");
            }
            let total: f64 = r.schedule.iter().map(|s| s.duration).sum();
            for (i, &t) in cfg.snapshots.iter().enumerate() {
                if t > total {
                    issues.push(format!("snapshots[{i}]"), format!("time {t} lies beyond the schedule end {total}"));
                }
            }
        }
        EngineParams::Estimate(e) => match e {
            EstimateParams::Fit { series, window, resamples } => {
                require_file(issues, "params.series", series);
                if let Some(w) = window {
                    check_range(issues, "params.window", *w);
                }
                if *resamples == 0 {
                    issues.push("params.resamples", "must be positive");
                }
            }
            EstimateParams::Lengths { index, fit_window, .. } => {
                require_file(issues, "params.index", index);
                if let Some(w) = fit_window {
                    check_range(issues, "params.fit_window", *w);
                }
            }
        },
        EngineParams::Collapse(c) => {
            require_file(issues, "params.curves", &c.curves);
            if !(c.bandwidth > 0.0 && c.bandwidth < 1.0) {
                issues.push("params.bandwidth", "must lie in (0, 1)");
            }
            check_range(issues, "params.alpha_xi_range", c.alpha_xi_range);
            check_range(issues, "params.alpha_t_range", c.alpha_t_range);
            if c.grid < 3 {
                issues.push("params.grid", "must be at least 3");
            }
        }
    }
}
