//! Run configuration: a TOML document with a fixed schema.
//!
//! ```toml
//! experiment = "survival"   # simulate | survival | sweep | bisect | check-order | ruin
//!                           # | blocks | percolation | edge-event | mean-occupancy
//! seed = 1
//! replicas = 200
//!
//! [model]                   # variant = "I" | "II" | "III" | "IV"
//! variant = "I"
//! phi = 0.5
//! lambda = 1.0
//! capacity = 5              # N
//! # phi_allee, allee_threshold (II, III); max_flock (III); phi_excess, sim_cap (IV)
//!
//! [window]
//! dim = 2
//! side = 15                 # or sides = [15, 15]
//! boundary = "periodic"     # periodic | zero_outside | frozen_full_outside
//!
//! [init]
//! kind = "singleton"        # empty | full | singleton | explicit
//!
//! [output]
//! dir = "out"
//!
//! [survival]
//! horizon = 100.0
//! ```
//!
//! Every key is checked: unknown keys, wrong types and invariant violations
//! are all collected and reported together.

use std::collections::BTreeSet;
use std::path::PathBuf;

use metapop::lattice::{Boundary, InitSpec, LatticeWindow, Site};
use metapop::models::{ModelParams, ModelSpec, Variant};
use metapop::analysis::Axis;
use toml::{Table, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Simulate,
    Survival,
    Sweep,
    Bisect,
    CheckOrder,
    Ruin,
    Blocks,
    Percolation,
    EdgeEvent,
    MeanOccupancy,
}

impl Experiment {
    pub const ALL: [Experiment; 10] = [
        Experiment::Simulate,
        Experiment::Survival,
        Experiment::Sweep,
        Experiment::Bisect,
        Experiment::CheckOrder,
        Experiment::Ruin,
        Experiment::Blocks,
        Experiment::Percolation,
        Experiment::EdgeEvent,
        Experiment::MeanOccupancy,
    ];

    /// Name used for the `experiment` key and the subcommand.
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Survival => "survival",
            Experiment::Sweep => "sweep",
            Experiment::Bisect => "bisect",
            Experiment::CheckOrder => "check-order",
            Experiment::Ruin => "ruin",
            Experiment::Blocks => "blocks",
            Experiment::Percolation => "percolation",
            Experiment::EdgeEvent => "edge-event",
            Experiment::MeanOccupancy => "mean-occupancy",
        }
    }

    /// Name of the table holding the experiment's own parameters.
    pub fn section(self) -> &'static str {
        match self {
            Experiment::CheckOrder => "check_order",
            Experiment::EdgeEvent => "edge_event",
            Experiment::MeanOccupancy => "mean_occupancy",
            e => e.name(),
        }
    }

    pub fn parse(name: &str) -> Option<Experiment> {
        Experiment::ALL.into_iter().find(|e| e.name() == name)
    }

    fn needs_model(self) -> bool {
        !matches!(self, Experiment::Ruin | Experiment::Percolation)
    }

    fn needs_window(self) -> bool {
        matches!(
            self,
            Experiment::Simulate | Experiment::Survival | Experiment::Sweep | Experiment::Bisect | Experiment::MeanOccupancy
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowConfig {
    pub sides: Vec<usize>,
    pub boundary: Boundary,
}

impl WindowConfig {
    pub fn build(&self) -> metapop::Result<LatticeWindow> {
        LatticeWindow::new(self.sides.clone(), self.boundary)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitConfig {
    Empty,
    /// `None` means full at the model's capacity.
    Full(Option<u32>),
    /// `None` site means the centre of the window.
    Singleton { site: Option<Vec<i64>>, count: u32 },
    Explicit(Vec<(Vec<i64>, u32)>),
}

impl InitConfig {
    /// Resolves defaults against a window and a capacity.
    pub fn resolve(&self, window: &WindowConfig, capacity: u32) -> InitSpec {
        match self {
            InitConfig::Empty => InitSpec::Empty,
            InitConfig::Full(n) => InitSpec::FullAt(n.unwrap_or(capacity)),
            InitConfig::Singleton { site, count } => {
                let coords = site.clone().unwrap_or_else(|| window.sides.iter().map(|&s| (s / 2) as i64).collect());
                InitSpec::Singleton(Site::new(coords), *count)
            }
            InitConfig::Explicit(list) => InitSpec::Explicit(list.iter().map(|(c, n)| (Site::new(c.clone()), *n)).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepValues {
    List(Vec<f64>),
    Range { lo: f64, hi: f64, steps: u32 },
}

impl SweepValues {
    pub fn values(&self) -> Vec<f64> {
        match self {
            SweepValues::List(v) => v.clone(),
            SweepValues::Range { lo, hi, steps } => {
                (0..*steps).map(|i| lo + (hi - lo) * i as f64 / (*steps - 1) as f64).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderMode {
    General,
    Single,
    Cross,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKindConfig {
    Survival,
    Extinction,
    Dominator,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentParams {
    Simulate { horizon: f64, step: f64, per_site: bool },
    Survival { horizon: f64 },
    Sweep { axis: Axis, values: SweepValues, horizon: f64 },
    Bisect { axis: Axis, lo: f64, hi: f64, threshold: f64, tolerance: f64, max_doublings: u32, horizon: f64 },
    CheckOrder { high: ModelParams, mode: OrderMode, k_bound: Option<u32>, budget: Option<u64> },
    Ruin { r1: i64, r2: i64, j: i64, p: f64, walks: u64 },
    Blocks { kind: BlockKindConfig, l: u32, times: Vec<f64>, phi_allee: Vec<f64>, phi_zero_inside: bool },
    Percolation { width: usize, height: usize, p: Vec<f64>, radius: usize },
    EdgeEvent { dim: usize, cutoff: f64 },
    MeanOccupancy { horizon: f64, step: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub replicas: u64,
    pub model: Option<ModelParams>,
    pub window: Option<WindowConfig>,
    pub init: Option<InitConfig>,
    pub output_dir: PathBuf,
    pub params: ExperimentParams,
}

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_REPLICAS: u64 = 100;
pub const DEFAULT_OUTPUT_DIR: &str = "metapop-out";

/// Reads one table, remembering which keys were consumed.
struct Section<'a> {
    path: String,
    table: Option<&'a Table>,
    used: BTreeSet<String>,
}

impl<'a> Section<'a> {
    fn new(path: &str, table: Option<&'a Table>) -> Self {
        Section { path: path.to_string(), table, used: BTreeSet::new() }
    }

    fn key(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn raw(&mut self, key: &str) -> Option<&'a Value> {
        self.used.insert(key.to_string());
        self.table.and_then(|t| t.get(key))
    }

    fn typed<T>(&mut self, key: &str, what: &str, errors: &mut Vec<String>, f: impl Fn(&Value) -> Option<T>) -> Option<T> {
        let v = self.raw(key)?;
        let out = f(v);
        if out.is_none() {
            errors.push(format!("`{}` must be {what}, got {v}", self.key(key)));
        }
        out
    }

    fn f64(&mut self, key: &str, errors: &mut Vec<String>) -> Option<f64> {
        self.typed(key, "a number", errors, as_f64)
    }

    fn u64(&mut self, key: &str, errors: &mut Vec<String>) -> Option<u64> {
        self.typed(key, "a non-negative integer", errors, |v| v.as_integer().and_then(|i| u64::try_from(i).ok()))
    }

    fn u32(&mut self, key: &str, errors: &mut Vec<String>) -> Option<u32> {
        self.typed(key, "a non-negative integer below 2^32", errors, |v| v.as_integer().and_then(|i| u32::try_from(i).ok()))
    }

    fn i64(&mut self, key: &str, errors: &mut Vec<String>) -> Option<i64> {
        self.typed(key, "an integer", errors, Value::as_integer)
    }

    fn bool(&mut self, key: &str, errors: &mut Vec<String>) -> Option<bool> {
        self.typed(key, "a boolean", errors, Value::as_bool)
    }

    fn str(&mut self, key: &str, errors: &mut Vec<String>) -> Option<&'a str> {
        let v = self.raw(key)?;
        let out = v.as_str();
        if out.is_none() {
            errors.push(format!("`{}` must be a string, got {v}", self.key(key)));
        }
        out
    }

    fn f64_list(&mut self, key: &str, errors: &mut Vec<String>) -> Option<Vec<f64>> {
        self.typed(key, "an array of numbers", errors, |v| v.as_array()?.iter().map(as_f64).collect())
    }

    fn table(&mut self, key: &str, errors: &mut Vec<String>) -> Option<&'a Table> {
        let v = self.raw(key)?;
        let out = v.as_table();
        if out.is_none() {
            errors.push(format!("`{}` must be a table, got {v}", self.key(key)));
        }
        out
    }

    fn required<T>(&self, v: Option<T>, key: &str, errors: &mut Vec<String>) -> Option<T> {
        if v.is_none() && !self.table.is_some_and(|t| t.contains_key(key)) {
            errors.push(format!("missing required key `{}`", self.key(key)));
        }
        v
    }

    fn finish(self, errors: &mut Vec<String>) {
        if let Some(t) = self.table {
            for k in t.keys().filter(|k| !self.used.contains(*k)) {
                errors.push(format!("unknown key `{}`", self.key(k)));
            }
        }
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    v.as_float().or_else(|| v.as_integer().map(|i| i as f64))
}

fn parse_model(path: &str, table: Option<&Table>, errors: &mut Vec<String>) -> Option<ModelParams> {
    let mut s = Section::new(path, table);
    let variant = s.str("variant", errors);
    let variant = s.required(variant, "variant", errors).and_then(|v| match v {
        "I" => Some(Variant::ModelI),
        "II" => Some(Variant::ModelII),
        "III" => Some(Variant::ModelIII),
        "IV" => Some(Variant::ModelIV),
        other => {
            errors.push(format!("`{}` must be one of I, II, III, IV, got {other:?}", s.key("variant")));
            None
        }
    });
    let phi = s.f64("phi", errors);
    let phi = s.required(phi, "phi", errors);
    let lambda = s.f64("lambda", errors).unwrap_or(1.0);
    let capacity = s.u32("capacity", errors);
    let capacity = s.required(capacity, "capacity", errors);
    let phi_allee = s.f64("phi_allee", errors);
    let allee_threshold = s.u32("allee_threshold", errors);
    let max_flock = s.u32("max_flock", errors);
    let phi_excess = s.f64("phi_excess", errors);
    let sim_cap = s.u32("sim_cap", errors);
    let relaxed = s.bool("relaxed", errors).unwrap_or(false);
    s.finish(errors);
    let params = ModelParams {
        phi_allee,
        allee_threshold,
        max_flock,
        phi_excess,
        sim_cap,
        relaxed,
        ..ModelParams::new(variant?, phi?, lambda, capacity?)
    };
    let invalid = params.validate();
    if invalid.is_empty() {
        Some(params)
    } else {
        errors.extend(invalid.into_iter().map(|e| format!("[{path}] {e}")));
        None
    }
}

fn parse_window(table: Option<&Table>, errors: &mut Vec<String>) -> Option<WindowConfig> {
    let mut s = Section::new("window", table);
    let dim = s.u64("dim", errors);
    let side = s.u64("side", errors);
    let sides = s.typed("sides", "an array of integers", errors, |v| {
        v.as_array()?.iter().map(|x| x.as_integer().and_then(|i| usize::try_from(i).ok())).collect::<Option<Vec<_>>>()
    });
    let boundary = s.str("boundary", errors).map(|b| match b {
        "periodic" => Some(Boundary::Periodic),
        "zero_outside" => Some(Boundary::ZeroOutside),
        "frozen_full_outside" => Some(Boundary::FrozenFullOutside),
        other => {
            errors.push(format!("`window.boundary` must be periodic, zero_outside or frozen_full_outside, got {other:?}"));
            None
        }
    });
    s.finish(errors);
    let sides = match (sides, side) {
        (Some(v), None) => {
            if dim.is_some_and(|d| d as usize != v.len()) {
                errors.push("`window.dim` disagrees with the length of `window.sides`".into());
            }
            v
        }
        (None, Some(side)) => vec![side as usize; dim.unwrap_or(2) as usize],
        (Some(_), Some(_)) => {
            errors.push("give either `window.side` or `window.sides`, not both".into());
            return None;
        }
        (None, None) => {
            errors.push("missing required key `window.side` (or `window.sides`)".into());
            return None;
        }
    };
    let config = WindowConfig { sides, boundary: boundary.unwrap_or(Some(Boundary::Periodic))? };
    if let Err(e) = config.build() {
        errors.push(format!("[window] {e}"));
        return None;
    }
    Some(config)
}

fn parse_init(table: Option<&Table>, errors: &mut Vec<String>) -> Option<InitConfig> {
    let mut s = Section::new("init", table);
    let kind = s.str("kind", errors).unwrap_or("full");
    let init = match kind {
        "empty" => Some(InitConfig::Empty),
        "full" => Some(InitConfig::Full(s.u32("count", errors))),
        "singleton" => {
            let site = s.typed("site", "an array of integers", errors, |v| {
                v.as_array()?.iter().map(Value::as_integer).collect::<Option<Vec<_>>>()
            });
            let count = s.u32("count", errors).unwrap_or(1);
            if count == 0 {
                errors.push("`init.count` must be at least 1 for a singleton".into());
            }
            Some(InitConfig::Singleton { site, count })
        }
        "explicit" => {
            let sites = s.typed("sites", "an array of [coords..., count] arrays", errors, |v| {
                v.as_array()?
                    .iter()
                    .map(|row| {
                        let row = row.as_array()?.iter().map(Value::as_integer).collect::<Option<Vec<_>>>()?;
                        let (count, coords) = row.split_last()?;
                        Some((coords.to_vec(), u32::try_from(*count).ok()?))
                    })
                    .collect::<Option<Vec<_>>>()
            });
            s.required(sites, "sites", errors).map(InitConfig::Explicit)
        }
        other => {
            errors.push(format!("`init.kind` must be empty, full, singleton or explicit, got {other:?}"));
            None
        }
    };
    s.finish(errors);
    init
}

fn parse_axis(s: &mut Section, errors: &mut Vec<String>) -> Option<Axis> {
    let axis = s.str("axis", errors);
    s.required(axis, "axis", errors).and_then(|a| match a {
        "phi" => Some(Axis::Phi),
        "phi_allee" => Some(Axis::PhiAllee),
        "capacity" => Some(Axis::Capacity),
        other => {
            errors.push(format!("`{}` must be phi, phi_allee or capacity, got {other:?}", s.key("axis")));
            None
        }
    })
}

fn positive(value: Option<f64>, key: &str, errors: &mut Vec<String>) -> Option<f64> {
    let v = value?;
    if !(v.is_finite() && v > 0.0) {
        errors.push(format!("`{key}` must be positive and finite, got {v}"));
        return None;
    }
    Some(v)
}

fn increasing(values: &[f64], key: &str, errors: &mut Vec<String>) -> bool {
    if values.is_empty() || values.windows(2).any(|w| !(w[0] < w[1])) {
        errors.push(format!("`{key}` must be a non-empty, strictly increasing list"));
        return false;
    }
    true
}

fn parse_params(experiment: Experiment, table: Option<&Table>, errors: &mut Vec<String>) -> Option<ExperimentParams> {
    let name = experiment.section();
    let mut s = Section::new(name, table);
    let key = |k: &str| format!("{name}.{k}");
    let params = match experiment {
        Experiment::Simulate => {
            let horizon = s.f64("horizon", errors);
            let horizon = positive(s.required(horizon, "horizon", errors), &key("horizon"), errors);
            let step = positive(s.f64("step", errors).or(horizon.map(|h| h / 100.0)), &key("step"), errors);
            let per_site = s.bool("per_site", errors).unwrap_or(false);
            Some(ExperimentParams::Simulate { horizon: horizon?, step: step?, per_site })
        }
        Experiment::Survival => {
            let horizon = s.f64("horizon", errors);
            let horizon = positive(s.required(horizon, "horizon", errors), &key("horizon"), errors);
            Some(ExperimentParams::Survival { horizon: horizon? })
        }
        Experiment::Sweep => {
            let axis = parse_axis(&mut s, errors);
            let horizon = s.f64("horizon", errors);
            let horizon = positive(s.required(horizon, "horizon", errors), &key("horizon"), errors);
            let list = s.f64_list("values", errors);
            let lo = s.f64("lo", errors);
            let hi = s.f64("hi", errors);
            let steps = s.u32("steps", errors);
            let values = match (list, lo, hi, steps) {
                (Some(v), None, None, None) => increasing(&v, &key("values"), errors).then_some(SweepValues::List(v)),
                (None, Some(lo), Some(hi), Some(steps)) => {
                    if !(lo < hi) || steps < 2 {
                        errors.push(format!("`{name}` range needs lo < hi and steps >= 2"));
                        None
                    } else {
                        Some(SweepValues::Range { lo, hi, steps })
                    }
                }
                _ => {
                    errors.push(format!("`{name}` needs either `values` or all of `lo`, `hi`, `steps`"));
                    None
                }
            };
            Some(ExperimentParams::Sweep { axis: axis?, values: values?, horizon: horizon? })
        }
        Experiment::Bisect => {
            let axis = parse_axis(&mut s, errors);
            let horizon = s.f64("horizon", errors);
            let horizon = positive(s.required(horizon, "horizon", errors), &key("horizon"), errors);
            let lo = s.f64("lo", errors);
            let lo = s.required(lo, "lo", errors);
            let hi = s.f64("hi", errors);
            let hi = s.required(hi, "hi", errors);
            if let (Some(a), Some(b)) = (lo, hi) {
                if !(a < b) {
                    errors.push(format!("`{name}` bracket must satisfy lo < hi, got [{a}, {b}]"));
                }
            }
            let threshold = s.f64("threshold", errors).unwrap_or(0.05);
            if !(threshold > 0.0 && threshold < 1.0) {
                errors.push(format!("`{}` must lie in (0, 1)", key("threshold")));
            }
            let tolerance = s.f64("tolerance", errors);
            let tolerance = positive(s.required(tolerance, "tolerance", errors), &key("tolerance"), errors);
            let max_doublings = s.u32("max_doublings", errors).unwrap_or(6);
            if max_doublings > 20 {
                errors.push(format!("`{}` must be at most 20", key("max_doublings")));
            }
            Some(ExperimentParams::Bisect {
                axis: axis?,
                lo: lo?,
                hi: hi?,
                threshold,
                tolerance: tolerance?,
                max_doublings,
                horizon: horizon?,
            })
        }
        Experiment::CheckOrder => {
            let high = s.table("high", errors);
            let high = s.required(high, "high", errors);
            let high = high.and_then(|t| parse_model(&key("high"), Some(t), errors));
            let mode = match s.str("mode", errors).unwrap_or("general") {
                "general" => Some(OrderMode::General),
                "single" => Some(OrderMode::Single),
                "cross" => Some(OrderMode::Cross),
                other => {
                    errors.push(format!("`{}` must be general, single or cross, got {other:?}", key("mode")));
                    None
                }
            };
            let k_bound = s.u32("k_bound", errors);
            let budget = s.u64("budget", errors);
            Some(ExperimentParams::CheckOrder { high: high?, mode: mode?, k_bound, budget })
        }
        Experiment::Ruin => {
            let r1 = s.i64("r1", errors);
            let r1 = s.required(r1, "r1", errors);
            let r2 = s.i64("r2", errors);
            let r2 = s.required(r2, "r2", errors);
            let j = s.i64("j", errors);
            let j = s.required(j, "j", errors);
            let p = s.f64("p", errors);
            let p = s.required(p, "p", errors);
            let walks = s.u64("walks", errors).unwrap_or(0);
            let (r1, r2, j, p) = (r1?, r2?, j?, p?);
            let mut ok = true;
            if !(r1 < r2 && r1 <= j && j <= r2) {
                errors.push(format!("`{name}` needs r1 < r2 and r1 <= j <= r2, got r1 = {r1}, r2 = {r2}, j = {j}"));
                ok = false;
            }
            if !(p > 0.0 && p < 1.0) {
                errors.push(format!("`{}` must lie in (0, 1), got {p}", key("p")));
                ok = false;
            }
            ok.then_some(ExperimentParams::Ruin { r1, r2, j, p, walks })
        }
        Experiment::Blocks => {
            let kind = s.str("kind", errors);
            let kind = s.required(kind, "kind", errors).and_then(|k| match k {
                "survival" => Some(BlockKindConfig::Survival),
                "extinction" => Some(BlockKindConfig::Extinction),
                "dominator" => Some(BlockKindConfig::Dominator),
                other => {
                    errors.push(format!("`{}` must be survival, extinction or dominator, got {other:?}", key("kind")));
                    None
                }
            });
            let l = s.u32("l", errors).unwrap_or(1);
            if l < 1 {
                errors.push(format!("`{}` must be at least 1", key("l")));
            }
            let times = s.f64_list("times", errors);
            let times = s.required(times, "times", errors);
            if let Some(t) = &times {
                if increasing(t, &key("times"), errors) && t[0] < 0.0 {
                    errors.push(format!("`{}` must be non-negative", key("times")));
                }
            }
            let phi_allee = s.f64_list("phi_allee", errors).unwrap_or_default();
            let phi_zero_inside = s.bool("phi_zero_inside", errors).unwrap_or(false);
            if let (Some(BlockKindConfig::Extinction | BlockKindConfig::Dominator), Some(t)) = (kind, &times) {
                if t.len() != 1 && kind == Some(BlockKindConfig::Extinction) {
                    errors.push(format!("`{}` must hold exactly one time for extinction blocks", key("times")));
                }
            }
            Some(ExperimentParams::Blocks { kind: kind?, l, times: times?, phi_allee, phi_zero_inside })
        }
        Experiment::Percolation => {
            let width = s.u64("width", errors);
            let width = s.required(width, "width", errors);
            let height = s.u64("height", errors);
            let height = s.required(height, "height", errors);
            let p = s.typed("p", "a number or an array of numbers", errors, |v| match v.as_array() {
                Some(a) => a.iter().map(as_f64).collect(),
                None => as_f64(v).map(|x| vec![x]),
            });
            let p = s.required(p, "p", errors);
            if let Some(p) = &p {
                if increasing(p, &key("p"), errors) && p.iter().any(|x| !(0.0..=1.0).contains(x)) {
                    errors.push(format!("`{}` values must lie in [0, 1]", key("p")));
                }
            }
            if width == Some(0) {
                errors.push(format!("`{}` must be positive", key("width")));
            }
            let radius = s.u64("radius", errors).unwrap_or(0);
            Some(ExperimentParams::Percolation { width: width? as usize, height: height? as usize, p: p?, radius: radius as usize })
        }
        Experiment::EdgeEvent => {
            let dim = s.u64("dim", errors).unwrap_or(2);
            if !(1..=3).contains(&dim) {
                errors.push(format!("`{}` must be 1, 2 or 3", key("dim")));
            }
            let cutoff = positive(Some(s.f64("cutoff", errors).unwrap_or(200.0)), &key("cutoff"), errors);
            Some(ExperimentParams::EdgeEvent { dim: dim as usize, cutoff: cutoff? })
        }
        Experiment::MeanOccupancy => {
            let horizon = s.f64("horizon", errors);
            let horizon = positive(s.required(horizon, "horizon", errors), &key("horizon"), errors);
            let step = positive(s.f64("step", errors).or(horizon.map(|h| h / 20.0)), &key("step"), errors);
            Some(ExperimentParams::MeanOccupancy { horizon: horizon?, step: step? })
        }
    };
    s.finish(errors);
    params
}

/// Parses and validates a configuration document. Returns every problem
/// found, not just the first.
pub fn parse_table(doc: &Table) -> Result<RunConfig, Vec<String>> {
    let mut errors = Vec::new();
    let mut top = Section::new("", Some(doc));
    let experiment = top.str("experiment", &mut errors);
    let experiment = top.required(experiment, "experiment", &mut errors).and_then(|e| {
        let parsed = Experiment::parse(e);
        if parsed.is_none() {
            let names: Vec<_> = Experiment::ALL.iter().map(|e| e.name()).collect();
            errors.push(format!("`experiment` must be one of {}, got {e:?}", names.join(", ")));
        }
        parsed
    });
    let seed = top.u64("seed", &mut errors).unwrap_or(DEFAULT_SEED);
    let replicas = top.u64("replicas", &mut errors).unwrap_or(DEFAULT_REPLICAS);
    if replicas == 0 {
        errors.push("`replicas` must be at least 1".into());
    }
    let model_table = top.table("model", &mut errors);
    let window_table = top.table("window", &mut errors);
    let init_table = top.table("init", &mut errors);
    let output = top.table("output", &mut errors);
    let mut out = Section::new("output", output);
    let output_dir = out.str("dir", &mut errors).unwrap_or(DEFAULT_OUTPUT_DIR).into();
    out.finish(&mut errors);

    let Some(experiment) = experiment else {
        top.finish(&mut errors);
        return Err(errors);
    };
    let section = top.table(experiment.section(), &mut errors);
    // Sections of other experiments are reported by `finish` as unknown keys.
    top.finish(&mut errors);

    let model = match (experiment.needs_model(), model_table) {
        (true, t) => parse_model("model", Some(t.unwrap_or(&Table::new())), &mut errors),
        (false, Some(_)) => {
            errors.push(format!("[model] is not used by experiment {}", experiment.name()));
            None
        }
        (false, None) => None,
    };
    let (window, init) = if experiment.needs_window() {
        let window = parse_window(window_table, &mut errors);
        let init = parse_init(init_table, &mut errors);
        (window, init)
    } else {
        for (name, t) in [("window", window_table), ("init", init_table)] {
            if t.is_some() {
                errors.push(format!("[{name}] is not used by experiment {}", experiment.name()));
            }
        }
        (None, None)
    };
    let params = parse_params(experiment, section, &mut errors);

    if let (Some(m), Some(w), Some(i)) = (&model, &window, &init) {
        check_init(m, w, i, &mut errors);
    }
    if let (Some(m), Some(ExperimentParams::CheckOrder { high, .. })) = (&model, &params) {
        if m.variant == Variant::ModelIV || high.variant == Variant::ModelIV {
            errors.push("check-order needs finite-capacity models (I, II or III)".into());
        }
    }
    if errors.is_empty() {
        Ok(RunConfig {
            experiment,
            seed,
            replicas,
            model,
            window,
            init,
            output_dir,
            params: params.expect("no errors"),
        })
    } else {
        Err(errors)
    }
}

fn check_init(model: &ModelParams, window: &WindowConfig, init: &InitConfig, errors: &mut Vec<String>) {
    let Ok(spec) = ModelSpec::new(model.clone()) else { return };
    let Ok(w) = window.build() else { return };
    let resolved = init.resolve(window, model.capacity);
    if let Err(e) = metapop::lattice::make_configuration(&w, &resolved, Some(spec.max_occupancy())) {
        errors.push(format!("[init] {e}"));
    }
}

pub fn parse_str(text: &str) -> Result<RunConfig, CliError> {
    let doc = parse_document(text)?;
    parse_table(&doc).map_err(CliError::Config)
}

pub fn parse_document(text: &str) -> Result<Table, CliError> {
    text.parse::<Table>().map_err(|e| CliError::Config(vec![format!("invalid TOML: {e}")]))
}

fn model_table(m: &ModelParams) -> Table {
    let mut t = Table::new();
    t.insert("variant".into(), m.variant.to_string().into());
    t.insert("phi".into(), m.phi.into());
    t.insert("lambda".into(), m.lambda.into());
    t.insert("capacity".into(), i64::from(m.capacity).into());
    if let Some(v) = m.phi_allee {
        t.insert("phi_allee".into(), v.into());
    }
    if let Some(v) = m.allee_threshold {
        t.insert("allee_threshold".into(), i64::from(v).into());
    }
    if let Some(v) = m.max_flock {
        t.insert("max_flock".into(), i64::from(v).into());
    }
    if let Some(v) = m.phi_excess {
        t.insert("phi_excess".into(), v.into());
    }
    if let Some(v) = m.sim_cap {
        t.insert("sim_cap".into(), i64::from(v).into());
    }
    if m.relaxed {
        t.insert("relaxed".into(), true.into());
    }
    t
}

fn floats(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| x.into()).collect())
}

fn ints(v: &[i64]) -> Value {
    Value::Array(v.iter().map(|&x| x.into()).collect())
}

fn axis_name(a: Axis) -> &'static str {
    match a {
        Axis::Phi => "phi",
        Axis::PhiAllee => "phi_allee",
        Axis::Capacity => "capacity",
    }
}

impl RunConfig {
    /// The fully resolved configuration as a TOML table; parsing it back
    /// yields an equal `RunConfig`.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new();
        t.insert("experiment".into(), self.experiment.name().into());
        t.insert("seed".into(), Value::Integer(self.seed as i64));
        t.insert("replicas".into(), Value::Integer(self.replicas as i64));
        if let Some(m) = &self.model {
            t.insert("model".into(), model_table(m).into());
        }
        if let Some(w) = &self.window {
            let mut wt = Table::new();
            wt.insert("sides".into(), ints(&w.sides.iter().map(|&s| s as i64).collect::<Vec<_>>()));
            let b = match w.boundary {
                Boundary::Periodic => "periodic",
                Boundary::ZeroOutside => "zero_outside",
                Boundary::FrozenFullOutside => "frozen_full_outside",
            };
            wt.insert("boundary".into(), b.into());
            t.insert("window".into(), wt.into());
        }
        if let Some(i) = &self.init {
            let mut it = Table::new();
            match i {
                InitConfig::Empty => {
                    it.insert("kind".into(), "empty".into());
                }
                InitConfig::Full(n) => {
                    it.insert("kind".into(), "full".into());
                    if let Some(n) = n {
                        it.insert("count".into(), i64::from(*n).into());
                    }
                }
                InitConfig::Singleton { site, count } => {
                    it.insert("kind".into(), "singleton".into());
                    if let Some(s) = site {
                        it.insert("site".into(), ints(s));
                    }
                    it.insert("count".into(), i64::from(*count).into());
                }
                InitConfig::Explicit(list) => {
                    it.insert("kind".into(), "explicit".into());
                    let rows = list
                        .iter()
                        .map(|(c, n)| {
                            let mut row = c.clone();
                            row.push(i64::from(*n));
                            ints(&row)
                        })
                        .collect();
                    it.insert("sites".into(), Value::Array(rows));
                }
            }
            t.insert("init".into(), it.into());
        }
        let mut out = Table::new();
        out.insert("dir".into(), self.output_dir.display().to_string().into());
        t.insert("output".into(), out.into());

        let mut p = Table::new();
        match &self.params {
            ExperimentParams::Simulate { horizon, step, per_site } => {
                p.insert("horizon".into(), (*horizon).into());
                p.insert("step".into(), (*step).into());
                p.insert("per_site".into(), (*per_site).into());
            }
            ExperimentParams::Survival { horizon } => {
                p.insert("horizon".into(), (*horizon).into());
            }
            ExperimentParams::Sweep { axis, values, horizon } => {
                p.insert("axis".into(), axis_name(*axis).into());
                p.insert("horizon".into(), (*horizon).into());
                match values {
                    SweepValues::List(v) => {
                        p.insert("values".into(), floats(v));
                    }
                    SweepValues::Range { lo, hi, steps } => {
                        p.insert("lo".into(), (*lo).into());
                        p.insert("hi".into(), (*hi).into());
                        p.insert("steps".into(), i64::from(*steps).into());
                    }
                }
            }
            ExperimentParams::Bisect { axis, lo, hi, threshold, tolerance, max_doublings, horizon } => {
                p.insert("axis".into(), axis_name(*axis).into());
                p.insert("lo".into(), (*lo).into());
                p.insert("hi".into(), (*hi).into());
                p.insert("threshold".into(), (*threshold).into());
                p.insert("tolerance".into(), (*tolerance).into());
                p.insert("max_doublings".into(), i64::from(*max_doublings).into());
                p.insert("horizon".into(), (*horizon).into());
            }
            ExperimentParams::CheckOrder { high, mode, k_bound, budget } => {
                p.insert("high".into(), model_table(high).into());
                let m = match mode {
                    OrderMode::General => "general",
                    OrderMode::Single => "single",
                    OrderMode::Cross => "cross",
                };
                p.insert("mode".into(), m.into());
                if let Some(k) = k_bound {
                    p.insert("k_bound".into(), i64::from(*k).into());
                }
                if let Some(b) = budget {
                    p.insert("budget".into(), Value::Integer(*b as i64));
                }
            }
            ExperimentParams::Ruin { r1, r2, j, p: prob, walks } => {
                p.insert("r1".into(), (*r1).into());
                p.insert("r2".into(), (*r2).into());
                p.insert("j".into(), (*j).into());
                p.insert("p".into(), (*prob).into());
                p.insert("walks".into(), Value::Integer(*walks as i64));
            }
            ExperimentParams::Blocks { kind, l, times, phi_allee, phi_zero_inside } => {
                let k = match kind {
                    BlockKindConfig::Survival => "survival",
                    BlockKindConfig::Extinction => "extinction",
                    BlockKindConfig::Dominator => "dominator",
                };
                p.insert("kind".into(), k.into());
                p.insert("l".into(), i64::from(*l).into());
                p.insert("times".into(), floats(times));
                if !phi_allee.is_empty() {
                    p.insert("phi_allee".into(), floats(phi_allee));
                }
                p.insert("phi_zero_inside".into(), (*phi_zero_inside).into());
            }
            ExperimentParams::Percolation { width, height, p: probs, radius } => {
                p.insert("width".into(), Value::Integer(*width as i64));
                p.insert("height".into(), Value::Integer(*height as i64));
                p.insert("p".into(), floats(probs));
                p.insert("radius".into(), Value::Integer(*radius as i64));
            }
            ExperimentParams::EdgeEvent { dim, cutoff } => {
                p.insert("dim".into(), Value::Integer(*dim as i64));
                p.insert("cutoff".into(), (*cutoff).into());
            }
            ExperimentParams::MeanOccupancy { horizon, step } => {
                p.insert("horizon".into(), (*horizon).into());
                p.insert("step".into(), (*step).into());
            }
        }
        t.insert(self.experiment.section().into(), p.into());
        t
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_table()).expect("tables always serialize")
    }

    pub fn model_spec(&self) -> metapop::Result<ModelSpec> {
        ModelSpec::new(self.model.clone().ok_or_else(|| metapop::Error::Domain("no model configured".into()))?)
    }
}
