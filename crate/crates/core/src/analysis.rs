//! Estimators built on the engine, and the analytic oracles they are checked
//! against.
//!
//! Survival is measured at a finite horizon on a finite window. The crossing
//! point found by [`bisect_critical`] estimates where that finite-window
//! survival frequency crosses a threshold; it is not the infinite-volume
//! critical value, and nothing here extrapolates in window size.

use rand::Rng;
use rand_distr::Exp1;
use serde::Serialize;

use crate::engine::{simulate, EngineOptions, RngSeed, Runner, SampleGrid};
use crate::lattice::{make_configuration, Boundary, Configuration, InitSpec, LatticeWindow};
use crate::models::{BirthDeathChain, ModelSpec, Variant};
use crate::stats::{mean_se, quantile_sorted, wilson, Interval, Z95};
use crate::{Error, Result};

/// Nearest-neighbour walk on `r1..=r2` started at `j`, stepping up with
/// probability `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RuinProblem {
    pub r1: i64,
    pub r2: i64,
    pub j: i64,
    pub p: f64,
}

impl RuinProblem {
    fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::domain(format!("up-probability must lie in (0, 1), got {}", self.p)));
        }
        if self.r1 >= self.r2 {
            return Err(Error::domain(format!("need r1 < r2, got {} and {}", self.r1, self.r2)));
        }
        if self.j < self.r1 || self.j > self.r2 {
            return Err(Error::domain(format!("start {} outside [{}, {}]", self.j, self.r1, self.r2)));
        }
        Ok(())
    }
}

/// Probability of reaching `r2` before `r1`:
/// `(1 - (q/p)^(j-r1)) / (1 - (q/p)^n)` with `n = r2 - r1`, and `(j-r1)/n`
/// when `p = q`.
pub fn ruin_probability(prob: &RuinProblem) -> Result<f64> {
    prob.validate()?;
    if prob.j == prob.r1 {
        return Ok(0.0);
    }
    if prob.j == prob.r2 {
        return Ok(1.0);
    }
    let n = (prob.r2 - prob.r1) as f64;
    let i = (prob.j - prob.r1) as f64;
    let log_ratio = (-prob.p).ln_1p() - prob.p.ln();
    if log_ratio == 0.0 {
        return Ok(i / n);
    }
    // Written with expm1 so that p close to 1/2 keeps full precision, and
    // rearranged for q > p so that large n does not overflow.
    let value = if log_ratio < 0.0 {
        (i * log_ratio).exp_m1() / (n * log_ratio).exp_m1()
    } else {
        ((i - n) * log_ratio).exp() * (-(i * log_ratio)).exp_m1() / (-(n * log_ratio)).exp_m1()
    };
    Ok(value.clamp(0.0, 1.0))
}

/// Number of `walks` (out of `walks`) that hit `r2` first.
pub fn simulate_ruin(prob: &RuinProblem, walks: u64, seed: RngSeed) -> Result<u64> {
    prob.validate()?;
    let mut rng = seed.rng();
    let mut hits = 0;
    for _ in 0..walks {
        let mut x = prob.j;
        while x > prob.r1 && x < prob.r2 {
            x += if rng.random_bool(prob.p) { 1 } else { -1 };
        }
        hits += (x == prob.r2) as u64;
    }
    Ok(hits)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalEstimate {
    pub replicas: u64,
    pub horizon: f64,
    pub survivals: u64,
    pub estimate: f64,
    pub interval: Interval,
    /// `(q, t_q)` quantiles of the extinction time among extinct replicas.
    pub extinction_quantiles: Vec<(f64, f64)>,
    /// Fraction of all replicas that died in the last 20% of the horizon.
    pub late_extinction_fraction: f64,
    /// False when at least 1% of replicas died late, so the horizon may be
    /// too short for survival to mean much.
    pub horizon_adequate: bool,
    pub cap_hits: u64,
}

/// Per-replica outcome used to assemble a [`SurvivalEstimate`].
#[derive(Debug, Clone, Copy)]
struct RunOutcome {
    extinction: Option<f64>,
    cap_hits: u64,
}

fn run_survival(
    model: &ModelSpec,
    window: &LatticeWindow,
    init: &Configuration,
    horizon: f64,
    replicas: std::ops::Range<u64>,
    seed: u64,
    runner: &Runner,
) -> Result<Vec<RunOutcome>> {
    if window.boundary() == Boundary::FrozenFullOutside {
        return Err(Error::domain("extinction is undefined under a frozen-full boundary"));
    }
    let grid = SampleGrid { times: vec![], per_site: false };
    let start = replicas.start;
    runner.try_map(replicas.end - start, |r| {
        let t = simulate(model, window, init, horizon, &grid, RngSeed::new(seed, start + r), EngineOptions::default())?;
        Ok(RunOutcome { extinction: t.extinction_time, cap_hits: t.cap_hits })
    })
}

fn summarize(outcomes: &[RunOutcome], horizon: f64) -> SurvivalEstimate {
    let replicas = outcomes.len() as u64;
    let mut times: Vec<f64> = outcomes.iter().filter_map(|o| o.extinction).collect();
    times.sort_by(f64::total_cmp);
    let survivals = replicas - times.len() as u64;
    let late = times.iter().filter(|&&t| t >= 0.8 * horizon).count() as f64 / replicas.max(1) as f64;
    SurvivalEstimate {
        replicas,
        horizon,
        survivals,
        estimate: survivals as f64 / replicas.max(1) as f64,
        interval: wilson(survivals, replicas, Z95),
        extinction_quantiles: [0.5, 0.9, 0.99, 1.0]
            .iter()
            .filter(|_| !times.is_empty())
            .map(|&q| (q, quantile_sorted(&times, q)))
            .collect(),
        late_extinction_fraction: late,
        horizon_adequate: late < 0.01,
        cap_hits: outcomes.iter().map(|o| o.cap_hits).sum(),
    }
}

/// Fraction of `replicas` independent runs still alive at `horizon`, with a
/// Wilson 95% interval. Replica `r` uses stream `(seed, r)`.
pub fn estimate_survival(
    model: &ModelSpec,
    window: &LatticeWindow,
    init: &Configuration,
    horizon: f64,
    replicas: u64,
    seed: u64,
    runner: &Runner,
) -> Result<SurvivalEstimate> {
    if replicas == 0 {
        return Err(Error::domain("need at least one replica"));
    }
    let outcomes = run_survival(model, window, init, horizon, 0..replicas, seed, runner)?;
    Ok(summarize(&outcomes, horizon))
}

/// Parameter varied by [`bisect_critical`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Phi,
    PhiAllee,
    Capacity,
}

impl Axis {
    /// Survival decreases along this axis.
    fn decreasing(self) -> bool {
        !matches!(self, Axis::Capacity)
    }

    /// `base` with the parameter set to `value`.
    pub fn apply(self, base: &ModelSpec, value: f64) -> Result<ModelSpec> {
        match self {
            Axis::Phi => base.with_params(|p| p.phi = value),
            Axis::PhiAllee => {
                if !matches!(base.variant(), Variant::ModelII | Variant::ModelIII) {
                    return Err(Error::domain("phi_A axis needs model II or III"));
                }
                base.with_params(|p| p.phi_allee = Some(value))
            }
            Axis::Capacity => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::domain(format!("capacity must be a positive integer, got {value}")));
                }
                base.with_params(|p| p.capacity = value as u32)
            }
        }
    }
}

/// Everything a survival estimate needs except the replica count.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalSetup {
    pub model: ModelSpec,
    pub window: LatticeWindow,
    /// Initial state. On the capacity axis `FullAt` always means "full at the
    /// current capacity".
    pub init: InitSpec,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BisectionSpec {
    pub axis: Axis,
    pub lo: f64,
    pub hi: f64,
    /// Survival frequency whose crossing is located.
    pub threshold: f64,
    pub tolerance: f64,
    /// Replicas of a first attempt; doubled while undecided.
    pub replicas: u64,
    pub max_doublings: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// Interval entirely above the threshold.
    Above,
    /// Interval entirely below.
    Below,
    Undecided,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decision {
    pub value: f64,
    pub replicas: u64,
    pub survivals: u64,
    pub estimate: f64,
    pub interval: Interval,
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BisectionResult {
    pub axis: Axis,
    pub lo: f64,
    pub hi: f64,
    pub estimate: f64,
    /// False if some midpoint stayed undecided at the largest replica count.
    pub converged: bool,
    pub decisions: Vec<Decision>,
}

fn decide(setup: &SurvivalSetup, spec: &BisectionSpec, value: f64, runner: &Runner) -> Result<Decision> {
    let model = spec.axis.apply(&setup.model, value)?;
    let init = match (&setup.init, spec.axis) {
        (InitSpec::FullAt(_), Axis::Capacity) => InitSpec::FullAt(model.capacity()),
        (i, _) => i.clone(),
    };
    let init = make_configuration(&setup.window, &init, Some(model.max_occupancy()))?;
    let mut outcomes = Vec::new();
    let mut target = spec.replicas;
    let max = spec.replicas << spec.max_doublings;
    loop {
        // The same seed at every parameter value: common random numbers.
        let more = run_survival(
            &model,
            &setup.window,
            &init,
            setup.horizon,
            outcomes.len() as u64..target,
            spec.seed,
            runner,
        )?;
        outcomes.extend(more);
        let s = summarize(&outcomes, setup.horizon);
        let side = if s.interval.lo > spec.threshold {
            Side::Above
        } else if s.interval.hi < spec.threshold {
            Side::Below
        } else {
            Side::Undecided
        };
        if side != Side::Undecided || target >= max {
            return Ok(Decision {
                value,
                replicas: s.replicas,
                survivals: s.survivals,
                estimate: s.estimate,
                interval: s.interval,
                side,
            });
        }
        target *= 2;
    }
}

/// Bisects for the parameter value where finite-horizon survival crosses
/// `threshold`. A step is taken only when the Wilson interval excludes the
/// threshold; otherwise replicas are doubled up to `2^max_doublings` times.
pub fn bisect_critical(setup: &SurvivalSetup, spec: &BisectionSpec, runner: &Runner) -> Result<BisectionResult> {
    if !(spec.lo < spec.hi) {
        return Err(Error::domain(format!("degenerate bracket [{}, {}]", spec.lo, spec.hi)));
    }
    if !(spec.tolerance > 0.0) || !(spec.threshold > 0.0 && spec.threshold < 1.0) || spec.replicas == 0 {
        return Err(Error::domain("need tolerance > 0, threshold in (0, 1) and replicas >= 1"));
    }
    let (survive_end, die_end) = if spec.axis.decreasing() { (spec.lo, spec.hi) } else { (spec.hi, spec.lo) };
    let a = decide(setup, spec, survive_end, runner)?;
    let b = decide(setup, spec, die_end, runner)?;
    let mut decisions = vec![a.clone(), b.clone()];
    if a.side != Side::Above || b.side != Side::Below {
        return Err(Error::domain(format!(
            "bracket endpoints are not separated by the threshold: {:?} at {}, {:?} at {}",
            a.side, a.value, b.side, b.value
        )));
    }
    let (mut lo, mut hi) = (spec.lo, spec.hi);
    let integer = spec.axis == Axis::Capacity;
    let mut converged = true;
    while hi - lo > spec.tolerance {
        let mut mid = 0.5 * (lo + hi);
        if integer {
            mid = mid.floor();
            if mid <= lo {
                break;
            }
        }
        let d = decide(setup, spec, mid, runner)?;
        decisions.push(d.clone());
        let survives = match d.side {
            Side::Above => true,
            Side::Below => false,
            Side::Undecided => {
                converged = false;
                break;
            }
        };
        if survives == spec.axis.decreasing() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(BisectionResult { axis: spec.axis, lo, hi, estimate: 0.5 * (lo + hi), converged, decisions })
}

/// Spatial average of the mean occupancy at grid times, with standard errors
/// across replicas.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccupancySeries {
    pub replicas: u64,
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

fn series(times: &[f64], runs: &[Vec<f64>]) -> OccupancySeries {
    let mut mean = Vec::with_capacity(times.len());
    let mut se = Vec::with_capacity(times.len());
    for i in 0..times.len() {
        let column: Vec<f64> = runs.iter().map(|r| r[i]).collect();
        let (m, s) = mean_se(&column);
        mean.push(m);
        se.push(s);
    }
    OccupancySeries { replicas: runs.len() as u64, times: times.to_vec(), mean, se }
}

pub fn mean_occupancy(
    model: &ModelSpec,
    window: &LatticeWindow,
    init: &Configuration,
    grid: &[f64],
    replicas: u64,
    seed: u64,
    runner: &Runner,
) -> Result<OccupancySeries> {
    if replicas == 0 {
        return Err(Error::domain("need at least one replica"));
    }
    let horizon = grid.last().copied().unwrap_or(0.0);
    let sample = SampleGrid { times: grid.to_vec(), per_site: false };
    let sites = window.num_sites() as f64;
    let runs = runner.try_map(replicas, |r| {
        let t = simulate(model, window, init, horizon, &sample, RngSeed::new(seed, r), EngineOptions::default())?;
        let skip = t.samples.len() - grid.len();
        Ok(t.samples[skip..].iter().map(|s| s.total as f64 / sites).collect::<Vec<f64>>())
    })?;
    Ok(series(grid, &runs))
}

/// One path of a birth-death chain from `start`, read at increasing `grid`
/// times.
pub fn simulate_chain<C: BirthDeathChain + ?Sized>(chain: &C, start: u32, grid: &[f64], seed: RngSeed) -> Result<Vec<u32>> {
    if grid.windows(2).any(|w| !(w[0] <= w[1])) || grid.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::domain("grid times must be non-negative and non-decreasing"));
    }
    if chain.max_state().is_some_and(|m| start > m) {
        return Err(Error::domain("start state outside the chain"));
    }
    let mut rng = seed.rng();
    let mut state = start;
    let mut time = 0.0;
    let mut out = Vec::with_capacity(grid.len());
    for &t in grid {
        loop {
            let (b, d) = (chain.birth(state), chain.death(state));
            let total = b + d;
            if total <= 0.0 {
                break;
            }
            let dt: f64 = rng.sample::<f64, _>(Exp1) / total;
            if time + dt > t {
                // Memoryless: drop the overshooting event.
                break;
            }
            time += dt;
            if rng.random::<f64>() * total < b {
                state = state.checked_add(1).ok_or_else(|| Error::Internal("chain state overflow".into()))?;
            } else {
                state -= 1;
            }
        }
        time = t;
        out.push(state);
    }
    Ok(out)
}

/// Mean path of a birth-death chain over `replicas` runs.
pub fn chain_mean<C: BirthDeathChain + Sync + ?Sized>(
    chain: &C,
    start: u32,
    grid: &[f64],
    replicas: u64,
    seed: u64,
    runner: &Runner,
) -> Result<OccupancySeries> {
    let runs = runner.try_map(replicas, |r| {
        Ok(simulate_chain(chain, start, grid, RngSeed::new(seed, r))?.into_iter().map(f64::from).collect::<Vec<_>>())
    })?;
    Ok(series(grid, &runs))
}

/// Distribution at time `t` of a CTMC with dense generator `q` started from
/// distribution `p0`, by uniformization.
pub fn transient(q: &[Vec<f64>], p0: &[f64], t: f64) -> Result<Vec<f64>> {
    let n = q.len();
    if p0.len() != n || q.iter().any(|row| row.len() != n) {
        return Err(Error::domain("generator must be square and match the initial distribution"));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::domain("time must be finite and >= 0"));
    }
    let rate = q.iter().enumerate().map(|(i, row)| -row[i]).fold(0.0, f64::max);
    if rate == 0.0 || t == 0.0 {
        return Ok(p0.to_vec());
    }
    // Split long times so that exp(-rate dt) never underflows.
    let pieces = (rate * t / 50.0).ceil().max(1.0) as usize;
    let dt = t / pieces as f64;
    let lt = rate * dt;
    let step = |p: &[f64]| -> Vec<f64> {
        let mut next = p.to_vec();
        for i in 0..n {
            if p[i] != 0.0 {
                for j in 0..n {
                    next[j] += p[i] * q[i][j] / rate;
                }
            }
        }
        next
    };
    let mut p = p0.to_vec();
    for _ in 0..pieces {
        let mut term = p.clone();
        let mut weight = (-lt).exp();
        let mut acc: Vec<f64> = term.iter().map(|v| v * weight).collect();
        let mut mass = weight;
        let mut k = 0u32;
        while mass < 1.0 - 1e-16 && k < 10_000 {
            k += 1;
            term = step(&term);
            weight *= lt / k as f64;
            mass += weight;
            acc.iter_mut().zip(&term).for_each(|(a, v)| *a += weight * v);
        }
        p = acc;
    }
    Ok(p)
}

/// Generator matrix of a finite birth-death chain.
pub fn chain_generator<C: BirthDeathChain + ?Sized>(chain: &C) -> Result<Vec<Vec<f64>>> {
    let m = chain.max_state().ok_or_else(|| Error::domain("chain has an unbounded state space"))? as usize;
    let mut q = vec![vec![0.0; m + 1]; m + 1];
    for l in 0..=m {
        let b = if l < m { chain.birth(l as u32) } else { 0.0 };
        let d = if l > 0 { chain.death(l as u32) } else { 0.0 };
        if l < m {
            q[l][l + 1] = b;
        }
        if l > 0 {
            q[l][l - 1] = d;
        }
        q[l][l] = -(b + d);
    }
    Ok(q)
}
