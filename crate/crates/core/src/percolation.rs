//! Block events of the percolation comparisons, on desk-scale boxes in `d = 2`.
//!
//! Survival blocks live on the open box `(-4L, 4L)^2` with nothing outside.
//! A run starts from one individual at a corner of `I = [-L, L]^2` and is wet
//! at time `T` if both `I - 2L e1` and `I + 2L e1` are occupied.
//!
//! Extinction blocks live on `(-2L, 2L)^2` with every exterior site frozen at
//! `N`, start full, and count as dry-block successes (the proof calls them
//! wet) when `[-L, L]^2` stays empty during all of `[T, 2T]`.

use rand::Rng;
use rand_distr::Exp1;
use serde::Serialize;

use crate::analysis::{chain_generator, ruin_probability, simulate_chain, transient, RuinProblem};
use crate::engine::{CoupledChain, EngineOptions, Marginal, RngSeed, Runner, Simulation};
use crate::lattice::{make_configuration, Boundary, InitSpec, LatticeWindow, Site};
use crate::models::{dominator, ModelSpec, Variant};
use crate::stats::{mean_se, wilson, Interval, Z95};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    SurvivalBlock,
    ExtinctionBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub l: u32,
    pub t: f64,
}

impl BlockSpec {
    /// Side of the simulated window: `8L - 1` or `4L - 1`.
    pub fn side(&self) -> usize {
        match self.kind {
            BlockKind::SurvivalBlock => 8 * self.l as usize - 1,
            BlockKind::ExtinctionBlock => 4 * self.l as usize - 1,
        }
    }

    pub fn window(&self) -> Result<LatticeWindow> {
        let boundary = match self.kind {
            BlockKind::SurvivalBlock => Boundary::ZeroOutside,
            BlockKind::ExtinctionBlock => Boundary::FrozenFullOutside,
        };
        LatticeWindow::new(vec![self.side(); 2], boundary)
    }

    /// Window index of the centred coordinate `c`.
    fn index(&self, c: i64) -> usize {
        (c + (self.side() as i64 - 1) / 2) as usize
    }

    /// Row-major mask of the sites with centred coordinates in the given
    /// closed ranges.
    fn mask(&self, x: (i64, i64), y: (i64, i64)) -> Vec<bool> {
        let side = self.side();
        let mut mask = vec![false; side * side];
        for a in x.0..=x.1 {
            for b in y.0..=y.1 {
                mask[self.index(a) * side + self.index(b)] = true;
            }
        }
        mask
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockEstimate {
    pub block: BlockSpec,
    pub variant: Variant,
    /// The swept parameter value, if any (`phi_A` for extinction blocks).
    pub parameter: Option<f64>,
    pub replicas: u64,
    pub successes: u64,
    pub frequency: f64,
    pub interval: Interval,
}

fn block_estimate(block: BlockSpec, variant: Variant, parameter: Option<f64>, replicas: u64, successes: u64) -> BlockEstimate {
    BlockEstimate {
        block,
        variant,
        parameter,
        replicas,
        successes,
        frequency: successes as f64 / replicas as f64,
        interval: wilson(successes, replicas, Z95),
    }
}

fn check_replicas(replicas: u64) -> Result<()> {
    if replicas == 0 {
        return Err(Error::domain("need at least one replica"));
    }
    Ok(())
}

/// Survival-block frequencies at each of the increasing `times`, read along
/// the same runs. With `phi_zero_inside` deaths are switched off, which for
/// `N >= 2` makes an occupied site stay occupied, so the frequencies are then
/// non-decreasing in `T`.
pub fn estimate_wet_probability_sweep(
    model: &ModelSpec,
    l: u32,
    times: &[f64],
    replicas: u64,
    seed: u64,
    phi_zero_inside: bool,
    runner: &Runner,
) -> Result<Vec<BlockEstimate>> {
    if !matches!(model.variant(), Variant::ModelI | Variant::ModelIII) {
        return Err(Error::domain("survival blocks are defined for models I and III"));
    }
    if l < 1 {
        return Err(Error::domain("block scale L must be at least 1"));
    }
    check_replicas(replicas)?;
    if times.is_empty() || times.windows(2).any(|w| !(w[0] < w[1])) || !(times[0] >= 0.0) {
        return Err(Error::domain("block times must be non-negative and strictly increasing"));
    }
    let li = l as i64;
    let proto = BlockSpec { kind: BlockKind::SurvivalBlock, l, t: 0.0 };
    let window = proto.window()?;
    let left = proto.mask((-3 * li, -li), (-li, li));
    let right = proto.mask((li, 3 * li), (-li, li));
    let corner = Site::new(vec![proto.index(-li) as i64, proto.index(-li) as i64]);
    let init = make_configuration(&window, &InitSpec::Singleton(corner, 1), Some(model.max_occupancy()))?;
    let options = EngineOptions { suppress_deaths: phi_zero_inside };
    let occupied = |counts: &[u32], mask: &[bool]| counts.iter().zip(mask).any(|(&n, &m)| m && n > 0);
    let runs = runner.try_map(replicas, |r| {
        let mut sim = Simulation::new(model, &window, &init, RngSeed::new(seed, r), options)?;
        let mut wet = Vec::with_capacity(times.len());
        for &t in times {
            sim.run_until(t, |_| {})?;
            wet.push(occupied(sim.counts(), &left) && occupied(sim.counts(), &right));
        }
        Ok(wet)
    })?;
    Ok(times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let hits = runs.iter().filter(|w| w[i]).count() as u64;
            block_estimate(BlockSpec { t, ..proto }, model.variant(), None, replicas, hits)
        })
        .collect())
}

pub fn estimate_wet_probability(
    model: &ModelSpec,
    l: u32,
    t: f64,
    replicas: u64,
    seed: u64,
    phi_zero_inside: bool,
    runner: &Runner,
) -> Result<BlockEstimate> {
    Ok(estimate_wet_probability_sweep(model, l, &[t], replicas, seed, phi_zero_inside, runner)?.remove(0))
}

/// Extinction-block frequencies for each `phi_A` value, all driven by the same
/// marks so that the frequencies are monotone in `phi_A` run by run.
pub fn estimate_dry_probability_sweep(
    model: &ModelSpec,
    l: u32,
    t: f64,
    phi_allee: &[f64],
    replicas: u64,
    seed: u64,
    runner: &Runner,
) -> Result<Vec<BlockEstimate>> {
    if model.variant() != Variant::ModelII {
        return Err(Error::domain(format!("extinction blocks are defined for model II, not {}", model.variant())));
    }
    if l < 1 {
        return Err(Error::domain("block scale L must be at least 1"));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::domain("block time must be finite and >= 0"));
    }
    check_replicas(replicas)?;
    if phi_allee.is_empty() {
        return Err(Error::domain("need at least one phi_A value"));
    }
    let block = BlockSpec { kind: BlockKind::ExtinctionBlock, l, t };
    let window = block.window()?;
    let li = l as i64;
    let inner = block.mask((-li, li), (-li, li));
    // Lowest process first: decreasing phi_A.
    let mut order: Vec<usize> = (0..phi_allee.len()).collect();
    order.sort_by(|&a, &b| phi_allee[b].total_cmp(&phi_allee[a]));
    let marginals = order
        .iter()
        .map(|&i| {
            Ok(Marginal {
                model: model.with_params(|p| p.phi_allee = Some(phi_allee[i]))?,
                boundary: Boundary::FrozenFullOutside,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let init = make_configuration(&window, &InitSpec::FullAt(model.capacity()), Some(model.capacity()))?;
    let inits = vec![init; marginals.len()];
    let runs = runner.try_map(replicas, |r| {
        let mut chain = CoupledChain::new(&window, marginals.clone(), &inits, RngSeed::new(seed, r))?;
        chain.track_region(inner.clone())?;
        chain.run_until(t, |_| {})?;
        let mut seen: Vec<bool> = chain.region_totals().iter().map(|&n| n > 0).collect();
        chain.run_until(2.0 * t, |c| {
            for (s, &n) in seen.iter_mut().zip(c.region_totals()) {
                *s |= n > 0;
            }
        })?;
        Ok(seen)
    })?;
    let mut out = vec![None; phi_allee.len()];
    for (slot, &i) in order.iter().enumerate() {
        let hits = runs.iter().filter(|seen| !seen[slot]).count() as u64;
        out[i] = Some(block_estimate(block, Variant::ModelII, Some(phi_allee[i]), replicas, hits));
    }
    Ok(out.into_iter().map(Option::unwrap).collect())
}

pub fn estimate_dry_probability(model: &ModelSpec, l: u32, t: f64, replicas: u64, seed: u64, runner: &Runner) -> Result<BlockEstimate> {
    Ok(estimate_dry_probability_sweep(model, l, t, &[model.phi_allee()], replicas, seed, runner)?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominatorHit {
    pub time: f64,
    pub replicas: u64,
    pub hits: u64,
    pub estimate: f64,
    pub interval: Interval,
    /// Same probability from the transient distribution of the chain.
    pub exact: f64,
}

/// Probability that the single-site dominator of an Allee model, started at
/// `N`, holds at most one individual at `time`.
pub fn estimate_dominator_hit(model: &ModelSpec, time: f64, replicas: u64, seed: u64, runner: &Runner) -> Result<DominatorHit> {
    let chain = dominator(model)?;
    check_replicas(replicas)?;
    let n = chain.capacity;
    let mut p0 = vec![0.0; n as usize + 1];
    p0[n as usize] = 1.0;
    let dist = transient(&chain_generator(&chain)?, &p0, time)?;
    let exact = dist.iter().take(2).sum::<f64>().min(1.0);
    let finals = runner.try_map(replicas, |r| Ok(simulate_chain(&chain, n, &[time], RngSeed::new(seed, r))?[0]))?;
    let hits = finals.iter().filter(|&&v| v <= 1).count() as u64;
    Ok(DominatorHit {
        time,
        replicas,
        hits,
        estimate: hits as f64 / replicas as f64,
        interval: wilson(hits, replicas, Z95),
        exact,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrientedPercolation {
    pub width: usize,
    pub height: usize,
    pub percolates: bool,
    /// Highest row holding a reached site (0 if none).
    pub max_height: usize,
    /// `reached[n][m]` for rows `0..=height`; only `m + n` even can be set.
    #[serde(skip)]
    pub reached: Vec<Vec<bool>>,
}

/// Oriented site percolation on `{(m, n): m + n even}`, `0 <= m < width`,
/// `0 <= n <= height`, with edges `(m, n) -> (m +- 1, n + 1)`. Every open site
/// of the bottom row is reached. Sites open when their uniform falls below
/// `p`; with `radius > 0` groups of `radius + 1` consecutive columns share one
/// uniform per row. Uniforms depend only on the seed, so reached sets are
/// nested in `p` for a fixed seed.
pub fn simulate_oriented_percolation(width: usize, height: usize, p: f64, radius: usize, seed: RngSeed) -> Result<OrientedPercolation> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("open probability must lie in [0, 1], got {p}")));
    }
    if width == 0 {
        return Err(Error::domain("width must be positive"));
    }
    let mut rng = seed.rng();
    let group = radius + 1;
    let groups = width.div_ceil(group);
    let mut reached = vec![vec![false; width]; height + 1];
    let mut uniforms = vec![0.0f64; groups];
    let mut max_height = 0;
    for n in 0..=height {
        uniforms.iter_mut().for_each(|u| *u = rng.random());
        for m in (n % 2..width).step_by(2) {
            if uniforms[m / group] >= p {
                continue;
            }
            let fed = n == 0
                || (m > 0 && reached[n - 1][m - 1])
                || (m + 1 < width && reached[n - 1][m + 1]);
            if fed {
                reached[n][m] = true;
                max_height = n;
            }
        }
    }
    let percolates = reached[height].iter().any(|&r| r);
    Ok(OrientedPercolation { width, height, percolates, max_height, reached })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeEventEstimate {
    pub replicas: u64,
    pub successes: u64,
    pub failures: u64,
    /// Runs that reached the cutoff with neither outcome.
    pub undecided: u64,
    pub estimate: f64,
    pub interval: Interval,
    pub undecided_fraction: f64,
    pub cutoff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EdgeOutcome {
    Success,
    Failure,
    Undecided,
}

/// One run of the star process: site `x` and its `2d` neighbours. `x` has
/// births, deaths and emigrations; each neighbour has births and deaths, and
/// any emigration out of a neighbour kills the migrants (towards `x` as in the
/// modified process; elsewhere the target lies outside and holds nothing).
/// Success: the neighbour in direction `+e1` reaches `N - M`. Failure: `x`
/// and that neighbour are both empty, after which nothing can reach it.
fn edge_run(model: &ModelSpec, dim: usize, cutoff: f64, seed: RngSeed) -> Result<EdgeOutcome> {
    let degree = 2 * dim;
    let cap = model.capacity();
    let goal = cap - model.max_flock();
    let rate = model.lambda() / degree as f64;
    let mut rng = seed.rng();
    // state[0] = x, state[1 + i] = neighbour i; neighbour 0 is the target.
    let mut state = vec![0u32; degree + 1];
    state[0] = goal;
    let mut time = 0.0;
    let mut rates: Vec<(usize, i32, usize, f64)> = Vec::new();
    loop {
        if state[1] >= goal {
            return Ok(EdgeOutcome::Success);
        }
        if state[0] == 0 && state[1] == 0 {
            return Ok(EdgeOutcome::Failure);
        }
        // (site, kind, aux, rate): kind 0 birth, 1 death of aux individuals,
        // 2 migration of aux individuals from x to neighbour `site`.
        rates.clear();
        for (s, &n) in state.iter().enumerate() {
            rates.push((s, 0, 1, model.birth(n)));
            rates.push((s, 1, 1, model.death(n)));
        }
        let nx = state[0];
        for i in 0..degree {
            let k_max = model.flock_sizes(nx, state[1 + i]);
            for k in 1..=k_max {
                rates.push((1 + i, 2, k as usize, rate));
            }
        }
        for i in 0..degree {
            let n = state[1 + i];
            // Towards x, then the 2d - 1 empty outer neighbours.
            let mut kills = model.flock_sizes(n, nx);
            for k in 1..=kills {
                rates.push((1 + i, 1, k as usize, rate));
            }
            kills = model.flock_sizes(n, 0);
            for k in 1..=kills {
                rates.push((1 + i, 1, k as usize, rate * (degree - 1) as f64));
            }
        }
        let total: f64 = rates.iter().map(|r| r.3).sum();
        if total <= 0.0 {
            return Ok(EdgeOutcome::Failure);
        }
        time += rng.sample::<f64, _>(Exp1) / total;
        if time > cutoff {
            return Ok(EdgeOutcome::Undecided);
        }
        let mut u = rng.random::<f64>() * total;
        let &(site, kind, aux, _) = rates
            .iter()
            .find(|r| {
                if u < r.3 {
                    true
                } else {
                    u -= r.3;
                    false
                }
            })
            .unwrap_or_else(|| rates.iter().rev().find(|r| r.3 > 0.0).expect("positive total"));
        let aux = aux as u32;
        match kind {
            0 => state[site] += 1,
            1 => {
                state[site] = state[site]
                    .checked_sub(aux)
                    .ok_or_else(|| Error::Internal("edge process went negative".into()))?
            }
            _ => {
                state[0] -= aux;
                state[site] += aux;
            }
        }
        if state.iter().any(|&n| n > cap) {
            return Err(Error::Internal("edge process exceeded capacity".into()));
        }
    }
}

/// Probability that a colony of `N - M` at `x`, with no help from outside,
/// grows a colony of at least `N - M` at a fixed neighbour.
pub fn estimate_edge_event(
    model: &ModelSpec,
    dim: usize,
    cutoff: f64,
    replicas: u64,
    seed: u64,
    runner: &Runner,
) -> Result<EdgeEventEstimate> {
    if model.variant() != Variant::ModelIII {
        return Err(Error::domain("the edge event is defined for model III"));
    }
    if !(1..=3).contains(&dim) {
        return Err(Error::domain("dimension must be 1..=3"));
    }
    let (n, m, na) = (model.capacity(), model.max_flock(), model.allee_threshold());
    if m == 0 {
        return Err(Error::domain("maximal flock size M must be at least 1"));
    }
    if n - m <= na {
        return Err(Error::domain(format!("need N - M > N_A, got N - M = {} and N_A = {na}", n - m)));
    }
    if m <= na {
        return Err(Error::domain(format!("need M > N_A, got M = {m} and N_A = {na}")));
    }
    check_replicas(replicas)?;
    let outcomes = runner.try_map(replicas, |r| edge_run(model, dim, cutoff, RngSeed::new(seed, r)))?;
    let count = |o| outcomes.iter().filter(|&&x| x == o).count() as u64;
    let (successes, failures, undecided) = (count(EdgeOutcome::Success), count(EdgeOutcome::Failure), count(EdgeOutcome::Undecided));
    Ok(EdgeEventEstimate {
        replicas,
        successes,
        failures,
        undecided,
        estimate: successes as f64 / replicas as f64,
        interval: wilson(successes, replicas, Z95),
        undecided_fraction: undecided as f64 / replicas as f64,
        cutoff,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VisitCountEstimate {
    /// Visits asked for.
    pub target: u64,
    pub walks: u64,
    pub estimate: f64,
    pub se: f64,
    /// `P(return)^target` from the ruin formula.
    pub exact: f64,
    /// `(1 - phi^(N-M-N_A))^target`.
    pub bound: f64,
}

/// Estimates the probability that the walk on `N_A..=N-M+1` (up with
/// probability `1/(1+phi)`), bounced from `N-M+1` back to `N-M`, returns to
/// `N-M+1` at least `target` times before hitting `N_A`.
pub fn estimate_visit_count(model: &ModelSpec, target: u64, walks: u64, seed: RngSeed) -> Result<VisitCountEstimate> {
    if model.variant() != Variant::ModelIII {
        return Err(Error::domain("visit counts are defined for model III"));
    }
    let (n, m, na) = (model.capacity() as i64, model.max_flock() as i64, model.allee_threshold() as i64);
    if n - m <= na {
        return Err(Error::domain("need N - M > N_A"));
    }
    check_replicas(walks)?;
    let phi = model.phi();
    let p = 1.0 / (1.0 + phi);
    let top = n - m + 1;
    let mut rng = seed.rng();
    let mut values = Vec::with_capacity(walks as usize);
    for _ in 0..walks {
        let mut visits = 0u64;
        let mut x = top - 1;
        while visits < target {
            if rng.random_bool(p) {
                x += 1;
            } else {
                x -= 1;
            }
            if x == na {
                break;
            }
            if x == top {
                visits += 1;
                x = top - 1;
            }
        }
        values.push((visits >= target) as u64 as f64);
    }
    let (estimate, se) = mean_se(&values);
    let ret = ruin_probability(&RuinProblem { r1: na, r2: top, j: top - 1, p })?;
    Ok(VisitCountEstimate {
        target,
        walks,
        estimate,
        se,
        exact: ret.powf(target as f64),
        bound: (1.0 - phi.powi((n - m - na) as i32)).max(0.0).powf(target as f64),
    })
}
