//! Uniformized simulation of several processes on common Poisson marks.
//!
//! Every site carries a clock of the same static rate `B`. When it rings, a
//! uniform mark `u` in `[0, B)` is cut into consecutive bands:
//!
//! ```text
//! [ birth | death | emigration (dir, j) ... | immigration (dir, j) ... ]
//! ```
//!
//! A marginal performs the transition of the band holding `u` only if the
//! offset of `u` inside the band is below its own rate at its own state.
//! Migration bands have width `max lambda / 2d`, one per direction and flock
//! slot `j = 1..=M`. Slot `j` stands for the flock size `K - j + 1`, where `K`
//! is the number of admissible sizes of that marginal: when the upper process
//! has more room to move, it is the one to take the larger flock.
//! Assigning slot `j` to size `j` instead breaks the order for mass
//! migration (a source at `N - 1` sending one individual while a source at
//! `N` sends two).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::Serialize;

use super::RngSeed;
use crate::lattice::{Boundary, Configuration, LatticeWindow, Neighbor};
use crate::models::{ModelSpec, Variant};
use crate::{Error, Result};

/// One component of a coupled chain: a model and how it reads the exterior.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    pub model: ModelSpec,
    pub boundary: Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub time: f64,
    pub site: usize,
    /// Index of the lower marginal of the offending consecutive pair.
    pub marginal: usize,
    pub low: u32,
    pub high: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoupleReport {
    pub horizon: f64,
    pub marks: u64,
    pub violations: u64,
    pub first_violation: Option<Violation>,
    pub final_low: Vec<u32>,
    pub final_high: Vec<u32>,
}

/// Checks that `low` may be coupled below `high`: identical parameters except
/// death multipliers, which must be at least as large in `low`; or `low` of
/// model I and `high` of model IV with the same `phi`, `lambda` and `N`.
pub fn check_admissible(low: &ModelSpec, high: &ModelSpec) -> Result<()> {
    let bad = |why: String| Err(Error::NonAdmissible(why));
    if low.lambda() != high.lambda() {
        return bad(format!(
            "migration rates differ ({} vs {}); no order exists between different lambda",
            low.lambda(),
            high.lambda()
        ));
    }
    if low.capacity() != high.capacity() {
        return bad(format!(
            "capacities differ ({} vs {}); no order exists between different N",
            low.capacity(),
            high.capacity()
        ));
    }
    match (low.variant(), high.variant()) {
        (Variant::ModelI, Variant::ModelIV) => {
            if low.phi() != high.phi() {
                return bad("model I below model IV needs the same phi".into());
            }
            return Ok(());
        }
        (a, b) if a != b => return bad(format!("model {a} cannot be coupled below model {b}")),
        _ => {}
    }
    if low.allee_threshold() != high.allee_threshold() {
        return bad("Allee thresholds differ".into());
    }
    if low.max_flock() != high.max_flock() {
        return bad("maximal flock sizes differ".into());
    }
    if low.max_occupancy() != high.max_occupancy() {
        return bad("simulation caps differ".into());
    }
    if low.phi() < high.phi() {
        return bad(format!("lower process has smaller phi ({} < {})", low.phi(), high.phi()));
    }
    if low.phi_allee() < high.phi_allee() {
        return bad(format!(
            "lower process has smaller phi_A ({} < {})",
            low.phi_allee(),
            high.phi_allee()
        ));
    }
    if low.phi_excess() < high.phi_excess() {
        return bad(format!(
            "lower process has smaller excess death multiplier ({} < {})",
            low.phi_excess(),
            high.phi_excess()
        ));
    }
    Ok(())
}

fn check_boundaries(window: &LatticeWindow, low: Boundary, high: Boundary) -> Result<()> {
    let periodic = window.boundary() == Boundary::Periodic;
    if (low == Boundary::Periodic) != periodic || (high == Boundary::Periodic) != periodic {
        return Err(Error::domain("marginal boundary must match the window's periodicity"));
    }
    match (low, high) {
        (a, b) if a == b => Ok(()),
        (Boundary::ZeroOutside, Boundary::FrozenFullOutside) => Ok(()),
        (a, b) => Err(Error::NonAdmissible(format!("boundary {a:?} cannot be coupled below {b:?}"))),
    }
}

/// What a mark did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkOutcome {
    /// The clock rang at `site`; `changed` lists sites whose count changed in
    /// at least one marginal.
    Mark { site: usize, changed: [Option<usize>; 2] },
    /// The next mark would fall after the limit; the clock sits at the limit.
    Limit,
}

/// Several marginals, ordered from lowest to highest, driven by the same
/// marks.
pub struct CoupledChain {
    marginals: Vec<Marginal>,
    degree: usize,
    neighbors: Vec<Neighbor>,
    states: Vec<Vec<u32>>,
    birth_band: f64,
    death_band: f64,
    slot_width: f64,
    slots: u32,
    immigration: bool,
    site_bound: f64,
    rng: ChaCha8Rng,
    time: f64,
    marks: u64,
    check_order: bool,
    violations: u64,
    first_violation: Option<Violation>,
    region: Option<Vec<bool>>,
    region_totals: Vec<u64>,
}

impl CoupledChain {
    /// Builds a chain after checking that consecutive marginals are
    /// admissible and their initial states ordered.
    pub fn new(
        window: &LatticeWindow,
        marginals: Vec<Marginal>,
        inits: &[Configuration],
        seed: RngSeed,
    ) -> Result<Self> {
        for pair in marginals.windows(2) {
            check_admissible(&pair[0].model, &pair[1].model)?;
            check_boundaries(window, pair[0].boundary, pair[1].boundary)?;
        }
        Self::build(window, marginals, inits, seed, true)
    }

    /// Builds a chain without any admissibility or ordering requirement, for
    /// probing pairs that are expected to lose their order.
    pub fn new_unchecked(
        window: &LatticeWindow,
        marginals: Vec<Marginal>,
        inits: &[Configuration],
        seed: RngSeed,
    ) -> Result<Self> {
        Self::build(window, marginals, inits, seed, false)
    }

    fn build(
        window: &LatticeWindow,
        marginals: Vec<Marginal>,
        inits: &[Configuration],
        seed: RngSeed,
        checked: bool,
    ) -> Result<Self> {
        if marginals.is_empty() || marginals.len() != inits.len() {
            return Err(Error::domain("need one initial configuration per marginal, at least one"));
        }
        for (m, init) in marginals.iter().zip(inits) {
            if init.counts().len() != window.num_sites() {
                return Err(Error::domain("initial configuration does not match the window"));
            }
            if init.counts().iter().any(|&n| n > m.model.max_occupancy()) {
                return Err(Error::domain("initial occupancy above the model's maximum"));
            }
            if (m.boundary == Boundary::Periodic) != (window.boundary() == Boundary::Periodic) {
                return Err(Error::domain("marginal boundary must match the window's periodicity"));
            }
        }
        if checked {
            if let Some(i) = (1..inits.len()).find(|&i| !inits[i - 1].le(&inits[i])) {
                return Err(Error::domain(format!(
                    "initial states of marginals {} and {i} are not ordered pointwise",
                    i - 1
                )));
            }
        }
        let degree = window.degree();
        let birth_band = marginals.iter().map(|m| m.model.max_occupancy() as f64).fold(0.0, f64::max);
        // Largest death rate over the reachable range; deaths need not be
        // monotone in n (Allee branch), so scan instead of using the cap.
        let death_band = marginals
            .iter()
            .flat_map(|m| (0..=m.model.max_occupancy()).map(move |n| m.model.death(n)))
            .fold(0.0, f64::max);
        let slot_width = marginals.iter().map(|m| m.model.lambda()).fold(0.0, f64::max) / degree as f64;
        let slots = marginals.iter().map(|m| m.model.max_flock()).max().unwrap_or(1);
        let immigration = marginals.iter().any(|m| m.boundary == Boundary::FrozenFullOutside);
        let mig_bands = (degree as u32 * slots) as f64 * slot_width;
        let site_bound = birth_band + death_band + mig_bands * if immigration { 2.0 } else { 1.0 };
        let count = marginals.len();
        let mut chain = CoupledChain {
            marginals,
            degree,
            neighbors: window.neighbor_table(),
            states: inits.iter().map(|c| c.counts().to_vec()).collect(),
            birth_band,
            death_band,
            slot_width,
            slots,
            immigration,
            site_bound,
            rng: seed.rng(),
            time: 0.0,
            marks: 0,
            check_order: checked,
            violations: 0,
            first_violation: None,
            region: None,
            region_totals: vec![0; count],
        };
        if !checked {
            chain.check_order = true;
            for x in 0..window.num_sites() {
                chain.record_violations(x);
            }
        }
        Ok(chain)
    }

    /// Maintains, per marginal, the population inside the sites flagged in
    /// `mask`.
    pub fn track_region(&mut self, mask: Vec<bool>) -> Result<()> {
        if mask.len() != self.states[0].len() {
            return Err(Error::domain("region mask does not match the window"));
        }
        self.region_totals = self
            .states
            .iter()
            .map(|s| s.iter().zip(&mask).filter(|(_, &m)| m).map(|(&n, _)| n as u64).sum())
            .collect();
        self.region = Some(mask);
        Ok(())
    }

    pub fn region_totals(&self) -> &[u64] {
        &self.region_totals
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn marks(&self) -> u64 {
        self.marks
    }

    pub fn state(&self, marginal: usize) -> &[u32] {
        &self.states[marginal]
    }

    pub fn violations(&self) -> u64 {
        self.violations
    }

    pub fn first_violation(&self) -> Option<Violation> {
        self.first_violation
    }

    /// Static clock rate of one site.
    pub fn site_bound(&self) -> f64 {
        self.site_bound
    }

    fn exterior(&self, i: usize) -> u32 {
        let m = &self.marginals[i];
        match m.boundary {
            Boundary::FrozenFullOutside => m.model.capacity(),
            _ => 0,
        }
    }

    pub fn step(&mut self, limit: f64) -> Result<MarkOutcome> {
        let sites = self.states[0].len();
        let total = self.site_bound * sites as f64;
        let dt: f64 = self.rng.sample::<f64, _>(Exp1) / total;
        if self.time + dt > limit {
            self.time = limit;
            return Ok(MarkOutcome::Limit);
        }
        self.time += dt;
        self.marks += 1;
        let x = self.rng.random_range(0..sites);
        let u = self.rng.random::<f64>() * self.site_bound;
        let changed = self.apply_mark(x, u)?;
        for s in changed.iter().flatten() {
            self.record_violations(*s);
        }
        Ok(MarkOutcome::Mark { site: x, changed })
    }

    fn apply_mark(&mut self, x: usize, u: f64) -> Result<[Option<usize>; 2]> {
        if u < self.birth_band {
            let mut any = false;
            for i in 0..self.marginals.len() {
                let n = self.states[i][x];
                if u < self.marginals[i].model.birth(n) {
                    self.add(i, x, 1)?;
                    any = true;
                }
            }
            return Ok([any.then_some(x), None]);
        }
        let u = u - self.birth_band;
        if u < self.death_band {
            let mut any = false;
            for i in 0..self.marginals.len() {
                let n = self.states[i][x];
                if u < self.marginals[i].model.death(n) {
                    self.remove(i, x, 1)?;
                    any = true;
                }
            }
            return Ok([any.then_some(x), None]);
        }
        let u = u - self.death_band;
        let per_dir = self.slots as usize;
        let band = ((u / self.slot_width) as usize).min(if self.immigration { 2 } else { 1 } * self.degree * per_dir - 1);
        let offset = u - band as f64 * self.slot_width;
        let inward = band >= self.degree * per_dir;
        let band = band % (self.degree * per_dir);
        let dir = band / per_dir;
        let slot = (band % per_dir) as u32 + 1;
        let nb = self.neighbors[x * self.degree + dir];
        let mut changed = [None, None];
        if inward {
            // Immigration from a frozen exterior pseudo-site into x.
            if nb != Neighbor::Exterior {
                return Ok(changed);
            }
            for i in 0..self.marginals.len() {
                if self.marginals[i].boundary != Boundary::FrozenFullOutside {
                    continue;
                }
                let model = &self.marginals[i].model;
                if offset >= model.lambda() / self.degree as f64 {
                    continue;
                }
                let flocks = model.flock_sizes(self.exterior(i), self.states[i][x]);
                if slot <= flocks {
                    self.add(i, x, flocks - slot + 1)?;
                    changed[0] = Some(x);
                }
            }
            return Ok(changed);
        }
        for i in 0..self.marginals.len() {
            let model = &self.marginals[i].model;
            if offset >= model.lambda() / self.degree as f64 {
                continue;
            }
            let n_y = match nb {
                Neighbor::Site(y) => self.states[i][y],
                Neighbor::Exterior => self.exterior(i),
            };
            let flocks = model.flock_sizes(self.states[i][x], n_y);
            if slot <= flocks {
                let k = flocks - slot + 1;
                self.remove(i, x, k)?;
                changed[0] = Some(x);
                if let Neighbor::Site(y) = nb {
                    self.add(i, y, k)?;
                    changed[1] = Some(y);
                }
            }
        }
        Ok(changed)
    }

    fn add(&mut self, i: usize, x: usize, k: u32) -> Result<()> {
        let cap = self.marginals[i].model.max_occupancy();
        let n = &mut self.states[i][x];
        *n += k;
        if *n > cap {
            return Err(Error::Internal(format!("marginal {i} exceeded capacity {cap} at site {x}")));
        }
        if let Some(mask) = &self.region {
            if mask[x] {
                self.region_totals[i] += k as u64;
            }
        }
        Ok(())
    }

    fn remove(&mut self, i: usize, x: usize, k: u32) -> Result<()> {
        let n = &mut self.states[i][x];
        *n = n
            .checked_sub(k)
            .ok_or_else(|| Error::Internal(format!("marginal {i} went negative at site {x}")))?;
        if let Some(mask) = &self.region {
            if mask[x] {
                self.region_totals[i] -= k as u64;
            }
        }
        Ok(())
    }

    fn record_violations(&mut self, x: usize) {
        if !self.check_order {
            return;
        }
        for i in 1..self.states.len() {
            let (low, high) = (self.states[i - 1][x], self.states[i][x]);
            if low > high {
                self.violations += 1;
                if self.first_violation.is_none() {
                    self.first_violation = Some(Violation { time: self.time, site: x, marginal: i - 1, low, high });
                }
            }
        }
    }

    /// Runs to `t_end`, calling `observe` after every mark.
    pub fn run_until(&mut self, t_end: f64, mut observe: impl FnMut(&Self)) -> Result<()> {
        while let MarkOutcome::Mark { .. } = self.step(t_end)? {
            observe(self);
        }
        Ok(())
    }

    fn report(&self, horizon: f64) -> CoupleReport {
        CoupleReport {
            horizon,
            marks: self.marks,
            violations: self.violations,
            first_violation: self.first_violation,
            final_low: self.states[0].clone(),
            final_high: self.states[self.states.len() - 1].clone(),
        }
    }
}

fn check_horizon(horizon: f64) -> Result<()> {
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::domain(format!("horizon must be finite and >= 0, got {horizon}")));
    }
    Ok(())
}

/// Runs `low` and `high` on common marks from ordered initial states and
/// reports every pointwise order violation.
pub fn simulate_coupled(
    low: &ModelSpec,
    high: &ModelSpec,
    window: &LatticeWindow,
    init_low: &Configuration,
    init_high: &Configuration,
    horizon: f64,
    seed: RngSeed,
) -> Result<CoupleReport> {
    check_horizon(horizon)?;
    let b = window.boundary();
    let mut chain = CoupledChain::new(
        window,
        vec![Marginal { model: low.clone(), boundary: b }, Marginal { model: high.clone(), boundary: b }],
        &[init_low.clone(), init_high.clone()],
        seed,
    )?;
    chain.run_until(horizon, |_| {})?;
    Ok(chain.report(horizon))
}

/// Same as [`simulate_coupled`] without admissibility or ordering checks.
/// Used to show that the harness does detect broken orders.
pub fn simulate_coupled_unchecked(
    low: &ModelSpec,
    high: &ModelSpec,
    window: &LatticeWindow,
    init_low: &Configuration,
    init_high: &Configuration,
    horizon: f64,
    seed: RngSeed,
) -> Result<CoupleReport> {
    check_horizon(horizon)?;
    let b = window.boundary();
    let mut chain = CoupledChain::new_unchecked(
        window,
        vec![Marginal { model: low.clone(), boundary: b }, Marginal { model: high.clone(), boundary: b }],
        &[init_low.clone(), init_high.clone()],
        seed,
    )?;
    chain.run_until(horizon, |_| {})?;
    Ok(chain.report(horizon))
}
