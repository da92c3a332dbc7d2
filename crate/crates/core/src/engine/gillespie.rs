use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::Serialize;

use super::sumtree::SumTree;
use super::{RngSeed, RATE_CHECK_INTERVAL};
use crate::lattice::{Boundary, Configuration, LatticeWindow, Neighbor};
use crate::models::{Endpoint, EventKind, ModelSpec, SiteContext, Variant};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EngineOptions {
    /// Drop every death event (the auxiliary no-death process used inside
    /// survival blocks). Emigration out of a zero boundary still removes
    /// individuals.
    pub suppress_deaths: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Event(EventKind),
    /// No event has positive rate; the clock stays where it is.
    Absorbed,
    /// The next event would fall after the requested limit; the clock was
    /// moved to the limit and the event discarded.
    Limit,
}

/// Exact single-process sampler.
pub struct Simulation<'a> {
    model: &'a ModelSpec,
    window: &'a LatticeWindow,
    neighbors: Vec<Neighbor>,
    counts: Vec<u32>,
    rates: SumTree,
    options: EngineOptions,
    rng: ChaCha8Rng,
    time: f64,
    population: u64,
    events: u64,
    cap_hits: u64,
    extinction_time: Option<f64>,
}

impl<'a> Simulation<'a> {
    pub fn new(
        model: &'a ModelSpec,
        window: &'a LatticeWindow,
        init: &Configuration,
        seed: RngSeed,
        options: EngineOptions,
    ) -> Result<Self> {
        if init.counts().len() != window.num_sites() {
            return Err(Error::domain(format!(
                "configuration has {} sites, window has {}",
                init.counts().len(),
                window.num_sites()
            )));
        }
        if let Some(n) = init.counts().iter().find(|&&n| n > model.max_occupancy()) {
            return Err(Error::domain(format!(
                "initial occupancy {n} exceeds the model's maximum {}",
                model.max_occupancy()
            )));
        }
        let mut sim = Simulation {
            model,
            window,
            neighbors: window.neighbor_table(),
            counts: init.counts().to_vec(),
            rates: SumTree::new(window.num_sites()),
            options,
            rng: seed.rng(),
            time: 0.0,
            population: init.total(),
            events: 0,
            cap_hits: 0,
            extinction_time: None,
        };
        sim.rebuild_rates();
        if sim.population == 0 && window.boundary() != Boundary::FrozenFullOutside {
            sim.extinction_time = Some(0.0);
        }
        Ok(sim)
    }

    fn ctx(&self) -> SiteContext<'_> {
        SiteContext {
            model: self.model,
            neighbors: &self.neighbors,
            degree: self.window.degree(),
            boundary: self.window.boundary(),
            suppress_deaths: self.options.suppress_deaths,
        }
    }

    fn fresh_rates(&self) -> Vec<f64> {
        let ctx = self.ctx();
        (0..self.counts.len()).map(|x| ctx.total_rate(&self.counts, x)).collect()
    }

    fn rebuild_rates(&mut self) {
        self.rates = SumTree::from_weights(&self.fresh_rates());
    }

    /// Recomputes every site rate from the configuration and compares with
    /// the incrementally maintained tree.
    pub fn verify_rates(&mut self) -> Result<()> {
        let fresh = self.fresh_rates();
        let total: f64 = fresh.iter().sum();
        let tracked = self.rates.total();
        if (total - tracked).abs() > 1e-9 * total.abs().max(1.0) {
            return Err(Error::Internal(format!(
                "rate bookkeeping drift: tracked {tracked}, recomputed {total}"
            )));
        }
        if let Some(x) = (0..fresh.len()).find(|&x| fresh[x] != self.rates.get(x)) {
            return Err(Error::Internal(format!("stale rate at site {x}")));
        }
        self.rates = SumTree::from_weights(&fresh);
        Ok(())
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn population(&self) -> u64 {
        self.population
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn cap_hits(&self) -> u64 {
        self.cap_hits
    }

    pub fn extinction_time(&self) -> Option<f64> {
        self.extinction_time
    }

    /// Sum of the rates of all enabled events.
    pub fn total_rate(&self) -> f64 {
        self.rates.total()
    }

    pub fn configuration(&self) -> Configuration {
        let cap = match self.model.variant() {
            Variant::ModelIV => None,
            _ => Some(self.model.capacity()),
        };
        Configuration::from_counts(self.counts.clone(), cap).expect("engine keeps counts within capacity")
    }

    /// Samples the next event if it happens no later than `limit`.
    pub fn step(&mut self, limit: f64) -> Result<StepOutcome> {
        let total = self.rates.total();
        if total <= 0.0 {
            return Ok(StepOutcome::Absorbed);
        }
        let dt: f64 = self.rng.sample::<f64, _>(Exp1) / total;
        if self.time + dt > limit {
            self.time = limit;
            return Ok(StepOutcome::Limit);
        }
        self.time += dt;
        let u = self.rng.random::<f64>() * total;
        let (x, offset) = self.rates.find(u);
        let event = self.select_at(x, offset);
        self.apply(event)?;
        Ok(StepOutcome::Event(event))
    }

    fn select_at(&self, x: usize, offset: f64) -> EventKind {
        let mut chosen = None;
        let mut last = None;
        let mut acc = 0.0;
        self.ctx().for_each_event(&self.counts, x, |e, r| {
            last = Some(e);
            if chosen.is_none() {
                acc += r;
                if offset < acc {
                    chosen = Some(e);
                }
            }
        });
        chosen.or(last).expect("selected site has positive rate")
    }

    fn apply(&mut self, event: EventKind) -> Result<()> {
        let cap = self.model.max_occupancy();
        let mut touched = [usize::MAX; 2];
        match event {
            EventKind::Birth(x) => {
                self.counts[x] += 1;
                self.population += 1;
                if self.counts[x] > cap {
                    return Err(Error::Internal(format!("site {x} exceeded capacity {cap}")));
                }
                if self.model.variant() == Variant::ModelIV && self.counts[x] == cap {
                    self.cap_hits += 1;
                }
                touched[0] = x;
            }
            EventKind::Death(x) => {
                self.counts[x] = self.counts[x]
                    .checked_sub(1)
                    .ok_or_else(|| Error::Internal(format!("death at empty site {x}")))?;
                self.population -= 1;
                touched[0] = x;
            }
            EventKind::Migration { from, to, k } => {
                if let Endpoint::Site(x) = from {
                    self.counts[x] = self.counts[x]
                        .checked_sub(k)
                        .ok_or_else(|| Error::Internal(format!("migration of {k} from site {x} underflows")))?;
                    self.population -= k as u64;
                    touched[0] = x;
                }
                if let Endpoint::Site(y) = to {
                    self.counts[y] += k;
                    self.population += k as u64;
                    if self.counts[y] > cap {
                        return Err(Error::Internal(format!("site {y} exceeded capacity {cap}")));
                    }
                    touched[1] = y;
                }
            }
        }
        self.events += 1;
        let degree = self.window.degree();
        for &x in touched.iter().filter(|&&x| x != usize::MAX) {
            self.refresh(x);
            for dir in 0..degree {
                if let Neighbor::Site(y) = self.neighbors[x * degree + dir] {
                    self.refresh(y);
                }
            }
        }
        if self.population == 0
            && self.extinction_time.is_none()
            && self.window.boundary() != Boundary::FrozenFullOutside
        {
            self.extinction_time = Some(self.time);
        }
        if self.events % RATE_CHECK_INTERVAL == 0 {
            self.verify_rates()?;
        }
        Ok(())
    }

    #[inline]
    fn refresh(&mut self, x: usize) {
        let r = self.ctx().total_rate(&self.counts, x);
        self.rates.set(x, r);
    }

    /// Runs until the clock reaches `t_end` or the process is absorbed, calling
    /// `observe` after every applied event. Returns `true` if absorbed.
    pub fn run_until(&mut self, t_end: f64, mut observe: impl FnMut(&Self)) -> Result<bool> {
        loop {
            match self.step(t_end)? {
                StepOutcome::Event(_) => observe(self),
                StepOutcome::Absorbed => return Ok(true),
                StepOutcome::Limit => return Ok(false),
            }
        }
    }
}

/// Times at which a trajectory is recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    pub times: Vec<f64>,
    /// Record full per-site occupancy at each sample.
    pub per_site: bool,
}

impl SampleGrid {
    /// `0, step, 2 step, ...` up to and including `horizon`.
    pub fn uniform(horizon: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !(horizon >= 0.0) {
            return Err(Error::domain("grid step must be positive and horizon non-negative"));
        }
        let count = (horizon / step + 1e-9).floor() as usize;
        let mut times: Vec<f64> = (0..=count).map(|i| i as f64 * step).collect();
        if *times.last().unwrap() < horizon - 1e-12 {
            times.push(horizon);
        }
        Ok(SampleGrid { times, per_site: false })
    }

    fn validate(&self, horizon: f64) -> Result<()> {
        if self.times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::domain("sample times must be strictly increasing"));
        }
        if self.times.iter().any(|&t| !(0.0..=horizon).contains(&t)) {
            return Err(Error::domain("sample times must lie in [0, horizon]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub time: f64,
    pub total: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sites: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub final_state: Vec<u32>,
    /// Time at which the run stopped (horizon, or absorption).
    pub final_time: f64,
    /// First time the population hit 0; always `None` under a frozen-full
    /// boundary, where extinction is undefined.
    pub extinction_time: Option<f64>,
    pub events: u64,
    pub cap_hits: u64,
    pub seed: RngSeed,
}

/// Runs one process from `init` up to `horizon`, recording `grid` (time 0 is
/// always recorded).
pub fn simulate(
    model: &ModelSpec,
    window: &LatticeWindow,
    init: &Configuration,
    horizon: f64,
    grid: &SampleGrid,
    seed: RngSeed,
    options: EngineOptions,
) -> Result<Trajectory> {
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::domain(format!("horizon must be finite and >= 0, got {horizon}")));
    }
    grid.validate(horizon)?;
    let mut sim = Simulation::new(model, window, init, seed, options)?;
    let snapshot = |sim: &Simulation, t: f64| Sample {
        time: t,
        total: sim.population(),
        sites: grid.per_site.then(|| sim.counts().to_vec()),
    };
    let mut samples = Vec::with_capacity(grid.times.len() + 1);
    if grid.times.first() != Some(&0.0) {
        samples.push(snapshot(&sim, 0.0));
    }
    let mut absorbed = false;
    for &t in &grid.times {
        if !absorbed {
            absorbed = sim.run_until(t, |_| {})?;
        }
        samples.push(snapshot(&sim, t));
    }
    if !absorbed {
        absorbed = sim.run_until(horizon, |_| {})?;
    }
    let final_time = if absorbed { sim.time() } else { horizon };
    Ok(Trajectory {
        samples,
        final_state: sim.counts().to_vec(),
        final_time,
        extinction_time: sim.extinction_time(),
        events: sim.events(),
        cap_hits: sim.cap_hits(),
        seed,
    })
}
