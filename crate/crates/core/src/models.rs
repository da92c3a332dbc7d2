//! Transition rates of the four metapopulation models.
//!
//! Every model shares the same skeleton: per-site births and deaths of one
//! individual, and migrations of `k` individuals from a site `x` to one of its
//! `2d` neighbors `y`. What differs is the shape of the rate functions:
//!
//! | model | birth          | death                                 | migration `x -> y`, flock `k`                   |
//! |-------|----------------|---------------------------------------|-------------------------------------------------|
//! | I     | `n 1{n<N}`     | `phi n`                               | `k = 1`, `n_x = N`, `n_y < N`                   |
//! | II    | `n 1{n<N}`     | `n (phi_A 1{n<=N_A} + phi 1{n>N_A})`  | as I                                            |
//! | III   | `n 1{n<N}`     | as II                                 | `1<=k<=M`, `n_x-k >= N-M`, `n_y+k <= N`         |
//! | IV    | `n`            | `n (phi 1{n<=N} + phi~ 1{n>N})`       | `k = 1`, `n_x >= N`, `n_y < N`                  |
//!
//! Each admissible migration fires at rate `lambda / 2d` per directed pair.
//! In all four models the admissible flock sizes for a pair `(n_x, n_y)` form
//! the interval `1..=K(n_x, n_y)`; [`ModelSpec::flock_sizes`] returns `K`.

use serde::{Deserialize, Serialize};

use crate::lattice::{Boundary, Neighbor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "I")]
    ModelI,
    #[serde(rename = "II")]
    ModelII,
    #[serde(rename = "III")]
    ModelIII,
    #[serde(rename = "IV")]
    ModelIV,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::ModelI => "I",
            Variant::ModelII => "II",
            Variant::ModelIII => "III",
            Variant::ModelIV => "IV",
        })
    }
}

/// Unvalidated model parameters. Fields not used by a variant must be `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub variant: Variant,
    pub phi: f64,
    pub lambda: f64,
    /// `N`: capacity (I-III) or growth threshold (IV).
    pub capacity: u32,
    /// `phi_A` (II, III).
    pub phi_allee: Option<f64>,
    /// `N_A` (II, III).
    pub allee_threshold: Option<u32>,
    /// `M` (III).
    pub max_flock: Option<u32>,
    /// `phi~` (IV).
    pub phi_excess: Option<f64>,
    /// Simulation-only occupancy cap (IV); defaults to `64 N`.
    pub sim_cap: Option<u32>,
    /// Lift the `phi_A >= 1`, `phi_A >= phi` requirement (II, III).
    #[serde(default)]
    pub relaxed: bool,
}

impl ModelParams {
    pub fn new(variant: Variant, phi: f64, lambda: f64, capacity: u32) -> Self {
        ModelParams {
            variant,
            phi,
            lambda,
            capacity,
            phi_allee: None,
            allee_threshold: None,
            max_flock: None,
            phi_excess: None,
            sim_cap: None,
            relaxed: false,
        }
    }

    /// All invariant violations, empty when the parameters are valid.
    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        let positive = |name: &str, v: f64, errors: &mut Vec<String>| {
            if !(v.is_finite() && v > 0.0) {
                errors.push(format!("{name} must be a positive finite number, got {v}"));
            }
        };
        positive("phi", self.phi, &mut errors);
        positive("lambda", self.lambda, &mut errors);
        if self.capacity == 0 {
            errors.push("capacity N must be at least 1".into());
        }
        let uses_allee = matches!(self.variant, Variant::ModelII | Variant::ModelIII);
        let unused = |name: &str, present: bool, errors: &mut Vec<String>| {
            if present {
                errors.push(format!("{name} is not a parameter of model {}", self.variant));
            }
        };
        if uses_allee {
            match self.phi_allee {
                None => errors.push(format!("model {} requires phi_allee", self.variant)),
                Some(a) => {
                    positive("phi_allee", a, &mut errors);
                    if !self.relaxed && a < 1.0 {
                        errors.push(format!("phi_allee must be >= 1 (got {a}); set relaxed to study phi_allee < 1"));
                    }
                    if !self.relaxed && a < self.phi {
                        errors.push(format!("phi_allee must be >= phi (got {a} < {})", self.phi));
                    }
                }
            }
            match self.allee_threshold {
                None => errors.push(format!("model {} requires allee_threshold", self.variant)),
                Some(na) if na > self.capacity => errors.push(format!(
                    "allee_threshold N_A must satisfy 0 <= N_A <= N (got N_A = {na}, N = {})",
                    self.capacity
                )),
                _ => {}
            }
        } else {
            unused("phi_allee", self.phi_allee.is_some(), &mut errors);
            unused("allee_threshold", self.allee_threshold.is_some(), &mut errors);
        }
        if self.variant == Variant::ModelIII {
            match self.max_flock {
                None => errors.push("model III requires max_flock".into()),
                Some(m) if m < 1 || m > self.capacity => errors.push(format!(
                    "max_flock M must satisfy 1 <= M <= N (got M = {m}, N = {})",
                    self.capacity
                )),
                _ => {}
            }
        } else {
            unused("max_flock", self.max_flock.is_some(), &mut errors);
        }
        if self.variant == Variant::ModelIV {
            match self.phi_excess {
                None => errors.push("model IV requires phi_excess".into()),
                Some(p) => positive("phi_excess", p, &mut errors),
            }
            let cap = self.sim_cap.unwrap_or(self.capacity.saturating_mul(64));
            if cap <= self.capacity {
                errors.push(format!("sim_cap must exceed N (got {cap}, N = {})", self.capacity));
            }
        } else {
            unused("phi_excess", self.phi_excess.is_some(), &mut errors);
            unused("sim_cap", self.sim_cap.is_some(), &mut errors);
        }
        if !uses_allee && self.relaxed {
            errors.push(format!("relaxed only applies to models II and III, not {}", self.variant));
        }
        errors
    }
}

/// Validated parameter bundle of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    params: ModelParams,
    phi_allee: f64,
    allee_threshold: u32,
    max_flock: u32,
    phi_excess: f64,
    sim_cap: u32,
}

impl ModelSpec {
    pub fn new(params: ModelParams) -> Result<Self> {
        let errors = params.validate();
        if !errors.is_empty() {
            return Err(Error::Domain(errors.join("; ")));
        }
        let n = params.capacity;
        Ok(ModelSpec {
            phi_allee: params.phi_allee.unwrap_or(params.phi),
            allee_threshold: params.allee_threshold.unwrap_or(0),
            max_flock: params.max_flock.unwrap_or(1),
            phi_excess: params.phi_excess.unwrap_or(params.phi),
            sim_cap: match params.variant {
                Variant::ModelIV => params.sim_cap.unwrap_or(64 * n),
                _ => n,
            },
            params,
        })
    }

    pub fn model_i(phi: f64, lambda: f64, capacity: u32) -> Result<Self> {
        Self::new(ModelParams::new(Variant::ModelI, phi, lambda, capacity))
    }

    pub fn model_ii(phi: f64, phi_allee: f64, lambda: f64, capacity: u32, allee_threshold: u32) -> Result<Self> {
        Self::new(ModelParams {
            phi_allee: Some(phi_allee),
            allee_threshold: Some(allee_threshold),
            ..ModelParams::new(Variant::ModelII, phi, lambda, capacity)
        })
    }

    pub fn model_iii(
        phi: f64,
        phi_allee: f64,
        lambda: f64,
        capacity: u32,
        allee_threshold: u32,
        max_flock: u32,
    ) -> Result<Self> {
        Self::new(ModelParams {
            phi_allee: Some(phi_allee),
            allee_threshold: Some(allee_threshold),
            max_flock: Some(max_flock),
            ..ModelParams::new(Variant::ModelIII, phi, lambda, capacity)
        })
    }

    pub fn model_iv(phi: f64, phi_excess: f64, lambda: f64, capacity: u32, sim_cap: Option<u32>) -> Result<Self> {
        Self::new(ModelParams {
            phi_excess: Some(phi_excess),
            sim_cap,
            ..ModelParams::new(Variant::ModelIV, phi, lambda, capacity)
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn variant(&self) -> Variant {
        self.params.variant
    }

    pub fn phi(&self) -> f64 {
        self.params.phi
    }

    pub fn lambda(&self) -> f64 {
        self.params.lambda
    }

    pub fn capacity(&self) -> u32 {
        self.params.capacity
    }

    /// `phi_A`; equals `phi` for models without Allee effect.
    pub fn phi_allee(&self) -> f64 {
        self.phi_allee
    }

    /// `N_A`; 0 for models without Allee effect.
    pub fn allee_threshold(&self) -> u32 {
        self.allee_threshold
    }

    /// `M`; 1 outside model III.
    pub fn max_flock(&self) -> u32 {
        self.max_flock
    }

    pub fn phi_excess(&self) -> f64 {
        self.phi_excess
    }

    /// Largest occupancy a site may reach: `N` (I-III) or the cap (IV).
    pub fn max_occupancy(&self) -> u32 {
        self.sim_cap
    }

    /// Model IV with `phi~ > 1`, where local populations stay bounded in mean.
    pub fn in_bounded_growth_regime(&self) -> bool {
        self.variant() == Variant::ModelIV && self.phi_excess > 1.0
    }

    /// Copy with one parameter replaced and re-validated.
    pub fn with_params(&self, f: impl FnOnce(&mut ModelParams)) -> Result<Self> {
        let mut p = self.params.clone();
        f(&mut p);
        Self::new(p)
    }

    /// Birth rate at occupancy `n`, without range checks.
    #[inline]
    pub fn birth(&self, n: u32) -> f64 {
        let limit = match self.variant() {
            Variant::ModelIV => self.sim_cap,
            _ => self.params.capacity,
        };
        if n < limit {
            n as f64
        } else {
            0.0
        }
    }

    /// Death rate at occupancy `n`, without range checks.
    #[inline]
    pub fn death(&self, n: u32) -> f64 {
        let per_capita = match self.variant() {
            Variant::ModelI => self.params.phi,
            Variant::ModelII | Variant::ModelIII => {
                if n <= self.allee_threshold {
                    self.phi_allee
                } else {
                    self.params.phi
                }
            }
            Variant::ModelIV => {
                if n <= self.params.capacity {
                    self.params.phi
                } else {
                    self.phi_excess
                }
            }
        };
        n as f64 * per_capita
    }

    /// Number `K` of admissible flock sizes `1..=K` for a migration from a site
    /// holding `n_x` to one holding `n_y`.
    #[inline]
    pub fn flock_sizes(&self, n_x: u32, n_y: u32) -> u32 {
        let cap = self.params.capacity;
        match self.variant() {
            Variant::ModelI | Variant::ModelII => (n_x == cap && n_y < cap) as u32,
            Variant::ModelIII => {
                let floor = cap - self.max_flock;
                if n_x <= floor || n_y >= cap {
                    0
                } else {
                    (n_x - floor).min(cap - n_y)
                }
            }
            Variant::ModelIV => (n_x >= cap && n_y < cap) as u32,
        }
    }

    /// `Gamma^k_{n_x, n_y}`: migration rate before the `1/2d` factor.
    #[inline]
    pub fn gamma(&self, n_x: u32, n_y: u32, k: u32) -> f64 {
        if k >= 1 && k <= self.flock_sizes(n_x, n_y) {
            self.params.lambda
        } else {
            0.0
        }
    }

    fn check_count(&self, n: u32) -> Result<()> {
        if n > self.max_occupancy() {
            Err(Error::domain(format!(
                "occupancy {n} out of range 0..={} for model {}",
                self.max_occupancy(),
                self.variant()
            )))
        } else {
            Ok(())
        }
    }

    pub fn birth_rate(&self, n: u32) -> Result<f64> {
        self.check_count(n)?;
        Ok(self.birth(n))
    }

    pub fn death_rate(&self, n: u32) -> Result<f64> {
        self.check_count(n)?;
        Ok(self.death(n))
    }

    /// Rate of one directed migration `x -> y` of `k` individuals on a lattice
    /// of dimension `dim`, including the `1/2d` factor.
    pub fn migration_rate(&self, n_x: u32, n_y: u32, k: u32, dim: usize) -> Result<f64> {
        if k == 0 {
            return Err(Error::domain("flock size k must be at least 1"));
        }
        if !(1..=3).contains(&dim) {
            return Err(Error::domain(format!("dimension must be 1..=3, got {dim}")));
        }
        self.check_count(n_x)?;
        self.check_count(n_y)?;
        Ok(self.gamma(n_x, n_y, k) / (2 * dim) as f64)
    }
}

/// One end of a migration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Site(usize),
    /// A frozen pseudo-site outside the window.
    Exterior,
}

/// A single transition; sites are row-major indices into the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Birth(usize),
    Death(usize),
    Migration { from: Endpoint, to: Endpoint, k: u32 },
}

/// Static data needed to enumerate events at a site.
pub(crate) struct SiteContext<'a> {
    pub model: &'a ModelSpec,
    pub neighbors: &'a [Neighbor],
    pub degree: usize,
    pub boundary: Boundary,
    pub suppress_deaths: bool,
}

impl SiteContext<'_> {
    fn exterior_count(&self) -> u32 {
        match self.boundary {
            Boundary::FrozenFullOutside => self.model.capacity(),
            _ => 0,
        }
    }

    /// Calls `f` for every event with positive rate attributed to site `x`:
    /// its birth, its death, its emigrations, and immigrations into `x` from
    /// frozen exterior pseudo-sites.
    #[inline]
    pub fn for_each_event(&self, counts: &[u32], x: usize, mut f: impl FnMut(EventKind, f64)) {
        let m = self.model;
        let n = counts[x];
        let b = m.birth(n);
        if b > 0.0 {
            f(EventKind::Birth(x), b);
        }
        if !self.suppress_deaths {
            let d = m.death(n);
            if d > 0.0 {
                f(EventKind::Death(x), d);
            }
        }
        let rate = m.lambda() / self.degree as f64;
        let row = &self.neighbors[x * self.degree..(x + 1) * self.degree];
        for nb in row {
            let (to, n_y) = match *nb {
                Neighbor::Site(y) => (Endpoint::Site(y), counts[y]),
                Neighbor::Exterior => (Endpoint::Exterior, self.exterior_count()),
            };
            for k in 1..=m.flock_sizes(n, n_y) {
                f(EventKind::Migration { from: Endpoint::Site(x), to, k }, rate);
            }
            if *nb == Neighbor::Exterior && self.boundary == Boundary::FrozenFullOutside {
                for k in 1..=m.flock_sizes(self.exterior_count(), n) {
                    f(EventKind::Migration { from: Endpoint::Exterior, to: Endpoint::Site(x), k }, rate);
                }
            }
        }
    }

    /// Sum of all rates attributed to `x`.
    #[inline]
    pub fn total_rate(&self, counts: &[u32], x: usize) -> f64 {
        let m = self.model;
        let n = counts[x];
        let mut total = m.birth(n);
        if !self.suppress_deaths {
            total += m.death(n);
        }
        let row = &self.neighbors[x * self.degree..(x + 1) * self.degree];
        let mut flocks = 0u32;
        for nb in row {
            match *nb {
                Neighbor::Site(y) => flocks += m.flock_sizes(n, counts[y]),
                Neighbor::Exterior => {
                    flocks += m.flock_sizes(n, self.exterior_count());
                    if self.boundary == Boundary::FrozenFullOutside {
                        flocks += m.flock_sizes(self.exterior_count(), n);
                    }
                }
            }
        }
        total + flocks as f64 * (m.lambda() / self.degree as f64)
    }
}

/// Events with positive rate attributed to site `x` of `config`.
pub fn enabled_events(
    model: &ModelSpec,
    window: &crate::lattice::LatticeWindow,
    config: &crate::lattice::Configuration,
    x: &crate::lattice::Site,
) -> Result<Vec<(EventKind, f64)>> {
    let idx = window.index_of(x)?;
    let table = window.neighbor_table();
    let ctx = SiteContext {
        model,
        neighbors: &table,
        degree: window.degree(),
        boundary: window.boundary(),
        suppress_deaths: false,
    };
    let mut out = Vec::new();
    ctx.for_each_event(config.counts(), idx, |e, r| out.push((e, r)));
    Ok(out)
}

/// A birth-death chain on the occupancy of a single site.
pub trait BirthDeathChain {
    fn birth(&self, l: u32) -> f64;
    fn death(&self, l: u32) -> f64;
    /// Largest reachable state, `None` for chains on all of `N`.
    fn max_state(&self) -> Option<u32>;
}

/// Single-site process dominating the Allee model inside an extinction block:
/// the largest possible immigration is added to births, emigrations dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct DominatorSpec {
    pub capacity: u32,
    pub lambda: f64,
    pub phi: f64,
    pub phi_allee: f64,
    pub allee_threshold: u32,
}

impl BirthDeathChain for DominatorSpec {
    fn birth(&self, l: u32) -> f64 {
        if l < self.capacity {
            l as f64 + self.lambda
        } else {
            0.0
        }
    }

    fn death(&self, l: u32) -> f64 {
        let per_capita = if l <= self.allee_threshold { self.phi_allee } else { self.phi };
        l as f64 * per_capita
    }

    fn max_state(&self) -> Option<u32> {
        Some(self.capacity)
    }
}

pub fn dominator(model: &ModelSpec) -> Result<DominatorSpec> {
    if model.variant() != Variant::ModelII {
        return Err(Error::domain(format!(
            "the single-site dominator is defined for model II, not {}",
            model.variant()
        )));
    }
    Ok(DominatorSpec {
        capacity: model.capacity(),
        lambda: model.lambda(),
        phi: model.phi(),
        phi_allee: model.phi_allee(),
        allee_threshold: model.allee_threshold(),
    })
}

/// Excess `zeta = eta - N` of a site carrying `N` immortal individuals under
/// the self-regulating dynamics: births at `N + zeta`, deaths at
/// `phi~ (N + zeta)` while `zeta > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImmortalExcess {
    pub capacity: u32,
    pub phi_excess: f64,
}

impl ImmortalExcess {
    pub fn from_model(model: &ModelSpec) -> Result<Self> {
        if model.variant() != Variant::ModelIV {
            return Err(Error::domain("the immortal-particle bound is defined for model IV"));
        }
        Ok(ImmortalExcess { capacity: model.capacity(), phi_excess: model.phi_excess() })
    }

    /// Upper bound on the mean excess at any time, started from `zeta_0`.
    pub fn mean_bound(&self, zeta_0: f64) -> f64 {
        zeta_0 + self.capacity as f64 / (self.phi_excess - 1.0)
    }
}

impl BirthDeathChain for ImmortalExcess {
    fn birth(&self, z: u32) -> f64 {
        (self.capacity + z) as f64
    }

    fn death(&self, z: u32) -> f64 {
        if z > 0 {
            self.phi_excess * (self.capacity + z) as f64
        } else {
            0.0
        }
    }

    fn max_state(&self) -> Option<u32> {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{make_configuration, Configuration, InitSpec, LatticeWindow, Site};

    #[test]
    fn birth_rates() {
        let m1 = ModelSpec::model_i(1.0, 1.0, 5).unwrap();
        assert_eq!(m1.birth_rate(3).unwrap(), 3.0);
        assert_eq!(m1.birth_rate(5).unwrap(), 0.0);
        assert!(m1.birth_rate(6).is_err());
        let m4 = ModelSpec::model_iv(0.5, 2.0, 1.0, 5, None).unwrap();
        assert_eq!(m4.birth_rate(7).unwrap(), 7.0);
        assert_eq!(m4.max_occupancy(), 320);
        assert_eq!(m4.birth_rate(320).unwrap(), 0.0);
    }

    #[test]
    fn death_rates() {
        let m2 = ModelSpec::model_ii(0.5, 3.0, 1.0, 6, 2).unwrap();
        assert_eq!(m2.death_rate(2).unwrap(), 6.0);
        assert_eq!(m2.death_rate(4).unwrap(), 2.0);
        let m4 = ModelSpec::model_iv(0.5, 2.0, 1.0, 4, None).unwrap();
        assert_eq!(m4.death_rate(4).unwrap(), 2.0);
        assert_eq!(m4.death_rate(5).unwrap(), 10.0);
        for m in [m2, m4, ModelSpec::model_i(0.3, 1.0, 3).unwrap()] {
            assert_eq!(m.death_rate(0).unwrap(), 0.0);
        }
    }

    #[test]
    fn mass_migration_rates() {
        let m3 = ModelSpec::model_iii(0.5, 2.0, 2.0, 10, 2, 4).unwrap();
        assert_eq!(m3.migration_rate(9, 7, 3, 2).unwrap(), 0.5);
        assert_eq!(m3.migration_rate(9, 8, 3, 2).unwrap(), 0.0);
        assert!(m3.migration_rate(9, 8, 0, 2).is_err());
        let m1 = ModelSpec::model_i(1.0, 1.0, 5).unwrap();
        for n_y in 0..=5 {
            assert_eq!(m1.migration_rate(4, n_y, 1, 2).unwrap(), 0.0);
        }
        assert_eq!(m1.migration_rate(5, 4, 1, 1).unwrap(), 0.5);
        assert_eq!(m1.migration_rate(5, 4, 2, 1).unwrap(), 0.0);
    }

    #[test]
    fn parameter_validation() {
        assert!(ModelSpec::model_ii(0.5, 0.8, 1.0, 4, 2).is_err());
        assert!(ModelSpec::model_ii(2.0, 1.5, 1.0, 4, 2).is_err());
        assert!(ModelSpec::model_ii(0.5, 2.0, 1.0, 4, 5).is_err());
        assert!(ModelSpec::model_iii(0.5, 2.0, 1.0, 4, 2, 5).is_err());
        assert!(ModelSpec::model_iii(0.5, 2.0, 1.0, 4, 2, 0).is_err());
        assert!(ModelSpec::model_iv(0.5, 2.0, 1.0, 4, Some(4)).is_err());
        assert!(ModelSpec::model_iv(0.5, 0.5, 1.0, 4, None).unwrap().phi_excess() == 0.5);
        assert!(!ModelSpec::model_iv(0.5, 0.5, 1.0, 4, None).unwrap().in_bounded_growth_regime());
        let relaxed = ModelParams {
            phi_allee: Some(0.5),
            allee_threshold: Some(2),
            relaxed: true,
            ..ModelParams::new(Variant::ModelII, 1.5, 1.0, 4)
        };
        assert!(ModelSpec::new(relaxed).is_ok());
        let mut bad = ModelParams::new(Variant::ModelI, -1.0, 0.0, 0);
        bad.max_flock = Some(2);
        assert_eq!(bad.validate().len(), 4);
    }

    fn ring_window(len: usize) -> LatticeWindow {
        LatticeWindow::new(vec![len], crate::lattice::Boundary::Periodic).unwrap()
    }

    #[test]
    fn empty_configuration_has_no_events() {
        let m = ModelSpec::model_i(1.0, 1.0, 2).unwrap();
        let w = LatticeWindow::new(vec![3, 3], crate::lattice::Boundary::Periodic).unwrap();
        let c = make_configuration(&w, &InitSpec::Empty, Some(2)).unwrap();
        for x in 0..w.num_sites() {
            assert!(enabled_events(&m, &w, &c, &w.site_of(x)).unwrap().is_empty());
        }
    }

    #[test]
    fn full_site_between_empty_neighbors() {
        let m = ModelSpec::model_i(1.0, 4.0, 2).unwrap();
        let w = ring_window(3);
        let c = Configuration::from_counts(vec![0, 2, 0], Some(2)).unwrap();
        let events = enabled_events(&m, &w, &c, &Site::from([1])).unwrap();
        assert_eq!(
            events,
            vec![
                (EventKind::Death(1), 2.0),
                (EventKind::Migration { from: Endpoint::Site(1), to: Endpoint::Site(0), k: 1 }, 2.0),
                (EventKind::Migration { from: Endpoint::Site(1), to: Endpoint::Site(2), k: 1 }, 2.0),
            ]
        );
    }

    #[test]
    fn model_iv_at_cap_has_no_birth() {
        let m = ModelSpec::model_iv(0.5, 2.0, 1.0, 4, Some(10)).unwrap();
        let w = ring_window(3);
        let c = Configuration::from_counts(vec![0, 10, 2], Some(10)).unwrap();
        let events = enabled_events(&m, &w, &c, &Site::from([1])).unwrap();
        assert!(!events.iter().any(|(e, _)| matches!(e, EventKind::Birth(_))));
        let total: f64 = events.iter().map(|(_, r)| r).sum();
        // death 10 * 2.0, two migrations at lambda / 2
        assert_eq!(total, 20.0 + 0.5 + 0.5);
        let table = w.neighbor_table();
        let ctx = SiteContext {
            model: &m,
            neighbors: &table,
            degree: 2,
            boundary: w.boundary(),
            suppress_deaths: false,
        };
        assert_eq!(ctx.total_rate(c.counts(), 1), total);
    }

    #[test]
    fn frozen_boundary_feeds_immigration_only() {
        let m = ModelSpec::model_iii(0.5, 2.0, 1.0, 4, 1, 2).unwrap();
        let w = LatticeWindow::new(vec![3], crate::lattice::Boundary::FrozenFullOutside).unwrap();
        let c = Configuration::from_counts(vec![4, 4, 1], Some(4)).unwrap();
        let events = enabled_events(&m, &w, &c, &Site::from([2])).unwrap();
        let imm: Vec<_> = events
            .iter()
            .filter(|(e, _)| matches!(e, EventKind::Migration { from: Endpoint::Exterior, .. }))
            .collect();
        assert_eq!(imm.len(), 2);
        let events = enabled_events(&m, &w, &c, &Site::from([0])).unwrap();
        assert!(!events
            .iter()
            .any(|(e, _)| matches!(e, EventKind::Migration { to: Endpoint::Exterior, .. })));
    }

    #[test]
    fn dominator_rates() {
        let m = ModelSpec::model_ii(0.5, 4.0, 1.0, 3, 1).unwrap();
        let d = dominator(&m).unwrap();
        assert_eq!(d.birth(0), 1.0);
        assert_eq!(d.birth(3), 0.0);
        assert_eq!(d.death(1), 4.0);
        assert_eq!(d.death(2), 1.0);
        assert_eq!(d.death(0), 0.0);
        assert!(dominator(&ModelSpec::model_i(0.5, 1.0, 3).unwrap()).is_err());
        let z = ImmortalExcess { capacity: 4, phi_excess: 2.0 };
        assert_eq!((z.birth(0), z.death(0), z.death(2)), (4.0, 0.0, 12.0));
        assert_eq!(z.mean_bound(1.0), 5.0);
    }

    fn all_models(n: u32) -> Vec<ModelSpec> {
        let mut v = vec![ModelSpec::model_i(0.7, 1.3, n).unwrap()];
        for na in 0..=n {
            v.push(ModelSpec::model_ii(0.7, 2.5, 1.3, n, na).unwrap());
            for mm in 1..=n {
                v.push(ModelSpec::model_iii(0.7, 2.5, 1.3, n, na, mm).unwrap());
            }
        }
        v
    }

    #[test]
    fn rates_nonnegative_and_counts_stay_in_range() {
        for n in 1..=5 {
            for m in all_models(n) {
                for a in 0..=n {
                    assert!(m.birth(a) >= 0.0 && m.death(a) >= 0.0);
                    if m.birth(a) > 0.0 {
                        assert!(a + 1 <= n);
                    }
                    if m.death(a) > 0.0 {
                        assert!(a >= 1);
                    }
                    for b in 0..=n {
                        for k in 1..=m.max_flock() {
                            assert!(m.gamma(a, b, k) >= 0.0);
                            if m.gamma(a, b, k) > 0.0 {
                                assert!(a >= k && b + k <= n, "{m:?} {a} {b} {k}");
                            }
                        }
                        assert!(m.gamma(a, b, m.max_flock() + 1) == 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn reductions_between_models() {
        for n in 1..=5 {
            for na in 0..=n {
                let m2 = ModelSpec::model_ii(0.7, 2.5, 1.3, n, na).unwrap();
                let m3 = ModelSpec::model_iii(0.7, 2.5, 1.3, n, na, 1).unwrap();
                let m1 = ModelSpec::model_i(0.7, 1.3, n).unwrap();
                let m2_flat = ModelSpec::model_ii(0.7, 0.7, 1.3, n, na).unwrap_or_else(|_| {
                    ModelSpec::new(ModelParams {
                        phi_allee: Some(0.7),
                        allee_threshold: Some(na),
                        relaxed: true,
                        ..ModelParams::new(Variant::ModelII, 0.7, 1.3, n)
                    })
                    .unwrap()
                });
                let m2_no_allee = ModelSpec::model_ii(0.7, 2.5, 1.3, n, 0).unwrap();
                let m1_all_allee = ModelSpec::model_i(2.5, 1.3, n).unwrap();
                let m2_all_allee = ModelSpec::model_ii(0.7, 2.5, 1.3, n, n).unwrap();
                for a in 0..=n {
                    assert_eq!(m2.birth(a), m3.birth(a));
                    assert_eq!(m2.death(a), m3.death(a));
                    assert_eq!(m2_flat.death(a), m1.death(a));
                    assert_eq!(m2_no_allee.death(a), m1.death(a));
                    assert_eq!(m2_all_allee.death(a), m1_all_allee.death(a));
                    assert_eq!(m2.birth(a), m1.birth(a));
                    for b in 0..=n {
                        assert_eq!(m2.gamma(a, b, 1), m3.gamma(a, b, 1));
                        assert_eq!(m2.gamma(a, b, 1), m1.gamma(a, b, 1));
                    }
                }
            }
        }
    }

    #[test]
    fn migration_monotone_in_source_and_target() {
        for n in 1..=6 {
            for m in all_models(n) {
                for k in 1..=m.max_flock() {
                    for a in 0..=n {
                        for b in 0..=n {
                            if a < n {
                                assert!(m.gamma(a, b, k) <= m.gamma(a + 1, b, k));
                            }
                            if b < n {
                                assert!(m.gamma(a, b, k) >= m.gamma(a, b + 1, k));
                            }
                        }
                    }
                }
            }
        }
    }
}
