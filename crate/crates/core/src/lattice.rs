//! Finite windows of `Z^d` standing in for the infinite lattice.
//!
//! Sites are addressed either by coordinates ([`Site`]) or by their row-major
//! index (last axis fastest). Iteration over sites is lexicographic in the
//! coordinates, which is the same as increasing index.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// What lies beyond the edge of a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Coordinates wrap around.
    Periodic,
    /// Exterior sites hold 0 individuals forever; emigration out of the window
    /// removes the migrants.
    ZeroOutside,
    /// Exterior sites hold `N` individuals forever; they feed immigration into
    /// the window and never accept emigrants.
    FrozenFullOutside,
}

/// Value held by an exterior pseudo-site.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrozenValue {
    Empty,
    Full,
}

impl FrozenValue {
    /// Occupancy of the pseudo-site for a model of capacity `capacity`.
    pub fn count(self, capacity: u32) -> u32 {
        match self {
            FrozenValue::Empty => 0,
            FrozenValue::Full => capacity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Site(pub Vec<i64>);

impl Site {
    pub fn new(coords: impl Into<Vec<i64>>) -> Self {
        Site(coords.into())
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }
}

impl<const D: usize> From<[i64; D]> for Site {
    fn from(c: [i64; D]) -> Self {
        Site(c.to_vec())
    }
}

/// A neighbor as returned by [`LatticeWindow::neighbors`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NeighborSite {
    Inside(Site),
    /// Out-of-window position (unwrapped coordinates) with its frozen value.
    Exterior { coords: Vec<i64>, frozen: FrozenValue },
}

/// Index-level neighbor, used by the engines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Neighbor {
    Site(usize),
    Exterior,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeWindow {
    sides: Vec<usize>,
    boundary: Boundary,
    #[serde(skip)]
    strides: Vec<usize>,
}

impl LatticeWindow {
    pub fn new(sides: impl Into<Vec<usize>>, boundary: Boundary) -> Result<Self> {
        let sides = sides.into();
        if !(1..=3).contains(&sides.len()) {
            return Err(Error::domain(format!(
                "lattice dimension must be 1, 2 or 3, got {}",
                sides.len()
            )));
        }
        if let Some(s) = sides.iter().find(|&&s| s < 2) {
            return Err(Error::domain(format!("every side length must be >= 2, got {s}")));
        }
        let mut strides = vec![1; sides.len()];
        for i in (0..sides.len() - 1).rev() {
            strides[i] = strides[i + 1] * sides[i + 1];
        }
        Ok(LatticeWindow { sides, boundary, strides })
    }

    /// Hypercube window with the same side along every axis.
    pub fn cube(dim: usize, side: usize, boundary: Boundary) -> Result<Self> {
        Self::new(vec![side; dim], boundary)
    }

    pub fn dim(&self) -> usize {
        self.sides.len()
    }

    pub fn sides(&self) -> &[usize] {
        &self.sides
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn num_sites(&self) -> usize {
        self.sides.iter().product()
    }

    /// Number of nearest neighbors, `2d`.
    pub fn degree(&self) -> usize {
        2 * self.dim()
    }

    pub fn index_of(&self, x: &Site) -> Result<usize> {
        self.check(x)?;
        Ok(x.0.iter().zip(&self.strides).map(|(&c, &s)| c as usize * s).sum())
    }

    pub fn site_of(&self, index: usize) -> Site {
        let mut rest = index;
        Site(
            self.strides
                .iter()
                .map(|&s| {
                    let c = rest / s;
                    rest %= s;
                    c as i64
                })
                .collect(),
        )
    }

    pub fn contains(&self, x: &Site) -> bool {
        x.0.len() == self.dim()
            && x.0.iter().zip(&self.sides).all(|(&c, &s)| c >= 0 && (c as usize) < s)
    }

    fn check(&self, x: &Site) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "site {:?} is not inside window {:?}",
                x.0, self.sides
            )))
        }
    }

    fn frozen(&self) -> FrozenValue {
        match self.boundary {
            Boundary::FrozenFullOutside => FrozenValue::Full,
            _ => FrozenValue::Empty,
        }
    }

    /// The `2d` neighbors of `x`, ordered by axis and then by offset `-1, +1`.
    pub fn neighbors(&self, x: &Site) -> Result<Vec<NeighborSite>> {
        self.check(x)?;
        let mut out = Vec::with_capacity(self.degree());
        for axis in 0..self.dim() {
            for step in [-1i64, 1] {
                let mut c = x.0.clone();
                c[axis] += step;
                let side = self.sides[axis] as i64;
                if (0..side).contains(&c[axis]) {
                    out.push(NeighborSite::Inside(Site(c)));
                } else if self.boundary == Boundary::Periodic {
                    c[axis] = c[axis].rem_euclid(side);
                    out.push(NeighborSite::Inside(Site(c)));
                } else {
                    out.push(NeighborSite::Exterior { coords: c, frozen: self.frozen() });
                }
            }
        }
        Ok(out)
    }

    /// Flattened neighbor table: entry `x * 2d + dir` is the neighbor of site
    /// index `x` in direction `dir` (same order as [`Self::neighbors`]).
    pub fn neighbor_table(&self) -> Vec<Neighbor> {
        let degree = self.degree();
        let mut table = Vec::with_capacity(self.num_sites() * degree);
        let mut coords = vec![0usize; self.dim()];
        for x in 0..self.num_sites() {
            for axis in 0..self.dim() {
                let side = self.sides[axis];
                let c = coords[axis];
                let down = if c > 0 {
                    Neighbor::Site(x - self.strides[axis])
                } else if self.boundary == Boundary::Periodic {
                    Neighbor::Site(x + (side - 1) * self.strides[axis])
                } else {
                    Neighbor::Exterior
                };
                let up = if c + 1 < side {
                    Neighbor::Site(x + self.strides[axis])
                } else if self.boundary == Boundary::Periodic {
                    Neighbor::Site(x - (side - 1) * self.strides[axis])
                } else {
                    Neighbor::Exterior
                };
                table.push(down);
                table.push(up);
            }
            // odometer increment, last axis fastest
            for axis in (0..self.dim()).rev() {
                coords[axis] += 1;
                if coords[axis] < self.sides[axis] {
                    break;
                }
                coords[axis] = 0;
            }
        }
        table
    }
}

/// How to populate a window initially.
#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    Empty,
    FullAt(u32),
    Singleton(Site, u32),
    Explicit(Vec<(Site, u32)>),
}

/// Per-site occupancy counts on a window, with an optional capacity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Configuration {
    counts: Vec<u32>,
    capacity: Option<u32>,
}

impl Configuration {
    pub fn from_counts(counts: Vec<u32>, capacity: Option<u32>) -> Result<Self> {
        if let Some(cap) = capacity {
            if let Some((i, &n)) = counts.iter().enumerate().find(|(_, &n)| n > cap) {
                return Err(Error::domain(format!(
                    "site index {i} holds {n} individuals, above capacity {cap}"
                )));
            }
        }
        Ok(Configuration { counts, capacity })
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn into_counts(self) -> Vec<u32> {
        self.counts
    }

    pub fn capacity(&self) -> Option<u32> {
        self.capacity
    }

    pub fn get(&self, window: &LatticeWindow, x: &Site) -> Result<u32> {
        Ok(self.counts[window.index_of(x)?])
    }

    /// Total population `|eta|`.
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&n| n as u64).sum()
    }

    /// Pointwise order `self <= other`.
    pub fn le(&self, other: &Configuration) -> bool {
        self.counts.len() == other.counts.len()
            && self.counts.iter().zip(&other.counts).all(|(a, b)| a <= b)
    }
}

pub fn make_configuration(
    window: &LatticeWindow,
    init: &InitSpec,
    capacity: Option<u32>,
) -> Result<Configuration> {
    let mut counts = vec![0u32; window.num_sites()];
    match init {
        InitSpec::Empty => {}
        InitSpec::FullAt(n) => counts.iter_mut().for_each(|c| *c = *n),
        InitSpec::Singleton(x, k) => {
            if *k < 1 {
                return Err(Error::domain("singleton count must be at least 1"));
            }
            counts[window.index_of(x)?] = *k;
        }
        InitSpec::Explicit(entries) => {
            for (x, k) in entries {
                counts[window.index_of(x)?] = *k;
            }
        }
    }
    Configuration::from_counts(counts, capacity)
}
