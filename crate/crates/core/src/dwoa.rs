//! Decentralized whale position update, run at the ECN over the pool of
//! candidate common discharge rates.
//!
//! The ECN never sees a cost function. It only learns, per iteration, which
//! candidate had the smallest aggregated (masked) total, and keeps the best
//! candidate ever seen as the leader the other whales move around.

use std::f64::consts::PI;

use rand::Rng;
use thiserror::Error;

use crate::rng::SimRng;
use crate::shuffle::CostShare;

#[derive(Debug, Error, PartialEq)]
pub enum DwoaError {
    #[error("iteration {k} is outside 0..={k_max}")]
    IterationOutOfRange { k: usize, k_max: usize },
    #[error("the pool needs at least one whale")]
    EmptyPool,
    #[error("invalid search bounds [{0}, {1}]")]
    InvalidBounds(f64, f64),
    #[error("best index {0} outside the pool")]
    BadIndex(usize),
}

/// Exploration weight, decreasing linearly from 2 at `k = 0` to 0 at `k_max`.
pub fn alpha_schedule(k: usize, k_max: usize) -> Result<f64, DwoaError> {
    if k > k_max {
        return Err(DwoaError::IterationOutOfRange { k, k_max });
    }
    if k_max == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * (1.0 - k as f64 / k_max as f64))
}

pub fn clamp_to_bounds(rate: f64, lower: f64, upper: f64) -> f64 {
    rate.max(lower).min(upper)
}

/// Random coefficients of one whale's move. `a = 2*alpha*r - alpha` and
/// `c = 2*r` share the same draw `r`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WoaCoefficients {
    pub alpha: f64,
    pub a: f64,
    pub c: f64,
    /// Spiral parameter in [-1, 1].
    pub l: f64,
    /// Branch selector in [0, 1).
    pub p_rand: f64,
    pub r: f64,
}

impl WoaCoefficients {
    pub fn from_draws(alpha: f64, r: f64, l: f64, p_rand: f64) -> Self {
        Self { alpha, a: 2.0 * alpha * r - alpha, c: 2.0 * r, l, p_rand, r }
    }

    /// Draws `r`, `l` and `p_rand`, in that order.
    pub fn draw<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Self {
        let r = rng.random::<f64>();
        let l = rng.random_range(-1.0..=1.0);
        let p_rand = rng.random::<f64>();
        Self::from_draws(alpha, r, l, p_rand)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Move {
    /// Shrink around the leader.
    Encircle,
    /// Move relative to another whale.
    Search,
    /// Bubble-net spiral around the leader.
    Spiral,
}

impl WoaCoefficients {
    pub fn branch(&self) -> Move {
        if self.p_rand < 0.5 {
            if self.a.abs() < 1.0 {
                Move::Encircle
            } else {
                Move::Search
            }
        } else {
            Move::Spiral
        }
    }
}

/// Unclamped next position of a whale at `current`.
///
/// `partner` is the randomly selected whale's position and only matters on
/// the search branch.
pub fn next_position(current: f64, leader: f64, partner: f64, k: &WoaCoefficients) -> f64 {
    match k.branch() {
        Move::Encircle => leader - k.a * (k.c * leader - current).abs(),
        Move::Search => partner - k.a * (k.c * partner - current).abs(),
        Move::Spiral => {
            let d = (leader - current).abs();
            d * k.l.exp() * (2.0 * PI * k.l).cos() + leader
        }
    }
}

/// Updates whale `h` from a snapshot of the pool and clamps the result.
pub fn update_position(
    h: usize,
    snapshot: &[f64],
    leader: f64,
    coeffs: &WoaCoefficients,
    bounds: (f64, f64),
    rng: &mut SimRng,
) -> f64 {
    let partner = match coeffs.branch() {
        Move::Search => snapshot[rng.random_range(0..snapshot.len())],
        _ => leader,
    };
    clamp_to_bounds(next_position(snapshot[h], leader, partner, coeffs), bounds.0, bounds.1)
}

/// Best candidate the ECN has observed so far.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Leader {
    pub rate: f64,
    pub total: CostShare,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WhalePool {
    positions: Vec<f64>,
    lower: f64,
    upper: f64,
    best_index: usize,
    iteration: usize,
    k_max: usize,
    leader: Option<Leader>,
}

impl WhalePool {
    /// Places `size` whales uniformly in `[lower, upper]`.
    pub fn random(size: usize, lower: f64, upper: f64, k_max: usize, rng: &mut SimRng) -> Result<Self, DwoaError> {
        if size == 0 {
            return Err(DwoaError::EmptyPool);
        }
        if !(lower.is_finite() && upper.is_finite() && lower <= upper) {
            return Err(DwoaError::InvalidBounds(lower, upper));
        }
        let positions = (0..size)
            .map(|_| if lower < upper { rng.random_range(lower..=upper) } else { lower })
            .collect();
        Ok(Self { positions, lower, upper, best_index: 0, iteration: 0, k_max, leader: None })
    }

    pub fn from_positions(positions: Vec<f64>, lower: f64, upper: f64, k_max: usize) -> Result<Self, DwoaError> {
        if positions.is_empty() {
            return Err(DwoaError::EmptyPool);
        }
        if !(lower.is_finite() && upper.is_finite() && lower <= upper) {
            return Err(DwoaError::InvalidBounds(lower, upper));
        }
        let positions = positions.into_iter().map(|p| clamp_to_bounds(p, lower, upper)).collect();
        Ok(Self { positions, lower, upper, best_index: 0, iteration: 0, k_max, leader: None })
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn best_index(&self) -> usize {
        self.best_index
    }

    pub fn leader(&self) -> Option<Leader> {
        self.leader
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.k_max
    }

    /// Records the ECN's selection for the current positions. The leader only
    /// moves on strict improvement.
    pub fn observe(&mut self, best_index: usize, total: CostShare) -> Result<(), DwoaError> {
        let rate = *self.positions.get(best_index).ok_or(DwoaError::BadIndex(best_index))?;
        self.best_index = best_index;
        if self.leader.is_none_or(|l| total < l.total) {
            self.leader = Some(Leader { rate, total });
        }
        Ok(())
    }

    /// Moves every whale once, in ascending order, reading only the positions
    /// from the start of the iteration.
    pub fn step(&mut self, rng: &mut SimRng) -> Result<(), DwoaError> {
        if self.iteration >= self.k_max {
            return Err(DwoaError::IterationOutOfRange { k: self.iteration + 1, k_max: self.k_max });
        }
        let alpha = alpha_schedule(self.iteration, self.k_max)?;
        let leader = self.leader.map_or(self.positions[self.best_index], |l| l.rate);
        let snapshot = self.positions.clone();
        let bounds = (self.lower, self.upper);
        for h in 0..snapshot.len() {
            let coeffs = WoaCoefficients::draw(alpha, rng);
            self.positions[h] = update_position(h, &snapshot, leader, &coeffs, bounds, rng);
        }
        self.iteration += 1;
        Ok(())
    }
}
