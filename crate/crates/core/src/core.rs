//! Shared domain types: particles, weighted populations, box priors,
//! threshold schedules and per-generation telemetry.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty population")]
    EmptyPopulation,
    #[error("weights must be non-negative and sum to 1 (sum = {0})")]
    BadWeights(f64),
    #[error("particle contains a non-finite entry")]
    NonFinite,
    #[error("distances must be non-negative")]
    NegativeDistance,
    #[error("prior bounds must satisfy lower < upper in every component")]
    BadPriorBounds,
    #[error("fixed schedule must be positive and strictly decreasing")]
    BadFixedSchedule,
    #[error("alpha must lie in (0,1), got {0}")]
    BadAlpha(f64),
    #[error("schedule exhausted: no threshold for generation {0}")]
    ScheduleExhausted(usize),
    #[error("adaptive schedule needs previous distances for generation {0}")]
    MissingDistances(usize),
}

/// One parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub theta: Vec<f64>,
}

impl Particle {
    pub fn new(theta: Vec<f64>) -> Result<Self, CoreError> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite);
        }
        Ok(Particle { theta })
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }
}

/// A weighted particle population together with the distance each particle
/// achieved when it was accepted. The distances are what the next
/// generation's kernel adaptation filters on.
#[derive(Debug, Clone)]
pub struct WeightedPopulation {
    pub particles: Vec<Particle>,
    pub weights: Vec<f64>,
    pub distances: Vec<f64>,
    pub generation_index: usize,
}

impl WeightedPopulation {
    pub fn new(
        particles: Vec<Particle>,
        weights: Vec<f64>,
        distances: Vec<f64>,
        generation_index: usize,
    ) -> Result<Self, CoreError> {
        if particles.is_empty() {
            return Err(CoreError::EmptyPopulation);
        }
        if particles.len() != weights.len() {
            return Err(CoreError::LengthMismatch(particles.len(), weights.len()));
        }
        if particles.len() != distances.len() {
            return Err(CoreError::LengthMismatch(particles.len(), distances.len()));
        }
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(CoreError::BadWeights(f64::NAN));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(CoreError::BadWeights(sum));
        }
        if distances.iter().any(|d| *d < 0.0) {
            return Err(CoreError::NegativeDistance);
        }
        Ok(WeightedPopulation {
            particles,
            weights,
            distances,
            generation_index,
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles[0].dim()
    }

    /// Weighted posterior mean of each component.
    pub fn weighted_mean(&self) -> Vec<f64> {
        let d = self.dim();
        let mut mean = vec![0.0; d];
        for (p, w) in self.particles.iter().zip(&self.weights) {
            for j in 0..d {
                mean[j] += w * p.theta[j];
            }
        }
        mean
    }

    /// Weighted standard deviation of each component (second moment about
    /// the weighted mean).
    pub fn weighted_std(&self) -> Vec<f64> {
        let d = self.dim();
        let mean = self.weighted_mean();
        let mut var = vec![0.0; d];
        for (p, w) in self.particles.iter().zip(&self.weights) {
            for j in 0..d {
                let c = p.theta[j] - mean[j];
                var[j] += w * c * c;
            }
        }
        var.iter().map(|v| v.sqrt()).collect()
    }
}

/// Uniform prior on an axis-aligned box.
#[derive(Debug, Clone)]
pub struct BoxPrior {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxPrior {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, CoreError> {
        if lower.len() != upper.len() {
            return Err(CoreError::LengthMismatch(lower.len(), upper.len()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(CoreError::BadPriorBounds);
        }
        Ok(BoxPrior { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .product()
    }

    /// Sample each component independently and uniformly within its bounds.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Particle {
        let theta = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| rng.gen_range(*l..*u))
            .collect();
        Particle { theta }
    }

    /// Density 1/volume inside the box, 0 outside.
    pub fn density(&self, theta: &Particle) -> f64 {
        let inside = theta
            .theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(t, (l, u))| *t >= *l && *t <= *u);
        if inside {
            1.0 / self.volume()
        } else {
            0.0
        }
    }
}

/// Euclidean distance between simulated and observed data.
pub fn distance_euclidean(y: &[f64], x: &[f64]) -> Result<f64, CoreError> {
    if y.len() != x.len() {
        return Err(CoreError::LengthMismatch(y.len(), x.len()));
    }
    let sq: f64 = y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sq.sqrt())
}

/// Decreasing threshold sequence, either fixed in advance or chosen per
/// generation as a quantile of the previous generation's accepted distances.
#[derive(Debug, Clone)]
pub enum EpsilonSchedule {
    Fixed(Vec<f64>),
    AdaptiveQuantile {
        alpha: f64,
        epsilon_initial: f64,
        epsilon_final: f64,
    },
}

impl EpsilonSchedule {
    pub fn validate(&self) -> Result<(), CoreError> {
        match self {
            EpsilonSchedule::Fixed(eps) => {
                if eps.is_empty()
                    || eps.iter().any(|e| *e <= 0.0)
                    || eps.windows(2).any(|w| w[1] >= w[0])
                {
                    return Err(CoreError::BadFixedSchedule);
                }
                Ok(())
            }
            EpsilonSchedule::AdaptiveQuantile { alpha, .. } => {
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return Err(CoreError::BadAlpha(*alpha));
                }
                Ok(())
            }
        }
    }

    /// Threshold for generation `t` (1-based). Adaptive mode takes the
    /// lower-interpolated alpha-quantile (index ceil(alpha*n) of the sorted
    /// distances), clamped below by the final threshold.
    pub fn next_epsilon(&self, t: usize, prev_distances: &[f64]) -> Result<f64, CoreError> {
        match self {
            EpsilonSchedule::Fixed(eps) => {
                eps.get(t - 1).copied().ok_or(CoreError::ScheduleExhausted(t))
            }
            EpsilonSchedule::AdaptiveQuantile {
                alpha,
                epsilon_initial,
                epsilon_final,
            } => {
                if t == 1 {
                    return Ok(*epsilon_initial);
                }
                if prev_distances.is_empty() {
                    return Err(CoreError::MissingDistances(t));
                }
                let mut sorted = prev_distances.to_vec();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let n = sorted.len();
                let idx = ((alpha * n as f64).ceil() as usize).clamp(1, n);
                Ok(sorted[idx - 1].max(*epsilon_final))
            }
        }
    }

    /// Whether the run stops after the generation at threshold `epsilon`.
    pub fn is_terminal(&self, t: usize, epsilon: f64) -> bool {
        match self {
            EpsilonSchedule::Fixed(eps) => t >= eps.len(),
            EpsilonSchedule::AdaptiveQuantile { epsilon_final, .. } => epsilon <= *epsilon_final,
        }
    }
}

/// Per-generation telemetry.
#[derive(Debug, Clone)]
pub struct GenerationRecord {
    pub t: usize,
    pub epsilon: f64,
    pub accepted: usize,
    pub proposals: usize,
    pub simulations: usize,
    pub acceptance_rate: f64,
    pub wall_time_ms: f64,
}
