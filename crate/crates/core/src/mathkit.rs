//! Numerical primitives: weighted moments, Cholesky factorization with ridge
//! escalation, multivariate normal sampling and log-density, scaled
//! nearest-neighbour search and seeded random streams.
//!
//! Dimensions here are small (d <= 6); dense row-major `Vec<f64>` matrices
//! are sufficient.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::core::{Particle, WeightedPopulation};

#[derive(Debug, Error)]
pub enum MathError {
    #[error("matrix not positive definite (last ridge tried: {ridge})")]
    NotPositiveDefinite { ridge: f64 },
    #[error("empty input")]
    Empty,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

/// A reproducible random stream. The same (seed, stream_id) pair always
/// yields the same draw sequence, so per-proposal streams can be derived
/// from a counter and evaluated in any order.
pub struct RandomStream {
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RandomStream { rng }
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// Lower-triangular Cholesky factor of `m + ridge*I`, row-major.
/// `m` is a dim x dim symmetric matrix.
pub fn cholesky(dim: usize, m: &[f64], ridge: f64) -> Result<Vec<f64>, MathError> {
    debug_assert_eq!(m.len(), dim * dim);
    let mut l = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut s = m[i * dim + j];
            if i == j {
                s += ridge;
            }
            for k in 0..j {
                s -= l[i * dim + k] * l[j * dim + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(MathError::NotPositiveDefinite { ridge });
                }
                l[i * dim + i] = s.sqrt();
            } else {
                l[i * dim + j] = s / l[j * dim + j];
            }
        }
    }
    Ok(l)
}

/// A symmetric positive-definite matrix with its Cholesky factor.
///
/// Construction regularizes: a ridge scaled to the trace is added and
/// escalated tenfold until the factorization succeeds, so degenerate
/// covariances (coincident particles, one-member tilde sets) still yield a
/// proper, if narrow, kernel.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    dim: usize,
    entries: Vec<f64>,
    chol: Vec<f64>,
    log_det: f64,
    ridge: f64,
}

impl SpdMatrix {
    pub fn from_symmetric(dim: usize, entries: Vec<f64>) -> Result<Self, MathError> {
        debug_assert_eq!(entries.len(), dim * dim);
        let trace: f64 = (0..dim).map(|i| entries[i * dim + i]).sum();
        let base = (trace / dim as f64).max(1.0);
        let mut ridge = 0.0;
        loop {
            match cholesky(dim, &entries, ridge) {
                Ok(chol) => {
                    let log_det = 2.0 * (0..dim).map(|i| chol[i * dim + i].ln()).sum::<f64>();
                    let mut ridged = entries;
                    for i in 0..dim {
                        ridged[i * dim + i] += ridge;
                    }
                    return Ok(SpdMatrix {
                        dim,
                        entries: ridged,
                        chol,
                        log_det,
                        ridge,
                    });
                }
                Err(_) if ridge == 0.0 => ridge = 1e-8 * base,
                Err(_) if ridge < 1e-2 * base => ridge *= 10.0,
                Err(_) => return Err(MathError::NotPositiveDefinite { ridge }),
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn chol(&self) -> &[f64] {
        &self.chol
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Inverse via the Cholesky factor: solves L L^T X = I.
    pub fn inverse(&self) -> Vec<f64> {
        let d = self.dim;
        let mut inv = vec![0.0; d * d];
        for col in 0..d {
            let mut e = vec![0.0; d];
            e[col] = 1.0;
            let u = solve_lower(d, &self.chol, &e);
            let x = solve_upper_transposed(d, &self.chol, &u);
            for row in 0..d {
                inv[row * d + col] = x[row];
            }
        }
        inv
    }
}

fn solve_lower(dim: usize, l: &[f64], b: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; dim];
    for i in 0..dim {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * dim + k] * x[k];
        }
        x[i] = s / l[i * dim + i];
    }
    x
}

fn solve_upper_transposed(dim: usize, l: &[f64], b: &[f64]) -> Vec<f64> {
    // Solves L^T x = b with L lower triangular.
    let mut x = vec![0.0; dim];
    for i in (0..dim).rev() {
        let mut s = b[i];
        for k in (i + 1)..dim {
            s -= l[k * dim + i] * x[k];
        }
        x[i] = s / l[i * dim + i];
    }
    x
}

/// mean + L*z with z a standard normal vector.
pub fn mvn_sample<R: Rng + ?Sized>(mean: &[f64], chol: &[f64], rng: &mut R) -> Vec<f64> {
    let d = mean.len();
    let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let mut x = mean.to_vec();
    for i in 0..d {
        for k in 0..=i {
            x[i] += chol[i * d + k] * z[k];
        }
    }
    x
}

/// Multivariate normal log-density evaluated through the Cholesky factor.
pub fn mvn_log_density(x: &[f64], mean: &[f64], cov: &SpdMatrix) -> f64 {
    let d = cov.dim();
    debug_assert_eq!(x.len(), d);
    debug_assert_eq!(mean.len(), d);
    let diff: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    let u = solve_lower(d, cov.chol(), &diff);
    let quad: f64 = u.iter().map(|v| v * v).sum();
    -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + cov.log_det() + quad)
}

/// Component-wise weighted average.
pub fn weighted_mean(points: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>, MathError> {
    if points.is_empty() {
        return Err(MathError::Empty);
    }
    if points.len() != weights.len() {
        return Err(MathError::DimensionMismatch(points.len(), weights.len()));
    }
    let d = points[0].len();
    let mut mean = vec![0.0; d];
    for (p, w) in points.iter().zip(weights) {
        for j in 0..d {
            mean[j] += w * p[j];
        }
    }
    Ok(mean)
}

/// Weighted second moment about `center`: sum_i w_i (x_i - c)(x_i - c)^T.
/// May be singular; callers regularize via `SpdMatrix::from_symmetric`.
pub fn weighted_covariance(points: &[Vec<f64>], weights: &[f64], center: &[f64]) -> Vec<f64> {
    let d = center.len();
    let mut cov = vec![0.0; d * d];
    for (p, w) in points.iter().zip(weights) {
        for a in 0..d {
            let da = p[a] - center[a];
            for b in 0..d {
                cov[a * d + b] += w * da * (p[b] - center[b]);
            }
        }
    }
    cov
}

/// Indices of the `m` particles closest to `theta` in the per-component
/// scaled Euclidean metric. Ties break toward the lower index.
pub fn nearest_neighbors(
    population: &WeightedPopulation,
    theta: &Particle,
    m: usize,
    scales: &[f64],
) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = population
        .particles
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d2: f64 = p
                .theta
                .iter()
                .zip(&theta.theta)
                .zip(scales)
                .map(|((a, b), s)| {
                    let u = (a - b) / s;
                    u * u
                })
                .sum();
            (d2, i)
        })
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    scored.iter().take(m).map(|&(_, i)| i).collect()
}

/// Draw an index with probability proportional to the (normalized) weights.
pub fn weighted_draw<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}
