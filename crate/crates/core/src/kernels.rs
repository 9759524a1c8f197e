//! The perturbation-kernel suite.
//!
//! Each kernel family is adapted once per generation from the previous
//! weighted population and the next threshold, then used to perturb
//! resampled particles and to evaluate transition densities in the weight
//! denominator. The adaptation formulas all derive from maximizing the
//! expected log kernel density between the successive intermediate targets;
//! the empirical stand-in for the next target is the "tilde" subset of the
//! previous population whose recorded distances already satisfy the next
//! threshold.

use rand::Rng;
use thiserror::Error;

use crate::core::{BoxPrior, Particle, WeightedPopulation};
use crate::mathkit::{
    mvn_log_density, mvn_sample, nearest_neighbors, weighted_covariance, weighted_mean, MathError,
    SpdMatrix,
};

const SCALE_FLOOR: f64 = 1e-12;
const MAX_PRIOR_REDRAWS: usize = 10_000;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error(transparent)]
    Math(#[from] MathError),
    #[error("population too small for kernel adaptation (N = {0})")]
    PopulationTooSmall(usize),
    #[error("neighbour count {m} out of range for population of {n}")]
    BadNeighbourCount { m: usize, n: usize },
    #[error("Fisher information not invertible at particle {index} after safeguard")]
    FimSingular { index: usize },
    #[error("kernel variant requires a Fisher information provider")]
    MissingFim,
    #[error("{attempts} consecutive draws fell outside the prior support")]
    OutOfPriorSupport { attempts: usize },
}

/// Which kernel family to use, with its tuning parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KernelSpec {
    Uniform,
    ComponentNormalBeaumont,
    ComponentNormalRefined,
    MvnGlobal,
    MvnKnn { m: usize },
    MvnOlcm,
    FimGlobalDet,
    FimKnnDet { m: usize },
}

impl KernelSpec {
    pub fn label(&self) -> String {
        match self {
            KernelSpec::Uniform => "uniform".into(),
            KernelSpec::ComponentNormalBeaumont => "normal_beaumont".into(),
            KernelSpec::ComponentNormalRefined => "normal_refined".into(),
            KernelSpec::MvnGlobal => "mvn".into(),
            KernelSpec::MvnKnn { m } => format!("mvn_knn_{m}"),
            KernelSpec::MvnOlcm => "olcm".into(),
            KernelSpec::FimGlobalDet => "fim_global".into(),
            KernelSpec::FimKnnDet { m } => format!("fim_knn_{m}"),
        }
    }
}

/// Determinant reference for Fisher-information scaled kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FimNormalization {
    /// Match the determinant of the population-level optimal covariance.
    GlobalDet,
    /// Match the determinant of the M-nearest-neighbour covariance.
    KnnDet(usize),
}

/// Evaluates the Fisher information matrix I(theta), returned row-major.
pub trait FimProvider: Sync {
    fn evaluate(&self, theta: &Particle) -> Vec<f64>;
}

/// The subset of the previous population whose recorded distances already
/// satisfy the next threshold, with weights renormalized.
#[derive(Debug, Clone)]
pub struct TildePopulation {
    pub particles: Vec<Particle>,
    pub weights: Vec<f64>,
}

impl TildePopulation {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }
}

pub fn build_tilde_population(prev: &WeightedPopulation, epsilon_next: f64) -> TildePopulation {
    let mut particles = Vec::new();
    let mut weights = Vec::new();
    for i in 0..prev.len() {
        if prev.distances[i] <= epsilon_next {
            particles.push(prev.particles[i].clone());
            weights.push(prev.weights[i]);
        }
    }
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        for w in &mut weights {
            *w /= total;
        }
    }
    TildePopulation { particles, weights }
}

/// Adapted kernel parameters for one generation. Local variants carry one
/// covariance per previous-population particle, indexed by position.
#[derive(Debug, Clone)]
pub enum KernelState {
    Uniform { half_widths: Vec<f64> },
    ComponentNormal { variances: Vec<f64> },
    MvnGlobal { cov: SpdMatrix },
    Local { covs: Vec<SpdMatrix> },
}

/// Fit the requested kernel family to the previous population.
pub fn adapt(
    spec: &KernelSpec,
    prev: &WeightedPopulation,
    epsilon_next: f64,
    fim: Option<&dyn FimProvider>,
) -> Result<KernelState, KernelError> {
    match spec {
        KernelSpec::Uniform => Ok(KernelState::Uniform {
            half_widths: adapt_uniform(prev)?,
        }),
        KernelSpec::ComponentNormalBeaumont => Ok(KernelState::ComponentNormal {
            variances: adapt_component_normal_beaumont(prev)?,
        }),
        KernelSpec::ComponentNormalRefined => Ok(KernelState::ComponentNormal {
            variances: adapt_component_normal_refined(prev, epsilon_next)?,
        }),
        KernelSpec::MvnGlobal => Ok(KernelState::MvnGlobal {
            cov: adapt_mvn_global(prev, epsilon_next)?,
        }),
        KernelSpec::MvnKnn { m } => Ok(KernelState::Local {
            covs: adapt_mvn_knn(prev, *m)?,
        }),
        KernelSpec::MvnOlcm => Ok(KernelState::Local {
            covs: adapt_mvn_olcm(prev, epsilon_next)?,
        }),
        KernelSpec::FimGlobalDet => {
            let fim = fim.ok_or(KernelError::MissingFim)?;
            Ok(KernelState::Local {
                covs: adapt_fim(prev, fim, FimNormalization::GlobalDet, epsilon_next)?,
            })
        }
        KernelSpec::FimKnnDet { m } => {
            let fim = fim.ok_or(KernelError::MissingFim)?;
            Ok(KernelState::Local {
                covs: adapt_fim(prev, fim, FimNormalization::KnnDet(*m), epsilon_next)?,
            })
        }
    }
}

/// Per-component half-range of the previous population.
pub fn adapt_uniform(prev: &WeightedPopulation) -> Result<Vec<f64>, KernelError> {
    if prev.len() < 2 {
        return Err(KernelError::PopulationTooSmall(prev.len()));
    }
    let d = prev.dim();
    let mut widths = vec![0.0; d];
    for j in 0..d {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in &prev.particles {
            lo = lo.min(p.theta[j]);
            hi = hi.max(p.theta[j]);
        }
        widths[j] = (0.5 * (hi - lo)).max(SCALE_FLOOR);
    }
    Ok(widths)
}

/// Twice the weighted empirical variance of each component.
pub fn adapt_component_normal_beaumont(
    prev: &WeightedPopulation,
) -> Result<Vec<f64>, KernelError> {
    if prev.len() < 2 {
        return Err(KernelError::PopulationTooSmall(prev.len()));
    }
    let std = prev.weighted_std();
    Ok(std
        .iter()
        .map(|s| (2.0 * s * s).max(SCALE_FLOOR))
        .collect())
}

/// Kernel variance per component as the double sum over the previous
/// population and its tilde subset. Falls back to the Beaumont choice when
/// no particle satisfies the next threshold.
pub fn adapt_component_normal_refined(
    prev: &WeightedPopulation,
    epsilon_next: f64,
) -> Result<Vec<f64>, KernelError> {
    let tilde = build_tilde_population(prev, epsilon_next);
    if tilde.is_empty() {
        return adapt_component_normal_beaumont(prev);
    }
    let d = prev.dim();
    let mut var = vec![0.0; d];
    for (p, w) in prev.particles.iter().zip(&prev.weights) {
        for (q, v) in tilde.particles.iter().zip(&tilde.weights) {
            let ww = w * v;
            for j in 0..d {
                let diff = q.theta[j] - p.theta[j];
                var[j] += ww * diff * diff;
            }
        }
    }
    Ok(var.iter().map(|v| v.max(SCALE_FLOOR)).collect())
}

/// Optimal global covariance: the double sum of outer products between the
/// previous population and its tilde subset. Falls back to twice the
/// weighted covariance of the previous population when the tilde set is
/// empty.
pub fn adapt_mvn_global(
    prev: &WeightedPopulation,
    epsilon_next: f64,
) -> Result<SpdMatrix, KernelError> {
    let tilde = build_tilde_population(prev, epsilon_next);
    let d = prev.dim();
    if tilde.is_empty() {
        return fallback_global_cov(prev);
    }
    let mut cov = vec![0.0; d * d];
    for (p, w) in prev.particles.iter().zip(&prev.weights) {
        for (q, v) in tilde.particles.iter().zip(&tilde.weights) {
            let ww = w * v;
            for a in 0..d {
                let da = q.theta[a] - p.theta[a];
                for b in 0..d {
                    cov[a * d + b] += ww * da * (q.theta[b] - p.theta[b]);
                }
            }
        }
    }
    Ok(SpdMatrix::from_symmetric(d, cov)?)
}

fn fallback_global_cov(prev: &WeightedPopulation) -> Result<SpdMatrix, KernelError> {
    let d = prev.dim();
    let points: Vec<Vec<f64>> = prev.particles.iter().map(|p| p.theta.clone()).collect();
    let mean = weighted_mean(&points, &prev.weights)?;
    let mut cov = weighted_covariance(&points, &prev.weights, &mean);
    for v in &mut cov {
        *v *= 2.0;
    }
    Ok(SpdMatrix::from_symmetric(d, cov)?)
}

/// Per-particle covariance from the M nearest neighbours (unweighted second
/// moment about the neighbour mean). Neighbour distances are scaled by the
/// per-component weighted standard deviation of the population.
pub fn adapt_mvn_knn(
    prev: &WeightedPopulation,
    m: usize,
) -> Result<Vec<SpdMatrix>, KernelError> {
    let n = prev.len();
    if m < 2 || m > n {
        return Err(KernelError::BadNeighbourCount { m, n });
    }
    let d = prev.dim();
    let scales: Vec<f64> = prev
        .weighted_std()
        .iter()
        .map(|s| s.max(SCALE_FLOOR))
        .collect();
    let mut covs = Vec::with_capacity(n);
    for p in &prev.particles {
        let idx = nearest_neighbors(prev, p, m, &scales);
        let pts: Vec<Vec<f64>> = idx
            .iter()
            .map(|&i| prev.particles[i].theta.clone())
            .collect();
        let w = vec![1.0 / m as f64; m];
        let mean = weighted_mean(&pts, &w)?;
        let cov = weighted_covariance(&pts, &w, &mean);
        covs.push(SpdMatrix::from_symmetric(d, cov)?);
    }
    Ok(covs)
}

/// Optimal local covariance: for each particle, the tilde-weighted second
/// moment about that particle.
pub fn adapt_mvn_olcm(
    prev: &WeightedPopulation,
    epsilon_next: f64,
) -> Result<Vec<SpdMatrix>, KernelError> {
    let tilde = build_tilde_population(prev, epsilon_next);
    let d = prev.dim();
    if tilde.is_empty() {
        let fallback = fallback_global_cov(prev)?;
        return Ok(vec![fallback; prev.len()]);
    }
    let pts: Vec<Vec<f64>> = tilde.particles.iter().map(|p| p.theta.clone()).collect();
    let mut covs = Vec::with_capacity(prev.len());
    for p in &prev.particles {
        let cov = weighted_covariance(&pts, &tilde.weights, &p.theta);
        covs.push(SpdMatrix::from_symmetric(d, cov)?);
    }
    Ok(covs)
}

/// Inverse Fisher information per particle, rescaled so its determinant
/// matches the chosen reference covariance.
pub fn adapt_fim(
    prev: &WeightedPopulation,
    fim: &dyn FimProvider,
    normalization: FimNormalization,
    epsilon_next: f64,
) -> Result<Vec<SpdMatrix>, KernelError> {
    let d = prev.dim();
    let reference_log_dets: Vec<f64> = match normalization {
        FimNormalization::GlobalDet => {
            let global = adapt_mvn_global(prev, epsilon_next)?;
            vec![global.log_det(); prev.len()]
        }
        FimNormalization::KnnDet(m) => adapt_mvn_knn(prev, m)?
            .iter()
            .map(|c| c.log_det())
            .collect(),
    };
    let mut covs = Vec::with_capacity(prev.len());
    for (index, p) in prev.particles.iter().enumerate() {
        let info = fim.evaluate(p);
        let spd_info = SpdMatrix::from_symmetric(d, info)
            .map_err(|_| KernelError::FimSingular { index })?;
        let inv = spd_info.inverse();
        // det(I^-1) = exp(-log det I); the scale factor makes
        // det(scale * I^-1) equal the reference determinant.
        let log_det_inv = -spd_info.log_det();
        let log_scale = (reference_log_dets[index] - log_det_inv) / d as f64;
        let scale = log_scale.exp();
        let scaled: Vec<f64> = inv.iter().map(|v| scale * v).collect();
        covs.push(
            SpdMatrix::from_symmetric(d, scaled)
                .map_err(|_| KernelError::FimSingular { index })?,
        );
    }
    Ok(covs)
}

fn local_cov<'a>(covs: &'a [SpdMatrix], index: usize) -> &'a SpdMatrix {
    &covs[index]
}

/// Draw a perturbed particle centered on `center`, redrawing until the
/// prior density is positive.
pub fn kernel_sample<R: Rng + ?Sized>(
    state: &KernelState,
    center_index: usize,
    center: &Particle,
    prior: &BoxPrior,
    rng: &mut R,
) -> Result<Particle, KernelError> {
    for _ in 0..MAX_PRIOR_REDRAWS {
        let theta = match state {
            KernelState::Uniform { half_widths } => center
                .theta
                .iter()
                .zip(half_widths)
                .map(|(c, s)| c + rng.gen_range(-s..*s))
                .collect(),
            KernelState::ComponentNormal { variances } => center
                .theta
                .iter()
                .zip(variances)
                .map(|(c, v)| {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    c + v.sqrt() * z
                })
                .collect(),
            KernelState::MvnGlobal { cov } => mvn_sample(&center.theta, cov.chol(), rng),
            KernelState::Local { covs } => {
                mvn_sample(&center.theta, local_cov(covs, center_index).chol(), rng)
            }
        };
        let candidate = Particle { theta };
        if prior.density(&candidate) > 0.0 {
            return Ok(candidate);
        }
    }
    Err(KernelError::OutOfPriorSupport {
        attempts: MAX_PRIOR_REDRAWS,
    })
}

/// Transition density K_t(to | from). The prior-support redraw is not
/// corrected for; this is the plain kernel density.
pub fn kernel_density(
    state: &KernelState,
    from_index: usize,
    from: &Particle,
    to: &Particle,
) -> f64 {
    match state {
        KernelState::Uniform { half_widths } => {
            let mut density = 1.0;
            for ((f, t), s) in from.theta.iter().zip(&to.theta).zip(half_widths) {
                if (t - f).abs() > *s {
                    return 0.0;
                }
                density /= 2.0 * s;
            }
            density
        }
        KernelState::ComponentNormal { variances } => {
            let mut log_density = 0.0;
            for ((f, t), v) in from.theta.iter().zip(&to.theta).zip(variances) {
                let diff = t - f;
                log_density += -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + diff * diff / v);
            }
            log_density.exp()
        }
        KernelState::MvnGlobal { cov } => mvn_log_density(&to.theta, &from.theta, cov).exp(),
        KernelState::Local { covs } => {
            mvn_log_density(&to.theta, &from.theta, local_cov(covs, from_index)).exp()
        }
    }
}

/// Empirical estimate of the expected log transition density between the
/// previous population and the tilde subset. Used to check that the adapted
/// parameters actually maximize the criterion; returns -inf when some
/// required transition has zero density.
pub fn estimate_q(
    state: &KernelState,
    prev: &WeightedPopulation,
    tilde: &TildePopulation,
) -> f64 {
    let mut q = 0.0;
    for (i, (p, w)) in prev.particles.iter().zip(&prev.weights).enumerate() {
        for (t, v) in tilde.particles.iter().zip(&tilde.weights) {
            let density = kernel_density(state, i, p, t);
            if density <= 0.0 {
                return f64::NEG_INFINITY;
            }
            q += w * v * density.ln();
        }
    }
    q
}
