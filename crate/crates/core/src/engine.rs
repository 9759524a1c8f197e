//! The ABC SMC driver: the generation loop, the propose/simulate/accept
//! loop, importance weight computation and per-generation telemetry.
//!
//! Every proposal draws from its own counter-derived random stream, so the
//! accepted set is a pure function of (seed, generation, proposal counter)
//! and is identical whether proposals are evaluated sequentially or in
//! parallel batches.

use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::core::{
    distance_euclidean, BoxPrior, CoreError, EpsilonSchedule, GenerationRecord, Particle,
    WeightedPopulation,
};
use crate::kernels::{adapt, kernel_density, kernel_sample, KernelError, KernelSpec, KernelState};
use crate::mathkit::{weighted_draw, RandomStream};
use crate::models::{GenerativeModel, ModelError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("proposal budget exhausted in generation {generation} at epsilon {epsilon} ({accepted}/{needed} accepted after {proposals} proposals)")]
    BudgetExhausted {
        generation: usize,
        epsilon: f64,
        accepted: usize,
        needed: usize,
        proposals: usize,
    },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("all importance weights vanished in generation {generation}")]
    DegenerateWeights { generation: usize },
    #[error("population size must be at least 2, got {0}")]
    PopulationTooSmall(usize),
    #[error("observed data has dimension {got}, model produces {expected}")]
    ObservedDimMismatch { got: usize, expected: usize },
}

/// An engine error together with the telemetry of the generations that
/// completed before it.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct EngineFailure {
    pub error: EngineError,
    pub partial: Vec<GenerationRecord>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub prior: BoxPrior,
    pub kernel: KernelSpec,
    pub schedule: EpsilonSchedule,
    pub population_size: usize,
    pub seed: u64,
    pub max_proposals_per_generation: usize,
    /// Worker threads for proposal evaluation. 1 is the sequential
    /// reproducibility reference; results are identical for any value.
    pub workers: usize,
}

impl RunConfig {
    pub fn new(prior: BoxPrior, kernel: KernelSpec, schedule: EpsilonSchedule, n: usize, seed: u64) -> Self {
        RunConfig {
            prior,
            kernel,
            schedule,
            population_size: n,
            seed,
            max_proposals_per_generation: 1_000_000,
            workers: 1,
        }
    }
}

#[derive(Debug)]
pub struct RunResult {
    pub final_population: WeightedPopulation,
    pub generations: Vec<GenerationRecord>,
    pub total_simulations: usize,
}

/// Per-generation (t, epsilon, acceptance rate) series.
pub fn acceptance_rate_series(result: &RunResult) -> Vec<(usize, f64, f64)> {
    result
        .generations
        .iter()
        .map(|g| (g.t, g.epsilon, g.acceptance_rate))
        .collect()
}

fn stream_id(generation: usize, counter: usize) -> u64 {
    ((generation as u64) << 32) | counter as u64
}

/// One proposal: resample (after generation 1), perturb inside the prior
/// support, simulate once and measure the distance to the observed data.
fn evaluate_proposal(
    config: &RunConfig,
    model: &dyn GenerativeModel,
    observed: &[f64],
    prev: Option<(&WeightedPopulation, &KernelState)>,
    generation: usize,
    counter: usize,
) -> Result<(Particle, f64), EngineError> {
    let mut rng = RandomStream::new(config.seed, stream_id(generation, counter));
    let theta = match prev {
        None => config.prior.sample(&mut rng),
        Some((pop, state)) => {
            let j = weighted_draw(&pop.weights, &mut rng);
            kernel_sample(state, j, &pop.particles[j], &config.prior, &mut rng)?
        }
    };
    let y = model.simulate(&theta, &mut rng)?;
    let dist = distance_euclidean(&y, observed)?;
    Ok((theta, dist))
}

type Accepted = (Vec<Particle>, Vec<f64>, usize);

/// Run the propose/accept loop until `n` acceptances, returning the
/// accepted particles, their distances, and the number of proposals up to
/// and including the n-th acceptance.
fn accept_n(
    config: &RunConfig,
    model: &dyn GenerativeModel,
    observed: &[f64],
    prev: Option<(&WeightedPopulation, &KernelState)>,
    generation: usize,
    epsilon: f64,
) -> Result<Accepted, EngineError> {
    let n = config.population_size;
    let mut particles = Vec::with_capacity(n);
    let mut distances = Vec::with_capacity(n);
    let mut counter = 0usize;

    if config.workers <= 1 {
        while particles.len() < n {
            if counter >= config.max_proposals_per_generation {
                return Err(EngineError::BudgetExhausted {
                    generation,
                    epsilon,
                    accepted: particles.len(),
                    needed: n,
                    proposals: counter,
                });
            }
            let (theta, dist) =
                evaluate_proposal(config, model, observed, prev, generation, counter)?;
            counter += 1;
            if dist <= epsilon {
                particles.push(theta);
                distances.push(dist);
            }
        }
        return Ok((particles, distances, counter));
    }

    // Batched parallel evaluation. Proposals are committed in counter order,
    // so the accepted set matches the sequential run exactly; the canonical
    // proposal count is the counter of the n-th acceptance.
    let batch = (4 * config.workers).max(64).min(4096);
    while particles.len() < n {
        if counter >= config.max_proposals_per_generation {
            return Err(EngineError::BudgetExhausted {
                generation,
                epsilon,
                accepted: particles.len(),
                needed: n,
                proposals: counter,
            });
        }
        let upper = (counter + batch).min(config.max_proposals_per_generation);
        let results: Vec<Result<(Particle, f64), EngineError>> = (counter..upper)
            .into_par_iter()
            .map(|c| evaluate_proposal(config, model, observed, prev, generation, c))
            .collect();
        for result in results {
            let (theta, dist) = result?;
            counter += 1;
            if dist <= epsilon {
                particles.push(theta);
                distances.push(dist);
                if particles.len() == n {
                    break;
                }
            }
        }
    }
    Ok((particles, distances, counter))
}

/// Importance weights for a new generation: prior density over the
/// kernel-smoothed previous population, normalized.
pub fn compute_weights(
    new_particles: &[Particle],
    prev: &WeightedPopulation,
    kernel: &KernelState,
    prior: &BoxPrior,
) -> Result<Vec<f64>, EngineError> {
    let mut weights = Vec::with_capacity(new_particles.len());
    for new in new_particles {
        let numerator = prior.density(new);
        let denominator: f64 = prev
            .particles
            .iter()
            .zip(&prev.weights)
            .enumerate()
            .map(|(j, (p, w))| w * kernel_density(kernel, j, p, new))
            .sum();
        weights.push(if denominator > 0.0 {
            numerator / denominator
        } else {
            0.0
        });
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(EngineError::DegenerateWeights {
            generation: prev.generation_index + 1,
        });
    }
    for w in &mut weights {
        *w /= total;
    }
    Ok(weights)
}

/// Run the full ABC SMC loop down the threshold schedule.
pub fn run_abc_smc(
    config: &RunConfig,
    model: &dyn GenerativeModel,
    observed: &[f64],
) -> Result<RunResult, EngineFailure> {
    let mut records: Vec<GenerationRecord> = Vec::new();
    match run_inner(config, model, observed, &mut records) {
        Ok(final_population) => {
            let total_simulations = records.iter().map(|g| g.simulations).sum();
            Ok(RunResult {
                final_population,
                generations: records,
                total_simulations,
            })
        }
        Err(error) => Err(EngineFailure {
            error,
            partial: records,
        }),
    }
}

fn run_inner(
    config: &RunConfig,
    model: &dyn GenerativeModel,
    observed: &[f64],
    records: &mut Vec<GenerationRecord>,
) -> Result<WeightedPopulation, EngineError> {
    if config.population_size < 2 {
        return Err(EngineError::PopulationTooSmall(config.population_size));
    }
    if observed.len() != model.dim_data() {
        return Err(EngineError::ObservedDimMismatch {
            got: observed.len(),
            expected: model.dim_data(),
        });
    }
    config.schedule.validate()?;
    let n = config.population_size;
    let mut prev: Option<WeightedPopulation> = None;

    for t in 1.. {
        let started = Instant::now();
        let epsilon = config
            .schedule
            .next_epsilon(t, prev.as_ref().map(|p| p.distances.as_slice()).unwrap_or(&[]))?;

        // kernel parameters are fixed once epsilon_t is known, before any
        // proposal is drawn
        let state = match &prev {
            None => None,
            Some(pop) => Some(adapt(&config.kernel, pop, epsilon, model.fim())?),
        };

        let prev_ref = prev.as_ref().zip(state.as_ref());
        let (particles, distances, proposals) =
            accept_n(config, model, observed, prev_ref, t, epsilon)?;

        let weights = match prev_ref {
            None => vec![1.0 / n as f64; n],
            Some((pop, kernel)) => compute_weights(&particles, pop, kernel, &config.prior)?,
        };

        let population = WeightedPopulation::new(particles, weights, distances, t)?;
        records.push(GenerationRecord {
            t,
            epsilon,
            accepted: n,
            proposals,
            simulations: proposals,
            acceptance_rate: n as f64 / proposals as f64,
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        });

        if config.schedule.is_terminal(t, epsilon) {
            return Ok(population);
        }
        prev = Some(population);
    }
    unreachable!()
}
