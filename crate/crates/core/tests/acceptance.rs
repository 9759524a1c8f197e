//! End-to-end acceptance suite. Each test prints one PASS/FAIL line with
//! the measured quantities so the run log doubles as a results table.

use std::time::Instant;

use statrs::function::erf::erf;

use abc_smc::core::{BoxPrior, EpsilonSchedule, Particle, WeightedPopulation};
use abc_smc::engine::{run_abc_smc, RunConfig, RunResult};
use abc_smc::kernels::{
    adapt_component_normal_refined, adapt_fim, adapt_mvn_global, adapt_mvn_olcm,
    build_tilde_population, estimate_q, FimNormalization, FimProvider, KernelSpec, KernelState,
};
use abc_smc::mathkit::{weighted_covariance, weighted_mean, RandomStream};
use abc_smc::models::{
    Banana, BananaFimVariant, Ellipsoid, GenerativeModel, Hes1, Identity, Repressilator, Ring,
};

fn check(criterion: usize, name: &str, pass: bool, detail: &str) {
    println!(
        "[criterion {criterion}] {name}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "[criterion {criterion}] {name} failed: {detail}");
}

// ---------------------------------------------------------------------------
// Criterion 1: posterior of the identity model vs a quadrature oracle
// ---------------------------------------------------------------------------

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Quadrature mean/std of the identity-model ABC posterior at threshold
/// `eps`: density proportional to P(|theta + noise - 0.3| <= eps) on [-1,1].
fn identity_oracle(eps: f64) -> (f64, f64) {
    let n = 200_001;
    let (lo, hi) = (-1.0, 1.0);
    let h = (hi - lo) / (n - 1) as f64;
    let (mut z0, mut z1, mut z2) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let theta = lo + i as f64 * h;
        let w = std_normal_cdf((0.3 + eps - theta) / 0.1) - std_normal_cdf((0.3 - eps - theta) / 0.1);
        let trap = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        z0 += trap * w;
        z1 += trap * w * theta;
        z2 += trap * w * theta * theta;
    }
    let mean = z1 / z0;
    let var = z2 / z0 - mean * mean;
    (mean, var.sqrt())
}

fn identity_kernels() -> Vec<KernelSpec> {
    vec![
        KernelSpec::Uniform,
        KernelSpec::ComponentNormalBeaumont,
        KernelSpec::ComponentNormalRefined,
        KernelSpec::MvnGlobal,
        KernelSpec::MvnKnn { m: 100 },
        KernelSpec::MvnOlcm,
        KernelSpec::FimGlobalDet,
        KernelSpec::FimKnnDet { m: 100 },
    ]
}

fn identity_run(kernel: KernelSpec, seed: u64) -> RunResult {
    let config = RunConfig::new(
        BoxPrior::new(vec![-1.0], vec![1.0]).unwrap(),
        kernel,
        EpsilonSchedule::Fixed(vec![1.0, 0.5, 0.2, 0.1, 0.05]),
        500,
        seed,
    );
    run_abc_smc(&config, &Identity, &[0.3]).expect("identity run")
}

#[test]
fn oracle_posterior_matches_quadrature() {
    let (oracle_mean, oracle_std) = identity_oracle(0.05);
    let mut pass = true;
    let mut detail = format!("oracle mean {oracle_mean:.5} std {oracle_std:.5};");
    for kernel in identity_kernels() {
        let label = kernel.label();
        let started = Instant::now();
        let result = identity_run(kernel, 101);
        let elapsed = started.elapsed().as_secs_f64();
        let mean = result.final_population.weighted_mean()[0];
        let std = result.final_population.weighted_std()[0];
        let ok = (mean - oracle_mean).abs() <= 0.02
            && (std - oracle_std).abs() <= 0.30 * oracle_std
            && elapsed < 30.0;
        detail.push_str(&format!(
            " {label}: mean {mean:.5} std {std:.5} in {elapsed:.1}s{};",
            if ok { "" } else { " OUT OF TOLERANCE" }
        ));
        pass &= ok;
    }
    check(1, "identity posterior vs quadrature oracle", pass, &detail);
}

// ---------------------------------------------------------------------------
// Criterion 2: closed-form identities at machine precision
// ---------------------------------------------------------------------------

fn random_population(seed: u64, n: usize, dim: usize) -> WeightedPopulation {
    use rand::Rng;
    let mut rng = RandomStream::new(seed, 0);
    let mut particles = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut distances = Vec::with_capacity(n);
    for _ in 0..n {
        particles.push(Particle {
            theta: (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        });
        weights.push(rng.gen_range(0.1..1.0));
        distances.push(rng.gen_range(0.0..1.0));
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    WeightedPopulation::new(particles, weights, distances, 3).unwrap()
}

struct ScaledFim {
    scale: f64,
}

impl FimProvider for ScaledFim {
    fn evaluate(&self, theta: &Particle) -> Vec<f64> {
        let (a, b) = (theta.theta[0], theta.theta[1]);
        vec![
            self.scale * (1.0 + a * a),
            self.scale * 0.3,
            self.scale * 0.3,
            self.scale * (2.0 + b * b),
        ]
    }
}

#[test]
fn closed_form_identities_hold_at_machine_precision() {
    let pop = random_population(7, 40, 2);
    let mut pass = true;
    let mut detail = String::new();

    // (a) refined component variance collapses to twice the weighted
    // variance when every recorded distance satisfies the next threshold
    let refined = adapt_component_normal_refined(&pop, 2.0).unwrap();
    let std = pop.weighted_std();
    let mut worst_a: f64 = 0.0;
    for j in 0..2 {
        worst_a = worst_a.max((refined[j] - 2.0 * std[j] * std[j]).abs());
    }
    pass &= worst_a <= 1e-12;
    detail.push_str(&format!("refined-vs-2var max err {worst_a:.2e};"));

    // (b) global covariance collapses to twice the weighted covariance
    let global = adapt_mvn_global(&pop, 2.0).unwrap();
    let pts: Vec<Vec<f64>> = pop.particles.iter().map(|p| p.theta.clone()).collect();
    let mean = weighted_mean(&pts, &pop.weights).unwrap();
    let cov = weighted_covariance(&pts, &pop.weights, &mean);
    let mut worst_b: f64 = global.ridge();
    for (g, c) in global.entries().iter().zip(&cov) {
        worst_b = worst_b.max((g - 2.0 * c).abs());
    }
    pass &= worst_b <= 1e-12;
    detail.push_str(&format!(" global-vs-2cov max err {worst_b:.2e};"));

    // (c) per-particle covariance = tilde covariance + squared bias
    let eps = 0.5;
    let tilde = build_tilde_population(&pop, eps);
    assert!(!tilde.is_empty() && tilde.len() < pop.len());
    let tilde_pts: Vec<Vec<f64>> = tilde.particles.iter().map(|p| p.theta.clone()).collect();
    let tilde_mean = weighted_mean(&tilde_pts, &tilde.weights).unwrap();
    let tilde_cov = weighted_covariance(&tilde_pts, &tilde.weights, &tilde_mean);
    let olcm = adapt_mvn_olcm(&pop, eps).unwrap();
    let mut worst_c: f64 = 0.0;
    for (p, local) in pop.particles.iter().zip(&olcm) {
        worst_c = worst_c.max(local.ridge());
        for i in 0..2 {
            for j in 0..2 {
                let bias = (tilde_mean[i] - p.theta[i]) * (tilde_mean[j] - p.theta[j]);
                let expected = tilde_cov[i * 2 + j] + bias;
                worst_c = worst_c.max((local.entry(i, j) - expected).abs());
            }
        }
    }
    pass &= worst_c <= 1e-12;
    detail.push_str(&format!(" olcm decomposition max err {worst_c:.2e};"));

    // (d) determinant normalization and scale invariance of the
    // information-matrix kernel
    let reference = adapt_mvn_global(&pop, eps).unwrap();
    let base = adapt_fim(&pop, &ScaledFim { scale: 1.0 }, FimNormalization::GlobalDet, eps).unwrap();
    let mut worst_det: f64 = 0.0;
    for local in &base {
        let rel = ((local.log_det() - reference.log_det()).exp() - 1.0).abs();
        worst_det = worst_det.max(rel);
    }
    pass &= worst_det <= 1e-8;
    detail.push_str(&format!(" det normalization rel err {worst_det:.2e};"));

    let mut worst_scale: f64 = 0.0;
    for scale in [0.1, 7.0, 1000.0] {
        let scaled = adapt_fim(&pop, &ScaledFim { scale }, FimNormalization::GlobalDet, eps).unwrap();
        for (a, b) in base.iter().zip(&scaled) {
            for (x, y) in a.entries().iter().zip(b.entries()) {
                worst_scale = worst_scale.max((x - y).abs() / x.abs().max(1e-300));
            }
        }
    }
    pass &= worst_scale <= 1e-8;
    detail.push_str(&format!(" scale invariance rel err {worst_scale:.2e}"));

    check(2, "closed-form kernel identities", pass, &detail);
}

// ---------------------------------------------------------------------------
// Criteria 3-5: toy benchmark orderings
// ---------------------------------------------------------------------------

fn toy_run(model: &dyn GenerativeModel, kernel: KernelSpec, seed: u64) -> RunResult {
    let config = RunConfig::new(
        model.default_prior(),
        kernel,
        model.default_schedule(),
        400,
        seed,
    );
    run_abc_smc(&config, model, &model.observed_default()).expect("toy run")
}

fn mean_rate_last(result: &RunResult, generations: usize) -> f64 {
    let g = &result.generations;
    let tail = &g[g.len() - generations..];
    tail.iter().map(|r| r.acceptance_rate).sum::<f64>() / generations as f64
}

#[test]
fn ellipsoid_local_kernels_outperform_componentwise_normal() {
    let model = Ellipsoid;
    let repeats = 5;
    let mut olcm_wins = 0;
    let mut knn_wins = 0;
    let mut detail = String::new();
    for r in 0..repeats {
        let seed = 300 + r as u64;
        let normal = mean_rate_last(&toy_run(&model, KernelSpec::ComponentNormalBeaumont, seed), 3);
        let olcm = mean_rate_last(&toy_run(&model, KernelSpec::MvnOlcm, seed), 3);
        let knn = mean_rate_last(&toy_run(&model, KernelSpec::MvnKnn { m: 50 }, seed), 3);
        if olcm >= 1.5 * normal {
            olcm_wins += 1;
        }
        if knn >= 1.5 * normal {
            knn_wins += 1;
        }
        detail.push_str(&format!(
            " r{r}: normal {normal:.4} olcm {olcm:.4} knn50 {knn:.4};"
        ));
    }
    let pass = olcm_wins >= 4 && knn_wins >= 4;
    check(
        3,
        "ellipsoid acceptance-rate ordering",
        pass,
        &format!("olcm wins {olcm_wins}/5, knn50 wins {knn_wins}/5;{detail}"),
    );
}

#[test]
fn ring_local_kernel_beats_global_mvn() {
    let model = Ring;
    let repeats = 5;
    let (mut normal_sum, mut mvn_sum, mut knn_sum) = (0.0, 0.0, 0.0);
    for r in 0..repeats {
        let seed = 400 + r as u64;
        normal_sum += mean_rate_last(&toy_run(&model, KernelSpec::ComponentNormalBeaumont, seed), 1);
        mvn_sum += mean_rate_last(&toy_run(&model, KernelSpec::MvnGlobal, seed), 1);
        knn_sum += mean_rate_last(&toy_run(&model, KernelSpec::MvnKnn { m: 50 }, seed), 1);
    }
    let (normal, mvn, knn) = (
        normal_sum / repeats as f64,
        mvn_sum / repeats as f64,
        knn_sum / repeats as f64,
    );
    let pass = knn > mvn && (mvn - normal).abs() <= 0.30 * normal;
    check(
        4,
        "ring final-generation acceptance rates",
        pass,
        &format!("normal {normal:.4} mvn {mvn:.4} knn50 {knn:.4}"),
    );
}

#[test]
fn banana_acceptance_rate_decreases_with_neighbourhood_size() {
    let model = Banana::new(BananaFimVariant::Paper);
    let repeats = 5;
    let ms = [50usize, 100, 200, 400];
    let mut means = Vec::new();
    for &m in &ms {
        let mut sum = 0.0;
        for r in 0..repeats {
            let seed = 500 + r as u64;
            sum += mean_rate_last(&toy_run(&model, KernelSpec::MvnKnn { m }, seed), 1);
        }
        means.push(sum / repeats as f64);
    }
    let violations = means
        .windows(2)
        .filter(|pair| pair[1] > pair[0])
        .count();
    let pass = violations <= 1;
    let detail = ms
        .iter()
        .zip(&means)
        .map(|(m, rate)| format!("M={m}: {rate:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    check(
        5,
        "banana rate non-increasing in M",
        pass,
        &format!("{detail} ({violations} adjacent violations)"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: the adapted refined variance maximizes the Q estimate
// ---------------------------------------------------------------------------

#[test]
fn adapted_refined_variance_maximizes_q_estimate() {
    let mut successes = 0;
    let cases = 50;
    for case in 0..cases {
        let pop = random_population(1000 + case, 30, 1);
        let mut sorted = pop.distances.clone();
        sorted.sort_by(f64::total_cmp);
        let eps = sorted[pop.len() / 2];
        let tilde = build_tilde_population(&pop, eps);
        let adapted = adapt_component_normal_refined(&pop, eps).unwrap()[0];
        let mut best_k = i32::MIN;
        let mut best_q = f64::NEG_INFINITY;
        for k in -3..=3 {
            let variance = adapted * (2.0f64).powi(k);
            let state = KernelState::ComponentNormal {
                variances: vec![variance],
            };
            let q = estimate_q(&state, &pop, &tilde);
            if q > best_q {
                best_q = q;
                best_k = k;
            }
        }
        if best_k == 0 {
            successes += 1;
        }
    }
    check(
        6,
        "adapted variance maximizes Q over the grid",
        successes >= 48,
        &format!("{successes}/{cases} populations"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: repressilator simulation-count ordering
// ---------------------------------------------------------------------------

#[test]
fn repressilator_global_mvn_needs_fewer_simulations_than_uniform() {
    let model = Repressilator::default();
    let schedule = EpsilonSchedule::Fixed(vec![160.0, 150.0, 140.0, 130.0, 120.0, 100.0, 80.0]);
    let observed = model.observed_default();
    let repeats = 3;
    let mut totals = [0.0f64; 2];
    let started = Instant::now();
    for (slot, kernel) in [KernelSpec::MvnGlobal, KernelSpec::Uniform].iter().enumerate() {
        for r in 0..repeats {
            let config = RunConfig::new(
                model.default_prior(),
                kernel.clone(),
                schedule.clone(),
                150,
                700 + r as u64,
            );
            let result = run_abc_smc(&config, &model, &observed).expect("repressilator run");
            totals[slot] += result.total_simulations as f64;
        }
    }
    let mvn_mean = totals[0] / repeats as f64;
    let uniform_mean = totals[1] / repeats as f64;
    check(
        7,
        "repressilator simulations: global mvn < uniform",
        mvn_mean < uniform_mean,
        &format!(
            "mvn mean {mvn_mean:.0} vs uniform mean {uniform_mean:.0} ({}s total)",
            started.elapsed().as_secs()
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: Hes1 posterior stability across kernels
// ---------------------------------------------------------------------------

#[test]
fn hes1_posterior_stable_across_kernels() {
    let model = Hes1::default();
    let schedule = EpsilonSchedule::Fixed(vec![20.0, 13.0, 10.0, 6.0, 5.0]);
    let observed = model.observed_default();
    let run = |kernel: KernelSpec| {
        let config = RunConfig::new(model.default_prior(), kernel, schedule.clone(), 150, 800);
        run_abc_smc(&config, &model, &observed).expect("hes1 run")
    };
    let refined = run(KernelSpec::ComponentNormalRefined);
    let olcm = run(KernelSpec::MvnOlcm);
    let (m1, s1) = (
        refined.final_population.weighted_mean(),
        refined.final_population.weighted_std(),
    );
    let (m2, s2) = (
        olcm.final_population.weighted_mean(),
        olcm.final_population.weighted_std(),
    );
    let names = ["p0", "nu", "k1", "h"];
    let mut pass = true;
    let mut detail = String::new();
    for j in 0..4 {
        let pooled = ((s1[j] * s1[j] + s2[j] * s2[j]) / 2.0).sqrt();
        let gap = (m1[j] - m2[j]).abs();
        let ok = gap <= 2.0 * pooled;
        pass &= ok;
        detail.push_str(&format!(
            " {}: |{:.3}-{:.3}| = {:.3} vs 2*pooled sd {:.3}{};",
            names[j],
            m1[j],
            m2[j],
            gap,
            2.0 * pooled,
            if ok { "" } else { " APART" }
        ));
    }
    check(8, "hes1 posterior means agree across kernels", pass, &detail);
}

// ---------------------------------------------------------------------------
// Criterion 9: byte-identical posterior output for a repeated seed
// ---------------------------------------------------------------------------

#[test]
fn same_seed_reproduces_posterior_csv_bytes() {
    use abc_smc::cli::{cmd_run, Overrides};
    let dir = tempfile::TempDir::new().unwrap();
    let out = dir.path().join("out");
    let config_path = dir.path().join("config.json");
    std::fs::write(
        &config_path,
        format!(
            r#"{{"model": "identity", "kernel": "olcm", "population_size": 500,
                "seed": 101, "output_dir": "{}"}}"#,
            out.display()
        ),
    )
    .unwrap();
    assert_eq!(cmd_run(&config_path, &Overrides::default()), 0);
    let first = std::fs::read(out.join("posterior.csv")).unwrap();
    assert_eq!(cmd_run(&config_path, &Overrides::default()), 0);
    let second = std::fs::read(out.join("posterior.csv")).unwrap();
    check(
        9,
        "repeated seed gives byte-identical posterior.csv",
        first == second,
        &format!("{} bytes compared", first.len()),
    );
}
