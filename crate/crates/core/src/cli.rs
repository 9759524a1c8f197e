//! Command-line front end: JSON experiment configs, single runs, multi-run
//! benchmarks across kernels, and CSV telemetry export.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::core::{BoxPrior, EpsilonSchedule, GenerationRecord};
use crate::engine::{run_abc_smc, RunConfig, RunResult};
use crate::kernels::KernelSpec;
use crate::models::{
    build_model, load_observed_csv, BananaFimVariant, GenerativeModel, ModelOptions, MODEL_IDS,
};

/// One validation finding: where in the config document, and what is wrong.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn diag(path: &str, message: impl Into<String>) -> Diagnostic {
    Diagnostic {
        path: path.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawKernel {
    Name(String),
    Full { name: String, m: Option<usize> },
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawSchedule {
    Fixed(Vec<f64>),
    Adaptive {
        alpha: f64,
        epsilon_initial: f64,
        epsilon_final: f64,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPrior {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: Option<String>,
    kernel: Option<RawKernel>,
    kernel_list: Option<Vec<RawKernel>>,
    schedule: Option<RawSchedule>,
    population_size: Option<usize>,
    seed: Option<u64>,
    workers: Option<usize>,
    repeats: Option<usize>,
    max_proposals_per_generation: Option<usize>,
    prior: Option<RawPrior>,
    observed: Option<Vec<f64>>,
    observed_path: Option<String>,
    noise_std: Option<f64>,
    banana_fim: Option<String>,
    output_dir: Option<String>,
}

/// A fully validated experiment: the model, the engine settings, and the
/// benchmarking grid.
pub struct ExperimentConfig {
    pub model: Box<dyn GenerativeModel>,
    pub observed: Vec<f64>,
    pub prior: BoxPrior,
    pub schedule: EpsilonSchedule,
    pub population_size: usize,
    pub seed: u64,
    pub workers: usize,
    pub max_proposals_per_generation: usize,
    /// Kernel for `run` mode (optional if only benching).
    pub kernel: Option<KernelSpec>,
    /// Kernel grid for `bench` mode.
    pub kernel_list: Vec<KernelSpec>,
    pub repeats: usize,
    pub output_dir: PathBuf,
}

impl fmt::Debug for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExperimentConfig")
            .field("model", &self.model.id())
            .field("population_size", &self.population_size)
            .field("seed", &self.seed)
            .field("workers", &self.workers)
            .field("kernel", &self.kernel)
            .field("kernel_list", &self.kernel_list)
            .field("repeats", &self.repeats)
            .field("output_dir", &self.output_dir)
            .finish_non_exhaustive()
    }
}

impl ExperimentConfig {
    pub fn run_config(&self, kernel: KernelSpec, seed: u64) -> RunConfig {
        RunConfig {
            prior: self.prior.clone(),
            kernel,
            schedule: self.schedule.clone(),
            population_size: self.population_size,
            seed,
            max_proposals_per_generation: self.max_proposals_per_generation,
            workers: self.workers,
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

fn parse_kernel(raw: &RawKernel, path: &str, n: usize, out: &mut Vec<Diagnostic>) -> Option<KernelSpec> {
    let (name, m) = match raw {
        RawKernel::Name(name) => (name.as_str(), None),
        RawKernel::Full { name, m } => (name.as_str(), *m),
    };
    let default_m = ((0.2 * n as f64).ceil() as usize).max(2);
    let spec = match name {
        "uniform" => KernelSpec::Uniform,
        "normal_beaumont" => KernelSpec::ComponentNormalBeaumont,
        "normal_refined" => KernelSpec::ComponentNormalRefined,
        "mvn" => KernelSpec::MvnGlobal,
        "olcm" => KernelSpec::MvnOlcm,
        "mvn_knn" => KernelSpec::MvnKnn {
            m: m.unwrap_or(default_m),
        },
        "fim_global" => KernelSpec::FimGlobalDet,
        "fim_knn" => KernelSpec::FimKnnDet {
            m: m.unwrap_or(default_m),
        },
        other => {
            // accept the labelled forms "mvn_knn_50" / "fim_knn_30"
            if let Some(ms) = other.strip_prefix("mvn_knn_") {
                if let Ok(m) = ms.parse::<usize>() {
                    return validate_m(KernelSpec::MvnKnn { m }, path, n, out);
                }
            }
            if let Some(ms) = other.strip_prefix("fim_knn_") {
                if let Ok(m) = ms.parse::<usize>() {
                    return validate_m(KernelSpec::FimKnnDet { m }, path, n, out);
                }
            }
            out.push(diag(
                path,
                format!(
                    "unknown kernel {other:?}; expected one of uniform, normal_beaumont, \
                     normal_refined, mvn, mvn_knn, olcm, fim_global, fim_knn"
                ),
            ));
            return None;
        }
    };
    validate_m(spec, path, n, out)
}

fn validate_m(spec: KernelSpec, path: &str, n: usize, out: &mut Vec<Diagnostic>) -> Option<KernelSpec> {
    let m = match &spec {
        KernelSpec::MvnKnn { m } | KernelSpec::FimKnnDet { m } => *m,
        _ => return Some(spec),
    };
    if m < 2 || m > n {
        out.push(diag(
            path,
            format!("neighbour count m = {m} must lie in [2, population_size = {n}]"),
        ));
        return None;
    }
    Some(spec)
}

/// Parse and fully validate a JSON config document. Model defaults (prior,
/// schedule, observed data, population size) fill any omitted fields.
/// Returns every finding rather than stopping at the first.
pub fn validate_config(document: &str) -> Result<ExperimentConfig, Vec<Diagnostic>> {
    let raw: RawConfig = match serde_json::from_str(document) {
        Ok(raw) => raw,
        Err(e) => {
            return Err(vec![diag(
                &format!("line {}, column {}", e.line(), e.column()),
                e.to_string(),
            )])
        }
    };
    let mut diags = Vec::new();

    let banana_fim = match raw.banana_fim.as_deref() {
        None | Some("paper") => BananaFimVariant::Paper,
        Some("derived") => BananaFimVariant::Derived,
        Some(other) => {
            diags.push(diag(
                "banana_fim",
                format!("unknown variant {other:?}; expected \"paper\" or \"derived\""),
            ));
            BananaFimVariant::Paper
        }
    };
    if let Some(noise) = raw.noise_std {
        if !(noise >= 0.0) {
            diags.push(diag("noise_std", "must be a non-negative number"));
        }
    }

    let model = match &raw.model {
        None => {
            diags.push(diag("model", "required field is missing"));
            None
        }
        Some(id) => {
            let opts = ModelOptions {
                noise_std: raw.noise_std,
                banana_fim,
            };
            match build_model(id, &opts) {
                Some(model) => Some(model),
                None => {
                    diags.push(diag(
                        "model",
                        format!("unknown model {id:?}; expected one of {}", MODEL_IDS.join(", ")),
                    ));
                    None
                }
            }
        }
    };

    let Some(model) = model else {
        return Err(diags);
    };

    let population_size = raw.population_size.unwrap_or_else(|| model.default_population_size());
    if population_size < 2 {
        diags.push(diag("population_size", "must be at least 2"));
    }

    let prior = match raw.prior {
        None => Some(model.default_prior()),
        Some(rp) => match BoxPrior::new(rp.lower, rp.upper) {
            Ok(p) if p.dim() == model.dim_theta() => Some(p),
            Ok(p) => {
                diags.push(diag(
                    "prior",
                    format!(
                        "dimension {} does not match the model's parameter dimension {}",
                        p.dim(),
                        model.dim_theta()
                    ),
                ));
                None
            }
            Err(e) => {
                diags.push(diag("prior", e.to_string()));
                None
            }
        },
    };

    let schedule = match raw.schedule {
        None => Some(model.default_schedule()),
        Some(RawSchedule::Fixed(eps)) => Some(EpsilonSchedule::Fixed(eps)),
        Some(RawSchedule::Adaptive {
            alpha,
            epsilon_initial,
            epsilon_final,
        }) => {
            if !(alpha > 0.0 && alpha < 1.0) {
                diags.push(diag("schedule.alpha", "alpha must lie in (0,1)"));
            }
            Some(EpsilonSchedule::AdaptiveQuantile {
                alpha,
                epsilon_initial,
                epsilon_final,
            })
        }
    };
    if let Some(schedule) = &schedule {
        if let Err(e) = schedule.validate() {
            diags.push(diag("schedule", e.to_string()));
        }
    }

    let observed = match (&raw.observed, &raw.observed_path) {
        (Some(_), Some(_)) => {
            diags.push(diag(
                "observed",
                "observed and observed_path are mutually exclusive",
            ));
            None
        }
        (Some(values), None) => Some(values.clone()),
        (None, Some(path)) => match load_observed_csv(Path::new(path)) {
            Ok(values) => Some(values),
            Err(e) => {
                diags.push(diag("observed_path", e.to_string()));
                None
            }
        },
        (None, None) => Some(model.observed_default()),
    };
    if let Some(observed) = &observed {
        if observed.len() != model.dim_data() {
            diags.push(diag(
                "observed",
                format!(
                    "dimension {} does not match the model's data dimension {}",
                    observed.len(),
                    model.dim_data()
                ),
            ));
        }
    }

    let kernel = raw
        .kernel
        .as_ref()
        .and_then(|k| parse_kernel(k, "kernel", population_size, &mut diags));
    let mut kernel_list = Vec::new();
    if let Some(raws) = &raw.kernel_list {
        if raws.is_empty() {
            diags.push(diag("kernel_list", "must be non-empty when present"));
        }
        for (i, k) in raws.iter().enumerate() {
            if let Some(spec) = parse_kernel(k, &format!("kernel_list[{i}]"), population_size, &mut diags) {
                kernel_list.push(spec);
            }
        }
    }

    let repeats = raw.repeats.unwrap_or(1);
    if repeats < 1 {
        diags.push(diag("repeats", "must be at least 1"));
    }
    let max_proposals = raw.max_proposals_per_generation.unwrap_or(1_000_000);
    if max_proposals < population_size {
        diags.push(diag(
            "max_proposals_per_generation",
            "must be at least population_size",
        ));
    }
    let workers = raw.workers.unwrap_or(1);
    if workers < 1 {
        diags.push(diag("workers", "must be at least 1"));
    }

    if !diags.is_empty() {
        return Err(diags);
    }
    Ok(ExperimentConfig {
        model,
        observed: observed.expect("validated"),
        prior: prior.expect("validated"),
        schedule: schedule.expect("validated"),
        population_size,
        seed: raw.seed.unwrap_or(1),
        workers,
        max_proposals_per_generation: max_proposals,
        kernel,
        kernel_list,
        repeats,
        output_dir: PathBuf::from(raw.output_dir.unwrap_or_else(|| "out".to_string())),
    })
}

fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, Vec<Diagnostic>> {
    let document = fs::read_to_string(path)
        .map_err(|e| vec![diag("(file)", format!("cannot read {}: {e}", path.display()))])?;
    let mut config = validate_config(&document)?;
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(workers) = overrides.workers {
        config.workers = workers;
    }
    if let Some(dir) = &overrides.output_dir {
        config.output_dir = dir.clone();
    }
    Ok(config)
}

fn fmt_field(v: f64) -> String {
    format!("{v}")
}

pub fn write_generations_csv(path: &Path, records: &[GenerationRecord]) -> std::io::Result<()> {
    let mut out = String::from(
        "t,epsilon,accepted,proposals,acceptance_rate,simulations,cumulative_simulations,wall_time_ms\n",
    );
    let mut cumulative = 0usize;
    for g in records {
        cumulative += g.simulations;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            g.t,
            fmt_field(g.epsilon),
            g.accepted,
            g.proposals,
            fmt_field(g.acceptance_rate),
            g.simulations,
            cumulative,
            fmt_field(g.wall_time_ms),
        ));
    }
    fs::write(path, out)
}

pub fn write_posterior_csv(path: &Path, result: &RunResult) -> std::io::Result<()> {
    let pop = &result.final_population;
    let dim = pop.dim();
    let mut out = String::new();
    for j in 1..=dim {
        out.push_str(&format!("theta_{j},"));
    }
    out.push_str("weight\n");
    for (p, w) in pop.particles.iter().zip(&pop.weights) {
        for v in &p.theta {
            out.push_str(&fmt_field(*v));
            out.push(',');
        }
        out.push_str(&fmt_field(*w));
        out.push('\n');
    }
    fs::write(path, out)
}

fn report_diagnostics(diags: &[Diagnostic]) {
    for d in diags {
        eprintln!("config error: {d}");
    }
}

/// `abc run <config>`: one ABC SMC run, generations.csv + posterior.csv.
/// Exit 0 on success, 1 on engine failure (partial telemetry still
/// written), 2 on invalid config.
pub fn cmd_run(config_path: &Path, overrides: &Overrides) -> i32 {
    let config = match load_config(config_path, overrides) {
        Ok(c) => c,
        Err(diags) => {
            report_diagnostics(&diags);
            return 2;
        }
    };
    let Some(kernel) = config.kernel.clone() else {
        report_diagnostics(&[diag("kernel", "required for run mode")]);
        return 2;
    };
    if let Err(e) = fs::create_dir_all(&config.output_dir) {
        eprintln!("cannot create {}: {e}", config.output_dir.display());
        return 1;
    }
    let run = config.run_config(kernel, config.seed);
    match run_abc_smc(&run, config.model.as_ref(), &config.observed) {
        Ok(result) => {
            let gpath = config.output_dir.join("generations.csv");
            let ppath = config.output_dir.join("posterior.csv");
            if let Err(e) = write_generations_csv(&gpath, &result.generations)
                .and_then(|_| write_posterior_csv(&ppath, &result))
            {
                eprintln!("cannot write outputs: {e}");
                return 1;
            }
            println!(
                "run complete: {} generations, {} total simulations, outputs in {}",
                result.generations.len(),
                result.total_simulations,
                config.output_dir.display()
            );
            0
        }
        Err(failure) => {
            eprintln!("engine failure: {failure}");
            let gpath = config.output_dir.join("generations.csv");
            if let Err(e) = write_generations_csv(&gpath, &failure.partial) {
                eprintln!("cannot write partial telemetry: {e}");
            }
            1
        }
    }
}

/// Outcome of one (kernel, repeat) bench cell.
struct BenchCell {
    kernel_label: String,
    repeat: usize,
    seed: u64,
    outcome: Result<RunResult, String>,
}

/// Per-kernel aggregate over completed repeats.
pub struct BenchSummary {
    pub kernel_label: String,
    /// (t, mean acceptance rate, variance of acceptance rate) per generation.
    pub generation_rates: Vec<(usize, f64, f64)>,
    pub mean_total_simulations: f64,
    pub mean_wall_time_ms: f64,
    pub completed: usize,
    pub failed: usize,
}

fn summarize(kernel_label: &str, cells: &[&BenchCell]) -> BenchSummary {
    let completed: Vec<&RunResult> = cells
        .iter()
        .filter_map(|c| c.outcome.as_ref().ok())
        .collect();
    let failed = cells.len() - completed.len();
    let mut generation_rates = Vec::new();
    if !completed.is_empty() {
        let depth = completed.iter().map(|r| r.generations.len()).min().unwrap_or(0);
        for gi in 0..depth {
            let rates: Vec<f64> = completed
                .iter()
                .map(|r| r.generations[gi].acceptance_rate)
                .collect();
            let mean = rates.iter().sum::<f64>() / rates.len() as f64;
            let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / rates.len() as f64;
            generation_rates.push((completed[0].generations[gi].t, mean, var));
        }
    }
    let mean_total_simulations = if completed.is_empty() {
        f64::NAN
    } else {
        completed.iter().map(|r| r.total_simulations as f64).sum::<f64>() / completed.len() as f64
    };
    let mean_wall_time_ms = if completed.is_empty() {
        f64::NAN
    } else {
        completed
            .iter()
            .map(|r| r.generations.iter().map(|g| g.wall_time_ms).sum::<f64>())
            .sum::<f64>()
            / completed.len() as f64
    };
    BenchSummary {
        kernel_label: kernel_label.to_string(),
        generation_rates,
        mean_total_simulations,
        mean_wall_time_ms,
        completed: completed.len(),
        failed,
    }
}

fn write_bench_csv(path: &Path, cells: &[BenchCell], labels: &[String]) -> std::io::Result<()> {
    let mut out = String::from(
        "kernel,record,t,repeat,seed,mean_acceptance_rate,var_acceptance_rate,\
         mean_total_simulations,mean_wall_time_ms,repeats_completed,repeats_failed,error\n",
    );
    for label in labels {
        let kernel_cells: Vec<&BenchCell> =
            cells.iter().filter(|c| &c.kernel_label == label).collect();
        let summary = summarize(label, &kernel_cells);
        for (t, mean, var) in &summary.generation_rates {
            out.push_str(&format!(
                "{label},generation,{t},,,{},{},,,,,\n",
                fmt_field(*mean),
                fmt_field(*var)
            ));
        }
        out.push_str(&format!(
            "{label},summary,,,,,,{},{},{},{},\n",
            fmt_field(summary.mean_total_simulations),
            fmt_field(summary.mean_wall_time_ms),
            summary.completed,
            summary.failed
        ));
        for cell in &kernel_cells {
            if let Err(message) = &cell.outcome {
                out.push_str(&format!(
                    "{label},failed,,{},{},,,,,,,{}\n",
                    cell.repeat,
                    cell.seed,
                    message.replace([',', '\n'], ";")
                ));
            }
        }
    }
    fs::write(path, out)
}

/// `abc bench <config>`: R repeats of each kernel in kernel_list with seeds
/// seed+0..seed+R-1. Per-cell artifacts land under output_dir/cells/, the
/// aggregate in bench.csv. Exit 0 if every cell completed, 1 otherwise,
/// 2 on invalid config.
pub fn cmd_bench(config_path: &Path, overrides: &Overrides) -> i32 {
    let config = match load_config(config_path, overrides) {
        Ok(c) => c,
        Err(diags) => {
            report_diagnostics(&diags);
            return 2;
        }
    };
    let kernels: Vec<KernelSpec> = if !config.kernel_list.is_empty() {
        config.kernel_list.clone()
    } else if let Some(kernel) = config.kernel.clone() {
        vec![kernel]
    } else {
        report_diagnostics(&[diag("kernel_list", "required for bench mode")]);
        return 2;
    };
    let cells_dir = config.output_dir.join("cells");
    if let Err(e) = fs::create_dir_all(&cells_dir) {
        eprintln!("cannot create {}: {e}", cells_dir.display());
        return 1;
    }

    let labels: Vec<String> = kernels.iter().map(|k| k.label()).collect();
    let mut cells = Vec::new();
    for (kernel, label) in kernels.iter().zip(&labels) {
        for repeat in 0..config.repeats {
            let seed = config.seed + repeat as u64;
            let run = config.run_config(kernel.clone(), seed);
            let outcome = run_abc_smc(&run, config.model.as_ref(), &config.observed);
            let cell_dir = cells_dir.join(format!("{label}_r{repeat}"));
            if fs::create_dir_all(&cell_dir).is_ok() {
                match &outcome {
                    Ok(result) => {
                        let _ = write_generations_csv(
                            &cell_dir.join("generations.csv"),
                            &result.generations,
                        );
                        let _ = write_posterior_csv(&cell_dir.join("posterior.csv"), result);
                    }
                    Err(failure) => {
                        let _ = write_generations_csv(
                            &cell_dir.join("generations.csv"),
                            &failure.partial,
                        );
                    }
                }
            }
            cells.push(BenchCell {
                kernel_label: label.clone(),
                repeat,
                seed,
                outcome: outcome.map_err(|f| f.to_string()),
            });
        }
    }

    let any_failed = cells.iter().any(|c| c.outcome.is_err());
    let bench_path = config.output_dir.join("bench.csv");
    if let Err(e) = write_bench_csv(&bench_path, &cells, &labels) {
        eprintln!("cannot write {}: {e}", bench_path.display());
        return 1;
    }
    println!(
        "bench complete: {} kernels x {} repeats, aggregate in {}",
        kernels.len(),
        config.repeats,
        bench_path.display()
    );
    if any_failed {
        1
    } else {
        0
    }
}

/// `abc validate <config>`: report diagnostics or the effective settings.
pub fn cmd_validate(config_path: &Path, overrides: &Overrides) -> i32 {
    match load_config(config_path, overrides) {
        Ok(config) => {
            println!(
                "ok: model={} N={} seed={} workers={} repeats={} output_dir={}",
                config.model.id(),
                config.population_size,
                config.seed,
                config.workers,
                config.repeats,
                config.output_dir.display()
            );
            0
        }
        Err(diags) => {
            report_diagnostics(&diags);
            2
        }
    }
}
