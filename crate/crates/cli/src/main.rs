mod config;

use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mlfp::pipeline::{r_squared, run_trial, SamplingStrategy, TrialStats};
use mlfp::problems::{problem_spec, CountingBlackBox, ProblemSpec};
use mlfp::sampling::{adaptive_sample, lhs_sample, Dataset};
use mlfp::sqp::{solve, trace_to_csv};
use mlfp::surrogate::{train_mlp_xy, write_training_log, MlpSurrogate, Surrogate};
use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use config::RunConfig;

/// Surrogate-based feasible path optimization of black-box problems.
#[derive(Parser)]
#[command(name = "mlfp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed (the seed base for `benchmark`).
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the black box and write `dataset.csv`.
    Sample(Common),
    /// Train a surrogate on a dataset and write `model.txt`.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV; defaults to `<out>/dataset.csv`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Optimize over a trained surrogate and write `trace.csv`.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Model file; defaults to `<out>/model.txt`.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Skip the final black-box evaluation of x*.
        #[arg(long)]
        no_validate: bool,
    },
    /// Run `n_trials` end-to-end trials and write `trials.csv`.
    Benchmark {
        #[command(flatten)]
        common: Common,
        /// Concurrent trials.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Evaluate the black box at a point and check feasibility.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated point.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        x: Vec<f64>,
    },
}

/// Outcome of a command that ran to completion.
enum Status {
    Ok,
    NotConverged,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

struct RunContext {
    cfg: RunConfig,
    out: PathBuf,
}

fn load(common: &Common) -> Result<RunContext> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.out.clone());
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok(RunContext { cfg, out })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn spec_of(cfg: &RunConfig) -> Result<ProblemSpec<f64>> {
    Ok(problem_spec::<f64>(&cfg.problem)?)
}

fn run(cmd: Command) -> Result<Status> {
    match cmd {
        Command::Sample(c) => sample(&load(&c)?),
        Command::Train { common, data } => {
            let ctx = load(&common)?;
            let data = data.unwrap_or_else(|| ctx.out.join("dataset.csv"));
            train(&ctx, &data)
        }
        Command::Optimize {
            common,
            model,
            no_validate,
        } => {
            let ctx = load(&common)?;
            let model = model.unwrap_or_else(|| ctx.out.join("model.txt"));
            optimize(&ctx, &model, !no_validate)
        }
        Command::Benchmark { common, jobs } => benchmark(&load(&common)?, jobs),
        Command::Validate { common, x } => validate(&load(&common)?, &x),
    }
}

fn sample(ctx: &RunContext) -> Result<Status> {
    let spec = spec_of(&ctx.cfg)?;
    let tc = ctx.cfg.trial_config()?;
    let counter = std::sync::Arc::new(CountingBlackBox::new(spec.black_box.clone()));
    let mut counted = spec.clone();
    counted.black_box = counter.clone();
    let (data, svm) = match tc.strategy {
        SamplingStrategy::Adaptive => adaptive_sample(&counted, &tc.sampling, &tc.svm)?,
        SamplingStrategy::Lhs => (lhs_sample(&counted, tc.sampling.budget, ctx.cfg.seed)?, None),
    };
    write(&ctx.out.join("dataset.csv"), &data.to_csv())?;
    if let Some(svm) = &svm {
        write(&ctx.out.join("svm.txt"), &svm.to_text())?;
    }
    let valid = data.valid.iter().filter(|v| **v).count();
    let report = format!(
        "problem={}\nrows={}\nvalid={valid}\nfeasible_fraction={:.6}\nevaluations={}\nglobal_fallback={}\n",
        spec.id,
        data.len(),
        data.feasible_fraction(),
        counter.count(),
        data.global_fallback
    );
    write(&ctx.out.join("sampling.txt"), &report)?;
    print!("{report}");
    Ok(Status::Ok)
}

fn train(ctx: &RunContext, data_path: &Path) -> Result<Status> {
    let file = fs::File::open(data_path).with_context(|| format!("opening {}", data_path.display()))?;
    let data = Dataset::<f64>::from_csv(BufReader::new(file)).with_context(|| format!("parsing {}", data_path.display()))?;
    let tc = ctx.cfg.trial_config()?;
    let (x, y) = data.valid_xy();

    let mut idx: Vec<usize> = (0..x.nrows()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(ctx.cfg.seed ^ 0x7e57));
    let n_test = (x.nrows() as f64 * ctx.cfg.test_fraction()).round() as usize;
    let (test, fit) = idx.split_at(n_test);
    let (model, report) = train_mlp_xy(&x.select_rows(fit), &y.select_rows(fit), &tc.train)?;

    write(&ctx.out.join("model.txt"), &model.to_text())?;
    let mut log = Vec::new();
    write_training_log(&model.meta.history, &mut log)?;
    fs::write(ctx.out.join("training_log.csv"), log)?;

    let mut metrics = format!(
        "rows={}\ntrain_rows={}\nval_rows={}\ntest_rows={n_test}\ntrain_mse_scaled={:.6e}\nval_mse_scaled={:.6e}\nepochs={}\nbest_epoch={}\n",
        x.nrows(),
        report.n_train,
        report.n_val,
        report.train_mse,
        report.val_mse,
        report.epochs_run,
        report.best_epoch
    );
    if n_test > 0 {
        let (xt, yt) = (x.select_rows(test), y.select_rows(test));
        let pred = model.forward_batch(&xt)?;
        let mse: Vec<f64> = (0..yt.ncols())
            .map(|j| (pred.column(j) - yt.column(j)).norm_squared() / n_test as f64)
            .collect();
        for (j, (m, r)) in mse.iter().zip(r_squared(&pred, &yt)).enumerate() {
            let _ = writeln!(metrics, "test_mse_y{}={m:.6e}\ntest_r2_y{}={r:.6}", j + 1, j + 1);
        }
    }
    write(&ctx.out.join("metrics.txt"), &metrics)?;
    print!("{metrics}");
    Ok(Status::Ok)
}

fn optimize(ctx: &RunContext, model_path: &Path, validate: bool) -> Result<Status> {
    let spec = spec_of(&ctx.cfg)?;
    let text = fs::read_to_string(model_path).with_context(|| format!("reading {}", model_path.display()))?;
    let model = MlpSurrogate::<f64>::from_text(&text).with_context(|| format!("parsing {}", model_path.display()))?;
    if model.n_inputs() != spec.dim_independent() || model.n_outputs() != spec.n_outputs {
        bail!(
            "model maps {} -> {} but {} needs {} -> {}",
            model.n_inputs(),
            model.n_outputs(),
            spec.id,
            spec.dim_independent(),
            spec.n_outputs
        );
    }
    let mut tc = ctx.cfg.trial_config()?;
    tc.sqp.validate_final = validate;
    let data = fs::File::open(ctx.out.join("dataset.csv"))
        .ok()
        .and_then(|f| Dataset::<f64>::from_csv(BufReader::new(f)).ok());
    let x0 = tc.start.resolve(&spec, data.as_ref());
    if x0.len() != spec.dim_independent() {
        bail!("start point has {} entries, expected {}", x0.len(), spec.dim_independent());
    }

    let counter = std::sync::Arc::new(CountingBlackBox::new(spec.black_box.clone()));
    let mut counted = spec.clone();
    counted.black_box = counter.clone();
    let result = solve(&counted, &model, &x0, &tc.sqp)?;

    write(&ctx.out.join("trace.csv"), &trace_to_csv(&result.trace))?;
    let mut summary = format!(
        "problem={}\nstatus={}\niterations={}\nx={}\nf_pred={:.10e}\n",
        spec.id,
        result.status.as_str(),
        result.iterations,
        join(result.x.as_slice()),
        result.f_pred
    );
    if let Some(f) = result.f_true {
        let _ = writeln!(summary, "f_true={f:.10e}");
    }
    if let Some(y) = &result.y_true {
        let _ = writeln!(summary, "feasible={}", spec.is_feasible(&result.x, y, 1e-9));
    }
    if let Some(k) = result.kkt_residual {
        let _ = writeln!(summary, "kkt_residual={k:.3e}");
    }
    if let Some(o) = &spec.known_optimum {
        let _ = writeln!(summary, "distance={:.6e}", o.distance(&result.x));
    }
    let _ = writeln!(summary, "validation_evaluations={}", counter.count());
    write(&ctx.out.join("result.txt"), &summary)?;
    print!("{summary}");
    Ok(if result.status.is_converged() { Status::Ok } else { Status::NotConverged })
}

fn benchmark(ctx: &RunContext, jobs: usize) -> Result<Status> {
    use rayon::prelude::*;
    let spec = spec_of(&ctx.cfg)?;
    let tc = ctx.cfg.trial_config()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    let seeds: Vec<u64> = (0..ctx.cfg.n_trials as u64).map(|i| ctx.cfg.seed + i).collect();
    let outcomes: Vec<_> = pool.install(|| seeds.par_iter().map(|&s| run_trial(&spec, &tc, s)).collect());
    let mut stats = TrialStats::from_outcomes(&outcomes);
    for (row, seed) in stats.rows.iter_mut().zip(&seeds) {
        row.seed = *seed;
    }
    write(&ctx.out.join("trials.csv"), &stats.to_csv())?;
    let mut summary = format!("problem={}\ntrials={}\n", spec.id, stats.rows.len());
    summary.push_str(&stats.summary_text());
    let r2: Vec<String> = outcomes
        .iter()
        .filter_map(|o| o.as_ref().ok()?.test_r2.as_ref().map(|r| format!("{:.4}", r[0])))
        .collect();
    if !r2.is_empty() {
        let _ = writeln!(summary, "test_r2_y1 {}", r2.join(" "));
    }
    write(&ctx.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    let all_converged = stats.rows.iter().all(|r| r.error.is_none() && r.status.starts_with("converged"));
    Ok(if all_converged { Status::Ok } else { Status::NotConverged })
}

fn validate(ctx: &RunContext, x: &[f64]) -> Result<Status> {
    let spec = spec_of(&ctx.cfg)?;
    if x.len() != spec.dim_independent() {
        bail!("point has {} entries, {} needs {}", x.len(), spec.id, spec.dim_independent());
    }
    let xv = DVector::from_column_slice(x);
    let y = spec.evaluate(x)?;
    let mut report = format!(
        "problem={}\nx={}\ny={}\nin_bounds={}\nfeasible={}\n",
        spec.id,
        join(x),
        join(y.as_slice()),
        spec.contains(&xv),
        spec.is_feasible(&xv, &y, 1e-9)
    );
    if let Some(o) = &spec.known_optimum {
        let _ = writeln!(report, "distance={:.6e}", o.distance(&xv));
    }
    print!("{report}");
    Ok(Status::Ok)
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.10e}")).collect::<Vec<_>>().join(",")
}
