//! `seqsel` command-line front end.

mod io;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use io::{sink, DataArgs};
use manifest::{beside, Recorder};
use seqsel::paths::{forward_stepwise, lasso_path, LassoMode};
use seqsel::pvalues::{Method, PValueSeries};
use seqsel::samplers::{SamplerConfig, SamplerMethod};
use seqsel::sim::{bivariate_experiment, changepoint_null_experiment, counterexample_experiment, sparse_experiment, SimConfig};
use seqsel::stopping::{AccumulationFn, StoppingRule};
use seqsel::{Dataset, Execution, ModelPath};

#[derive(Parser)]
#[command(name = "seqsel", version, about = "Selective sequential model selection")]
struct Cli {
    /// Worker threads (default: available parallelism). 1 runs sequentially.
    #[arg(long, global = true, env = "SEQSEL_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a forward stepwise or lasso path.
    Path(PathArgs),
    /// Selective p-values for every step of a path.
    Pvalues(PvalueArgs),
    /// Apply a stopping rule to a column of p-values.
    Stop(StopArgs),
    /// Run a canned simulation experiment.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum AlgorithmArg {
    Fs,
    Lasso,
}

#[derive(Args, Serialize)]
struct PathArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "fs")]
    algorithm: AlgorithmArg,
    /// Number of steps (default: as many as the design allows).
    #[arg(long)]
    steps: Option<usize>,
    /// Known noise variance.
    #[arg(long)]
    sigma2: Option<f64>,
    /// Use a geometric grid of this many penalties instead of exact lasso knots.
    #[arg(long)]
    grid: Option<usize>,
    /// Output CSV (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SamplerArg {
    Auto,
    AcceptReject,
    HitAndRun,
}

#[derive(Args, Serialize)]
struct SamplerArgs {
    /// Null draws per p-value.
    #[arg(long, default_value_t = 999)]
    samples: usize,
    /// Random seed.
    #[arg(long, env = "SEQSEL_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "auto")]
    sampler: SamplerArg,
    /// Maximum accept/reject proposals.
    #[arg(long, default_value_t = 75_000)]
    budget: usize,
    /// Fewest accepted draws before switching to hit-and-run.
    #[arg(long, default_value_t = 300)]
    min_accepted: usize,
    #[arg(long, default_value_t = 2_000)]
    burn_in: usize,
    #[arg(long, default_value_t = 5)]
    thin: usize,
}

impl SamplerArgs {
    fn config(&self) -> SamplerConfig {
        SamplerConfig {
            budget: self.budget,
            min_accepted: self.min_accepted,
            burn_in: self.burn_in,
            thin: self.thin,
            chain_length: self.samples,
            seed: self.seed,
            method: match self.sampler {
                SamplerArg::Auto => SamplerMethod::Auto,
                SamplerArg::AcceptReject => SamplerMethod::AcceptReject,
                SamplerArg::HitAndRun => SamplerMethod::HitAndRun,
            },
        }
    }
}

#[derive(Args, Serialize)]
struct PvalueArgs {
    #[command(flatten)]
    data: DataArgs,
    /// max-t, max-z, max-z-identify, next-entry, saturated or nominal.
    #[arg(long)]
    method: String,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    grid: Option<usize>,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum RuleArg {
    Basic,
    Forward,
    Accumulation,
}

#[derive(Args, Serialize)]
struct StopArgs {
    /// CSV with a header row and one p-value per step.
    input: PathBuf,
    #[arg(long, value_enum, default_value = "forward")]
    rule: RuleArg,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Column holding the p-values.
    #[arg(long, default_value = "p")]
    column: String,
    /// Accumulation rule with `h(t) = C log(1 / (C (1 - t)))` above `1 - 1/C`
    /// instead of ForwardStop's `-log(1 - t)`.
    #[arg(long)]
    hinge: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
enum ExperimentName {
    Bivariate,
    Counterexample,
    Sparse,
    ChangepointNull,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Scale {
    Desk,
    Full,
}

#[derive(Args, Serialize)]
struct ExperimentArgs {
    #[arg(value_enum)]
    name: ExperimentName,
    /// Replications (default: 100000 for bivariate and counterexample, 500 otherwise).
    #[arg(long)]
    reps: Option<usize>,
    /// Level(s); repeat for several. Default 0.05, plus 0.2 for sparse.
    #[arg(long)]
    alpha: Vec<f64>,
    /// Mean of the second coordinate in the counterexample.
    #[arg(long, default_value_t = 10.0)]
    signal: f64,
    /// Series length for changepoint-null.
    #[arg(long, default_value_t = 60)]
    length: usize,
    /// Sparse design size.
    #[arg(long, value_enum, default_value = "desk")]
    scale: Scale,
    #[command(flatten)]
    sampler: SamplerArgs,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) if broken_pipe(&err) => ExitCode::SUCCESS,
        Err(err) => {
            let numerical = err.downcast_ref::<seqsel::Error>().is_some_and(|e| !e.is_input_error());
            let kind = if numerical { "numerical" } else { "input" };
            eprintln!("error[{kind}]: {}", format!("{err:#}").replace('\n', " "));
            ExitCode::from(if numerical { 3 } else { 2 })
        }
    }
}

fn broken_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<std::io::Error>().is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
            || e.downcast_ref::<csv::Error>().is_some_and(|e| matches!(e.kind(), csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::BrokenPipe))
    })
}

fn run(cli: Cli) -> Result<()> {
    let workers = cli.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        bail!("--workers must be positive");
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new().num_threads(workers).build_global().context("cannot start worker pool")?;
    let exec = if workers > 1 { Execution::Parallel } else { Execution::Sequential };
    match cli.command {
        Command::Path(a) => cmd_path(&a, workers),
        Command::Pvalues(a) => cmd_pvalues(&a, workers, exec),
        Command::Stop(a) => cmd_stop(&a, workers),
        Command::Experiment(a) => cmd_experiment(&a, workers, exec),
    }
}

fn grid_mode(data: &Dataset, grid: Option<usize>) -> Result<LassoMode> {
    let Some(size) = grid else { return Ok(LassoMode::Exact) };
    if size < 2 {
        bail!("--grid needs at least two penalties");
    }
    let problem = seqsel::paths::LassoProblem::new(data)?;
    let top = problem.correlations(data.y()).amax();
    if !(top > 0.0) {
        bail!("response is orthogonal to every predictor");
    }
    Ok(LassoMode::Grid((0..size).map(|i| top * 0.999 * 1e-3f64.powf(i as f64 / (size - 1) as f64)).collect()))
}

/// Longest path the library allows for this dataset.
fn default_steps(data: &Dataset, lasso: bool) -> usize {
    let free = data.n().saturating_sub(data.base_active().len());
    let reserve = if lasso || data.sigma2().is_some() { 0 } else { 2 };
    data.candidates().len().min(free.saturating_sub(reserve)).max(1)
}

fn build_path(data: &Dataset, lasso: bool, steps: Option<usize>, grid: Option<usize>) -> Result<ModelPath> {
    let steps = steps.unwrap_or_else(|| default_steps(data, lasso));
    Ok(if lasso { lasso_path(data, grid_mode(data, grid)?, steps)? } else { forward_stepwise(data, steps)? })
}

fn write_manifest(rec: &Recorder, config: &impl Serialize, seed: Option<u64>, outputs: Vec<PathBuf>, at: &Path) -> Result<()> {
    rec.finish(config, seed, outputs)?.write(at)
}

#[derive(Serialize)]
struct PathRow<'a> {
    step: usize,
    variable: &'a str,
    statistic: f64,
}

fn cmd_path(a: &PathArgs, workers: usize) -> Result<()> {
    let rec = Recorder::start("path", workers);
    let data = a.data.load(a.sigma2)?;
    let lasso = matches!(a.algorithm, AlgorithmArg::Lasso);
    let path = build_path(&data, lasso, a.steps, a.grid)?;
    let mut w = csv::Writer::from_writer(sink(a.out.as_deref())?);
    for s in &path.steps {
        w.serialize(PathRow { step: s.k, variable: &data.column_names()[s.entered], statistic: s.statistic })?;
    }
    w.flush()?;
    if let Some(out) = &a.out {
        write_manifest(&rec, a, None, vec![out.clone()], &beside(out))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PvalueRow<'a> {
    step: usize,
    variable: &'a str,
    p: f64,
    stderr: f64,
    statistic: f64,
}

fn cmd_pvalues(a: &PvalueArgs, workers: usize, exec: Execution) -> Result<()> {
    let rec = Recorder::start("pvalues", workers);
    let method: Method = a.method.parse()?;
    if method.needs_sigma2() && a.sigma2.is_none() {
        bail!("method {method} needs a known noise variance (--sigma2)");
    }
    // max-t and nominal never use a noise variance
    let keep_sigma2 = method.needs_sigma2() || method == Method::NextEntry;
    let data = a.data.load(if keep_sigma2 { a.sigma2 } else { None })?;
    let path = build_path(&data, method == Method::NextEntry, a.steps, a.grid)?;
    let series = PValueSeries::compute(&data, &path, method, &a.sampler.config(), exec)?;
    let mut w = csv::Writer::from_writer(sink(a.out.as_deref())?);
    for s in &series.steps {
        w.serialize(PvalueRow { step: s.step, variable: &s.variable, p: s.p, stderr: s.stderr, statistic: s.statistic })?;
    }
    w.flush()?;
    if let Some(out) = &a.out {
        write_manifest(&rec, a, Some(a.sampler.seed), vec![out.clone()], &beside(out))?;
    }
    Ok(())
}

fn cmd_stop(a: &StopArgs, workers: usize) -> Result<()> {
    let rec = Recorder::start("stop", workers);
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(&a.input).with_context(|| format!("cannot open {}", a.input.display()))?;
    let headers: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let col = headers.iter().position(|h| *h == a.column).with_context(|| format!("no column named '{}' in {}", a.column, a.input.display()))?;
    let var_col = headers.iter().position(|h| h == "variable");
    let mut pvalues = Vec::new();
    let mut variables = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("malformed row {}", i + 2))?;
        let field = rec.get(col).unwrap_or("");
        let p: f64 = field.parse().with_context(|| format!("row {}: '{field}' is not a p-value", i + 2))?;
        pvalues.push(p);
        variables.push(var_col.and_then(|c| rec.get(c)).unwrap_or("").to_string());
    }
    let rule = match a.rule {
        RuleArg::Basic => StoppingRule::Basic,
        RuleArg::Forward => StoppingRule::Forward,
        RuleArg::Accumulation => StoppingRule::Accumulation(match a.hinge {
            Some(c) => AccumulationFn::hinge_exp(c)?,
            None => AccumulationFn::forward_stop(),
        }),
    };
    let k_hat = rule.select(&pvalues, a.alpha)?;
    println!("k_hat={k_hat}");
    let mut w = csv::Writer::from_writer(sink(a.out.as_deref())?);
    w.write_record(["step", "variable", "p", "selected", "last"])?;
    for (i, (p, v)) in pvalues.iter().zip(&variables).enumerate() {
        let k = i + 1;
        w.write_record([k.to_string(), v.clone(), p.to_string(), (k <= k_hat).to_string(), if k == k_hat { "*".into() } else { String::new() }])?;
    }
    w.flush()?;
    if let Some(out) = &a.out {
        write_manifest(&rec, a, None, vec![out.clone()], &beside(out))?;
    }
    Ok(())
}

fn cmd_experiment(a: &ExperimentArgs, workers: usize, exec: Execution) -> Result<()> {
    let rec = Recorder::start("experiment", workers);
    std::fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    let cfg = a.sampler.config();
    let file = |name: &str| a.out.join(name);
    let mut outputs = Vec::new();
    let mut save = |name: &str, write: &dyn Fn(&mut dyn std::io::Write) -> Result<()>| -> Result<()> {
        let path = file(name);
        let mut f = std::fs::File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        write(&mut f)?;
        outputs.push(path);
        Ok(())
    };
    let alphas = if a.alpha.is_empty() {
        if a.name == ExperimentName::Sparse { vec![0.05, 0.2] } else { vec![0.05] }
    } else {
        a.alpha.clone()
    };
    match a.name {
        ExperimentName::Bivariate => {
            let r = bivariate_experiment(a.reps.unwrap_or(100_000), &cfg, exec)?;
            save("bivariate_saturated.csv", &|w| Ok(r.saturated.contingency.write_csv(w)?))?;
            save("bivariate_selected.csv", &|w| Ok(r.selected.contingency.write_csv(w)?))?;
            save("bivariate.json", &|w| Ok(writeln!(w, "{}", serde_json::to_string_pretty(&r)?)?))?;
            println!(
                "saturated: corr {:.4}, corner (0.8,1]x(0,0.2] {:.2}%; selected: corr {:.4}, KS p ({:.3}, {:.3})",
                r.saturated.correlation,
                r.saturated.contingency.percent(4, 0),
                r.selected.correlation,
                r.selected.ks_first.pvalue,
                r.selected.ks_second.pvalue
            );
        }
        ExperimentName::Counterexample => {
            let r = counterexample_experiment(alphas[0], a.signal, a.reps.unwrap_or(100_000), &cfg, exec)?;
            save("counterexample.csv", &|w| {
                let mut c = csv::Writer::from_writer(w);
                c.write_record(["arm", "alpha", "signal", "reps", "fwer", "fwer_se", "fdr", "fdr_se", "limit"])?;
                for (name, arm) in [("adversarial", &r.adversarial), ("stepwise", &r.stepwise)] {
                    c.write_record([
                        name.to_string(),
                        r.alpha.to_string(),
                        r.signal.to_string(),
                        r.reps.to_string(),
                        arm.fwer.value.to_string(),
                        arm.fwer.se.to_string(),
                        arm.fdr.value.to_string(),
                        arm.fdr.se.to_string(),
                        r.limit.to_string(),
                    ])?;
                }
                c.flush()?;
                Ok(())
            })?;
            save("counterexample.json", &|w| Ok(writeln!(w, "{}", serde_json::to_string_pretty(&r)?)?))?;
            println!(
                "adversarial FWER {:.4} +- {:.4} (limit {:.4}); stepwise FWER {:.4} +- {:.4}",
                r.adversarial.fwer.value, r.adversarial.fwer.se, r.limit, r.stepwise.fwer.value, r.stepwise.fwer.se
            );
        }
        ExperimentName::Sparse => {
            let base = match a.scale {
                Scale::Desk => SimConfig::desk(),
                Scale::Full => SimConfig::full(),
            };
            let sim = SimConfig { reps: a.reps.unwrap_or(500), alpha: alphas[0], seed: a.sampler.seed, sampler: cfg, ..base };
            let r = sparse_experiment(&sim, exec)?;
            let table = r.metrics(&alphas)?;
            save("sparse_metrics.csv", &|w| Ok(table.write_csv(w)?))?;
            save("sparse_metrics.json", &|w| Ok(writeln!(w, "{}", table.to_json()?)?))?;
            save("sparse_pvalues.csv", &|w| Ok(r.write_pvalues_csv(w)?))?;
            let nulls: Vec<_> = sim.methods.iter().map(|&m| r.null_summary(m)).collect();
            save("sparse_nulls.json", &|w| Ok(writeln!(w, "{}", serde_json::to_string_pretty(&nulls)?)?))?;
            for row in &table.rows {
                let m = &row.metrics;
                println!(
                    "{:<15} {:<8} alpha {:<5} P(k>=k0) {:.3}  FWER {:.3}  cFWER {:.3}  FDR {:.3}  FDRfull {:.3}  E[Sfull] {:.2}",
                    row.method.name(),
                    row.rule,
                    row.alpha,
                    m.prob_correct.value,
                    m.fwer.value,
                    m.cfwer.value,
                    m.fdr.value,
                    m.fdr_full.value,
                    m.mean_s_full.value
                );
            }
        }
        ExperimentName::ChangepointNull => {
            let r = changepoint_null_experiment(a.reps.unwrap_or(500), a.length, &cfg, exec)?;
            save("changepoint_pvalues.csv", &|w| {
                let mut c = csv::Writer::from_writer(w);
                c.write_record(["rep", "p1", "p2"])?;
                for (i, (p1, p2)) in r.pairs.iter().enumerate() {
                    c.write_record([i.to_string(), p1.to_string(), p2.to_string()])?;
                }
                c.flush()?;
                Ok(())
            })?;
            save("changepoint.json", &|w| Ok(writeln!(w, "{}", serde_json::to_string_pretty(&r)?)?))?;
            println!("KS p ({:.3}, {:.3}), correlation {:.4}", r.ks_first.pvalue, r.ks_second.pvalue, r.correlation);
        }
    }
    let name = format!("{}.manifest.json", serde_json::to_value(a.name)?.as_str().unwrap_or("experiment"));
    write_manifest(&rec, a, Some(a.sampler.seed), outputs, &file(&name))
}
