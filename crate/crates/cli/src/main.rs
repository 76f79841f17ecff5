//! `deepiv`: fit deep-IV estimators on CSV data, run split-sample and
//! instrument-validity tests, evaluate the rate calculator, and drive Monte
//! Carlo campaigns.
//!
//! Exit status: 0 success, 2 input or configuration error, 3 numerical or
//! statistical failure.

mod data;
mod manifest;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use deepiv::first_stage::{default_truncation, FirstStageMethod, Interaction};
use deepiv::inference::{estimate, estimate_with_exogenous};
use deepiv::mlp::TrainConfig;
use deepiv::simlab::{gen_dgp, report, run_monte_carlo, DgpKind, DgpSpec, ExtraInstrument, McConfig};
use deepiv::spec_test::hausman_test;
use deepiv::split_sample::fit_split_with;
use deepiv::RngStream;
use deepiv::theory_calc::{composed_smoothness, intrinsic_summary, rate, CompositionalSpec, Smoothness};

use manifest::{FileRecord, RunManifest};

#[derive(Parser, Debug)]
#[command(name = "deepiv", version, about = "Deep instrumental-variables estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate β with a fitted first stage and report a confidence interval.
    Fit(FitArgs),
    /// Cross-fitted estimator with truncated first-stage predictions.
    Split(SplitArgs),
    /// Test the extra instruments against a baseline subset.
    Spectest(SpecTestArgs),
    /// Intrinsic smoothness, rate exponent and network sizes of a compositional function.
    Theory(TheoryArgs),
    /// Run a Monte Carlo campaign from a JSON configuration.
    Simulate(SimulateArgs),
    /// Draw a sample from a simulation design and write it as dataset CSV.
    Generate(GenerateArgs),
    /// Re-run the command recorded in a manifest and verify its artifacts.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Family {
    Dnn,
    #[value(alias = "pspline")]
    TensorSpline,
    #[value(alias = "aspline")]
    AdditiveSpline,
    #[value(alias = "lr")]
    Linear,
}

#[derive(Args, Debug)]
struct FirstStageArgs {
    #[arg(long = "first-stage", value_enum, default_value_t = Family::Dnn)]
    family: Family,
    /// Hidden layers.
    #[arg(long, default_value_t = 3)]
    depth: usize,
    /// Units per hidden layer.
    #[arg(long, default_value_t = 10)]
    width: usize,
    /// Interior knots per instrument (default 5 tensor, 20 additive).
    #[arg(long)]
    knots: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

impl FirstStageArgs {
    fn method(&self) -> anyhow::Result<FirstStageMethod> {
        let spline = |interaction, default_knots| FirstStageMethod::Spline {
            interaction,
            knots: self.knots.unwrap_or(default_knots),
            domain: None,
            cv: Default::default(),
        };
        Ok(match self.family {
            Family::Dnn => {
                let mut train = TrainConfig::default();
                if let Some(v) = self.max_epochs {
                    train.max_epochs = v;
                }
                if let Some(v) = self.learning_rate {
                    train.learning_rate = v;
                }
                if let Some(v) = self.batch_size {
                    train.batch_size = v;
                }
                train.validate()?;
                if self.depth == 0 || self.width == 0 {
                    bail!("--depth and --width must be positive");
                }
                FirstStageMethod::Dnn { depth: self.depth, width: self.width, train }
            }
            Family::TensorSpline => spline(Interaction::Tensor, 5),
            Family::AdditiveSpline => spline(Interaction::Additive, 20),
            Family::Linear => FirstStageMethod::Linear,
        })
    }
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Write the JSON result here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Manifest path (default `<out>.manifest.json` when `--out` is given).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

impl OutputArgs {
    fn manifest_path(&self) -> Option<PathBuf> {
        self.manifest.clone().or_else(|| self.out.as_deref().map(manifest::sidecar))
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Dataset CSV with columns y, x1.., z1.. and optional r1...
    data: PathBuf,
    #[command(flatten)]
    first_stage: FirstStageArgs,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct SplitArgs {
    data: PathBuf,
    #[command(flatten)]
    first_stage: FirstStageArgs,
    /// Truncation constant: `C_n = c · ln n`.
    #[arg(long, default_value_t = 3.0)]
    c: f64,
    /// Truncation level `C_n`, overriding `--c`.
    #[arg(long, conflicts_with = "c")]
    cn: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct SpecTestArgs {
    data: PathBuf,
    /// Number of leading instruments assumed valid.
    #[arg(long)]
    baseline: usize,
    #[command(flatten)]
    first_stage: FirstStageArgs,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct TheoryArgs {
    /// JSON file with `dims`, `active_vars` and `smoothness`.
    #[arg(long, conflicts_with_all = ["dims", "active", "smoothness"])]
    spec: Option<PathBuf>,
    /// Layer dimensions `d_0,..,d_{L*+1}`.
    #[arg(long, value_delimiter = ',')]
    dims: Vec<usize>,
    /// Active variables per layer.
    #[arg(long, value_delimiter = ',')]
    active: Vec<usize>,
    /// Smoothness per layer; `inf` allowed.
    #[arg(long, value_delimiter = ',')]
    smoothness: Vec<String>,
    /// Number of endogenous regressors.
    #[arg(long, default_value_t = 1)]
    q: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Campaign configuration (JSON).
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also render each figure as SVG.
    #[arg(long)]
    svg: bool,
    /// Worker threads (overrides the configuration and DEEPIV_THREADS).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Design {
    Dgp1,
    Dgp2,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Extra {
    Valid,
    Endogenous,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    dgp: Design,
    #[arg(long)]
    n: usize,
    /// Append a fifth instrument.
    #[arg(long, value_enum)]
    extra: Option<Extra>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    manifest: PathBuf,
}

/// What a command did, for its manifest.
struct Outcome {
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    manifest: Option<PathBuf>,
}

#[derive(Debug)]
struct ReplayMismatch(String);

impl std::fmt::Display for ReplayMismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ReplayMismatch {}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|e| {
        e.downcast_ref::<deepiv::Error>().is_some_and(deepiv::Error::is_numerical)
            || e.downcast_ref::<ReplayMismatch>().is_some()
    });
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli, argv[1..].to_vec()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn execute(cli: Cli, argv: Vec<String>) -> anyhow::Result<()> {
    let started_at = manifest::timestamp();
    let (name, outcome) = match cli.command {
        Command::Fit(a) => ("fit", cmd_fit(a)?),
        Command::Split(a) => ("split", cmd_split(a)?),
        Command::Spectest(a) => ("spectest", cmd_spectest(a)?),
        Command::Theory(a) => ("theory", cmd_theory(a)?),
        Command::Simulate(a) => ("simulate", cmd_simulate(a)?),
        Command::Generate(a) => ("generate", cmd_generate(a)?),
        Command::Replay(a) => return cmd_replay(a),
    };
    let Some(path) = outcome.manifest else { return Ok(()) };
    let records = |paths: &[PathBuf]| paths.iter().map(|p| FileRecord::of(p)).collect::<anyhow::Result<Vec<_>>>();
    let m = RunManifest {
        command: name.to_string(),
        argv,
        cwd: std::env::current_dir()?,
        config: outcome.config,
        seed: outcome.seed,
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        started_at,
        finished_at: manifest::timestamp(),
        inputs: records(&outcome.inputs)?,
        outputs: records(&outcome.outputs)?,
    };
    m.save(&path)
}

/// Pretty JSON to `out` or standard output; returns the written path.
fn emit(value: &serde_json::Value, out: Option<&Path>) -> anyhow::Result<Vec<PathBuf>> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
            Ok(vec![path.to_path_buf()])
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(Vec::new())
        }
    }
}

fn check_alpha(alpha: f64) -> anyhow::Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        bail!("--alpha must lie in (0, 1), got {alpha}");
    }
    Ok(())
}

fn cmd_fit(a: FitArgs) -> anyhow::Result<Outcome> {
    check_alpha(a.alpha)?;
    let method = a.first_stage.method()?;
    let data = data::read_dataset(&a.data)?;
    let exogenous = data.r.is_some();
    let (est, _) = if exogenous {
        estimate_with_exogenous(&data, &method, a.seed)?
    } else {
        estimate(&data, &method, a.seed)?
    };
    let est = est.with_ci(a.alpha)?;
    let config = json!({
        "data": a.data,
        "first_stage": method,
        "alpha": a.alpha,
        "seed": a.seed,
    });
    let result = json!({
        "coefficients": data::coefficient_names(&data, exogenous),
        "first_stage": method,
        "seed": a.seed,
        "estimate": est,
    });
    let outputs = emit(&result, a.output.out.as_deref())?;
    Ok(Outcome { config, seed: Some(a.seed), inputs: vec![a.data], outputs, manifest: a.output.manifest_path() })
}

fn cmd_split(a: SplitArgs) -> anyhow::Result<Outcome> {
    check_alpha(a.alpha)?;
    let method = a.first_stage.method()?;
    let data = data::read_dataset(&a.data)?;
    if data.r.is_some() {
        eprintln!("note: exogenous columns are ignored by the split-sample estimator");
    }
    let c_n = a.cn.unwrap_or_else(|| default_truncation(data.n(), a.c));
    let (mut est, _, _) = fit_split_with(&data, a.seed, c_n, |d, s| method.fit(d, s))?;
    est.combined = est.combined.with_ci(a.alpha)?;
    let config = json!({
        "data": a.data,
        "first_stage": method,
        "c": a.cn.is_none().then_some(a.c),
        "c_n": c_n,
        "alpha": a.alpha,
        "seed": a.seed,
    });
    let result = json!({
        "coefficients": data::coefficient_names(&data, false),
        "first_stage": method,
        "estimate": est,
    });
    let outputs = emit(&result, a.output.out.as_deref())?;
    Ok(Outcome { config, seed: Some(a.seed), inputs: vec![a.data], outputs, manifest: a.output.manifest_path() })
}

fn cmd_spectest(a: SpecTestArgs) -> anyhow::Result<Outcome> {
    check_alpha(a.alpha)?;
    let method = a.first_stage.method()?;
    let data = data::read_dataset(&a.data)?;
    let result = hausman_test(&data, a.baseline, &method, a.alpha, a.seed)?;
    let config = json!({
        "data": a.data,
        "first_stage": method,
        "baseline": a.baseline,
        "alpha": a.alpha,
        "seed": a.seed,
    });
    let outputs = emit(&serde_json::to_value(&result)?, a.output.out.as_deref())?;
    Ok(Outcome { config, seed: Some(a.seed), inputs: vec![a.data], outputs, manifest: a.output.manifest_path() })
}

fn parse_smoothness(s: &str) -> anyhow::Result<Smoothness> {
    let t = s.trim();
    if matches!(t.to_ascii_lowercase().as_str(), "inf" | "infinity" | "+inf" | "∞") {
        return Ok(Smoothness::Infinite);
    }
    let v: f64 = t.parse().with_context(|| format!("invalid smoothness {s:?}"))?;
    Ok(Smoothness::finite(v)?)
}

fn cmd_theory(a: TheoryArgs) -> anyhow::Result<Outcome> {
    let (spec, inputs) = match &a.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            #[derive(serde::Deserialize)]
            struct Layers {
                dims: Vec<usize>,
                active_vars: Vec<usize>,
                smoothness: Vec<Smoothness>,
            }
            let l: Layers = serde_json::from_str(&text).with_context(|| format!("invalid spec {}", path.display()))?;
            (CompositionalSpec::new(l.dims, l.active_vars, l.smoothness)?, vec![path.clone()])
        }
        None => {
            if a.dims.is_empty() || a.active.is_empty() || a.smoothness.is_empty() {
                bail!("give --spec, or all of --dims, --active and --smoothness");
            }
            let smoothness = a.smoothness.iter().map(|s| parse_smoothness(s)).collect::<anyhow::Result<_>>()?;
            (CompositionalSpec::new(a.dims.clone(), a.active.clone(), smoothness)?, Vec::new())
        }
    };
    let summary = intrinsic_summary(&spec, a.q)?;
    let rate = rate(summary.p_star, summary.t_star)?;
    let result = json!({
        "spec": spec,
        "q": a.q,
        "summary": summary,
        "rate": rate,
        "composed_smoothness": composed_smoothness(&spec)?,
    });
    let config = json!({ "spec": spec, "q": a.q });
    let outputs = emit(&result, a.output.out.as_deref())?;
    Ok(Outcome { config, seed: None, inputs, outputs, manifest: a.output.manifest_path() })
}

fn cmd_simulate(a: SimulateArgs) -> anyhow::Result<Outcome> {
    let text = std::fs::read_to_string(&a.config).with_context(|| format!("cannot read {}", a.config.display()))?;
    let mut cfg: McConfig =
        serde_json::from_str(&text).with_context(|| format!("invalid configuration {}", a.config.display()))?;
    if a.threads.is_some() {
        cfg.threads = a.threads;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("cannot create {}", a.out_dir.display()))?;
    let result = run_monte_carlo(&cfg)?;
    let mut outputs = Vec::new();
    let mut put = |name: String, body: String| -> anyhow::Result<()> {
        let path = a.out_dir.join(name);
        std::fs::write(&path, body).with_context(|| format!("cannot write {}", path.display()))?;
        outputs.push(path);
        Ok(())
    };
    put("results.csv".into(), report::results_csv(&result)?)?;
    for fig in report::figures(&result) {
        let csv = fig.to_csv()?;
        if a.svg {
            put(format!("fig{}.svg", fig.number), report::render_svg(&csv, &fig.title)?)?;
        }
        put(fig.file_name(), csv)?;
    }
    let failures: usize = result.cells.iter().map(|c| c.failures).sum();
    eprintln!(
        "{} cells written to {}{}",
        result.cells.len(),
        a.out_dir.display(),
        if failures > 0 { format!(" ({failures} failed fits recorded)") } else { String::new() }
    );
    // the worker count never changes results, so it stays out of the snapshot
    let mut snapshot = cfg.clone();
    snapshot.threads = None;
    Ok(Outcome {
        config: serde_json::to_value(&snapshot)?,
        seed: Some(cfg.master_seed),
        inputs: vec![a.config],
        outputs,
        manifest: Some(a.out_dir.join("manifest.json")),
    })
}

fn cmd_generate(a: GenerateArgs) -> anyhow::Result<Outcome> {
    let kind = match a.dgp {
        Design::Dgp1 => DgpKind::Dgp1,
        Design::Dgp2 => DgpKind::Dgp2,
    };
    let mut spec = DgpSpec::new(kind, a.n);
    spec.extra_instrument = a.extra.map(|e| match e {
        Extra::Valid => ExtraInstrument::Valid,
        Extra::Endogenous => ExtraInstrument::Endogenous,
    });
    let (sample, _) = gen_dgp(&spec, &mut RngStream::new(a.seed, 0))?;
    data::write_dataset(&a.out, &sample)?;
    Ok(Outcome {
        config: serde_json::to_value(&spec)?,
        seed: Some(a.seed),
        inputs: Vec::new(),
        outputs: vec![a.out.clone()],
        manifest: Some(manifest::sidecar(&a.out)),
    })
}

fn cmd_replay(a: ReplayArgs) -> anyhow::Result<()> {
    let recorded = RunManifest::load(&a.manifest)?;
    if recorded.command == "replay" {
        bail!("a replay manifest cannot be replayed");
    }
    std::env::set_current_dir(&recorded.cwd)
        .with_context(|| format!("cannot enter recorded directory {}", recorded.cwd.display()))?;
    for input in &recorded.inputs {
        let now = FileRecord::of(&input.path)?;
        if now.sha256 != input.sha256 {
            bail!("input {} changed since the recorded run", input.path.display());
        }
    }
    let mut argv = vec!["deepiv".to_string()];
    argv.extend(recorded.argv.iter().cloned());
    let cli = Cli::try_parse_from(&argv).context("recorded arguments no longer parse")?;
    execute(cli, recorded.argv.clone())?;
    let mut differing = Vec::new();
    for out in &recorded.outputs {
        if FileRecord::of(&out.path)?.sha256 != out.sha256 {
            differing.push(out.path.display().to_string());
        }
    }
    if !differing.is_empty() {
        return Err(ReplayMismatch(format!("replayed artifacts differ: {}", differing.join(", "))).into());
    }
    eprintln!("replay reproduced {} artifact(s) byte-identically", recorded.outputs.len());
    Ok(())
}
