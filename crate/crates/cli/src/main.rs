//! `plrecon`: generate a target network, probe it, fit a patch model, evaluate it,
//! and tabulate sparsity against the architecture.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use ndarray::ArrayView1;
use plrecon::analysis::{conjecture_report, dp_distance, ConjectureReport, DistanceEstimate};
use plrecon::fit::{
    fit_second_order, overlapping_pairs, select_radii, Feature, FitConfig, FitReport, QuadraticProblem, RadiusMode,
    Regularization, SampleSet, StepSize,
};
use plrecon::oracle::{FnBox, Oracle, ProbeParams};
use plrecon::relunet::Architecture;
use plrecon::{Model, Network, Patch, Probes};
use serde::{Deserialize, Serialize};

use config::{require, LearningRate, PairPolicy, RadiiMode, RegKind, RunConfig};

#[derive(Parser)]
#[command(name = "plrecon", version, about = "Piecewise-linear reconstruction of ReLU networks from black-box queries")]
struct Cli {
    /// JSON file supplying defaults for any flag.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random target network.
    Gen(GenArgs),
    /// Sample probe points with gradients from a network.
    Probe(ProbeArgs),
    /// Fit patch weights to a network.
    Fit(FitArgs),
    /// Estimate the d_p distance between a model and its target.
    Eval(EvalArgs),
    /// Refit over an L1 penalty grid and tabulate nonzero weights.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Layer widths, e.g. `2,3,1`; the last must be 1.
    #[arg(long)]
    arch: Option<Architecture>,
    #[arg(long)]
    seed: Option<u64>,
    /// Half-width of the uniform weight distribution.
    #[arg(long)]
    scale: Option<f64>,
    /// Apply ReLU to the output layer too.
    #[arg(long)]
    final_activation: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    net: Option<PathBuf>,
    /// Domain radius T.
    #[arg(long)]
    radius: Option<f64>,
    /// Number of accepted probes N.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Finite-difference step.
    #[arg(long)]
    h: Option<f64>,
    /// Smoothness tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Directions per smoothness test.
    #[arg(long)]
    ndirs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    net: Option<PathBuf>,
    #[arg(long)]
    probes: Option<PathBuf>,
    #[arg(long, value_enum)]
    radii_mode: Option<RadiiMode>,
    /// Shrink factor for gershgorin radii.
    #[arg(long)]
    shrink: Option<f64>,
    #[arg(long, value_enum)]
    reg: Option<RegKind>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Step size, or `auto` for 1/λ_max.
    #[arg(long)]
    lr: Option<LearningRate>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    grad_tol: Option<f64>,
    #[arg(long, value_enum)]
    pairs: Option<PairPolicy>,
    /// Seed of the fixed Monte Carlo sample.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo sample size.
    #[arg(long)]
    mc: Option<usize>,
    /// Model output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fit record path; defaults to `<out>.report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also solve the normal equations and print the largest weight difference.
    #[arg(long)]
    check_normal: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    net: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    mc: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Domain radius; defaults to the one stored in the model.
    #[arg(long)]
    radius: Option<f64>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    net: Option<PathBuf>,
    /// Fit record written by `fit`.
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Comma-separated L1 penalty strengths.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    /// Samples for the empirical region count.
    #[arg(long)]
    region_samples: Option<usize>,
    #[arg(long)]
    mc: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Everything `report` needs to refit: the patches, the pair set and the original run.
#[derive(Serialize, Deserialize)]
struct FitRecord {
    #[serde(rename = "T")]
    radius: f64,
    patches: Vec<Patch>,
    pairs: Vec<(usize, usize)>,
    report: FitReport<f64>,
}

#[derive(Serialize, Deserialize)]
struct ReportDoc {
    conjecture: ConjectureReport<f64>,
    distance: DistanceEstimate<f64>,
    reference: DistanceEstimate<f64>,
}

const DEFAULT_GRID: [f64; 5] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];

fn sci(x: f64) -> String {
    format!("{x:.8e}")
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, format!("{text}\n")).with_context(|| format!("writing {}", path.display()))
}

fn load_net(path: &Path) -> anyhow::Result<Network> {
    Network::from_json(&read(path)?).with_context(|| format!("loading network {}", path.display()))
}

fn cmd_gen(a: GenArgs, cfg: RunConfig) -> anyhow::Result<()> {
    let arch = match a.arch {
        Some(arch) => arch,
        None => require(cfg.arch, "arch")?.parse()?,
    };
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let scale = a.scale.or(cfg.scale).unwrap_or(1.0);
    let out = require(a.out.or(cfg.out), "out")?;
    let final_activation = a.final_activation || cfg.final_activation.unwrap_or(false);
    let net = Network::random(&arch, seed, scale)?.with_final_activation(final_activation);
    write(&out, &net.to_json()?)?;
    println!("D={}", net.param_count());
    println!("arch={arch}");
    Ok(())
}

fn cmd_probe(a: ProbeArgs, cfg: RunConfig) -> anyhow::Result<()> {
    let net = load_net(&require(a.net.or(cfg.net), "net")?)?;
    let radius = a.radius.or(cfg.radius).unwrap_or(1.0);
    let n = a.samples.or(cfg.samples).unwrap_or(20);
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let out = require(a.out.or(cfg.out), "out")?;
    let defaults = ProbeParams::default();
    let params = ProbeParams {
        h: a.h.or(cfg.h).unwrap_or(defaults.h),
        tol: a.tol.or(cfg.tol).unwrap_or(defaults.tol),
        ndirs: a.ndirs.or(cfg.ndirs),
    };
    let oracle = Oracle::new(&net, radius)?;
    let probes = oracle.sample_points(n, seed, &params)?;
    write(&out, &probes.to_json()?)?;
    println!("accepted={}", probes.len());
    println!("rejected={}", probes.rejected);
    println!("queries={}", oracle.query_count());
    Ok(())
}

fn cmd_fit(a: FitArgs, cfg: RunConfig) -> anyhow::Result<()> {
    let net = load_net(&require(a.net.or(cfg.net), "net")?)?;
    let probes_path = require(a.probes.or(cfg.probes), "probes")?;
    let probes = Probes::from_json(&read(&probes_path)?).with_context(|| format!("loading probes {}", probes_path.display()))?;
    let out = require(a.out.or(cfg.out), "out")?;
    let record_path = a.report.or(cfg.report).unwrap_or_else(|| {
        let mut s = out.clone().into_os_string();
        s.push(".report.json");
        PathBuf::from(s)
    });
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let mc = a.mc.or(cfg.mc).unwrap_or(20_000);
    let lambda = a.lambda.or(cfg.lambda).unwrap_or(0.0);
    let reg = match a.reg.or(cfg.reg).unwrap_or(RegKind::None) {
        RegKind::None => Regularization::None,
        RegKind::L1 => Regularization::L1(lambda),
        RegKind::L2 => Regularization::L2(lambda),
    };
    let defaults = FitConfig::<f64>::default();
    let config = FitConfig {
        learning_rate: a.lr.or(cfg.lr).map_or(StepSize::Auto, |lr| lr.0),
        max_iters: a.iters.or(cfg.iters).unwrap_or(defaults.max_iters),
        grad_tol: a.grad_tol.or(cfg.grad_tol).unwrap_or(defaults.grad_tol),
        reg,
        mc_samples: mc,
        seed,
        ..defaults
    };
    config.validate()?;

    let radius = probes.radius;
    let oracle = Oracle::new(&net, radius)?;
    let scales = vec![1.0; probes.len()];
    let mode = match a.radii_mode.or(cfg.radii_mode).unwrap_or(RadiiMode::Disjoint) {
        RadiiMode::Disjoint => RadiusMode::Disjoint,
        RadiiMode::Gershgorin => RadiusMode::Gershgorin {
            shrink: a.shrink.or(cfg.shrink).unwrap_or(0.9),
            nsamples: mc,
            seed,
        },
    };
    let radii = select_radii(&probes, &scales, radius, mode)?;
    let patches = Patch::from_probes(&probes, &scales, &radii)?;
    let pairs = match a.pairs.or(cfg.pairs).unwrap_or(PairPolicy::None) {
        PairPolicy::None => Vec::new(),
        PairPolicy::AllOverlapping => overlapping_pairs(&patches),
    };
    let report = fit_second_order(&patches, &oracle, &config, &pairs)?;

    let mut model = report.model(patches.clone())?;
    model.domain_radius = Some(radius);
    write(&out, &model.to_json()?)?;
    let record = FitRecord { radius, patches, pairs, report };
    write(&record_path, &serde_json::to_string_pretty(&record)?)?;

    let report = &record.report;
    let min_margin = report.gershgorin_margins.iter().copied().fold(f64::INFINITY, f64::min);
    println!("final_objective={}", sci(report.final_objective));
    println!("iterations={} converged={}", report.iterations, report.converged);
    println!("step_size={}", sci(report.step_size));
    println!("gershgorin_ok={} min_margin={}", report.gershgorin_ok, sci(min_margin));
    println!("nonzero_weights={} nonzero_pairs={}", report.nonzero_weights, report.nonzero_pairs);
    if !report.rejected_pairs.is_empty() {
        eprintln!("warning: {} pairs without overlap were dropped", report.rejected_pairs.len());
    }
    println!("queries={}", report.query_count);
    if a.check_normal {
        let diff = normal_equations_diff(&record, &oracle)?;
        println!("normal_max_abs_diff={}", sci(diff));
    }
    Ok(())
}

/// Largest gap between the descent weights and the exact fixed-sample minimizer.
fn normal_equations_diff<B: plrecon::oracle::BlackBox<f64>>(record: &FitRecord, oracle: &Oracle<f64, B>) -> anyhow::Result<f64> {
    let report = &record.report;
    let mut features: Vec<Feature> = (0..record.patches.len()).map(Feature::Patch).collect();
    let mut fitted = report.weights.clone();
    for &(i, j, w) in report.pair_weights.iter().flatten() {
        features.push(Feature::Pair(i, j));
        fitted.push(w);
    }
    let samples = SampleSet::draw(oracle, report.config.mc_samples, report.config.seed)?;
    let problem = QuadraticProblem::new(&record.patches, features, &samples);
    let ridge = match report.config.reg {
        Regularization::None => 0.0,
        Regularization::L2(l) => l / problem.factor,
        Regularization::L1(_) => bail!("--check-normal has no closed form under l1"),
    };
    let exact = problem.solve_normal(ridge)?;
    Ok(exact.iter().zip(&fitted).map(|(e, w)| (e - w).abs()).fold(0.0, f64::max))
}

fn cmd_eval(a: EvalArgs, cfg: RunConfig) -> anyhow::Result<()> {
    let net = load_net(&require(a.net.or(cfg.net), "net")?)?;
    let model_path = require(a.model.or(cfg.model), "model")?;
    let model = Model::from_json(&read(&model_path)?).with_context(|| format!("loading model {}", model_path.display()))?;
    let radius = require(a.radius.or(cfg.radius).or(model.domain_radius), "radius")?;
    let p = a.p.or(cfg.p).unwrap_or(2.0);
    let mc = a.mc.or(cfg.mc).unwrap_or(100_000);
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let d = dp_distance(&net, &model, radius, p, mc, seed)?;
    let zero = FnBox::new(net.input_dim(), |_: ArrayView1<f64>| 0.0);
    let d0 = dp_distance(&net, &zero, radius, p, mc, seed)?;
    println!("d_p(h,f)={} stderr={}", sci(d.value), sci(d.stderr));
    println!("d_p(0,f)={} stderr={}", sci(d0.value), sci(d0.stderr));
    if d0.value > 0.0 {
        println!("ratio={}", sci(d.value / d0.value));
    }
    Ok(())
}

fn cmd_report(a: ReportArgs, cfg: RunConfig) -> anyhow::Result<()> {
    let net = load_net(&require(a.net.or(cfg.net), "net")?)?;
    let fit_path = require(a.fit.or(cfg.fit), "fit")?;
    let record: FitRecord =
        serde_json::from_str(&read(&fit_path)?).with_context(|| format!("loading fit record {}", fit_path.display()))?;
    let grid = a.lambda_grid.or(cfg.lambda_grid).unwrap_or_else(|| DEFAULT_GRID.to_vec());
    let region_samples = a.region_samples.or(cfg.region_samples).unwrap_or(100_000);
    let mc = a.mc.or(cfg.mc).unwrap_or(100_000);
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let out = require(a.out.or(cfg.out), "out")?;

    let oracle = Oracle::new(&net, record.radius)?;
    let base = record.report.config;
    let conjecture = conjecture_report(&record.report, &net, record.radius, region_samples, seed, &grid, |lambda| {
        let config = FitConfig { reg: Regularization::L1(lambda), ..base };
        fit_second_order(&record.patches, &oracle, &config, &record.pairs)
    })?;
    let model = record.report.model(record.patches.clone())?;
    let distance = dp_distance(&net, &model, record.radius, 2.0, mc, seed)?;
    let zero = FnBox::new(net.input_dim(), |_: ArrayView1<f64>| 0.0);
    let reference = dp_distance(&net, &zero, record.radius, 2.0, mc, seed)?;
    let doc = ReportDoc { conjecture, distance, reference };
    write(&out, &serde_json::to_string_pretty(&doc)?)?;

    let c = &doc.conjecture;
    println!("{:<16} {:>9} {:>9} {:>16} {:>6}", "lambda", "nonzero", "pairs", "objective", "=n1");
    for row in &c.lambda_grid {
        println!(
            "{:<16} {:>9} {:>9} {:>16} {:>6}",
            sci(row.lambda),
            row.nonzero_weights,
            row.nonzero_pairs,
            sci(row.final_objective),
            row.equals_first_layer
        );
    }
    println!("n1={}", c.first_layer_width);
    println!("patches={} nonzero_weights={} nonzero_pairs={}", c.patch_count, c.nonzero_weights, c.nonzero_pairs);
    println!("empirical_regions={}", c.empirical_region_count);
    println!("d_2(h,f)={} d_2(0,f)={}", sci(doc.distance.value), sci(doc.reference.value));
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Gen(a) => cmd_gen(a, cfg),
        Command::Probe(a) => cmd_probe(a, cfg),
        Command::Fit(a) => cmd_fit(a, cfg),
        Command::Eval(a) => cmd_eval(a, cfg),
        Command::Report(a) => cmd_report(a, cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
