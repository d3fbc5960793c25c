//! `cropcritic` command-line tool: training, evaluation and diagnostics.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cropcritic::experiments::{
    ablation_arms, ablation_csv, dependency_histogram, evaluate_checkpoint, find_arm, reward_surface_csv, run_ablation,
    t_grid, EvalSummary,
};
use cropcritic::grpo::{collect_group, curve_csv, distorted_images, heldout_images, train};
use cropcritic::metrics::EvalReport;
use cropcritic::pcr::total_reward;
use cropcritic::pig::{artifact_threshold, iteration_rows, refine_loop, Critic, Editor, SyntheticEditor, ITERATION_HEADER};
use cropcritic::policy::{Checkpoint, PolicyParams};
use cropcritic::trajectory::TrajectoryLog;
use serde::Serialize;

use crate::config::{ConfigError, RunConfig};

const OUT_ENV: &str = "CROPCRITIC_OUT";
/// Held-out images whose sampled rollouts are written to the trajectory log.
const LOGGED_IMAGES: usize = 8;

#[derive(Parser, Debug)]
#[command(name = "cropcritic", version, about = "Tool-augmented quality critic on synthetic images")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// `key=value` patch applied on top of the config (repeatable).
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a policy and write curves, checkpoints and a summary.
    Train,
    /// Greedy evaluation of a checkpoint on fresh held-out images.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        n_images: Option<usize>,
        /// Also evaluate with perturbed crops.
        #[arg(long)]
        perturb: bool,
    },
    /// Reward values of every shape over a step x error grid.
    RewardSurface {
        #[arg(long)]
        t_points: Option<usize>,
        #[arg(long)]
        e_max: Option<f64>,
        #[arg(long)]
        e_points: Option<usize>,
    },
    /// Histogram of token dependency scores.
    DependencyHistogram {
        /// Defaults to the untrained (uniform) policy.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        n_images: Option<usize>,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        max: Option<f64>,
        #[arg(long)]
        tau_dep: Option<f64>,
    },
    /// Diagnose-and-edit refinement with a trained critic.
    Pig {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        stop_threshold: Option<f64>,
        #[arg(long)]
        strength: Option<f64>,
        #[arg(long)]
        n_images: Option<usize>,
        /// Write a PGM and JSON sidecar for every image state.
        #[arg(long)]
        dump_pgm: bool,
    },
    /// Train every reward-shape x filtering arm over several seeds.
    Ablate {
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, value_delimiter = ',')]
        arms: Option<Vec<String>>,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] cropcritic::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(cropcritic::Error::Diverged { .. }) => 3,
            _ => 2,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

struct Output {
    dir: PathBuf,
}

impl Output {
    fn new(dir: PathBuf) -> CliResult<Self> {
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(Self { dir })
    }

    fn write(&self, name: &str, contents: &str) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(&path, contents).map_err(io_err(&path))?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        let text = serde_json::to_string_pretty(value).map_err(cropcritic::Error::from)?;
        self.write(name, &(text + "\n"))
    }
}

fn load_checkpoint(path: &Path) -> CliResult<PolicyParams> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(Checkpoint::from_json(&text)?.params()?)
}

#[derive(Serialize)]
struct EvalBrief {
    plcc: f64,
    srcc: f64,
    acc_loc: f64,
    n: usize,
    malformed: usize,
}

impl From<&EvalReport> for EvalBrief {
    fn from(r: &EvalReport) -> Self {
        Self {
            plcc: r.plcc,
            srcc: r.srcc,
            acc_loc: r.acc_loc,
            n: r.n,
            malformed: r.malformed,
        }
    }
}

#[derive(Serialize)]
struct TrainSummary {
    seed: u64,
    total_steps: usize,
    untrained: Option<EvalBrief>,
    trained: Option<EvalBrief>,
    checkpoints: Vec<String>,
}

fn cmd_train(cfg: &RunConfig, out: &Output) -> CliResult<()> {
    let tc = &cfg.train;
    let report = train(tc, cfg.seed)?;
    out.write("curve.csv", &curve_csv(&report.curve))?;
    let mut names = Vec::new();
    for ck in &report.checkpoints {
        let name = format!("checkpoints/step_{:06}.json", ck.step);
        out.write(&name, &(ck.to_json()? + "\n"))?;
        names.push(name);
    }
    let last = Checkpoint::new(&report.params, tc.total_steps() as u64, cfg.seed);
    out.write("checkpoint.json", &(last.to_json()? + "\n"))?;

    let reward = tc.effective_reward();
    let t = tc.total_steps();
    let mut log = String::new();
    for (i, img) in heldout_images(tc, cfg.seed, LOGGED_IMAGES).into_iter().enumerate() {
        let batch = collect_group(tc, &reward, &report.params, img, cfg.seed, t + i, None)?;
        for traj in &batch.trajectories {
            let r = total_reward(&reward, t, traj, batch.y);
            log.push_str(&TrajectoryLog::new(traj, cfg.seed, batch.y, r, reward.k_at(t)).to_jsonl_line()?);
            log.push('\n');
        }
    }
    out.write("trajectories.jsonl", &log)?;

    let summary = TrainSummary {
        seed: cfg.seed,
        total_steps: t,
        untrained: report.untrained_eval.as_ref().map(EvalBrief::from),
        trained: report.final_eval.as_ref().map(EvalBrief::from),
        checkpoints: names,
    };
    let path = out.write_json("summary.json", &summary)?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, out: &Output, checkpoint: &Path) -> CliResult<()> {
    let params = load_checkpoint(checkpoint)?;
    let (clean, pert) = evaluate_checkpoint(&params, &cfg.train, cfg.seed, cfg.eval.n_images, cfg.eval.perturb)?;
    out.write("eval_records.csv", &clean.records_csv())?;
    if let Some(p) = &pert {
        out.write("eval_perturbed_records.csv", &p.perturbed.records_csv())?;
    }
    let summary = EvalSummary::from_reports(&clean, pert.as_ref());
    out.write_json("eval.json", &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary).map_err(cropcritic::Error::from)?);
    Ok(())
}

fn cmd_reward_surface(cfg: &RunConfig, out: &Output) -> CliResult<()> {
    let s = &cfg.surface;
    let reward = cfg.train.effective_reward();
    let ts = t_grid(&reward.schedule, s.t_points);
    let es: Vec<f64> = match s.e_points {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n).map(|i| s.e_max * i as f64 / (n - 1) as f64).collect(),
    };
    let path = out.write("reward_surface.csv", &reward_surface_csv(&reward, &ts, &es))?;
    println!("{}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct HistogramSummary {
    total: usize,
    tau_dep: f64,
    fraction_above: f64,
}

fn cmd_dependency_histogram(cfg: &RunConfig, out: &Output, checkpoint: Option<&Path>) -> CliResult<()> {
    let params = match checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => PolicyParams::zeros(),
    };
    let h = &cfg.histogram;
    let images = heldout_images(&cfg.train, cfg.seed, h.n_images);
    let hist = dependency_histogram(&params, &images, cfg.seed, &cfg.train, h.bins, h.max, h.tau_dep)?;
    out.write("dependency_histogram.csv", &hist.to_csv())?;
    let summary = HistogramSummary {
        total: hist.total,
        tau_dep: h.tau_dep,
        fraction_above: hist.fraction_above(),
    };
    out.write_json("dependency_summary.json", &summary)?;
    println!("{}", serde_json::to_string(&summary).map_err(cropcritic::Error::from)?);
    Ok(())
}

#[derive(Serialize)]
struct PigSummary {
    theta_art: f64,
    n_images: usize,
    k: usize,
    mean_true_score: Vec<f64>,
    max_edits: usize,
}

fn cmd_pig(cfg: &RunConfig, out: &Output, checkpoint: &Path) -> CliResult<()> {
    let p = &cfg.pig;
    let params = load_checkpoint(checkpoint)?;
    let env = &cfg.train.env;
    let mut critic = Critic::new(params, artifact_threshold(env, cfg.seed));
    critic.stop_threshold = p.stop_threshold;
    critic.max_len = cfg.train.max_len;
    let editor = SyntheticEditor { env: env.clone() };
    let images = distorted_images(&cfg.train, cfg.seed, p.n_images);
    let mut csv = format!("{ITERATION_HEADER}\n");
    let mut trace = vec![0.0; p.k + 1];
    let mut max_edits = 0;
    for img in &images {
        let outcome = refine_loop(&critic, &editor, env, img, p.k, p.strength)?;
        csv.push_str(&iteration_rows(img.seed, &outcome));
        for (acc, v) in trace.iter_mut().zip(outcome.score_trace(p.k)) {
            *acc += v / images.len().max(1) as f64;
        }
        max_edits = max_edits.max(outcome.edits());
        if p.dump_pgm {
            let mut state = img.clone();
            out.write(&format!("pgm/{}_0.pgm", img.seed), &state.to_pgm())?;
            out.write_json(&format!("pgm/{}_0.json", img.seed), &state.sidecar(env))?;
            for (i, step) in outcome.history.iter().enumerate() {
                if let Some(instr) = &step.instruction {
                    state = editor.edit(&state, instr)?;
                    out.write(&format!("pgm/{}_{}.pgm", img.seed, i + 1), &state.to_pgm())?;
                    out.write_json(&format!("pgm/{}_{}.json", img.seed, i + 1), &state.sidecar(env))?;
                }
            }
        }
    }
    out.write("pig_iterations.csv", &csv)?;
    let summary = PigSummary {
        theta_art: critic.theta_art,
        n_images: images.len(),
        k: p.k,
        mean_true_score: trace,
        max_edits,
    };
    out.write_json("pig_summary.json", &summary)?;
    println!("{}", serde_json::to_string(&summary).map_err(cropcritic::Error::from)?);
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig, out: &Output) -> CliResult<()> {
    let arms = if cfg.ablate.arms.is_empty() {
        ablation_arms()
    } else {
        cfg.ablate.arms.iter().map(|n| find_arm(n)).collect::<Result<_, _>>()?
    };
    let rows = run_ablation(&cfg.train, &arms, &cfg.ablate.seeds)?;
    let path = out.write("ablation.csv", &ablation_csv(&arms, &rows))?;
    println!("{}", path.display());
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = config::load(cli.common.config.as_deref(), &cli.common.overrides)?;
    if let Some(s) = cli.common.seed {
        cfg.seed = s;
    }
    match &cli.cmd {
        Command::Eval { n_images, perturb, .. } => {
            cfg.eval.n_images = n_images.unwrap_or(cfg.eval.n_images);
            cfg.eval.perturb |= *perturb;
        }
        Command::RewardSurface { t_points, e_max, e_points } => {
            cfg.surface.t_points = t_points.unwrap_or(cfg.surface.t_points);
            cfg.surface.e_max = e_max.unwrap_or(cfg.surface.e_max);
            cfg.surface.e_points = e_points.unwrap_or(cfg.surface.e_points);
        }
        Command::DependencyHistogram { n_images, bins, max, tau_dep, .. } => {
            let h = &mut cfg.histogram;
            h.n_images = n_images.unwrap_or(h.n_images);
            h.bins = bins.unwrap_or(h.bins);
            h.max = max.unwrap_or(h.max);
            h.tau_dep = tau_dep.unwrap_or(h.tau_dep);
        }
        Command::Pig { k, stop_threshold, strength, n_images, dump_pgm, .. } => {
            let p = &mut cfg.pig;
            p.k = k.unwrap_or(p.k);
            p.stop_threshold = stop_threshold.unwrap_or(p.stop_threshold);
            p.strength = strength.unwrap_or(p.strength);
            p.n_images = n_images.unwrap_or(p.n_images);
            p.dump_pgm |= *dump_pgm;
        }
        Command::Ablate { seeds, arms } => {
            if let Some(s) = seeds {
                cfg.ablate.seeds = s.clone();
            }
            if let Some(a) = arms {
                cfg.ablate.arms = a.clone();
            }
        }
        Command::Train => {}
    }
    cfg.train.validate()?;
    let dir = cli
        .common
        .out
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    let out = Output::new(dir)?;
    match &cli.cmd {
        Command::Train => cmd_train(&cfg, &out),
        Command::Eval { checkpoint, .. } => cmd_eval(&cfg, &out, checkpoint),
        Command::RewardSurface { .. } => cmd_reward_surface(&cfg, &out),
        Command::DependencyHistogram { checkpoint, .. } => cmd_dependency_histogram(&cfg, &out, checkpoint.as_deref()),
        Command::Pig { checkpoint, .. } => cmd_pig(&cfg, &out, checkpoint),
        Command::Ablate { .. } => cmd_ablate(&cfg, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
