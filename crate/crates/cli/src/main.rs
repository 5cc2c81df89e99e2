//! Command-line harness: gradient checks, training, evaluation, benchmarks
//! and heatmap dumps on synthetic scenes.

mod bench;
mod svg;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mvdet::detector::{load_checkpoint, save_checkpoint, AttentionKind, Detector, QueryInit};
use mvdet::experiment::{self, Split};
use mvdet::gradsuite::{run_suite, SuiteOptions};
use mvdet::metrics::{evaluate, matched_center_error, EvalReport, THRESHOLDS};
use mvdet::numerics::save_tensor;
use mvdet::synth::{render_features, Scene};
use mvdet::Config;

#[derive(Parser, Debug)]
#[command(name = "mvdet", version, about = "Sparse multi-view 3D detection on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Finite-difference check of every differentiable op; non-zero exit on failure.
    Gradcheck(GradcheckArgs),
    /// Train on generated scenes; writes a checkpoint and loss.csv.
    Train(TrainArgs),
    /// Evaluate a checkpoint on held-out scenes; writes report.csv and SVG plots.
    Eval(EvalArgs),
    /// Time cross-attention and volumetric sampling; writes bench.csv.
    Bench(BenchArgs),
    /// Write the BEV heatmap of one frame as CSV and SVG, plus its feature tensors.
    DumpHeatmap(DumpArgs),
    /// Write a generated scene as TOML.
    GenScene(GenSceneArgs),
    /// Print the resolved configuration as TOML.
    ShowConfig(Common),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Attn {
    Pca,
    Sca2d,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Init {
    Heatmap,
    HeatmapPosition,
    Random,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML configuration file; overrides --preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration: desk or paper-scale.
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Temporal query and feature aggregation.
    #[arg(long, value_enum)]
    temporal: Option<Switch>,
    /// Ego-motion alignment of past frames.
    #[arg(long, value_enum)]
    align: Option<Switch>,
    /// Cross-attention variant.
    #[arg(long, value_enum)]
    attn: Option<Attn>,
    #[arg(long, value_enum)]
    query_init: Option<Init>,
    /// Training steps.
    #[arg(long)]
    steps: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => Config::preset(&self.preset)?,
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.temporal {
            cfg.model.temporal.enabled = t == Switch::On;
        }
        if let Some(a) = self.align {
            cfg.model.temporal.align = a == Switch::On;
        }
        if let Some(a) = self.attn {
            cfg.model.attention = match a {
                Attn::Pca => AttentionKind::Pca,
                Attn::Sca2d => AttentionKind::Sca2d,
            };
            if a == Attn::Sca2d {
                // image-plane offsets cannot sample a past frame
                cfg.model.temporal.feature_aggregation = false;
            }
        }
        if let Some(q) = self.query_init {
            cfg.model.query_init = match q {
                Init::Heatmap => QueryInit::Heatmap,
                Init::HeatmapPosition => QueryInit::HeatmapPosition,
                Init::Random => QueryInit::Random,
            };
        }
        if let Some(n) = self.steps {
            cfg.train.steps = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Set every weight to zero first.
    #[arg(long)]
    zero_weights: bool,
    /// Corrupt every analytic gradient (the run must then fail).
    #[arg(long)]
    corrupt: bool,
    /// Only run these checks.
    #[arg(long, value_delimiter = ',')]
    only: Vec<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Print every n-th step.
    #[arg(long, default_value_t = 50)]
    log_every: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint directory; defaults to <out-dir>/checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Score the ground truth itself (sanity check, AP = 1).
    #[arg(long, conflicts_with = "empty")]
    oracle: bool,
    /// Score an empty prediction set (AP = 0).
    #[arg(long)]
    empty: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0usize, 25, 50, 100, 200])]
    queries: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![8usize, 16, 32])]
    grids: Vec<usize>,
}

#[derive(Args, Debug)]
struct DumpArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Scene TOML; defaults to evaluation scene --scene-index.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    scene_index: usize,
    #[arg(long, default_value_t = 0)]
    frame: usize,
}

#[derive(Args, Debug)]
struct GenSceneArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0)]
    scene_index: usize,
    #[arg(long, value_enum, default_value = "eval")]
    split: SplitArg,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Eval,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gradcheck(a) => gradcheck(a),
        Command::Train(a) => train(a).map(|_| ExitCode::SUCCESS),
        Command::Eval(a) => eval(a).map(|_| ExitCode::SUCCESS),
        Command::Bench(a) => bench::run(&a.out_dir, a.repeats, &a.queries, &a.grids).map(|_| ExitCode::SUCCESS),
        Command::DumpHeatmap(a) => dump_heatmap(a).map(|_| ExitCode::SUCCESS),
        Command::GenScene(a) => gen_scene(a).map(|_| ExitCode::SUCCESS),
        Command::ShowConfig(c) => {
            print!("{}", c.resolve()?.to_toml()?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let only: Vec<&str> = a.only.iter().map(String::as_str).collect();
    let opts = SuiteOptions {
        seed: a.seed,
        zero_weights: a.zero_weights,
        corrupt: a.corrupt,
    };
    let entries = run_suite(opts, &only)?;
    let mut ok = true;
    println!("{:<22} {:>14} {:>8}  result", "op", "max_rel_error", "coords");
    for e in &entries {
        ok &= e.report.pass;
        println!(
            "{:<22} {:>14.3e} {:>8}  {}",
            e.name,
            e.report.max_rel_error,
            e.report.coords_checked,
            if e.report.pass { "pass" } else { "FAIL" }
        );
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn train(a: TrainArgs) -> Result<Detector> {
    let cfg = a.common.resolve()?;
    let out = &a.common.out_dir;
    prepare_out(out)?;
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    let mut csv = fs::File::create(out.join("loss.csv"))?;
    writeln!(csv, "step,loss,cls,reg,velocity,heatmap,grad_norm,lr")?;
    let mut write_err = None;
    let model = experiment::train(&cfg, |r| {
        let c = &r.components;
        let n = cfg.train.batch_size as f64;
        if let Err(e) = writeln!(
            csv,
            "{},{:.10e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}",
            r.step,
            r.loss,
            c.cls / n,
            c.reg / n,
            c.velocity / n,
            c.heatmap / n,
            r.grad_norm,
            cfg.lr_at(r.step)
        ) {
            write_err.get_or_insert(e);
        }
        if a.log_every > 0 && (r.step % a.log_every == 0 || r.step + 1 == cfg.train.steps) {
            eprintln!("step {:>5}  loss {:.4}  heatmap {:.4}", r.step, r.loss, c.heatmap / n);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    save_checkpoint(&model, out.join("checkpoint"))?;
    eprintln!("checkpoint written to {}", out.join("checkpoint").display());
    Ok(model)
}

fn write_report(path: &Path, r: &EvalReport, center_error: Option<f64>, query_recall: Option<f64>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "metric,value")?;
    for (t, ap) in &r.ap_at_thresholds {
        writeln!(f, "ap@{t},{ap:.6}")?;
    }
    writeln!(f, "mean_ap,{:.6}", r.mean_ap())?;
    writeln!(f, "mean_ate,{:.6}", r.mean_ate)?;
    writeln!(f, "mean_ave,{:.6}", r.mean_ave)?;
    writeln!(f, "recall,{:.6}", r.recall)?;
    writeln!(f, "n_gt,{}", r.n_gt)?;
    writeln!(f, "n_pred,{}", r.n_pred)?;
    writeln!(f, "true_positives,{}", r.true_positives)?;
    if let Some(c) = center_error {
        writeln!(f, "center_error,{c:.6}")?;
    }
    if let Some(q) = query_recall {
        writeln!(f, "query_recall,{q:.6}")?;
    }
    Ok(())
}

fn checkpoint_dir(explicit: &Option<PathBuf>, out: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| out.join("checkpoint"))
}

fn eval(a: EvalArgs) -> Result<()> {
    let out = a.common.out_dir.clone();
    prepare_out(&out)?;
    if a.oracle || a.empty {
        let cfg = a.common.resolve()?;
        let mut preds = Vec::new();
        let mut gts = Vec::new();
        for i in 0..cfg.data.eval_scenes {
            let s = experiment::scene(&cfg, Split::Eval, i)?;
            for t in s.timestamps() {
                let gt = s.ground_truth(t);
                preds.push(if a.oracle {
                    gt.iter().cloned().map(|mut b| {
                        b.score = 1.0;
                        b
                    }).collect()
                } else {
                    Vec::new()
                });
                gts.push(gt);
            }
        }
        let r = evaluate(&preds, &gts, &THRESHOLDS)?;
        write_report(&out.join("report.csv"), &r, matched_center_error(&preds, &gts), None)?;
        print_report(&r);
        return Ok(());
    }
    let ckpt = checkpoint_dir(&a.checkpoint, &out);
    let model = load_checkpoint(&ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let mut cfg = a.common.resolve()?;
    // the checkpoint decides the model; the config decides the data
    cfg.model = model.cfg;
    let summary = experiment::evaluate_model(&model, &cfg)?;
    write_report(&out.join("report.csv"), &summary.report, summary.center_error, summary.query_recall)?;
    if let Some(frames) = summary.scenes.first() {
        if let Some(f) = frames.get(frames.len() / 2) {
            let top: Vec<_> = f.boxes.iter().filter(|b| b.score >= 0.3).cloned().collect();
            fs::write(out.join("bev_boxes.svg"), svg::bev_boxes(&cfg.model.range, &f.gt, &top))?;
        }
        let s = experiment::scene(&cfg, Split::Eval, 0)?;
        let t = s.frame_time(s.n_frames() / 2);
        let fr = experiment::frame(&cfg, &s, t)?;
        let (hm, peaks) = model.heatmap(&fr.input())?;
        fs::write(out.join("heatmap.svg"), svg::heatmap(&hm, &peaks, &fr.gt))?;
    }
    print_report(&summary.report);
    if let Some(c) = summary.center_error {
        println!("center_error {c:.4}");
    }
    if let Some(q) = summary.query_recall {
        println!("query_recall {q:.4}");
    }
    Ok(())
}

fn print_report(r: &EvalReport) {
    for (t, ap) in &r.ap_at_thresholds {
        println!("ap@{t}m {ap:.4}");
    }
    println!("mean_ate {:.4}", r.mean_ate);
    println!("mean_ave {:.4}", r.mean_ave);
    println!("recall {:.4}", r.recall);
}

fn dump_heatmap(a: DumpArgs) -> Result<()> {
    let out = a.common.out_dir.clone();
    prepare_out(&out)?;
    let mut cfg = a.common.resolve()?;
    let model = match &a.checkpoint {
        Some(p) => load_checkpoint(p)?,
        None if out.join("checkpoint").join(mvdet::detector::MANIFEST).exists() => {
            load_checkpoint(out.join("checkpoint"))?
        }
        None => Detector::new(cfg.model, cfg.seed)?,
    };
    cfg.model = model.cfg;
    let scene: Scene = match &a.scene {
        Some(p) => {
            let s: Scene = toml::from_str(&fs::read_to_string(p)?).context("parsing scene")?;
            s.validate()?;
            s
        }
        None => experiment::scene(&cfg, Split::Eval, a.scene_index)?,
    };
    if a.frame >= scene.n_frames() {
        bail!("frame {} out of range (scene has {})", a.frame, scene.n_frames());
    }
    let t = scene.frame_time(a.frame);
    let fr = experiment::frame(&cfg, &scene, t)?;
    let (hm, peaks) = model.heatmap(&fr.input())?;
    let mut f = fs::File::create(out.join("heatmap.csv"))?;
    writeln!(f, "row,col,x,y,p")?;
    let spec = hm.spec;
    for j in 0..spec.height() {
        for i in 0..spec.width() {
            let c = spec.bev_center(j, i);
            writeln!(f, "{j},{i},{:.3},{:.3},{:.6e}", c[0], c[1], hm.values.at(&[j, i]))?;
        }
    }
    fs::write(out.join("heatmap.svg"), svg::heatmap(&hm, &peaks, &fr.gt))?;
    let raw = render_features(&scene, t, (cfg.data.feature_size[0], cfg.data.feature_size[1]))?;
    for (v, map) in raw.iter().enumerate() {
        save_tensor(out.join(format!("features_view{v}.tensor")), map)?;
    }
    println!("wrote heatmap.csv, heatmap.svg and {} feature tensors to {}", raw.len(), out.display());
    Ok(())
}

fn gen_scene(a: GenSceneArgs) -> Result<()> {
    let cfg = a.common.resolve()?;
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Eval => Split::Eval,
    };
    let s = experiment::scene(&cfg, split, a.scene_index)?;
    print!("{}", toml::to_string(&s)?);
    Ok(())
}
