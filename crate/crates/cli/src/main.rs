use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use smen_core::dataio::{
    format_detections, read_corpus, read_detections, read_ground_truth, read_kv, read_masks, read_params, write_corpus,
    write_kv, write_masks, write_params, write_text, Corpus, RunDir,
};
use smen_core::error::Error;
use smen_core::experiment::{
    detect, generate_masks, run_seeds, train_localizer, train_miner, PipelineConfig,
};
use smen_core::gradcheck::{run_suite, REL_TOL};
use smen_core::localizer::{self, infer_combo, InferMode};
use smen_core::metrics::{map_bands, slow_subset_filter, Band};
use smen_core::mining::SlowMask;
use smen_core::synthgen::generate;
use smen_core::tensorseq::sigmoid;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "smen", version, about = "Slow-motion-aware weakly supervised temporal action localization")]
struct Cli {
    /// Worker threads for per-video stages (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override one configuration key, e.g. `--set theta=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus (train/ and test/ under OUT).
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the mining backbone on sub-sampled features.
    TrainMiner {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write slow-motion masks for every video of a corpus.
    GenMasks {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Miner run directory or checkpoint file.
        #[arg(long)]
        miner: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the two-branch localizer.
    TrainLoc {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Localize actions and write a detection CSV.
    Infer {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Localizer run directory.
        #[arg(long)]
        loc: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "full")]
        mode: InferMode,
    },
    /// Score detections against annotations.
    Eval {
        #[arg(long)]
        props: PathBuf,
        #[arg(long)]
        ann: PathBuf,
        /// Keep only slow-motion ground truth.
        #[arg(long)]
        slow_only: bool,
        #[arg(long, value_enum, default_value_t = BandArg::Thumos)]
        band: BandArg,
        /// Also write the per-threshold CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Draw per-class CAS of one video as an SVG line chart.
    PlotCas {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        loc: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        video: String,
        #[arg(long)]
        out: PathBuf,
        /// Mask file to overlay.
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long, default_value = "full")]
        mode: InferMode,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        cases: usize,
    },
    /// SMEN against the single-branch and no-mining baselines on a synthetic corpus.
    Compare {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum BandArg {
    Thumos,
    Anet,
}

/// Failure with the exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFinite { .. } => EXIT_NUMERIC,
            _ => EXIT_DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: String) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message,
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Defaults, then `base` (a run's snapshot), then `--config`, then `--set`.
fn load_config(args: &ConfigArgs, base: Option<&Path>) -> CliResult<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = base.filter(|p| p.is_file()) {
        cfg.apply_kv(&read_kv(path)?)?;
    }
    if let Some(path) = &args.config {
        let pairs = read_kv(path)?;
        cfg.apply_kv(&pairs).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
        cfg.set(k.trim(), v.trim()).map_err(|e| usage(e.to_string()))?;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn snapshot(dir: &Path, cfg: &PipelineConfig) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::from(Error::Io {
        path: dir.to_path_buf(),
        source: e,
    }))?;
    write_kv(&RunDir::new(dir).config(), &cfg.to_kv())?;
    Ok(())
}

fn run_config(run: &Path) -> PathBuf {
    if run.is_dir() {
        RunDir::new(run).config()
    } else {
        run.with_file_name("config.txt")
    }
}

fn aligned_masks(corpus: &Corpus, path: &Path) -> CliResult<Vec<SlowMask>> {
    let masks = read_masks(path)?;
    corpus
        .videos
        .iter()
        .map(|v| {
            let m = masks
                .iter()
                .find(|(id, _)| *id == v.id)
                .map(|(_, m)| m.clone())
                .ok_or_else(|| Error::InvalidInput(format!("{}: no mask for video {}", path.display(), v.id)))?;
            if m.len() != v.features.len() {
                return Err(Error::InvalidInput(format!(
                    "{}: mask of {} has {} snippets, video has {}",
                    path.display(),
                    v.id,
                    m.len(),
                    v.features.len()
                ))
                .into());
            }
            Ok(m)
        })
        .collect()
}

fn cmd_synth(args: &ConfigArgs, out: &Path) -> CliResult<()> {
    let cfg = load_config(args, None)?;
    let corpus = generate(&cfg.synth)?;
    write_corpus(&out.join("train"), &corpus.train)?;
    write_corpus(&out.join("test"), &corpus.test)?;
    snapshot(out, &cfg)?;
    println!(
        "wrote {} train and {} test videos to {}",
        corpus.train.videos.len(),
        corpus.test.videos.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train_miner(args: &ConfigArgs, corpus: &Path, out: &Path) -> CliResult<()> {
    let cfg = load_config(args, None)?;
    let corpus = read_corpus(corpus)?;
    snapshot(out, &cfg)?;
    let (miner, curve) = train_miner(&cfg, &corpus.videos)?;
    let run = RunDir::new(out);
    write_params(&run.checkpoint(), &miner)?;
    write_text(&run.loss_curve(), &smen_core::dataio::format_loss_curve(&curve.total))?;
    println!("miner trained, final loss {:.6}", curve.total.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

fn cmd_gen_masks(args: &ConfigArgs, miner: &Path, corpus: &Path, out: &Path) -> CliResult<()> {
    let cfg = load_config(args, Some(&run_config(miner)))?;
    let ckpt = if miner.is_dir() { RunDir::new(miner).checkpoint() } else { miner.to_path_buf() };
    let params = read_params(&ckpt)?;
    let corpus = read_corpus(corpus)?;
    let masks = generate_masks(&params, &corpus.videos, &cfg.mining)?;
    let kept: usize = masks.iter().map(SlowMask::count_ones).sum();
    let total: usize = masks.iter().map(SlowMask::len).sum();
    let pairs: Vec<(String, SlowMask)> = corpus.videos.iter().map(|v| v.id.clone()).zip(masks).collect();
    write_masks(out, &pairs)?;
    println!("{} masks, {kept}/{total} snippets kept", pairs.len());
    Ok(())
}

fn cmd_train_loc(args: &ConfigArgs, corpus: &Path, masks: &Path, out: &Path, beta: Option<f64>) -> CliResult<()> {
    let mut cfg = load_config(args, None)?;
    if let Some(b) = beta {
        cfg.set("beta", &b.to_string()).map_err(|e| usage(e.to_string()))?;
    }
    let corpus = read_corpus(corpus)?;
    let masks = aligned_masks(&corpus, masks)?;
    snapshot(out, &cfg)?;
    let (state, curve) = train_localizer(&cfg, &corpus.videos, &masks)?;
    localizer::save(out, &state)?;
    write_text(&RunDir::new(out).loss_curve(), &smen_core::dataio::format_loss_curve(&curve.total))?;
    println!("localizer trained, final loss {:.6}", curve.total.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

fn cmd_infer(args: &ConfigArgs, loc: &Path, corpus: &Path, out: &Path, mode: InferMode) -> CliResult<()> {
    let cfg = load_config(args, Some(&run_config(loc)))?;
    let state = localizer::load(loc)?;
    let corpus = read_corpus(corpus)?;
    let dets = detect(&state, &corpus.videos, mode, &cfg.postprocess)?;
    write_text(out, &format_detections(&dets))?;
    println!("{} detections over {} videos", dets.len(), corpus.videos.len());
    Ok(())
}

fn cmd_eval(props: &Path, ann: &Path, slow_only: bool, band: BandArg, csv: Option<&Path>) -> CliResult<()> {
    let dets = read_detections(props)?;
    let mut gts = read_ground_truth(ann)?;
    if slow_only {
        gts = slow_subset_filter(&gts);
    }
    let band = match band {
        BandArg::Thumos => Band::thumos(),
        BandArg::Anet => Band::anet(),
    };
    let report = map_bands(&dets, &gts, &[band]);
    print!("{}", report.to_table());
    if let Some(path) = csv {
        write_text(path, &report.to_csv())?;
    }
    Ok(())
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// SVG line chart of `tracks` (values in [0,1]) with shaded spans.
fn render_svg(title: &str, tracks: &[Vec<f64>], mask: Option<&SlowMask>, gts: &[(usize, usize, usize)]) -> String {
    let (w, h, pad) = (900.0, 320.0, 40.0);
    let t_len = tracks.first().map_or(1, Vec::len).max(2);
    let x = |t: f64| pad + t * (w - 2.0 * pad) / (t_len - 1) as f64;
    let y = |v: f64| h - pad - v.clamp(0.0, 1.0) * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    if let Some(m) = mask {
        let mut t = 0;
        while t < m.len() {
            if m.bits[t] == 1 {
                let start = t;
                while t < m.len() && m.bits[t] == 1 {
                    t += 1;
                }
                let (x0, x1) = (x(start as f64 - 0.5).max(pad), x(t as f64 - 0.5).min(w - pad));
                let _ = writeln!(
                    s,
                    r##"<rect x="{x0:.2}" y="{pad}" width="{:.2}" height="{:.2}" fill="#999999" fill-opacity="0.2"/>"##,
                    x1 - x0,
                    h - 2.0 * pad
                );
            } else {
                t += 1;
            }
        }
    }
    for &(c, a, b) in gts {
        let color = PALETTE[c % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="6"/>"#,
            x(a as f64),
            h - pad + 12.0,
            x(b as f64 - 1.0),
            h - pad + 12.0
        );
    }
    let _ = writeln!(
        s,
        r#"<polyline points="{pad},{pad} {pad},{} {},{}" fill="none" stroke="black"/>"#,
        h - pad,
        w - pad,
        h - pad
    );
    for (c, track) in tracks.iter().enumerate() {
        let pts: Vec<String> = track
            .iter()
            .enumerate()
            .map(|(t, &v)| format!("{:.2},{:.2}", x(t as f64), y(v)))
            .collect();
        let color = PALETTE[c % PALETTE.len()];
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{color}">class {c}</text>"#,
            w - pad - 60.0,
            pad + 14.0 * (c as f64 + 1.0)
        );
    }
    let title = title.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    let _ = writeln!(s, r#"<text x="{pad}" y="24" font-family="sans-serif" font-size="14">{title}</text>"#);
    s.push_str("</svg>\n");
    s
}

fn cmd_plot_cas(
    args: &ConfigArgs,
    loc: &Path,
    corpus: &Path,
    video: &str,
    out: &Path,
    masks: Option<&Path>,
    mode: InferMode,
) -> CliResult<()> {
    load_config(args, Some(&run_config(loc)))?;
    let state = localizer::load(loc)?;
    let corpus = read_corpus(corpus)?;
    let v = corpus
        .video(video)
        .ok_or_else(|| Failure::from(Error::InvalidInput(format!("video {video} not in corpus"))))?;
    let (cas, _) = infer_combo(&state, &v.features, mode)?;
    let tracks: Vec<Vec<f64>> = (0..cas.num_classes())
        .map(|c| (0..cas.len()).map(|t| sigmoid(cas.logits.get(t, c))).collect())
        .collect();
    let mask = match masks {
        Some(p) => read_masks(p)?.into_iter().find(|(id, _)| id == video).map(|(_, m)| m),
        None => None,
    };
    let ss = v.features.snippet_seconds();
    let gts: Vec<(usize, usize, usize)> = v
        .gts
        .iter()
        .map(|g| (g.class_id, (g.start_sec / ss).round() as usize, (g.end_sec / ss).round() as usize))
        .collect();
    let title = format!("{video} ({mode})");
    write_text(out, &render_svg(&title, &tracks, mask.as_ref(), &gts))?;
    Ok(())
}

fn cmd_gradcheck(seed: u64, cases: usize) -> CliResult<()> {
    let results = run_suite(seed, cases)?;
    let mut failed = 0;
    for (i, r) in results.iter().enumerate() {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!(
            "case {i:2} T={} max_rel_err={:.3e} ({}[{}]) {status}",
            r.t_len, r.max_rel_err, r.worst_tensor, r.worst_index
        );
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        return Err(Failure {
            code: EXIT_NUMERIC,
            message: format!("{failed}/{} cases exceed relative error {REL_TOL:e}", results.len()),
        });
    }
    println!("all {} cases within {REL_TOL:e}", results.len());
    Ok(())
}

fn cmd_compare(args: &ConfigArgs, seeds: &[u64]) -> CliResult<()> {
    let cfg = load_config(args, None)?;
    let corpus = generate(&cfg.synth)?;
    let results = run_seeds(&cfg, &corpus.train.videos, &corpus.test.videos, seeds)?;
    println!("| seed | SMEN | single N-branch | no-mining | SMEN slow | single slow | no-mining slow |");
    println!("|------|------|-----------------|-----------|-----------|-------------|----------------|");
    for r in &results {
        println!(
            "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |",
            r.seed, r.smen.all, r.single_branch.all, r.no_mining.all, r.smen.slow, r.single_branch.slow, r.no_mining.slow
        );
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .map_err(|e| usage(format!("--jobs: {e}")))?;
    }
    match &cli.command {
        Command::Synth { cfg, out } => cmd_synth(cfg, out),
        Command::TrainMiner { cfg, corpus, out } => cmd_train_miner(cfg, corpus, out),
        Command::GenMasks { cfg, miner, corpus, out } => cmd_gen_masks(cfg, miner, corpus, out),
        Command::TrainLoc {
            cfg,
            corpus,
            masks,
            out,
            beta,
        } => cmd_train_loc(cfg, corpus, masks, out, *beta),
        Command::Infer {
            cfg,
            loc,
            corpus,
            out,
            mode,
        } => cmd_infer(cfg, loc, corpus, out, *mode),
        Command::Eval {
            props,
            ann,
            slow_only,
            band,
            csv,
        } => cmd_eval(props, ann, *slow_only, *band, csv.as_deref()),
        Command::PlotCas {
            cfg,
            loc,
            corpus,
            video,
            out,
            masks,
            mode,
        } => cmd_plot_cas(cfg, loc, corpus, video, out, masks.as_deref(), *mode),
        Command::Gradcheck { seed, cases } => cmd_gradcheck(*seed, *cases),
        Command::Compare { cfg, seeds } => cmd_compare(cfg, seeds),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
