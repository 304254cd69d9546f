use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand, ValueEnum};
use log::info;

use egoreg::embedding::Sigma;
use egoreg::evaluation::{
    count_inliers_in, embedding_dim_sweep, registration_curve, registration_report_from, roi_scale_sweep,
    synthetic_pipeline, MatchReport, SweepSetup, DEFAULT_DIMS, DEFAULT_ROI_FACTORS, DEFAULT_THRESHOLDS, SYNTH_INLIER_PX,
    SYNTH_VOCAB,
};
use egoreg::io::{self, FrameRecord, KeyValues};
use egoreg::matching::MatchMode;
use egoreg::par::Exec;
use egoreg::registration::{prepare_frames, register_prepared, ImageIndex, PipelineConfig};
use egoreg::sequence::prune_frames;
use egoreg::synth::{synth_scene, SynthConfig};
use egoreg::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_UNREGISTERED: u8 = 3;
const THREADS_ENV: &str = "EGOREG_THREADS";

/// Register egocentric video frames against a sparse 3D model.
#[derive(Parser, Debug)]
#[command(name = "egoreg", version)]
struct Cli {
    /// `key=value` file; keys are long flag names of the subcommand.
    /// Flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a visual-word retrieval index over a model's images.
    BuildIndex {
        model: PathBuf,
        #[arg(long, default_value_t = 1024)]
        vocab_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the indices of frames kept by a linear pruner.
    Prune {
        sequence: PathBuf,
        #[arg(long)]
        pruner: PathBuf,
    },
    /// Match every frame against its shortlisted model images.
    Match {
        sequence: PathBuf,
        model: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[command(flatten)]
        m: MatchArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate a pose for every frame.
    Register {
        sequence: PathBuf,
        model: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[command(flatten)]
        m: MatchArgs,
        /// Inlier threshold in pixels at an 800 px image diagonal.
        #[arg(long, default_value_t = 4.0)]
        reproj_px: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score pose records against the ground truth stored in a sequence.
    Evaluate {
        results: PathBuf,
        ground_truth: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THRESHOLDS)]
        thresholds: Vec<f64>,
        /// Ground-truth reprojection bound for counting inlier matches.
        #[arg(long, default_value_t = SYNTH_INLIER_PX)]
        inlier_px: f64,
        /// Write `matches.txt`, `registration.txt` and `curve.txt` here
        /// instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inlier counts over embedding sizes or context region scales on a
    /// procedural scene.
    Sweep {
        #[arg(value_enum)]
        what: SweepKind,
        #[arg(long, default_value = "day-night-default")]
        preset: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        night: bool,
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long, default_value = "sptemp")]
        mode: String,
    },
    /// Write a procedural scene: model, day and night sequences, index and
    /// matching settings tuned for it.
    Synth {
        #[arg(long, default_value = "day-night-default")]
        preset: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SweepKind {
    Dim,
    Roi,
}

#[derive(Args, Debug)]
struct MatchArgs {
    /// nn, single, sp or sptemp.
    #[arg(long, default_value = "sptemp")]
    mode: String,
    #[arg(long, default_value_t = 60)]
    dim: usize,
    /// Shortlist length.
    #[arg(long, default_value_t = 25)]
    topk: usize,
    #[arg(long, default_value_t = 0.8)]
    ratio: f64,
    #[arg(long, default_value_t = 20)]
    temporal_window: usize,
    /// Strongest keypoints kept per image, 0 for all.
    #[arg(long, default_value_t = 0)]
    max_keypoints: usize,
    /// Factor on the median-heuristic bandwidth of the spatial kernel.
    #[arg(long, default_value_t = 1.0)]
    spatial_sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    roi_scale: f64,
    #[arg(long)]
    pruner: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(Error),
    Unregistered,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::DegenerateInput(m) => Failure::Usage(m.to_string()),
            e => Failure::Data(e),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn exec(cli: &Cli) -> Exec {
    if cli.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    }
}

fn pipeline(m: &MatchArgs, ex: Exec) -> CliResult<PipelineConfig> {
    let mode = MatchMode::parse(&m.mode).ok_or_else(|| Failure::Usage(format!("unknown mode '{}'", m.mode)))?;
    let mut cfg = PipelineConfig { exec: ex, ..PipelineConfig::default() };
    cfg.matching.mode = mode;
    cfg.matching.kernel.embedding_dim = m.dim;
    cfg.matching.kernel.sigma_s = Sigma::Median(m.spatial_sigma);
    cfg.matching.kernel.exec = ex;
    cfg.matching.ratio_threshold = m.ratio;
    cfg.matching.temporal_window = m.temporal_window;
    cfg.shortlist = m.topk;
    cfg.features.detector.max_keypoints = m.max_keypoints;
    cfg.features.context.scale_factor = m.roi_scale;
    cfg.features.context.exec = ex;
    cfg.tracker.exec = ex;
    if let Some(p) = &m.pruner {
        cfg.pruner = Some(io::parse_pruner(&read_text(p)?)?);
    }
    cfg.matching.validate()?;
    Ok(cfg)
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::Data(e.into()))
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Data(e.into())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let ex = exec(cli);
    match &cli.cmd {
        Command::BuildIndex { model, vocab_size, seed, out } => {
            let model = io::load_model(model)?;
            let index = ImageIndex::build(&model, *vocab_size, *seed, ex)?;
            info!("{} words over {} images", index.vocab.k(), index.index.len());
            io::save_index(&index, out)?;
        }
        Command::Prune { sequence, pruner } => {
            let seq = io::load_sequence(sequence)?;
            let pruner = io::parse_pruner(&read_text(pruner)?)?;
            let kept = if seq.frames.is_empty() { Vec::new() } else { prune_frames(&seq.images(), &pruner, ex)? };
            print!("{}", io::format_kept(&kept));
        }
        Command::Match { sequence, model, index, m, out } => {
            let cfg = pipeline(m, ex)?;
            let (seq, model, index) = (io::load_sequence(sequence)?, io::load_model(model)?, io::load_index(index)?);
            let prepared = prepare_frames(&seq, &cfg)?;
            let results = register_prepared(&seq, &prepared, &model, &index, &cfg)?;
            let records: Vec<_> = results
                .iter()
                .flat_map(|r| r.matches.iter().map(move |(img, pairs)| (r.frame_idx, *img, pairs.clone())))
                .collect();
            emit(out.as_deref(), &io::format_match_records(&records))?;
        }
        Command::Register { sequence, model, index, m, reproj_px, seed, out } => {
            let mut cfg = pipeline(m, ex)?;
            cfg.ransac.reproj_threshold = *reproj_px;
            cfg.ransac.seed = *seed;
            let (seq, model, index) = (io::load_sequence(sequence)?, io::load_model(model)?, io::load_index(index)?);
            let prepared = prepare_frames(&seq, &cfg)?;
            let results = register_prepared(&seq, &prepared, &model, &index, &cfg)?;
            let records: Vec<FrameRecord> = results.iter().map(FrameRecord::from_result).collect();
            emit(out.as_deref(), &io::format_frame_records(&records))?;
            let registered = results.iter().filter(|r| r.is_registered()).count();
            eprintln!("registered {registered} of {} frames", results.len());
            if registered == 0 && !results.is_empty() {
                return Err(Failure::Unregistered);
            }
        }
        Command::Evaluate { results, ground_truth, thresholds, inlier_px, out } => {
            let records = io::parse_frame_records(&read_text(results)?)?;
            let seq = io::load_sequence(ground_truth)?;
            if let Some(r) = records.iter().find(|r| r.frame_idx >= seq.frames.len()) {
                return Err(Failure::Data(Error::ShapeMismatch(format!("frame {} not in ground truth", r.frame_idx))));
            }
            let corrs: Vec<_> = records.iter().map(|r| (r.frame_idx, r.correspondences.as_slice())).collect();
            let matches = count_inliers_in(&corrs, &seq, *inlier_px);
            let poses: Vec<_> = records.iter().map(|r| (r.frame_idx, r.pose)).collect();
            let report = registration_report_from(&poses, &seq);
            let mut sorted = thresholds.clone();
            sorted.sort_by(f64::total_cmp);
            let curve = registration_curve(&report, &sorted);
            let tables = [
                ("matches.txt", io::format_match_report(&matches)),
                ("registration.txt", io::format_registration_report(&report)),
                ("curve.txt", io::format_curve(&curve)),
            ];
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(dir).map_err(|e| Failure::Data(e.into()))?;
                    for (name, text) in &tables {
                        emit(Some(&dir.join(name)), text)?;
                    }
                }
                None => {
                    for (name, text) in &tables {
                        println!("## {}", name.trim_end_matches(".txt"));
                        print!("{text}");
                    }
                }
            }
        }
        Command::Sweep { what, preset, seed, night, values, mode } => {
            let cfg = SynthConfig::preset(preset, *seed).ok_or_else(|| Failure::Usage(format!("unknown preset '{preset}'")))?;
            let scene = synth_scene(&cfg)?;
            let mut setup = SweepSetup::synthetic(&scene, *night);
            setup.pipeline.matching.mode =
                MatchMode::parse(mode).ok_or_else(|| Failure::Usage(format!("unknown mode '{mode}'")))?;
            set_exec(&mut setup.pipeline, ex);
            let rows: Vec<(String, MatchReport)> = match what {
                SweepKind::Dim => {
                    let dims: Vec<usize> = if values.is_empty() {
                        DEFAULT_DIMS.to_vec()
                    } else {
                        values.iter().map(|&v| v as usize).collect()
                    };
                    embedding_dim_sweep(&setup, &dims)?.into_iter().map(|(d, r)| (d.to_string(), r)).collect()
                }
                SweepKind::Roi => {
                    let f = if values.is_empty() { DEFAULT_ROI_FACTORS.to_vec() } else { values.clone() };
                    roi_scale_sweep(&setup, &f)?.into_iter().map(|(f, r)| (f.to_string(), r)).collect()
                }
            };
            let label = match what {
                SweepKind::Dim => "dim",
                SweepKind::Roi => "roi_factor",
            };
            println!("# {label} mean_inliers mean_matches mean_ratio");
            for (v, r) in rows {
                println!("{v} {:.3} {:.3} {:.4}", r.mean_inliers, r.mean_matches, r.mean_ratio);
            }
        }
        Command::Synth { preset, seed, out } => {
            let cfg = SynthConfig::preset(preset, *seed).ok_or_else(|| Failure::Usage(format!("unknown preset '{preset}'")))?;
            let scene = synth_scene(&cfg)?;
            let mut tuned = synthetic_pipeline(*seed);
            set_exec(&mut tuned, ex);
            let model = scene.build_model(&tuned.features, ex)?;
            let index = ImageIndex::build(&model, SYNTH_VOCAB, 0, ex)?;
            std::fs::create_dir_all(out).map_err(|e| Failure::Data(e.into()))?;
            io::save_model(&model, out.join("model.emrg"))?;
            io::save_index(&index, out.join("index.emix"))?;
            io::save_sequence(&scene.day, out.join("day.emsq"))?;
            io::save_sequence(&scene.night, out.join("night.emsq"))?;
            let settings = format!(
                "# matching settings for this scene\ntopk={}\nmax-keypoints={}\nspatial-sigma=0.1\nseed={seed}\n",
                tuned.shortlist, tuned.features.detector.max_keypoints
            );
            std::fs::write(out.join("settings.cfg"), settings).map_err(|e| Failure::Data(e.into()))?;
            eprintln!("wrote scene with {} points and {} model images to {}", model.points().len(), model.images().len(), out.display());
        }
    }
    Ok(())
}

fn set_exec(cfg: &mut PipelineConfig, ex: Exec) {
    cfg.exec = ex;
    cfg.matching.kernel.exec = ex;
    cfg.features.context.exec = ex;
    cfg.tracker.exec = ex;
}

/// Insert `--key value` for config entries the subcommand accepts and the
/// command line does not already set.
fn merge_config(args: Vec<String>) -> CliResult<Vec<String>> {
    let Some(pos) = args.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(args);
    };
    let path = match args[pos].strip_prefix("--config=") {
        Some(p) => p.to_string(),
        None => args.get(pos + 1).cloned().ok_or_else(|| Failure::Usage("--config needs a file".into()))?,
    };
    let kv = KeyValues::parse(&read_text(Path::new(&path))?)?;
    let cmd = Cli::command();
    let Some(sub) = args.iter().skip(1).find_map(|a| cmd.find_subcommand(a)) else {
        return Ok(args);
    };
    let sub_name = sub.get_name().to_string();
    let mut extra = Vec::new();
    for (key, value) in &kv.entries {
        let Some(arg) = sub.get_arguments().find(|a| a.get_long() == Some(key.as_str())) else {
            if cmd.get_subcommands().any(|s| s.get_arguments().any(|a| a.get_long() == Some(key.as_str()))) {
                continue;
            }
            return Err(Failure::Usage(format!("unknown config key '{key}'")));
        };
        let flag = format!("--{key}");
        if args.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}="))) {
            continue;
        }
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value.as_str() {
                "true" | "1" | "yes" => extra.push(flag),
                "false" | "0" | "no" => {}
                _ => return Err(Failure::Usage(format!("config key '{key}' expects a boolean"))),
            }
        } else {
            extra.push(format!("{flag}={value}"));
        }
    }
    let at = args.iter().position(|a| *a == sub_name).expect("subcommand present") + 1;
    let mut merged = args;
    merged.splice(at..at, extra);
    Ok(merged)
}

fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| Failure::Usage(format!("{THREADS_ENV} must be a positive integer")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let outcome = (|| {
        init_threads()?;
        let args = merge_config(std::env::args().collect())?;
        let cli = match Cli::try_parse_from(args) {
            Ok(c) => c,
            Err(e) if !e.use_stderr() => {
                let _ = e.print();
                return Ok(());
            }
            Err(e) => return Err(Failure::Usage(e.render().to_string())),
        };
        run(&cli)
    })();
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("{}", msg.trim_end());
            if !msg.contains("Usage:") {
                eprintln!("{}", Cli::command().render_usage());
            }
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_DATA)
        }
        Err(Failure::Unregistered) => {
            eprintln!("error: no frame could be registered");
            ExitCode::from(EXIT_UNREGISTERED)
        }
    }
}
