use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fanet::config::RunConfig;
use fanet::data::{generate_dataset, load_dataset, save_dataset, Bucket, Image};
use fanet::eval::{evaluate_ap, write_pr_curve, IOU_THRESHOLD};
use fanet::inference::{detect_batch, draw_detections, multiscale_detect, write_detections};
use fanet::model::Detector;
use fanet::trainer::{
    ablation_config, ablation_data, ablation_suite, train, Preset, TrainOptions, PRESETS,
};
use fanet::{gradsuite, FanetError};

const CONFIG_FILE: &str = "config.toml";
const CHECKPOINT_FILE: &str = "model.ckpt";
const RUN_LOG_FILE: &str = "runlog.jsonl";

/// Feature-agglomeration face detector.
#[derive(Parser)]
#[command(name = "fanet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration (TOML). Built-in defaults when absent.
    #[arg(long, env = "FANET_CONFIG")]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic face dataset.
    GenData {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (images/ and annotations.txt).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Train a detector and write model.ckpt, config.toml and runlog.jsonl.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Training dataset directory.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset evaluated after every `--eval-every` epochs.
        #[arg(long)]
        eval_data: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        eval_every: usize,
        /// Include wall-clock seconds in the run log.
        #[arg(long, default_value_t = false)]
        timing: bool,
    },
    /// Average precision of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to config.toml next to the checkpoint.
        #[arg(long, env = "FANET_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "all", value_parser = ["easy", "medium", "hard", "all"])]
        bucket: String,
        /// Write the precision/recall curve of the chosen bucket here.
        #[arg(long)]
        pr_curve: Option<PathBuf>,
    },
    /// Detect faces in a PNG image.
    Detect {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to config.toml next to the checkpoint.
        #[arg(long, env = "FANET_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long)]
        image: PathBuf,
        /// Comma-separated shorter-side sizes; overrides `inference.scales`.
        /// `native` runs once on the image as is (square, multiple of 128).
        #[arg(long)]
        scales: Option<String>,
        /// Detection list, one `id xmin ymin xmax ymax score` line each. Stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the image with boxes drawn.
        #[arg(long)]
        draw: Option<PathBuf>,
    },
    /// Finite-difference checks of every op and block.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and evaluate the ablation presets over several seeds.
    Ablate {
        /// Directory with train/ and eval/ datasets. Generated when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Receives ablation.txt and ablation.json.
        #[arg(long)]
        out: PathBuf,
        /// Base configuration. The reduced ablation config when absent.
        #[arg(long, env = "FANET_CONFIG")]
        config: Option<PathBuf>,
        /// Comma-separated preset names; all six when absent.
        #[arg(long)]
        presets: Option<String>,
        #[arg(long, default_value = "0,1,2")]
        seeds: String,
    },
    /// Parameter counts of the configured model and every preset.
    Params {
        #[command(flatten)]
        config: ConfigArg,
    },
}

fn load_config(path: Option<&Path>) -> fanet::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn checkpoint_config(checkpoint: &Path, config: Option<&Path>) -> fanet::Result<RunConfig> {
    if let Some(p) = config {
        return RunConfig::load(p);
    }
    let sibling = checkpoint.with_file_name(CONFIG_FILE);
    if sibling.exists() {
        RunConfig::load(sibling)
    } else {
        Ok(RunConfig::default())
    }
}

fn parse_list<T: std::str::FromStr>(flag: &str, text: &str) -> fanet::Result<Vec<T>> {
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| FanetError::config(flag, format!("cannot parse `{s}`"))))
        .collect()
}

/// `Ok(false)` when the command ran but its check failed.
fn run(cli: Cli) -> fanet::Result<bool> {
    match cli.command {
        Command::GenData { seed, out, count, config } => {
            let cfg = load_config(config.config.as_deref())?;
            save_dataset(&out, &generate_dataset(seed, count, &cfg.data))?;
            println!("wrote {count} images to {}", out.display());
        }
        Command::Train { config, data, out, seed, eval_data, eval_every, timing } => {
            let mut cfg = load_config(config.config.as_deref())?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cfg.validate()?;
            let (_, samples) = load_dataset(&data)?;
            let eval_set = eval_data.map(load_dataset).transpose()?.map(|(_, s)| s);
            let opts = TrainOptions {
                checkpoint_dir: Some(out.clone()),
                eval_set: eval_set.as_deref(),
                eval_every,
                verbose: true,
            };
            let (model, log) = train(&cfg, &samples, &opts)?;
            model.save(out.join(CHECKPOINT_FILE))?;
            fs::write(out.join(CONFIG_FILE), cfg.to_toml_string())?;
            fs::write(out.join(RUN_LOG_FILE), log.to_jsonl(timing))?;
            println!("wrote {}", out.join(CHECKPOINT_FILE).display());
        }
        Command::Eval { checkpoint, config, data, bucket, pr_curve } => {
            let cfg = checkpoint_config(&checkpoint, config.as_deref())?;
            let bucket: Option<Bucket> = match bucket.as_str() {
                "all" => None,
                b => Some(b.parse().expect("clap restricts the bucket names")),
            };
            let model = Detector::<f32>::load(&cfg, &checkpoint)?;
            let (_, samples) = load_dataset(&data)?;
            let size = cfg.backbone.input_size;
            let mut dets = Vec::with_capacity(samples.len());
            let mut gts = Vec::with_capacity(samples.len());
            for s in &samples {
                let resized = s.image.resize(size, size);
                dets.extend(detect_batch(&model, &[&resized], &cfg.inference)?);
                let (sx, sy) = (size as f32 / s.image.width as f32, size as f32 / s.image.height as f32);
                gts.push(s.faces.iter().map(|f| f.scaled(sx, sy)).collect::<Vec<_>>());
            }
            let curve = evaluate_ap(&dets, &gts, IOU_THRESHOLD, bucket, &cfg.data);
            let name = bucket.map_or("all", Bucket::name);
            match &curve {
                Some(c) => println!("{name} AP {:.4}", c.ap),
                None => println!("{name} AP - (no ground truth)"),
            }
            if let (Some(path), Some(c)) = (pr_curve, &curve) {
                write_pr_curve(&mut BufWriter::new(File::create(path)?), c)?;
            }
        }
        Command::Detect { checkpoint, config, image, scales, out, draw } => {
            let mut cfg = checkpoint_config(&checkpoint, config.as_deref())?;
            let model = Detector::<f32>::load(&cfg, &checkpoint)?;
            let img = Image::load_png(&image)?;
            let dets = match scales.as_deref() {
                Some("native") => detect_batch(&model, &[&img], &cfg.inference)?.remove(0),
                Some(list) => {
                    cfg.inference.scales = parse_list("--scales", list)?;
                    cfg.validate()?;
                    multiscale_detect(&model, &img, &cfg.inference.scales, &cfg.inference)?
                }
                None => multiscale_detect(&model, &img, &cfg.inference.scales, &cfg.inference)?,
            };
            let id = image.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
            match out {
                Some(path) => {
                    let mut w = BufWriter::new(File::create(path)?);
                    write_detections(&mut w, &id, &dets)?;
                    w.flush()?;
                }
                None => write_detections(&mut std::io::stdout().lock(), &id, &dets)?,
            }
            if let Some(path) = draw {
                draw_detections(&img, &dets).save_png(path)?;
            }
        }
        Command::Gradcheck { seed } => {
            let cases = gradsuite::run(seed)?;
            let mut failed = 0;
            for c in &cases {
                let status = if c.passes() { "ok" } else { "FAIL" };
                failed += usize::from(!c.passes());
                println!(
                    "{:<32} max_rel_error {:.3e} checked {:>4} skipped {:>3} {status}",
                    c.name, c.report.max_rel_error, c.report.checked, c.report.skipped
                );
            }
            if failed > 0 {
                eprintln!("error: {failed} of {} gradient checks failed", cases.len());
                return Ok(false);
            }
        }
        Command::Ablate { data, out, config, presets, seeds } => {
            let base = match config {
                Some(p) => RunConfig::load(p)?,
                None => ablation_config(),
            };
            let presets: Vec<Preset> = match presets {
                Some(list) => list
                    .split(',')
                    .map(|n| Preset::by_name(n.trim()).copied())
                    .collect::<fanet::Result<_>>()?,
                None => PRESETS.to_vec(),
            };
            let seeds: Vec<u64> = parse_list("--seeds", &seeds)?;
            let (train_set, eval_set) = match data {
                Some(dir) => (load_dataset(dir.join("train"))?.1, load_dataset(dir.join("eval"))?.1),
                None => ablation_data(&base),
            };
            let table = ablation_suite(&base, &presets, &seeds, &train_set, &eval_set, true)?;
            fs::create_dir_all(&out)?;
            let text = table.to_text();
            fs::write(out.join("ablation.txt"), &text)?;
            let json = serde_json::to_string_pretty(&table).expect("table serialises");
            fs::write(out.join("ablation.json"), json)?;
            print!("{text}");
        }
        Command::Params { config } => {
            let cfg = load_config(config.config.as_deref())?;
            let report = Detector::<f32>::new(&cfg, 0)?.param_report();
            println!("{report}");
            println!();
            let base = Detector::<f32>::new(&PRESETS[0].apply(&cfg), 0)?.param_report().inference();
            println!("{:<20} {:>10} {:>8}", "preset", "inference", "ratio");
            for p in &PRESETS {
                let n = Detector::<f32>::new(&p.apply(&cfg), 0)?.param_report().inference();
                println!("{:<20} {:>10} {:>8.3}", p.name, n, n as f64 / base as f64);
            }
        }
    }
    Ok(true)
}

fn exit_code(e: &FanetError) -> u8 {
    match e {
        FanetError::Config { .. } | FanetError::ConfigParse(_) | FanetError::UnknownStrategy { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
