//! Training loop, run log and the ablation presets.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use fanet_tensor::{sgd_step, SgdConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchors::{generate_anchors, match_anchors, AnchorSet, BoxCoder, MatchAssignment};
use crate::config::{LrPhase, RunConfig};
use crate::data::{augment, batch_tensor, generate_dataset, Image, Sample};
use crate::eval::{evaluate_buckets, BucketAp};
use crate::inference::detect_batch;
use crate::loss::{hierarchical_loss, multibox_loss, LossReport};
use crate::model::{Detector, HeadLevels};
use crate::{FanetError, Result};

const EVAL_BATCH: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    /// Mean training objective over the epoch's steps.
    pub loss: f64,
    /// Mean per-level multibox loss (lowest level first).
    pub level_losses: Vec<f64>,
    pub positives: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<BucketAp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
}

/// Append-only per-epoch records, serialised as JSON lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<EpochRecord>,
}

impl RunLog {
    /// JSON lines; with `timing == false` wall-clock fields are left out so
    /// runs with the same seed serialise identically.
    pub fn to_jsonl(&self, timing: bool) -> String {
        let mut out = String::new();
        for r in &self.records {
            let mut r = r.clone();
            if !timing {
                r.wall_seconds = None;
            }
            out.push_str(&serde_json::to_string(&r).expect("records serialise"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<RunLog> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| FanetError::Parse {
                    path: "run log".into(),
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(RunLog { records })
    }
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Save `phaseN.ckpt` here at the end of each schedule phase.
    pub checkpoint_dir: Option<PathBuf>,
    /// Evaluate after every `eval_every` epochs (and after the last one).
    pub eval_set: Option<&'a [Sample]>,
    pub eval_every: usize,
    /// Print one line per epoch to stderr.
    pub verbose: bool,
}

/// Per-image anchor assignment for a batch.
pub fn assign_batch(samples: &[Sample], anchors: &AnchorSet, config: &RunConfig) -> Vec<MatchAssignment> {
    let coder = BoxCoder::from_config(&config.anchors);
    samples
        .iter()
        .map(|s| match_anchors(anchors, &s.faces, config.anchors.match_threshold, &coder))
        .collect()
}

/// One SGD step on an already augmented batch.
pub fn train_step(model: &mut Detector, batch: &[Sample], anchors: &AnchorSet, lr: f64, step: usize) -> Result<LossReport> {
    let config = model.config().clone();
    let images: Vec<&Image> = batch.iter().map(|s| &s.image).collect();
    let x = batch_tensor::<f32>(&images)?;
    let assigns = assign_batch(batch, anchors, &config);
    let hl = config.train.use_hl && model.levels() > 1;
    let out = model.forward(&x, if hl { HeadLevels::All } else { HeadLevels::Top })?;
    let (loss, report) = if hl {
        let levels: Vec<_> = out.predictions.iter().flatten().collect();
        hierarchical_loss(&levels, &assigns, &config.level_weights()?, &config.loss)?
    } else {
        let (loss, stats) = multibox_loss(out.top(), &assigns, &config.loss)?;
        let report = LossReport {
            total: stats.total,
            weights: vec![1.0],
            per_level: vec![stats],
        };
        (loss, report)
    };
    if !report.total.is_finite() {
        return Err(FanetError::Divergence {
            step,
            value: report.total,
        });
    }
    model.params().zero_grads();
    loss.backward()?;
    drop(out);
    let sgd = SgdConfig {
        lr,
        momentum: config.train.momentum,
        weight_decay: config.train.weight_decay,
    };
    sgd_step(model.params_mut().params_mut(), sgd)?;
    Ok(report)
}

/// Single-scale detection over `samples` at the model's input size.
pub fn evaluate_model(model: &Detector, samples: &[Sample]) -> Result<BucketAp> {
    let size = model.config().backbone.input_size;
    let mut dets = Vec::with_capacity(samples.len());
    let mut gts = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let resized: Vec<Image> = chunk.iter().map(|s| s.image.resize(size, size)).collect();
        let refs: Vec<&Image> = resized.iter().collect();
        dets.extend(detect_batch(model, &refs, &model.config().inference)?);
        for s in chunk {
            let (sx, sy) = (size as f32 / s.image.width as f32, size as f32 / s.image.height as f32);
            gts.push(s.faces.iter().map(|f| f.scaled(sx, sy)).collect::<Vec<_>>());
        }
    }
    Ok(evaluate_buckets(&dets, &gts, &model.config().data))
}

/// Train a fresh model (initialised from `config.train.seed`) on `samples`.
pub fn train(config: &RunConfig, samples: &[Sample], opts: &TrainOptions) -> Result<(Detector, RunLog)> {
    let mut model = Detector::<f32>::new(config, config.train.seed)?;
    let log = train_model(&mut model, samples, opts)?;
    Ok((model, log))
}

pub fn train_model(model: &mut Detector, samples: &[Sample], opts: &TrainOptions) -> Result<RunLog> {
    if samples.is_empty() {
        return Err(FanetError::config("data", "training set is empty"));
    }
    let config = model.config().clone();
    let tc = &config.train;
    let size = config.backbone.input_size;
    let anchors = generate_anchors(size, &config.anchors.scales)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    rng.set_stream(1);
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = RunLog::default();
    let mut step = 0;
    let mut epoch = 0;
    let total = tc.total_epochs();
    for (phase, p) in tc.schedule.iter().enumerate() {
        for _ in 0..p.epochs {
            let start = Instant::now();
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            let mut levels: Vec<f64> = Vec::new();
            let mut positives = 0;
            let mut steps = 0;
            for idx in order.chunks(tc.batch_size) {
                let batch: Vec<Sample> = idx.iter().map(|&i| augment(&samples[i], &tc.augment, size, &mut rng)).collect();
                let warm = if step < tc.warmup_steps { (step + 1) as f64 / tc.warmup_steps as f64 } else { 1.0 };
                let report = train_step(model, &batch, &anchors, p.lr * warm, step)?;
                step += 1;
                steps += 1;
                sum += report.total;
                levels.resize(report.per_level.len(), 0.0);
                for (acc, l) in levels.iter_mut().zip(&report.per_level) {
                    *acc += l.total;
                }
                positives += report.per_level.last().map_or(0, |l| l.positives);
            }
            epoch += 1;
            let eval = match opts.eval_set {
                Some(set) if epoch == total || (opts.eval_every > 0 && epoch % opts.eval_every == 0) => {
                    Some(evaluate_model(model, set)?)
                }
                _ => None,
            };
            let record = EpochRecord {
                epoch,
                lr: p.lr,
                steps,
                loss: sum / steps as f64,
                level_losses: levels.iter().map(|v| v / steps as f64).collect(),
                positives,
                eval,
                wall_seconds: Some(start.elapsed().as_secs_f64()),
            };
            if opts.verbose {
                eprintln!(
                    "epoch {epoch}/{total} lr {:.2e} loss {:.4} ({:.1}s)",
                    p.lr,
                    record.loss,
                    start.elapsed().as_secs_f64()
                );
            }
            log.records.push(record);
        }
        if let Some(dir) = &opts.checkpoint_dir {
            model.save(dir.join(format!("phase{}.ckpt", phase + 1)))?;
        }
    }
    Ok(log)
}

/// A column of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Preset {
    pub name: &'static str,
    pub levels: usize,
    pub use_hl: bool,
    pub use_context: bool,
}

pub const PRESETS: [Preset; 6] = [
    Preset { name: "1-level", levels: 1, use_hl: false, use_context: false },
    Preset { name: "2-level", levels: 2, use_hl: false, use_context: false },
    Preset { name: "2-level+hl", levels: 2, use_hl: true, use_context: false },
    Preset { name: "3-level", levels: 3, use_hl: false, use_context: false },
    Preset { name: "3-level+hl", levels: 3, use_hl: true, use_context: false },
    Preset { name: "3-level+hl+context", levels: 3, use_hl: true, use_context: true },
];

impl Preset {
    pub fn by_name(name: &str) -> Result<&'static Preset> {
        PRESETS.iter().find(|p| p.name == name).ok_or_else(|| FanetError::UnknownStrategy {
            kind: "preset",
            name: name.to_string(),
            known: PRESETS.iter().map(|p| p.name).collect::<Vec<_>>().join(", "),
        })
    }

    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        c.hierarchy.neck = "fanet".into();
        c.hierarchy.levels = self.levels;
        c.train.use_hl = self.use_hl;
        c.ablock.use_context = self.use_context;
        c
    }
}

/// Images in the generated ablation train and eval sets.
pub const ABLATION_TRAIN_IMAGES: usize = 2000;
pub const ABLATION_EVAL_IMAGES: usize = 500;
/// Dataset seeds of the generated ablation train and eval sets.
pub const ABLATION_DATA_SEEDS: (u64, u64) = (1, 2);
pub const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];

/// Reduced configuration the ablation suite trains: 128 px inputs, half
/// the default widths and a 9 epoch schedule.
pub fn ablation_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.backbone.input_size = 128;
    c.backbone.stem_channels = 8;
    c.backbone.stage_channels = vec![16, 32, 64, 64, 64, 64];
    c.ablock.context_channels = 32;
    c.data.image_size = 128;
    c.data.max_face = 96.0;
    let lr = 6e-3;
    c.train.schedule = vec![LrPhase { epochs: 8, lr }, LrPhase { epochs: 1, lr: lr / 10.0 }];
    c.train.warmup_steps = 300;
    c
}

/// The generated `(train, eval)` sets used by [`ablation_config`].
pub fn ablation_data(config: &RunConfig) -> (Vec<Sample>, Vec<Sample>) {
    let (a, b) = ABLATION_DATA_SEEDS;
    (
        generate_dataset(a, ABLATION_TRAIN_IMAGES, &config.data),
        generate_dataset(b, ABLATION_EVAL_IMAGES, &config.data),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub preset: String,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<BucketAp>,
    pub median: BucketAp,
    pub inference_params: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

fn median(values: &[Option<f64>]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

impl AblationTable {
    pub fn row(&self, preset: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.preset == preset)
    }

    pub fn to_text(&self) -> String {
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        let width = self.rows.iter().map(|r| r.preset.len()).max().unwrap_or(6).max(6);
        let mut s = format!("{:<width$}  {:>8}  {:>8}  {:>8}  {:>10}\n", "preset", "easy", "medium", "hard", "params");
        for r in &self.rows {
            let m = &r.median;
            let _ = writeln!(
                s,
                "{:<width$}  {:>8}  {:>8}  {:>8}  {:>10}",
                r.preset,
                cell(m.easy),
                cell(m.medium),
                cell(m.hard),
                r.inference_params
            );
        }
        s
    }
}

/// Train and evaluate every preset for every seed; cells are medians over
/// seeds.
pub fn ablation_suite(
    base: &RunConfig,
    presets: &[Preset],
    seeds: &[u64],
    train_set: &[Sample],
    eval_set: &[Sample],
    verbose: bool,
) -> Result<AblationTable> {
    let mut table = AblationTable::default();
    for preset in presets {
        let mut per_seed = Vec::with_capacity(seeds.len());
        let mut params = 0;
        for &seed in seeds {
            let mut cfg = preset.apply(base);
            cfg.train.seed = seed;
            let start = Instant::now();
            let (model, _) = train(&cfg, train_set, &TrainOptions::default())?;
            let ap = evaluate_model(&model, eval_set)?;
            params = model.param_report().inference();
            if verbose {
                eprintln!(
                    "{} seed {seed}: hard {:?} medium {:?} easy {:?} ({:.0}s)",
                    preset.name,
                    ap.hard,
                    ap.medium,
                    ap.easy,
                    start.elapsed().as_secs_f64()
                );
            }
            per_seed.push(ap);
        }
        let pick = |f: fn(&BucketAp) -> Option<f64>| median(&per_seed.iter().map(f).collect::<Vec<_>>());
        let median = BucketAp {
            easy: pick(|a| a.easy),
            medium: pick(|a| a.medium),
            hard: pick(|a| a.hard),
            all: pick(|a| a.all),
        };
        table.rows.push(AblationRow {
            preset: preset.name.to_string(),
            seeds: seeds.to_vec(),
            per_seed,
            median,
            inference_params: params,
        });
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_options() {
        assert_eq!(median(&[Some(3.0), Some(1.0), Some(2.0)]), Some(2.0));
        assert_eq!(median(&[Some(3.0), None, Some(1.0)]), Some(2.0));
        assert_eq!(median(&[None]), None);
    }

    #[test]
    fn presets_resolve() {
        assert_eq!(PRESETS.len(), 6);
        let p = Preset::by_name("3-level+hl+context").unwrap();
        let c = p.apply(&RunConfig::default());
        assert!(c.train.use_hl && c.ablock.use_context && c.hierarchy.levels == 3);
        assert!(Preset::by_name("4-level").is_err());
    }

    #[test]
    fn run_log_round_trip_without_timing() {
        let log = RunLog {
            records: vec![EpochRecord {
                epoch: 1,
                lr: 0.1,
                steps: 2,
                loss: 1.25,
                level_losses: vec![1.0, 0.25],
                positives: 9,
                eval: None,
                wall_seconds: Some(3.0),
            }],
        };
        let text = log.to_jsonl(false);
        assert!(!text.contains("wall"));
        let back = RunLog::from_jsonl(&text).unwrap();
        assert_eq!(back.records[0].wall_seconds, None);
        assert_eq!(back.to_jsonl(false), text);
        assert!(log.to_jsonl(true).contains("wall_seconds"));
    }
}
