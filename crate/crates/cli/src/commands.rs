use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use anyhow::{bail, Context, Result};
use pqi_core::augment::{sweep, SweepSample};
use pqi_core::detection::{filter_detections, load_detections, DetectionFile, DetectionSet};
use pqi_core::metrics::{evaluate, PairedScores};
use pqi_core::pqi::{distribution_of, DistributionOptions, StdKind};
use pqi_core::{score_frame, RgbImage, SaliencyParams};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use spanet::checkpoint::{load_checkpoint, save_checkpoint};
use spanet::preprocess::{prepare_input, SuperpixelOptions};
use spanet::train::predict_all;
use spanet::{Sample, SpaNetConfig, SpaNetModel, TrainConfig};

use crate::cli::{
    Common, EvalArgs, PredictArgs, Preset, SaliencyArgs, ScoreArgs, StatsArgs, StdChoice,
    SweepArgs, TrainArgs,
};
use crate::plot::line_chart;
use crate::table::{list_images, read_values, Csv};
use crate::UsageError;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Creates the output directory, writes `run_config.txt` and runs `f` on
/// a pool of the requested size.
fn run_in<T: Send>(
    common: &Common,
    settings: Vec<(&str, String)>,
    f: impl FnOnce() -> Result<T> + Send,
) -> Result<T> {
    let threads = match common.threads {
        Some(0) => return Err(usage("--threads must be at least 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    std::fs::create_dir_all(&common.out)
        .with_context(|| format!("cannot create {}", common.out.display()))?;
    let mut echo = String::new();
    for (k, v) in settings {
        echo.push_str(&format!("{k}={v}\n"));
    }
    let path = common.out.join("run_config.txt");
    std::fs::write(&path, echo).with_context(|| format!("cannot write {}", path.display()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()?;
    pool.install(f)
}

fn join_f64(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn saliency_params(a: &SaliencyArgs) -> Result<SaliencyParams> {
    if !(0.0..=1.0).contains(&a.conf_threshold) {
        return Err(usage("--conf-threshold must be in [0, 1]"));
    }
    SaliencyParams::new(a.sigma, a.scales.clone()).map_err(|e| usage(e.to_string()))
}

fn saliency_settings(a: &SaliencyArgs) -> Vec<(&'static str, String)> {
    vec![
        ("sigma", a.sigma.to_string()),
        (
            "scales",
            a.scales
                .iter()
                .map(u32::to_string)
                .collect::<Vec<_>>()
                .join(","),
        ),
        ("conf-threshold", a.conf_threshold.to_string()),
    ]
}

/// Warnings collected while matching images with their detections.
struct Warnings(Vec<String>);

impl Warnings {
    fn push(&mut self, msg: String) {
        eprintln!("warning: {msg}");
        self.0.push(msg);
    }

    fn finish(&self) {
        eprintln!("{} warning(s)", self.0.len());
    }
}

fn load_dets(path: &Path, warnings: &mut Warnings) -> Result<DetectionFile> {
    let file = load_detections(path)?;
    if file.warnings > 0 {
        warnings.push(format!(
            "{} malformed detection record(s) skipped in {}",
            file.warnings,
            path.display()
        ));
    }
    Ok(file)
}

fn report_unmatched(dets: &DetectionFile, ids: &BTreeSet<&str>, warnings: &mut Warnings) {
    for id in dets.sets.keys().filter(|k| !ids.contains(k.as_str())) {
        warnings.push(format!("detections for `{id}` have no image"));
    }
}

pub fn score(a: ScoreArgs) -> Result<()> {
    let params = saliency_params(&a.saliency)?;
    let mut settings = vec![
        ("images", a.images.display().to_string()),
        ("detections", a.detections.display().to_string()),
        ("save-maps", a.save_maps.to_string()),
    ];
    settings.extend(saliency_settings(&a.saliency));
    let out = a.common.out.clone();
    run_in(&a.common, settings, || {
        let mut warnings = Warnings(Vec::new());
        let images = list_images(&a.images)?;
        if images.is_empty() {
            warnings.push(format!("no images in {}", a.images.display()));
        }
        let dets = load_dets(&a.detections, &mut warnings)?;
        report_unmatched(
            &dets,
            &images.iter().map(|(id, _)| id.as_str()).collect(),
            &mut warnings,
        );
        if a.save_maps {
            std::fs::create_dir_all(out.join("maps"))?;
        }

        let rows: Vec<(String, f64, usize, Vec<&str>)> = images
            .par_iter()
            .map(|(id, path)| {
                let img = RgbImage::open(path)?;
                let mut tags = Vec::new();
                let ds = match dets.sets.get(id) {
                    Some(ds) => filter_detections(ds, a.saliency.conf_threshold),
                    None => {
                        tags.push("no_detections");
                        DetectionSet::empty(id.as_str())
                    }
                };
                let (sm, s) = score_frame(&img, &ds, &params)?;
                if a.save_maps {
                    sm.save_png(out.join("maps").join(format!("{id}.png")))?;
                    let raw = out.join("maps").join(format!("{id}.smap"));
                    let f = std::fs::File::create(&raw)
                        .with_context(|| format!("cannot create {}", raw.display()))?;
                    sm.write_raw(std::io::BufWriter::new(f))?;
                }
                Ok((id.clone(), s.value, s.k_used, tags))
            })
            .collect::<Result<_>>()?;

        let mut csv = Csv::new(&["image_id", "pqi", "k_used", "warnings"]);
        for (id, v, k, tags) in &rows {
            if !tags.is_empty() {
                warnings.push(format!("`{id}`: {}", tags.join(";")));
            }
            csv.row(&[id.clone(), format!("{v:.6}"), k.to_string(), tags.join(";")]);
        }
        csv.write(&out.join("scores.csv"))?;
        warnings.finish();
        Ok(())
    })
}

pub fn sweep_cmd(a: SweepArgs) -> Result<()> {
    let params = saliency_params(&a.saliency)?;
    if a.levels.is_empty() {
        return Err(usage("--levels is empty"));
    }
    if a.levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
        return Err(usage("levels must lie in [0, 1]"));
    }
    if a.levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(usage("levels must be strictly increasing"));
    }
    let mut settings = vec![
        ("images", a.images.display().to_string()),
        ("detections", a.detections.display().to_string()),
        ("kind", a.kind.to_string()),
        ("levels", join_f64(&a.levels)),
    ];
    settings.extend(saliency_settings(&a.saliency));
    run_in(&a.common, settings, || {
        let mut warnings = Warnings(Vec::new());
        let images = list_images(&a.images)?;
        let dets = load_dets(&a.detections, &mut warnings)?;
        report_unmatched(
            &dets,
            &images.iter().map(|(id, _)| id.as_str()).collect(),
            &mut warnings,
        );
        let samples: Vec<SweepSample> = images
            .par_iter()
            .map(|(id, path)| {
                let image = RgbImage::open(path)?;
                let detections = dets
                    .sets
                    .get(id)
                    .map(|ds| filter_detections(ds, a.saliency.conf_threshold))
                    .unwrap_or_else(|| DetectionSet::empty(id.as_str()));
                Ok(SweepSample { image, detections })
            })
            .collect::<Result<_>>()?;
        for (id, _) in images.iter().filter(|(id, _)| !dets.sets.contains_key(id)) {
            warnings.push(format!("`{id}`: no_detections"));
        }
        let r = sweep(&samples, a.kind, &a.levels, &params)?;
        if r.excluded > 0 {
            warnings.push(format!(
                "{} (image, level) pair(s) could not be scored",
                r.excluded
            ));
        }

        let mut csv = Csv::new(&["kind", "level", "mean_pqi", "n_images"]);
        for ((l, m), n) in r.levels.iter().zip(&r.mean_pqi).zip(&r.n_images) {
            csv.row(&[
                a.kind.to_string(),
                l.to_string(),
                format!("{m:.6}"),
                n.to_string(),
            ]);
        }
        csv.write(&a.common.out.join(format!("sweep_{}.csv", a.kind)))?;
        let svg = line_chart(
            &format!("Mean PQI under {}", a.kind),
            &format!("{} level", a.kind),
            "mean PQI",
            &r.levels,
            &r.mean_pqi,
        );
        let svg_path = a.common.out.join(format!("sweep_{}.svg", a.kind));
        std::fs::write(&svg_path, svg)
            .with_context(|| format!("cannot write {}", svg_path.display()))?;
        warnings.finish();
        Ok(())
    })
}

pub fn stats(a: StatsArgs) -> Result<()> {
    if !(a.bucket_width > 0.0 && a.bucket_width.is_finite()) {
        return Err(usage("--bucket-width must be positive"));
    }
    let std_kind = match a.std {
        StdChoice::Population => StdKind::Population,
        StdChoice::Sample => StdKind::Sample,
    };
    let settings = vec![
        ("scores", a.scores.display().to_string()),
        ("bucket-width", a.bucket_width.to_string()),
        ("std", format!("{:?}", a.std).to_lowercase()),
    ];
    run_in(&a.common, settings, || {
        let values: Vec<f64> = read_values(&a.scores, &["pqi"])?.into_values().collect();
        if values.is_empty() {
            bail!("{} has no score rows", a.scores.display());
        }
        let d = distribution_of(
            &values,
            DistributionOptions {
                bucket_width: a.bucket_width,
                std_kind,
            },
        )?;
        let mut s = Csv::new(&["mean", "std", "n"]);
        s.row(&[
            format!("{:.6}", d.mean),
            format!("{:.6}", d.std),
            d.n.to_string(),
        ]);
        s.write(&a.common.out.join("pqi_stats.csv"))?;
        let mut h = Csv::new(&["bucket_lower", "bucket_upper", "count"]);
        for b in &d.histogram {
            h.row(&[
                b.lower.to_string(),
                b.upper.to_string(),
                b.count.to_string(),
            ]);
        }
        h.write(&a.common.out.join("pqi_distribution.csv"))
    })
}

fn metrics_csv(
    pred: Vec<f64>,
    target: Vec<f64>,
    path: &Path,
) -> Result<pqi_core::metrics::MetricsReport> {
    let m = evaluate(&PairedScores::new(pred, target)?)?;
    let mut csv = Csv::new(&["plcc", "srcc", "r2", "n"]);
    csv.row(&[
        format!("{:.9}", m.plcc),
        format!("{:.9}", m.srcc),
        format!("{:.9}", m.r2),
        m.n.to_string(),
    ]);
    csv.write(path)?;
    Ok(m)
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let settings = vec![
        ("predictions", a.predictions.display().to_string()),
        ("targets", a.targets.display().to_string()),
    ];
    run_in(&a.common, settings, || {
        let pred = read_values(&a.predictions, &["pqi_pred", "pqi"])?;
        let target = read_values(&a.targets, &["pqi", "target"])?;
        let no_target: Vec<&str> = pred
            .keys()
            .filter(|k| !target.contains_key(*k))
            .map(String::as_str)
            .collect();
        let no_pred: Vec<&str> = target
            .keys()
            .filter(|k| !pred.contains_key(*k))
            .map(String::as_str)
            .collect();
        if !no_target.is_empty() || !no_pred.is_empty() {
            bail!(
                "image ids do not match; missing from targets: [{}]; missing from predictions: [{}]",
                no_target.join(", "),
                no_pred.join(", ")
            );
        }
        let t = pred.keys().map(|k| target[k]).collect();
        metrics_csv(
            pred.into_values().collect(),
            t,
            &a.common.out.join("metrics.csv"),
        )?;
        Ok(())
    })
}

fn model_config(a: &TrainArgs) -> SpaNetConfig {
    let mut c = match a.preset {
        Preset::Full => SpaNetConfig::default(),
        Preset::Desk => SpaNetConfig::desk(),
    };
    if let Some(k) = a.superpixel_k {
        c.superpixel_k = k;
    }
    if a.no_superpixel_encoding {
        c.superpixel_encoding = false;
    }
    c
}

pub fn spanet_train(a: TrainArgs) -> Result<()> {
    let config = model_config(&a);
    config.validate().map_err(|e| usage(e.to_string()))?;
    let tc = TrainConfig {
        epochs: a.epochs,
        lr_max: a.lr_max,
        lr_min: a.lr_min,
        batch_size: a.batch_size,
        seed: a.seed,
        ..TrainConfig::default()
    };
    tc.validate().map_err(|e| usage(e.to_string()))?;
    if !(0.0..1.0).contains(&a.val_fraction) {
        return Err(usage("--val-fraction must be in [0, 1)"));
    }
    let settings = vec![
        ("images", a.images.display().to_string()),
        ("targets", a.targets.display().to_string()),
        ("preset", format!("{:?}", a.preset).to_lowercase()),
        ("superpixel-k", config.superpixel_k.to_string()),
        (
            "no-superpixel-encoding",
            (!config.superpixel_encoding).to_string(),
        ),
        ("epochs", tc.epochs.to_string()),
        ("lr-max", tc.lr_max.to_string()),
        ("lr-min", tc.lr_min.to_string()),
        ("batch-size", tc.batch_size.to_string()),
        ("val-fraction", a.val_fraction.to_string()),
        ("seed", tc.seed.to_string()),
    ];
    run_in(&a.common, settings, || {
        let targets = read_values(&a.targets, &["pqi", "target"])?;
        let images: BTreeMap<String, _> = list_images(&a.images)?.into_iter().collect();
        let missing: Vec<&str> = targets
            .keys()
            .filter(|k| !images.contains_key(*k))
            .map(String::as_str)
            .collect();
        if !missing.is_empty() {
            bail!("targets without images: [{}]", missing.join(", "));
        }
        if targets.is_empty() {
            bail!("{} has no rows", a.targets.display());
        }
        let opts = SuperpixelOptions::default();
        let mut samples: Vec<(String, Sample)> = targets
            .par_iter()
            .map(|(id, &target)| {
                let img = RgbImage::open(&images[id])?;
                let input = prepare_input(&img, &config, opts)?;
                Ok((id.clone(), Sample { input, target }))
            })
            .collect::<Result<_>>()?;
        let n_val = (samples.len() as f64 * a.val_fraction).floor() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        samples.shuffle(&mut rng);
        let val: Vec<Sample> = samples.drain(..n_val).map(|(_, s)| s).collect();
        samples.sort_by(|a, b| a.0.cmp(&b.0));
        let train_set: Vec<Sample> = samples.into_iter().map(|(_, s)| s).collect();
        if train_set.is_empty() {
            bail!("no training images left after the validation split");
        }

        let mut model = SpaNetModel::new(config.clone(), a.seed)?;
        let report = spanet::train(&mut model, &train_set, &val, &tc)?;
        save_checkpoint(&model, a.common.out.join("spanet.ckpt"))?;
        let loss_path = a.common.out.join("loss.csv");
        let f = std::fs::File::create(&loss_path)
            .with_context(|| format!("cannot create {}", loss_path.display()))?;
        report.write_csv(std::io::BufWriter::new(f))?;

        let inputs: Vec<_> = train_set.iter().map(|s| &s.input).collect();
        let preds = predict_all(&model, &inputs)?;
        let t = train_set.iter().map(|s| s.target).collect();
        match metrics_csv(preds, t, &a.common.out.join("train_metrics.csv")) {
            Ok(m) => eprintln!(
                "train R² {:.6}, PLCC {:.6}, SRCC {:.6}",
                m.r2, m.plcc, m.srcc
            ),
            Err(e) => eprintln!("warning: train metrics unavailable: {e}"),
        }
        Ok(())
    })
}

pub fn spanet_predict(a: PredictArgs) -> Result<()> {
    let settings = vec![
        ("images", a.images.display().to_string()),
        ("checkpoint", a.checkpoint.display().to_string()),
    ];
    run_in(&a.common, settings, || {
        let model = load_checkpoint(&a.checkpoint)?;
        let images = list_images(&a.images)?;
        let opts = SuperpixelOptions::default();
        let preds: Vec<f64> = images
            .par_iter()
            .map(|(_, path)| {
                let img = RgbImage::open(path)?;
                Ok(model.predict(&prepare_input(&img, model.config(), opts)?)?)
            })
            .collect::<Result<_>>()?;
        let mut csv = Csv::new(&["image_id", "pqi_pred"]);
        for ((id, _), p) in images.iter().zip(preds) {
            csv.row(&[id.clone(), format!("{p:.6}")]);
        }
        csv.write(&a.common.out.join("predictions.csv"))
    })
}
