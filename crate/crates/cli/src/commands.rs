use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::Path;
use std::time::Duration;

use platesmith_core::augment::AugmentRanges;
use platesmith_core::ddpm::{sample_images, NoiseSchedule};
use platesmith_core::io::{write_annotation, write_image, write_rendered_dataset, Label, Manifest, ManifestItem, Provenance};
use platesmith_core::metrics::{
    classify_generated, distribution_report, feature_extract, fid, report_csv, Category, FailureReason, PixelFeatures,
};
use platesmith_core::net::{Checkpoint, Net, TrainState, Trainer};
use platesmith_core::ocr::{Detection, LearnMode, TemplateRecognizer};
use platesmith_core::pseudolabel::{
    assemble_string, binary_accuracy, expansion_round, sweep_recognizer, train_recognizer, LabeledExample, PoolItem,
};
use platesmith_core::render::{render_dataset, DatasetConfig, RenderStyle, REFERENCE_SIZE};
use platesmith_core::{parse_plate, PlateSpec, Raster};
use serde_json::{json, Value};

use crate::config::{DEFAULT_TAU, DEFAULT_THRESHOLD};
use crate::data::{load_images, load_items, load_texts, Item};
use crate::error::{usage, CliError, CliResult};
use crate::{
    AnalyzeArgs, AugmentPreset, ClassifyArgs, Command, Ctx, EvaluateArgs, FidArgs, Mode, OcrArgs, PseudolabelArgs,
    RenderArgs, SampleArgs, ServeArgs, SweepArgs, TrainArgs,
};

/// What a command prints: JSON with `--json`, the table otherwise.
pub struct Output {
    pub json: Value,
    pub human: String,
}

pub fn run(ctx: &Ctx, cmd: Command) -> CliResult<Output> {
    match cmd {
        Command::RenderDataset(a) => render(ctx, a),
        Command::Train(a) => train(ctx, a),
        Command::Sample(a) => sample(ctx, a),
        Command::Classify(a) => classify(ctx, a),
        Command::Analyze(a) => analyze(a),
        Command::Fid(a) => fid_cmd(a),
        Command::Ocr(a) => ocr(a),
        Command::Pseudolabel(a) => pseudolabel(ctx, a),
        Command::Sweep(a) => sweep(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Serve(a) => serve(ctx, a),
    }
}

/// Templates plus the default plate layout for the grid fallback.
fn recognizer() -> TemplateRecognizer {
    TemplateRecognizer::font().with_style(RenderStyle::default())
}

fn parse_size(s: &str) -> CliResult<(usize, usize)> {
    let parsed = s
        .split_once(['x', 'X'])
        .and_then(|(w, h)| Some((w.trim().parse().ok()?, h.trim().parse().ok()?)));
    match parsed {
        Some((w, h)) if w > 0 && h > 0 => Ok((w, h)),
        _ => usage(format!("--size expects WIDTHxHEIGHT, got {s:?}")),
    }
}

fn unit_interval(name: &str, v: f64, open: bool) -> CliResult<f64> {
    let ok = if open { v > 0.0 && v < 1.0 } else { (0.0..=1.0).contains(&v) };
    if ok {
        Ok(v)
    } else {
        usage(format!("{name} must lie {} 0 and 1, got {v}", if open { "strictly between" } else { "between" }))
    }
}

fn render(ctx: &Ctx, a: RenderArgs) -> CliResult<Output> {
    let size = parse_size(&a.size)?;
    if a.count == 0 {
        return usage("--count must be at least 1");
    }
    if a.val > a.count {
        return usage("--val cannot exceed --count");
    }
    let augment = match a.augment {
        AugmentPreset::None => None,
        AugmentPreset::Light => Some(AugmentRanges::light()),
        AugmentPreset::Heavy => Some(AugmentRanges::heavy()),
    };
    let items = render_dataset(&DatasetConfig {
        count: a.count,
        seed: ctx.seed,
        output_size: (size != REFERENCE_SIZE).then_some(size),
        augment,
        ..Default::default()
    })?;
    let name = a.out.file_name().and_then(|n| n.to_str()).unwrap_or("dataset").to_string();
    let m = write_rendered_dataset(&a.out, &name, ctx.seed, &items, a.val)?;
    let splits: BTreeMap<&str, usize> = m.splits.iter().map(|(k, v)| (k.as_str(), v.len())).collect();
    let ev = items.iter().filter(|i| i.spec.is_ev()).count();
    Ok(Output {
        json: json!({ "out": a.out, "count": a.count, "size": [size.0, size.1], "seed": ctx.seed, "splits": splits, "ev": ev }),
        human: format!(
            "rendered {} plates ({ev} EV) at {}x{} into {}\n",
            a.count,
            size.0,
            size.1,
            a.out.display()
        ),
    })
}

fn train(ctx: &Ctx, a: TrainArgs) -> CliResult<Output> {
    let (net, sched_cfg, train_cfg, mut state) = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let mut cfg = ck.train.clone();
            if let Some(s) = a.steps {
                if s < ck.step {
                    return usage(format!("--steps {s} is below the checkpoint's step {}", ck.step));
                }
                cfg.total_steps = s;
            }
            let (net, state) = ck.restore::<f32>()?;
            (net, ck.schedule.clone(), cfg, Some(state))
        }
        None => {
            let net = Net::new(ctx.config.net(a.profile.as_deref())?).map_err(|e| CliError::Usage(e.to_string()))?;
            (net, ctx.config.schedule()?, ctx.config.train(a.steps)?, None)
        }
    };
    let (c, h, w) = net.sample_shape();
    let images = load_images(&a.data)?;
    let data: Vec<Vec<f32>> = images
        .iter()
        .map(|img| {
            if (img.width(), img.height()) != (w, h) {
                return Err(CliError::Data(format!(
                    "image is {}x{}, the network expects {w}x{h}",
                    img.width(),
                    img.height()
                )));
            }
            let img = if c == 1 { img.to_gray() } else { img.to_rgb() };
            Ok(img.to_signed_tensor())
        })
        .collect::<CliResult<_>>()?;
    let sched: NoiseSchedule<f32> = sched_cfg.build()?;
    let trainer = Trainer::new(&net, &sched, train_cfg.clone(), &data)?;
    let mut state: TrainState<f32> = state.take().unwrap_or_else(|| trainer.init_state(ctx.seed));
    let start = state.step;
    trainer.run(&mut state, |step, loss| {
        if step % 100 == 0 {
            eprintln!("step {step}/{} loss {loss:.5}", train_cfg.total_steps);
        }
    })?;
    Checkpoint::capture(&net, sched_cfg, train_cfg.clone(), &state).save(&a.out)?;
    let window = (state.losses.len() / 2).clamp(1, 50);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let first = mean(&state.losses[..window.min(state.losses.len())]);
    let last = mean(&state.losses[state.losses.len().saturating_sub(window)..]);
    Ok(Output {
        json: json!({
            "out": a.out, "params": net.param_count(), "images": data.len(),
            "start_step": start, "steps": state.step, "initial_loss": first, "final_loss": last,
        }),
        human: format!(
            "trained {} parameters on {} images, steps {start}..{}, loss {first:.5} -> {last:.5}\nwrote {}\n",
            net.param_count(),
            data.len(),
            state.step,
            a.out.display()
        ),
    })
}

fn sample(ctx: &Ctx, a: SampleArgs) -> CliResult<Output> {
    if a.count == 0 {
        return usage("--count must be at least 1");
    }
    let ck = Checkpoint::load(&a.checkpoint)?;
    let (net, state) = ck.restore::<f32>()?;
    let sched: NoiseSchedule<f32> = ck.schedule.build()?;
    let weights = if a.raw { &state.params } else { &state.ema };
    let images = sample_images(&net.bind(weights)?, &sched, a.count, net.sample_shape(), ctx.seed)?;
    let name = a.out.file_name().and_then(|n| n.to_str()).unwrap_or("samples").to_string();
    let mut m = Manifest::new(name, ctx.seed);
    let items = m.splits.entry("generated".into()).or_default();
    for (i, img) in images.iter().enumerate() {
        let id = format!("{i:06}");
        let image = format!("images/{id}.ppm");
        write_image(&a.out.join(&image), img)?;
        items.push(ManifestItem {
            id,
            image,
            label: None,
            text: None,
            provenance: Provenance::Generated,
        });
    }
    m.save(&a.out)?;
    Ok(Output {
        json: json!({ "out": a.out, "count": a.count, "seed": ctx.seed, "weights": if a.raw { "raw" } else { "ema" } }),
        human: format!("sampled {} images into {}\n", a.count, a.out.display()),
    })
}

fn category_keys() -> Vec<String> {
    let mut keys = vec![Category::SuccessType1.label(), Category::SuccessEv.label()];
    for reason in [
        FailureReason::Unreadable,
        FailureReason::BadPattern,
        FailureReason::InvalidPrefix,
        FailureReason::InvalidSuffix,
    ] {
        keys.push(Category::Failure { reason }.label());
    }
    keys
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

fn fmt_ratio(r: Option<f64>) -> String {
    r.map_or("n/a".into(), |v| format!("{:.4}", v))
}

fn classify(ctx: &Ctx, a: ClassifyArgs) -> CliResult<Output> {
    let threshold = unit_interval(
        "--threshold",
        a.threshold.or(ctx.config.threshold).unwrap_or(DEFAULT_THRESHOLD),
        false,
    )?;
    let items = load_items(&a.input)?;
    let rec = recognizer();
    let mut counts: BTreeMap<String, usize> = category_keys().into_iter().map(|k| (k, 0)).collect();
    let mut rows = Vec::new();
    for it in &items {
        let c = classify_generated(&it.image, &rec, threshold);
        *counts.entry(c.category.label()).or_default() += 1;
        let mut v = serde_json::to_value(&c)?;
        v["id"] = json!(it.id);
        rows.push(v);
    }
    let success = counts["success_type1"] + counts["success_ev"];
    let (success_rate, ev_share) = (ratio(success, items.len()), ratio(counts["success_ev"], success));
    let mut human = format!("{:<24} {:>7} {:>8}\n", "category", "count", "share");
    for (k, v) in &counts {
        let _ = writeln!(human, "{k:<24} {v:>7} {:>8.4}", *v as f64 / items.len() as f64);
    }
    let _ = writeln!(
        human,
        "total {}  success rate {}  EV share of successes {}",
        items.len(),
        fmt_ratio(success_rate),
        fmt_ratio(ev_share)
    );
    Ok(Output {
        json: json!({
            "total": items.len(), "threshold": threshold, "counts": counts,
            "success_rate": success_rate, "ev_share": ev_share, "items": rows,
        }),
        human,
    })
}

fn plates_from(path: &Path) -> CliResult<(Vec<PlateSpec>, usize)> {
    let texts = load_texts(path)?;
    let mut skipped = 0;
    let plates = texts
        .values()
        .filter_map(|t| match parse_plate(t) {
            Ok(p) => Some(p),
            Err(_) => {
                skipped += 1;
                None
            }
        })
        .collect::<Vec<_>>();
    if plates.is_empty() {
        return Err(CliError::Data(format!("no valid plate texts in {}", path.display())));
    }
    Ok((plates, skipped))
}

fn analyze(a: AnalyzeArgs) -> CliResult<Output> {
    let (plates, skipped) = plates_from(&a.input)?;
    let reference = a.reference.as_deref().map(plates_from).transpose()?;
    let report = distribution_report(&plates, reference.as_ref().map(|(p, _)| p.as_slice()))?;
    let mut human = report_csv(&report)?;
    if skipped > 0 {
        let _ = writeln!(human, "# skipped {skipped} texts that are not valid plates");
    }
    let mut json = serde_json::to_value(&report)?;
    json["skipped"] = json!(skipped);
    Ok(Output { json, human })
}

fn fid_cmd(a: FidArgs) -> CliResult<Output> {
    if a.features == 0 {
        return usage("--features must be positive");
    }
    let ex = PixelFeatures { size: a.features };
    let (ia, ib) = (load_images(&a.a)?, load_images(&a.b)?);
    let d = fid(&feature_extract(&ia, &ex)?, &feature_extract(&ib, &ex)?)?;
    Ok(Output {
        json: json!({ "fid": d, "n_a": ia.len(), "n_b": ib.len(), "features": ex.size * ex.size }),
        human: format!("FID {d:.6} ({} vs {} images, {} pixel features)\n", ia.len(), ib.len(), ex.size * ex.size),
    })
}

fn ocr(a: OcrArgs) -> CliResult<Output> {
    let items = load_items(&a.input)?;
    let rec = recognizer();
    let mut rows = Vec::new();
    let mut human = String::new();
    let mut csv_rows = Vec::new();
    for it in &items {
        let r = rec.recognize(&it.image);
        let min_conf = r.detections.iter().map(|d| d.confidence).fold(f64::INFINITY, f64::min);
        let min_conf = if min_conf.is_finite() { min_conf } else { 0.0 };
        let _ = writeln!(human, "{}\t{}\t{min_conf:.4}", it.id, if r.text.is_empty() { "-" } else { &r.text });
        csv_rows.push((it.id.clone(), r.text.clone(), min_conf));
        rows.push(json!({ "id": it.id, "text": r.text, "detections": r.detections }));
    }
    if let Some(out) = &a.out {
        let mut w = csv::Writer::from_path(out)?;
        w.write_record(["id", "text", "min_confidence"])?;
        for (id, text, c) in &csv_rows {
            w.write_record([id.as_str(), text.as_str(), &format!("{c:.6}")])?;
        }
        w.flush()?;
    }
    Ok(Output { json: json!(rows), human })
}

fn detections_from_labels(labels: &[Label]) -> Vec<Detection> {
    labels
        .iter()
        .filter_map(|l| Detection::new(l.class_id, l.bbox, 1.0).ok())
        .collect()
}

fn labeled_examples(items: Vec<Item>) -> CliResult<Vec<LabeledExample>> {
    items
        .into_iter()
        .map(|it| {
            let Some(labels) = it.labels else {
                return Err(CliError::Data(format!("labeled item {} has no annotation file", it.id)));
            };
            let dets = detections_from_labels(&labels);
            let text = it.text.unwrap_or_else(|| assemble_string(&dets));
            Ok(LabeledExample::manual(it.id, it.image, text, dets))
        })
        .collect()
}

fn pseudolabel(ctx: &Ctx, a: PseudolabelArgs) -> CliResult<Output> {
    let tau = unit_interval("--tau", a.tau.or(ctx.config.tau).unwrap_or(DEFAULT_TAU), true)?;
    if a.out.join(platesmith_core::io::MANIFEST_FILE).exists() {
        return usage(format!("{} already holds a dataset", a.out.display()));
    }
    let mut labeled = labeled_examples(load_items(&a.labeled)?)?;
    let manual = labeled.len();
    let pool: Vec<PoolItem> = load_items(&a.pool)?
        .into_iter()
        .map(|it| PoolItem {
            id: format!("r{}-{}", a.round, it.id),
            image: it.image,
        })
        .collect();
    let mode = match a.mode {
        Mode::FromScratch => LearnMode::FromScratch,
        Mode::FineTune => LearnMode::FineTune,
    };
    let rec = train_recognizer(&labeled, mode, None, &recognizer());
    let report = expansion_round(&mut labeled, &pool, tau, a.round, &rec)?;

    let name = a.out.file_name().and_then(|n| n.to_str()).unwrap_or("expanded").to_string();
    let mut m = Manifest::new(name, ctx.seed);
    for (k, e) in labeled.iter().enumerate() {
        let stem = &e.id;
        let image = format!("images/{stem}.ppm");
        let label = format!("labels/{stem}.txt");
        write_image(&a.out.join(&image), &e.image)?;
        let labels: Vec<Label> = e
            .detections
            .iter()
            .map(|d| Label {
                class_id: d.class_id,
                bbox: d.bbox,
            })
            .collect();
        write_annotation(&a.out.join(&label), &labels)?;
        let provenance = if k < manual {
            Provenance::HumanVerified
        } else {
            Provenance::Pseudolabeled { round: a.round }
        };
        m.splits.entry("train".into()).or_default().push(ManifestItem {
            id: e.id.clone(),
            image,
            label: Some(label),
            text: Some(e.text.clone()),
            provenance,
        });
    }
    m.save(&a.out)?;
    let mut human = format!(
        "round {}: tau {tau}, pool {}, accepted {} ({:.1}%), labeled {} -> {}\n",
        report.round,
        report.pool_size,
        report.accepted,
        100.0 * report.acceptance_rate,
        report.labeled_before,
        report.labeled_after
    );
    for (reason, n) in &report.rejected {
        let _ = writeln!(human, "  rejected {}: {n}", serde_json::to_value(reason)?.as_str().unwrap_or_default());
    }
    Ok(Output {
        json: serde_json::to_value(&report)?,
        human,
    })
}

fn load_model(spec: &str) -> CliResult<TemplateRecognizer> {
    if spec == "font" {
        return Ok(recognizer());
    }
    let labeled = labeled_examples(load_items(Path::new(spec))?)?;
    Ok(train_recognizer(&labeled, LearnMode::FromScratch, None, &recognizer()))
}

fn with_truth(path: &Path) -> CliResult<Vec<(Raster, String)>> {
    let items = load_items(path)?;
    items
        .into_iter()
        .map(|it| match it.text {
            Some(t) => Ok((it.image, t)),
            None => Err(CliError::Data(format!("item {} has no ground-truth text", it.id))),
        })
        .collect()
}

fn sweep(a: SweepArgs) -> CliResult<Output> {
    let rec = load_model(&a.model)?;
    let val = with_truth(&a.val)?;
    let table = sweep_recognizer(&rec, &val)?;
    let mut human = format!("{:>9} {:>9}\n", "threshold", "accuracy");
    for r in &table.rows {
        let mark = if r.threshold == table.chosen { "  <- chosen" } else { "" };
        let _ = writeln!(human, "{:>9.1} {:>9.4}{mark}", r.threshold, r.accuracy);
    }
    Ok(Output {
        json: json!({ "rows": table.rows, "chosen": table.chosen, "validation": val.len() }),
        human,
    })
}

fn evaluate(a: EvaluateArgs) -> CliResult<Output> {
    let pred = load_texts(&a.pred)?;
    let truth = load_texts(&a.truth)?;
    if truth.is_empty() {
        return Err(CliError::Data(format!("no ground-truth texts in {}", a.truth.display())));
    }
    let pairs: Vec<(&str, &str)> = truth
        .iter()
        .map(|(id, t)| (pred.get(id).map_or("", String::as_str), t.as_str()))
        .collect();
    let missing = truth.keys().filter(|id| !pred.contains_key(*id)).count();
    let acc = binary_accuracy(&pairs)?;
    let correct = pairs.iter().filter(|(p, t)| p == t).count();
    Ok(Output {
        json: json!({ "accuracy": acc, "correct": correct, "total": pairs.len(), "missing": missing }),
        human: format!(
            "binary accuracy {acc:.4} ({correct}/{}), {missing} without prediction\n",
            pairs.len()
        ),
    })
}

fn serve(ctx: &Ctx, a: ServeArgs) -> CliResult<Output> {
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| CliError::Usage(format!("bad address {}:{}: {e}", a.host, a.port)))?;
    let mut cfg = platesmith_review::ServiceConfig::new(&a.manifest);
    cfg.verdict_log = a.log;
    cfg.static_dir = a.ui;
    if let Some(s) = ctx.config.lease_secs {
        cfg.lease = Duration::from_secs(s);
    }
    eprintln!("serving {} on http://{addr}", a.manifest.display());
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(platesmith_review::serve(cfg, addr))?;
    Ok(Output {
        json: json!({ "stopped": true }),
        human: String::new(),
    })
}
