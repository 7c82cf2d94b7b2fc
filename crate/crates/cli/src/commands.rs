use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use hybridvc::codecs::{CodecConfig, VideoSequence};
use hybridvc::metrics::{self, MetricKind};
use hybridvc::pipeline::{self, DecodeMode, DecodeTools, EvalRow};
use hybridvc::restoration::{NetworkSpec, RestoreMode, StepWeights};
use hybridvc::scenedetect::{self, DEFAULT_MIN_SCENE_LEN, DEFAULT_THRESHOLD};
use hybridvc::training::{self, Checkpoint, PairDataset, RefChoice, TrainConfig, TrainRun, CLIP_LEN};
use hybridvc::videoio::{self, RawShape};
use hybridvc::Error;

use crate::config::{self, FileConfig, Provenance};
use crate::{Cli, Command, DecodeArgs, DetectArgs, EncodeArgs, EvalArgs, TrainArgs, VideoInput};

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CODEC: u8 = 2;
pub const EXIT_VALIDATION: u8 = 3;
pub const EXIT_FORMAT: u8 = 4;

pub const DEFAULT_CLIPS: usize = 48;
pub const DEFAULT_VAL_CLIPS: usize = 6;
pub const DEFAULT_CLIP_SIZE: usize = 96;
pub const DEFAULT_TRAIN_QUALITY: u32 = 40;

pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::CodecProcess { .. } => EXIT_CODEC,
                Error::Validation(_) | Error::Domain(_) | Error::Scale(_) | Error::State(_) => EXIT_VALIDATION,
                Error::Format(_) => EXIT_FORMAT,
                Error::Training(_) | Error::Io(_) => EXIT_FAILURE,
            };
        }
    }
    EXIT_FAILURE
}

pub fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let seed = cli.seed.or(file.seed).unwrap_or(config::DEFAULT_SEED);
    match cli.command {
        Command::Encode(a) => encode(&a, &file, seed),
        Command::Decode(a) => decode(&a, &file, seed),
        Command::Train(a) => train(&a, &file, cli.seed.or(file.seed)),
        Command::Eval(a) => eval(&a, &file, seed),
        Command::Detect(a) => detect(&a, &file, seed),
    }
}

fn require_input(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!(Error::Validation(format!("input {} does not exist", path.display())));
    }
    Ok(())
}

fn require_output(path: &Path) -> Result<()> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() && !d.is_dir() => {
            bail!(Error::Validation(format!("output directory {} does not exist", d.display())))
        }
        _ => Ok(()),
    }
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let parsed = s
        .split_once(['x', 'X'])
        .and_then(|(w, h)| Some((w.parse().ok()?, h.parse().ok()?)));
    parsed.ok_or_else(|| Error::Validation(format!("bad frame size {s:?}; expected WxH")).into())
}

fn read_input(v: &VideoInput) -> Result<VideoSequence> {
    require_input(&v.input)?;
    let raw = match &v.size {
        Some(s) => {
            let (width, height) = parse_size(s)?;
            Some(RawShape {
                width,
                height,
                fps: v.fps.unwrap_or(pipeline::CONTAINER_FPS),
            })
        }
        None => None,
    };
    Ok(videoio::read_video(&v.input, raw)?)
}

/// Prints `result` with the provenance header merged in.
fn emit(provenance: Provenance, result: impl Serialize) -> Result<Value> {
    let mut v = serde_json::to_value(result)?;
    let header = serde_json::to_value(provenance)?;
    match v.as_object_mut() {
        Some(obj) => {
            obj.insert("provenance".into(), header);
        }
        None => v = json!({ "provenance": header, "result": v }),
    }
    println!("{}", serde_json::to_string_pretty(&v)?);
    Ok(v)
}

fn load_checkpoint(path: &Path, network: Option<&str>) -> Result<(Checkpoint, String)> {
    require_input(path)?;
    let ck = match network {
        Some(n) => Checkpoint::load_for(path, &NetworkSpec::preset(n)?)?,
        None => Checkpoint::load(path)?,
    };
    let hash = ck.file_hash()?;
    Ok((ck, hash))
}

fn encode(a: &EncodeArgs, file: &FileConfig, seed: u64) -> Result<()> {
    require_output(&a.output)?;
    let codec = config::merge_codec(&a.codec, &file.codec);
    let settings = codec.encode_settings(None)?;
    let video = read_input(&a.video)?;
    let (bytes, report) = pipeline::encode(&video, &settings)?;
    std::fs::write(&a.output, &bytes).with_context(|| format!("writing {}", a.output.display()))?;
    log::info!(
        "{} frames {}x{} -> {} bytes, references at {:?}",
        video.len(),
        video.width(),
        video.height(),
        bytes.len(),
        report.ref_indices
    );
    let effective = json!({ "input": a.video.input, "settings": settings });
    emit(Provenance::new("encode", seed, &effective, None), &report)?;
    Ok(())
}

#[derive(Serialize)]
struct FramePsnr {
    frame: usize,
    psnr_rgb: f64,
    psnr_y: f64,
}

fn decode(a: &DecodeArgs, file: &FileConfig, seed: u64) -> Result<()> {
    require_input(&a.input)?;
    require_output(&a.output)?;
    let checkpoint_path = a.checkpoint.clone().or_else(|| file.decode.checkpoint.clone());
    let default_mode = if checkpoint_path.is_some() { "step2" } else { "raw" };
    let mode_name = a.mode.clone().or_else(|| file.decode.mode.clone()).unwrap_or(default_mode.into());
    let mode = DecodeMode::parse(&mode_name)?;
    let (ck, ck_hash) = match (&checkpoint_path, mode) {
        (_, DecodeMode::Raw) => (None, None),
        (Some(p), _) => {
            let (ck, h) = load_checkpoint(p, a.network.as_deref())?;
            (Some(ck), Some(h))
        }
        (None, _) => bail!(Error::Validation(format!("mode {mode_name} needs --checkpoint"))),
    };
    let ground_truth = match &a.ground_truth {
        Some(p) => {
            require_input(p)?;
            Some(videoio::read_video(p, None)?)
        }
        None => None,
    };
    let bytes = std::fs::read(&a.input)?;
    let tools = DecodeTools {
        video: a.decode_cmd.as_ref().map(|d| CodecConfig::external_video(d, d, 0)),
        reference: a
            .ref_decode_cmd
            .as_ref()
            .map(|d| CodecConfig::external_lossless(d, d)),
    };
    let workers = a.workers.or(file.decode.workers);
    let run = || pipeline::decode(&bytes, &tools, mode, ck.as_ref().map(|c| &c.weights));
    let video = match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .context("building the worker pool")?
            .install(run)?,
        None => run()?,
    };
    videoio::write_video(&a.output, &video)?;

    let mut summary = json!({
        "mode": mode.label(),
        "frames": video.len(),
        "width": video.width(),
        "height": video.height(),
        "output": a.output,
    });
    if let Some(gt) = ground_truth {
        if gt.len() != video.len() {
            bail!(Error::Validation(format!(
                "ground truth has {} frames, decoded video {}",
                gt.len(),
                video.len()
            )));
        }
        let rows: Vec<FramePsnr> = video
            .frames
            .iter()
            .zip(&gt.frames)
            .enumerate()
            .map(|(t, (d, g))| {
                Ok(FramePsnr {
                    frame: t,
                    psnr_rgb: metrics::psnr(d, &g.to_rgb())?,
                    psnr_y: metrics::psnr_y(d, &g.to_rgb())?,
                })
            })
            .collect::<hybridvc::Result<_>>()?;
        let n = rows.len() as f64;
        summary["mean_psnr_rgb"] = json!(rows.iter().map(|r| r.psnr_rgb).sum::<f64>() / n);
        summary["mean_psnr_y"] = json!(rows.iter().map(|r| r.psnr_y).sum::<f64>() / n);
        if let Some(log_path) = &a.psnr_log {
            require_output(log_path)?;
            let mut w = csv::Writer::from_path(log_path)?;
            for r in &rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
    }
    let effective = json!({ "input": a.input, "mode": mode.label(), "workers": workers });
    emit(Provenance::new("decode", seed, &effective, ck_hash), summary)?;
    Ok(())
}

/// Cuts every video into consecutive clips of `CLIP_LEN` frames.
fn clips_from_files(paths: &[PathBuf]) -> Result<Vec<VideoSequence>> {
    let mut clips = Vec::new();
    for p in paths {
        require_input(p)?;
        let v = videoio::read_video(p, None)?;
        for chunk in v.frames.chunks(CLIP_LEN) {
            if chunk.len() >= 2 {
                clips.push(VideoSequence::new(chunk.to_vec(), v.fps)?);
            }
        }
    }
    if clips.is_empty() {
        bail!(Error::Validation("training videos yield no clips of two or more frames".into()));
    }
    Ok(clips)
}

/// Training and held-out pairs, either synthetic or from files.
pub fn training_data(
    files: &[PathBuf],
    clips: usize,
    clip_size: usize,
    quality: u32,
    seed: u64,
) -> Result<(PairDataset, Option<PairDataset>)> {
    let codec = CodecConfig::mock_lossy(quality);
    if files.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train = training::synthetic_clips(&mut rng, clips, clip_size, clip_size)?;
        let val = training::synthetic_clips(&mut rng, DEFAULT_VAL_CLIPS, clip_size, clip_size)?;
        return Ok((training::build_pairs(&train, &codec)?, Some(training::build_pairs(&val, &codec)?)));
    }
    let mut all = clips_from_files(files)?;
    let held = if all.len() >= 4 { (all.len() / 8).max(1) } else { 0 };
    let val = all.split_off(all.len() - held);
    let val = (!val.is_empty()).then(|| training::build_pairs(&val, &codec)).transpose()?;
    Ok((training::build_pairs(&all, &codec)?, val))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    Step1,
    Step2,
    Both,
    EndToEnd,
}

fn parse_stage(s: &str) -> Result<Stage> {
    Ok(match s {
        "step1" => Stage::Step1,
        "step2" => Stage::Step2,
        "both" => Stage::Both,
        "end-to-end" | "end_to_end" => Stage::EndToEnd,
        other => bail!(Error::Validation(format!("unknown training stage {other:?}"))),
    })
}

fn finish(run: std::result::Result<TrainRun, training::TrainFailure>, output: &Path) -> Result<TrainRun> {
    match run {
        Ok(r) => Ok(r),
        Err(f) => {
            let fallback = output.with_extension("last-good.ckpt");
            f.last_good.save(&fallback)?;
            log::error!("training stopped; last good weights saved to {}", fallback.display());
            Err(anyhow::Error::new(f.error).context(format!("last good weights in {}", fallback.display())))
        }
    }
}

fn train(a: &TrainArgs, file: &FileConfig, seed: Option<u64>) -> Result<()> {
    require_output(&a.output)?;
    if let Some(log) = &a.log {
        require_output(log)?;
    }
    let (extras, _) = config::train_section(&file.train, TrainConfig::desk())?;
    let preset = a.preset.clone().or(extras.preset.clone()).unwrap_or_else(|| "desk".into());
    let spec = NetworkSpec::preset(&preset)?;
    let (extras, mut cfg) = config::train_section(&file.train, TrainConfig::preset(&preset)?)?;
    let overrides = [
        (a.iterations_step1, &mut cfg.iterations_step1),
        (a.iterations_step2, &mut cfg.iterations_step2),
        (a.patch_size, &mut cfg.patch_size),
        (a.batch_size, &mut cfg.batch_size),
    ];
    for (flag, slot) in overrides {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let stage = parse_stage(a.stage.as_deref().or(extras.stage.as_deref()).unwrap_or("both"))?;
    let clips = a.clips.or(extras.clips).unwrap_or(DEFAULT_CLIPS);
    let clip_size = a.clip_size.or(extras.clip_size).unwrap_or(DEFAULT_CLIP_SIZE);
    let quality = a.quality.or(extras.quality).unwrap_or(DEFAULT_TRAIN_QUALITY);
    let init = match (&a.init, stage) {
        (Some(p), _) => Some(load_checkpoint(p, Some(&preset))?.0),
        (None, Stage::Step2) => bail!(Error::Validation("--stage step2 needs --init".into())),
        (None, _) => None,
    };

    let (data, val) = training_data(&a.data, clips, clip_size, quality, cfg.seed)?;
    log::info!(
        "training {preset} ({} parameters) on {} clips / {} pairs, stage {stage:?}",
        spec.param_count(),
        data.clips.len(),
        data.pair_count()
    );
    let fresh = || StepWeights::init(&spec, cfg.seed);
    let start = |init: Option<Checkpoint>| -> hybridvc::Result<StepWeights> {
        init.map(|c| Ok(c.weights)).unwrap_or_else(fresh)
    };
    let mut log = Vec::new();
    let run = match stage {
        Stage::Step1 => finish(training::train_step1(&data, &cfg, start(init)?, val.as_ref()), &a.output)?,
        Stage::EndToEnd => finish(training::train_end_to_end(&data, &cfg, start(init)?, val.as_ref()), &a.output)?,
        Stage::Step2 => finish(
            training::train_step2(&data, &cfg, Checkpoint::new(start(init)?), val.as_ref()),
            &a.output,
        )?,
        Stage::Both => {
            let r1 = finish(training::train_step1(&data, &cfg, start(init)?, val.as_ref()), &a.output)?;
            log.extend(r1.log);
            finish(training::train_step2(&data, &cfg, r1.checkpoint, val.as_ref()), &a.output)?
        }
    };
    let offset = log.last().map_or(0, |r: &training::LogRow| r.iteration);
    log.extend(run.log.iter().cloned().map(|mut r| {
        r.iteration += offset;
        r
    }));
    let ck = run.checkpoint;
    ck.save(&a.output)?;
    if let Some(p) = &a.log {
        training::write_log_csv(&log, p)?;
    }

    let mut summary = json!({
        "preset": preset,
        "stage": format!("{stage:?}"),
        "checkpoint": a.output,
        "parameters": spec.param_count(),
        "iterations": log.len(),
        "final_loss": log.last().map(|r| r.loss),
        "step1_digest": ck.weights.step1_digest(),
        "step1_frozen_hash": ck.step1_frozen_hash,
    });
    if let Some(v) = &val {
        let s1 = training::evaluate(&ck.weights, v, RestoreMode::Step1, RefChoice::Own)?;
        let s2 = training::evaluate(&ck.weights, v, RestoreMode::Step2, RefChoice::Own)?;
        summary["validation"] = json!({
            "frames": s1.frames,
            "psnr_compressed": s1.compressed,
            "psnr_step1": s1.restored,
            "psnr_step2": s2.restored,
        });
    }
    let effective = json!({
        "train": cfg,
        "preset": preset,
        "stage": format!("{stage:?}"),
        "data": a.data,
        "clips": clips,
        "clip_size": clip_size,
        "quality": quality,
    });
    emit(Provenance::new("train", cfg.seed, &effective, Some(ck.file_hash()?)), summary)?;
    Ok(())
}

fn write_rows(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["label", "quality", "bpp", "psnr_rgb", "psnr_y", "ms_ssim"])?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            r.quality.to_string(),
            r.bpp.to_string(),
            r.psnr_rgb.to_string(),
            r.psnr_y.to_string(),
            r.ms_ssim.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn bdbr_entry(rows: &[EvalRow], anchor: &str, label: &str, metric: MetricKind) -> Value {
    let result = pipeline::curve(rows, anchor, metric)
        .and_then(|a| Ok((a, pipeline::curve(rows, label, metric)?)))
        .and_then(|(a, t)| metrics::bdbr(&a, &t));
    match result {
        Ok(v) => json!(v),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

fn eval(a: &EvalArgs, file: &FileConfig, seed: u64) -> Result<()> {
    require_output(&a.csv)?;
    if let Some(j) = &a.json {
        require_output(j)?;
    }
    let codec = config::merge_codec(&a.codec, &file.codec);
    let points = if !a.points.is_empty() {
        a.points.clone()
    } else if let Some(p) = &file.eval.points {
        p.clone()
    } else if codec.is_mock() {
        vec![20, 40, 60, 80]
    } else {
        vec![22, 27, 32, 37]
    };
    if points.len() < 4 {
        bail!(Error::Validation(format!("an RD curve needs at least 4 points, got {}", points.len())));
    }
    let checkpoint_path = a.checkpoint.clone().or_else(|| file.eval.checkpoint.clone());
    let (ck, ck_hash) = match &checkpoint_path {
        Some(p) => {
            let (c, h) = load_checkpoint(p, None)?;
            (Some(c), Some(h))
        }
        None => (None, None),
    };
    let mode_names: Vec<String> = if !a.modes.is_empty() {
        a.modes.clone()
    } else if let Some(m) = &file.eval.modes {
        m.clone()
    } else if ck.is_some() {
        vec!["raw".into(), "step1".into(), "step2".into()]
    } else {
        vec!["raw".into()]
    };
    let modes = mode_names.iter().map(|m| DecodeMode::parse(m)).collect::<hybridvc::Result<Vec<_>>>()?;
    let anchor = a.anchor.clone().or_else(|| file.eval.anchor.clone()).unwrap_or_else(|| "raw".into());
    if !mode_names.contains(&anchor) {
        bail!(Error::Validation(format!("anchor {anchor:?} is not among the evaluated modes")));
    }
    let video = read_input(&a.video)?;
    let base = codec.encode_settings(None)?;
    let rows = pipeline::rd_sweep(
        &video,
        &base,
        &points,
        &modes,
        &DecodeTools::default(),
        ck.as_ref().map(|c| &c.weights),
    )?;
    write_rows(&a.csv, &rows)?;

    let mut curves = serde_json::Map::new();
    let mut bdbr = serde_json::Map::new();
    for label in &mode_names {
        let c = pipeline::curve(&rows, label, MetricKind::Psnr)?;
        curves.insert(label.clone(), json!({ "monotone": c.is_monotone(), "points": c.points }));
        if *label != anchor {
            bdbr.insert(
                label.clone(),
                json!({
                    "psnr": bdbr_entry(&rows, &anchor, label, MetricKind::Psnr),
                    "psnr_y": bdbr_entry(&rows, &anchor, label, MetricKind::PsnrY),
                    "ms_ssim": bdbr_entry(&rows, &anchor, label, MetricKind::MsSsim),
                }),
            );
        }
    }
    let summary = json!({
        "anchor": anchor,
        "frames": video.len(),
        "width": video.width(),
        "height": video.height(),
        "csv": a.csv,
        "curves": curves,
        "bdbr_percent": bdbr,
    });
    let effective = json!({ "input": a.video.input, "settings": base, "points": points, "modes": mode_names });
    let out = emit(Provenance::new("eval", seed, &effective, ck_hash), summary)?;
    if let Some(j) = &a.json {
        std::fs::write(j, serde_json::to_string_pretty(&out)?)?;
    }
    Ok(())
}

fn detect(a: &DetectArgs, file: &FileConfig, seed: u64) -> Result<()> {
    let threshold = a.scene_threshold.or(file.codec.scene_threshold).unwrap_or(DEFAULT_THRESHOLD);
    let min_len = a.min_scene_len.or(file.codec.min_scene_len).unwrap_or(DEFAULT_MIN_SCENE_LEN);
    let video = read_input(&a.video)?;
    let cuts = if video.len() < 2 {
        scenedetect::CutList {
            cut_indices: Vec::new(),
            threshold,
            frame_count: video.len(),
        }
    } else {
        scenedetect::detect_cuts(&video.frames, threshold, min_len)?
    };
    let effective = json!({ "input": a.video.input, "threshold": threshold, "min_scene_len": min_len });
    emit(
        Provenance::new("detect", seed, &effective, None),
        json!({
            "cut_indices": cuts.cut_indices,
            "threshold": threshold,
            "min_scene_len": min_len,
            "frame_count": cuts.frame_count,
        }),
    )?;
    Ok(())
}
