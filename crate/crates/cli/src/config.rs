//! Config-file loading and flag > file > default merging.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use hybridvc::codecs::{CodecConfig, CodecId};
use hybridvc::pipeline::EncodeSettings;
use hybridvc::scenedetect::{RefPolicy, DEFAULT_MIN_SCENE_LEN, DEFAULT_THRESHOLD};
use hybridvc::training::TrainConfig;
use hybridvc::Error;

use crate::CodecArgs;

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_MOCK_QUALITY: u32 = 50;
pub const DEFAULT_QP: u32 = 32;

/// Everything a config file may set. Sections mirror the subcommands.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub codec: CodecSection,
    pub decode: DecodeSection,
    pub train: toml::Table,
    pub eval: EvalSection,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecSection {
    pub codec: Option<String>,
    pub quality: Option<u32>,
    pub qp: Option<u32>,
    pub preset: Option<String>,
    pub encode_cmd: Option<String>,
    pub decode_cmd: Option<String>,
    pub ref_codec: Option<String>,
    pub ref_policy: Option<String>,
    pub scene_threshold: Option<f64>,
    pub min_scene_len: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub mode: Option<String>,
    pub checkpoint: Option<PathBuf>,
    pub workers: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub points: Option<Vec<u32>>,
    pub modes: Option<Vec<String>>,
    pub anchor: Option<String>,
    pub checkpoint: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| Error::Validation(format!("config {}: {e}", path.display())).into())
    }
}

/// Training keys that are not part of [`TrainConfig`].
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainExtras {
    pub preset: Option<String>,
    pub stage: Option<String>,
    pub clips: Option<usize>,
    pub clip_size: Option<usize>,
    pub quality: Option<u32>,
}

const EXTRA_KEYS: [&str; 5] = ["preset", "stage", "clips", "clip_size", "quality"];

/// Splits the `[train]` table into extras and a [`TrainConfig`] overlay
/// applied on top of `base`.
pub fn train_section(table: &toml::Table, base: TrainConfig) -> Result<(TrainExtras, TrainConfig)> {
    let (extras, overlay): (toml::Table, toml::Table) =
        table.clone().into_iter().partition(|(k, _)| EXTRA_KEYS.contains(&k.as_str()));
    let extras: TrainExtras = toml::Value::Table(extras)
        .try_into()
        .map_err(|e| Error::Validation(format!("[train]: {e}")))?;
    let mut merged = toml::Value::try_from(&base).context("serializing the training preset")?;
    let known = merged.as_table().map(|t| t.keys().cloned().collect::<Vec<_>>()).unwrap_or_default();
    for (k, v) in overlay {
        if !known.contains(&k) {
            bail!(Error::Validation(format!("[train]: unknown key {k:?}")));
        }
        merged.as_table_mut().expect("table").insert(k, v);
    }
    let cfg: TrainConfig = merged
        .try_into()
        .map_err(|e| Error::Validation(format!("[train]: {e}")))?;
    Ok((extras, cfg))
}

fn pick<T: Clone>(flag: &Option<T>, file: &Option<T>) -> Option<T> {
    flag.clone().or_else(|| file.clone())
}

/// Flags layered over the config file.
pub fn merge_codec(flags: &CodecArgs, file: &CodecSection) -> CodecSection {
    CodecSection {
        codec: pick(&flags.codec, &file.codec),
        quality: pick(&flags.quality, &file.quality),
        qp: pick(&flags.qp, &file.qp),
        preset: pick(&flags.preset, &file.preset),
        encode_cmd: pick(&flags.encode_cmd, &file.encode_cmd),
        decode_cmd: pick(&flags.decode_cmd, &file.decode_cmd),
        ref_codec: pick(&flags.ref_codec, &file.ref_codec),
        ref_policy: pick(&flags.ref_policy, &file.ref_policy),
        scene_threshold: pick(&flags.scene_threshold, &file.scene_threshold),
        min_scene_len: pick(&flags.min_scene_len, &file.min_scene_len),
    }
}

pub fn parse_policy(s: &str) -> Result<RefPolicy> {
    match s {
        "first" | "first-only" | "first_only" => Ok(RefPolicy::FirstOnly),
        "scene-cut" | "scene_cut" => Ok(RefPolicy::SceneCut),
        other => bail!(Error::Validation(format!("unknown reference policy {other:?}"))),
    }
}

impl CodecSection {
    pub fn is_mock(&self) -> bool {
        matches!(self.codec.as_deref(), None | Some("mock"))
    }

    /// The lossy codec at quality/QP `point` (or the configured one).
    pub fn video_codec(&self, point: Option<u32>) -> Result<CodecConfig> {
        let mut cfg = match self.codec.as_deref().unwrap_or("mock") {
            "mock" => CodecConfig::mock_lossy(point.or(self.quality).unwrap_or(DEFAULT_MOCK_QUALITY)),
            "hevc" => CodecConfig::hevc(point.or(self.qp).unwrap_or(DEFAULT_QP)),
            "vvc" => CodecConfig::vvc(point.or(self.qp).unwrap_or(DEFAULT_QP)),
            "external" => {
                let (Some(enc), Some(dec)) = (&self.encode_cmd, &self.decode_cmd) else {
                    bail!(Error::Validation("--codec external needs --encode-cmd and --decode-cmd".into()));
                };
                CodecConfig::external_video(enc, dec, point.or(self.qp).unwrap_or(DEFAULT_QP))
            }
            other => bail!(Error::Validation(format!("unknown codec {other:?}"))),
        };
        if cfg.codec_id == CodecId::ExternalVideo {
            if let Some(p) = &self.preset {
                cfg.preset = p.clone();
            }
            if self.codec.as_deref() != Some("external") {
                if let Some(enc) = &self.encode_cmd {
                    cfg.command_template = Some(enc.clone());
                }
                if let Some(dec) = &self.decode_cmd {
                    cfg.decode_template = Some(dec.clone());
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn reference_codec(&self) -> Result<CodecConfig> {
        match self.ref_codec.as_deref().unwrap_or("mock") {
            "mock" => Ok(CodecConfig::mock_lossless()),
            "jxl" | "jpeg-xl" => Ok(CodecConfig::jpeg_xl()),
            other => bail!(Error::Validation(format!("unknown reference codec {other:?}"))),
        }
    }

    pub fn encode_settings(&self, point: Option<u32>) -> Result<EncodeSettings> {
        Ok(EncodeSettings {
            video: self.video_codec(point)?,
            reference: self.reference_codec()?,
            policy: parse_policy(self.ref_policy.as_deref().unwrap_or("first"))?,
            scene_threshold: self.scene_threshold.unwrap_or(DEFAULT_THRESHOLD),
            min_scene_len: self.min_scene_len.unwrap_or(DEFAULT_MIN_SCENE_LEN),
        })
    }
}

/// Header attached to every JSON result.
#[derive(Debug, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    /// SHA-256 of the effective configuration as canonical JSON.
    pub config_hash: String,
    pub checkpoint_hash: Option<String>,
}

impl Provenance {
    pub fn new(command: &'static str, seed: u64, effective: &serde_json::Value, checkpoint_hash: Option<String>) -> Self {
        let canonical = serde_json::to_vec(effective).expect("json values serialize");
        Provenance {
            tool: "hybridvc",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            config_hash: format!("{:x}", Sha256::digest(canonical)),
            checkpoint_hash,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_default() {
        let file = CodecSection {
            quality: Some(30),
            ref_policy: Some("scene-cut".into()),
            ..Default::default()
        };
        let flags = CodecArgs {
            quality: Some(70),
            ..Default::default()
        };
        let merged = merge_codec(&flags, &file);
        assert_eq!(merged.quality, Some(70));
        let s = merged.encode_settings(None).unwrap();
        assert_eq!(s.video.quality, 70);
        assert_eq!(s.policy, RefPolicy::SceneCut);
        assert_eq!(s.scene_threshold, DEFAULT_THRESHOLD);
        let none = merge_codec(&CodecArgs::default(), &CodecSection::default());
        assert_eq!(none.encode_settings(None).unwrap().video.quality, DEFAULT_MOCK_QUALITY);
    }

    #[test]
    fn train_table_overlays_the_preset() {
        let table: toml::Table = toml::from_str("patch_size = 32\nclips = 5\nstage = \"step1\"").unwrap();
        let (extras, cfg) = train_section(&table, TrainConfig::desk()).unwrap();
        assert_eq!(cfg.patch_size, 32);
        assert_eq!(cfg.lr, TrainConfig::desk().lr);
        assert_eq!(extras.clips, Some(5));
        assert_eq!(extras.stage.as_deref(), Some("step1"));
        let bad: toml::Table = toml::from_str("pach_size = 32").unwrap();
        assert!(train_section(&bad, TrainConfig::desk()).is_err());
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = Provenance::new("encode", 0, &serde_json::json!({"q": 1}), None);
        let b = Provenance::new("encode", 0, &serde_json::json!({"q": 2}), None);
        assert_ne!(a.config_hash, b.config_hash);
        assert_eq!(a.config_hash.len(), 64);
    }
}
