//! Flat `key = value` run configuration.

use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use psgformer::inference::InferConfig;
use psgformer::training::TrainConfig;
use psgformer::ModelConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected key = value")]
    Syntax { line: usize },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("{0}")]
    Invalid(String),
}

/// Scene generation settings. Scene `i` gets
/// `objects_min + i % (objects_max - objects_min + 1)` objects.
#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub scenes: usize,
    pub objects_min: usize,
    pub objects_max: usize,
    pub points: usize,
    pub room_extent: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            scenes: 4,
            objects_min: 3,
            objects_max: 5,
            points: 2000,
            room_extent: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
    pub n_class: usize,
    pub gen: GenConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub infer: InferConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_dir: "data".into(),
            run_dir: "run".into(),
            n_class: 3,
            gen: GenConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            infer: InferConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

impl RunConfig {
    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let t = &self.train;
        let top_k = self.infer.top_k.map_or("all".to_string(), |k| k.to_string());
        vec![
            ("seed", self.seed.to_string()),
            ("data.dir", self.data_dir.display().to_string()),
            ("run.dir", self.run_dir.display().to_string()),
            ("n_class", self.n_class.to_string()),
            ("gen.scenes", self.gen.scenes.to_string()),
            ("gen.objects_min", self.gen.objects_min.to_string()),
            ("gen.objects_max", self.gen.objects_max.to_string()),
            ("gen.points", self.gen.points.to_string()),
            ("gen.room_extent", self.gen.room_extent.to_string()),
            ("backbone.voxel", m.backbone.base_voxel.to_string()),
            ("backbone.channels", m.backbone.channels.to_string()),
            ("backbone.levels", m.backbone.levels.to_string()),
            ("backbone.abs_pos", m.backbone.abs_pos.to_string()),
            ("superpoint.size", m.superpoint_size.to_string()),
            ("msa.r1", m.msa.r1.to_string()),
            ("msa.r2", m.msa.r2.to_string()),
            ("msa.beta", m.msa.beta.to_string()),
            ("msa.cap", m.msa.cap.to_string()),
            ("msa.rq", m.msa.rq.to_string()),
            ("msa.k_cand", m.msa.k_cand.to_string()),
            ("msa.sampler", m.msa.sampler.to_string()),
            ("msa.width", m.local_width.to_string()),
            ("model.local", m.use_local.to_string()),
            ("model.global", m.use_global.to_string()),
            ("decoder.k", m.decoder.k.to_string()),
            ("decoder.d", m.decoder.d.to_string()),
            ("decoder.layers", m.decoder.layers.to_string()),
            ("decoder.heads", m.decoder.heads.to_string()),
            ("decoder.tau", m.decoder.tau.to_string()),
            ("train.lr", t.lr.to_string()),
            ("train.steps", t.steps.to_string()),
            ("train.w_cls", t.w_cls.to_string()),
            ("train.w_score", t.w_score.to_string()),
            ("train.w_bce", t.w_bce.to_string()),
            ("train.w_dice", t.w_dice.to_string()),
            ("train.w_foreground", t.w_foreground.to_string()),
            ("train.deep_supervision", t.deep_supervision.to_string()),
            ("train.match_cls", t.matching.class.to_string()),
            ("train.match_mask", t.matching.mask.to_string()),
            ("infer.top_k", top_k),
            ("infer.min_score", self.infer.min_score.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "data.dir" => self.data_dir = value.into(),
            "run.dir" => self.run_dir = value.into(),
            "n_class" => self.n_class = parse(key, value)?,
            "gen.scenes" => self.gen.scenes = parse(key, value)?,
            "gen.objects_min" => self.gen.objects_min = parse(key, value)?,
            "gen.objects_max" => self.gen.objects_max = parse(key, value)?,
            "gen.points" => self.gen.points = parse(key, value)?,
            "gen.room_extent" => self.gen.room_extent = parse(key, value)?,
            "backbone.voxel" => m.backbone.base_voxel = parse(key, value)?,
            "backbone.channels" => m.backbone.channels = parse(key, value)?,
            "backbone.levels" => m.backbone.levels = parse(key, value)?,
            "backbone.abs_pos" => m.backbone.abs_pos = parse(key, value)?,
            "superpoint.size" => m.superpoint_size = parse(key, value)?,
            "msa.r1" => m.msa.r1 = parse(key, value)?,
            "msa.r2" => m.msa.r2 = parse(key, value)?,
            "msa.beta" => m.msa.beta = parse(key, value)?,
            "msa.cap" => m.msa.cap = parse(key, value)?,
            "msa.rq" => m.msa.rq = parse(key, value)?,
            "msa.k_cand" => m.msa.k_cand = parse(key, value)?,
            "msa.sampler" => m.msa.sampler = parse(key, value)?,
            "msa.width" => m.local_width = parse(key, value)?,
            "model.local" => m.use_local = parse(key, value)?,
            "model.global" => m.use_global = parse(key, value)?,
            "decoder.k" => m.decoder.k = parse(key, value)?,
            "decoder.d" => m.decoder.d = parse(key, value)?,
            "decoder.layers" => m.decoder.layers = parse(key, value)?,
            "decoder.heads" => m.decoder.heads = parse(key, value)?,
            "decoder.tau" => m.decoder.tau = parse(key, value)?,
            "train.lr" => t.lr = parse(key, value)?,
            "train.steps" => t.steps = parse(key, value)?,
            "train.w_cls" => t.w_cls = parse(key, value)?,
            "train.w_score" => t.w_score = parse(key, value)?,
            "train.w_bce" => t.w_bce = parse(key, value)?,
            "train.w_dice" => t.w_dice = parse(key, value)?,
            "train.w_foreground" => t.w_foreground = parse(key, value)?,
            "train.deep_supervision" => t.deep_supervision = parse(key, value)?,
            "train.match_cls" => t.matching.class = parse(key, value)?,
            "train.match_mask" => t.matching.mask = parse(key, value)?,
            "infer.top_k" => self.infer.top_k = if value == "all" { None } else { Some(parse(key, value)?) },
            "infer.min_score" => self.infer.min_score = parse(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    /// Applies a config file's lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, item: &str) -> Result<(), ConfigError> {
        let (key, value) = item.split_once('=').ok_or_else(|| ConfigError::BadValue {
            key: item.into(),
            value: String::new(),
            reason: "expected key=value".into(),
        })?;
        self.set(key.trim(), value.trim())
    }

    pub fn parse_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Config file text listing every key.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Model settings with the class count and seed folded in.
    pub fn model_config(&self) -> ModelConfig {
        let mut m = self.model.clone();
        m.decoder.n_class = self.n_class;
        m.seed = psgformer::numerics::derive_seed(self.seed, "model");
        m
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let g = &self.gen;
        if g.objects_min == 0 || g.objects_min > g.objects_max {
            return Err(ConfigError::Invalid(format!(
                "gen.objects_min = {} and gen.objects_max = {} do not form a range",
                g.objects_min, g.objects_max
            )));
        }
        self.model_config()
            .check()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train.check().map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("seed = 9\ndecoder.k=7 # comment\ninfer.top_k = 3\nmsa.sampler = fps\n")
            .unwrap();
        let back = RunConfig::parse_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.model.decoder.k, 7);
    }

    #[test]
    fn every_key_is_settable() {
        let cfg = RunConfig::default();
        let mut other = RunConfig::default();
        for (k, v) in cfg.entries() {
            other.set(k, &v).unwrap();
        }
        assert_eq!(other, cfg);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(matches!(
            RunConfig::parse_text("decoder.q = 1"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            RunConfig::parse_text("decoder.k = x"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            RunConfig::parse_text("decoder.k"),
            Err(ConfigError::Syntax { line: 1 })
        ));
    }

    #[test]
    fn overrides_win() {
        let mut cfg = RunConfig::parse_text("train.steps = 10").unwrap();
        cfg.apply_override("train.steps=20").unwrap();
        assert_eq!(cfg.train.steps, 20);
    }
}
