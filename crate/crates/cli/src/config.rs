//! `key = value` experiment files. `#` starts a comment; keys are dotted and
//! validated against a closed schema.

use std::fmt::Write as _;
use std::str::FromStr;

use dtc_core::data::DatasetSpec;
use dtc_core::dtc::{AblationSwitches, ReceptiveField};
use dtc_core::segnet::{UNetConfig, UpChannels, Upsampler};
use dtc_core::train::{AdamWConfig, TrainOptions};
use dtc_core::DType;

use crate::error::CliError;

/// Every accepted key, in the order [`ExperimentConfig::render`] writes them.
pub const KEYS: &[&str] = &[
    "data.rank",
    "data.extent",
    "data.n_train",
    "data.n_val",
    "data.seed",
    "data.clutter",
    "data.noise",
    "model.upsampler",
    "model.depth",
    "model.base_channels",
    "model.up_channels",
    "dtc.r",
    "dtc.weight",
    "dtc.sigmoid",
    "dtc.tanh",
    "optim.lr",
    "optim.weight_decay",
    "optim.beta1",
    "optim.beta2",
    "optim.eps",
    "train.iters",
    "train.batch",
    "train.eval_every",
    "train.seed",
    "train.precision",
    "eval.nsd_tau",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub rank: usize,
    /// `None` means 64 for 2D and 32 for 3D.
    pub extent: Option<usize>,
    pub n_train: usize,
    pub n_val: usize,
    pub data_seed: u64,
    pub clutter: f64,
    pub noise: f64,
    pub upsampler: String,
    pub depth: usize,
    pub base_channels: usize,
    pub up_channels: Option<UpChannels>,
    pub r: ReceptiveField,
    pub use_weight: bool,
    pub use_sigmoid: bool,
    pub use_tanh: bool,
    pub optim: AdamWConfig,
    pub iters: usize,
    pub batch: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub precision: DType,
    pub nsd_tau: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let d = DatasetSpec::default_for(2);
        let t = TrainOptions::default();
        Self {
            rank: 2,
            extent: None,
            n_train: d.n_train,
            n_val: d.n_val,
            data_seed: d.seed,
            clutter: d.clutter_level,
            noise: d.noise_sigma,
            upsampler: "linear".into(),
            depth: 3,
            base_channels: 8,
            up_channels: None,
            r: ReceptiveField::default(),
            use_weight: true,
            use_sigmoid: true,
            use_tanh: true,
            optim: t.optim,
            iters: t.iters,
            batch: t.batch,
            eval_every: t.eval_every,
            seed: t.seed,
            precision: DType::F32,
            nsd_tau: t.nsd_tau,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(CliError::Usage(format!("{key}: expected true or false, got {value:?}"))),
    }
}

impl ExperimentConfig {
    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key.trim() {
            "data.rank" => self.rank = parse(key, v)?,
            "data.extent" => self.extent = Some(parse(key, v)?),
            "data.n_train" => self.n_train = parse(key, v)?,
            "data.n_val" => self.n_val = parse(key, v)?,
            "data.seed" => self.data_seed = parse(key, v)?,
            "data.clutter" => self.clutter = parse(key, v)?,
            "data.noise" => self.noise = parse(key, v)?,
            "model.upsampler" => {
                Upsampler::parse(v, self.r, AblationSwitches::FULL)?;
                self.upsampler = v.to_string();
            }
            "model.depth" => self.depth = parse(key, v)?,
            "model.base_channels" => self.base_channels = parse(key, v)?,
            "model.up_channels" => {
                self.up_channels = match v {
                    "auto" => None,
                    other => Some(other.parse()?),
                }
            }
            "dtc.r" => self.r = v.parse()?,
            "dtc.weight" => self.use_weight = parse_bool(key, v)?,
            "dtc.sigmoid" => self.use_sigmoid = parse_bool(key, v)?,
            "dtc.tanh" => self.use_tanh = parse_bool(key, v)?,
            "optim.lr" => self.optim.lr = parse(key, v)?,
            "optim.weight_decay" => self.optim.weight_decay = parse(key, v)?,
            "optim.beta1" => self.optim.beta1 = parse(key, v)?,
            "optim.beta2" => self.optim.beta2 = parse(key, v)?,
            "optim.eps" => self.optim.eps = parse(key, v)?,
            "train.iters" => self.iters = parse(key, v)?,
            "train.batch" => self.batch = parse(key, v)?,
            "train.eval_every" => self.eval_every = parse(key, v)?,
            "train.seed" => self.seed = parse(key, v)?,
            "train.precision" => {
                self.precision = match v {
                    "f32" => DType::F32,
                    "f64" => DType::F64,
                    _ => return Err(CliError::Usage(format!("{key}: expected f32 or f64, got {v:?}"))),
                }
            }
            "eval.nsd_tau" => self.nsd_tau = parse(key, v)?,
            other => {
                return Err(CliError::Usage(format!(
                    "unknown configuration key {other:?} (known keys: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Apply a whole file. Later assignments win.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
            self.set(k, v)
                .map_err(|e| CliError::Usage(format!("line {}: {}", n + 1, e.message())))?;
        }
        Ok(())
    }

    /// Apply `key=value` overrides.
    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<(), CliError> {
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {s:?}")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn switches(&self) -> Result<AblationSwitches, CliError> {
        Ok(AblationSwitches::new(self.use_weight, self.use_sigmoid, self.use_tanh)?)
    }

    pub fn upsampler(&self) -> Result<Upsampler, CliError> {
        Ok(Upsampler::parse(&self.upsampler, self.r, self.switches()?)?)
    }

    pub fn extent(&self) -> usize {
        self.extent.unwrap_or(if self.rank == 3 { 32 } else { 64 })
    }

    pub fn dataset(&self) -> DatasetSpec {
        DatasetSpec {
            rank: self.rank,
            extent: self.extent(),
            n_train: self.n_train,
            n_val: self.n_val,
            seed: self.data_seed,
            clutter_level: self.clutter,
            noise_sigma: self.noise,
        }
    }

    pub fn model(&self) -> Result<UNetConfig, CliError> {
        let mut m = UNetConfig::new(self.rank, self.upsampler()?);
        m.depth = self.depth;
        m.base_channels = self.base_channels;
        m.up_channels = self.up_channels;
        Ok(m)
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            iters: self.iters,
            batch: self.batch,
            eval_every: self.eval_every,
            seed: self.seed,
            optim: self.optim,
            nsd_tau: self.nsd_tau,
        }
    }

    /// Validate everything a training run needs before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        self.dataset().validate()?;
        let m = self.model()?;
        m.validate()?;
        m.validate_input(&self.dataset().spatial())?;
        if self.batch == 0 || self.eval_every == 0 {
            return Err(CliError::Usage("train.batch and train.eval_every must be >= 1".into()));
        }
        if !(self.optim.lr > 0.0) || !(self.nsd_tau >= 0.0) {
            return Err(CliError::Usage("optim.lr must be > 0 and eval.nsd_tau >= 0".into()));
        }
        Ok(())
    }

    /// Complete configuration as a file that [`ExperimentConfig::from_text`]
    /// reads back to the same value.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let up = match self.up_channels {
            None => "auto".to_string(),
            Some(u) => u.to_string(),
        };
        let prec = match self.precision {
            DType::F32 => "f32",
            DType::F64 => "f64",
        };
        let values: Vec<String> = vec![
            self.rank.to_string(),
            self.extent().to_string(),
            self.n_train.to_string(),
            self.n_val.to_string(),
            self.data_seed.to_string(),
            self.clutter.to_string(),
            self.noise.to_string(),
            self.upsampler.clone(),
            self.depth.to_string(),
            self.base_channels.to_string(),
            up,
            self.r.to_string(),
            self.use_weight.to_string(),
            self.use_sigmoid.to_string(),
            self.use_tanh.to_string(),
            self.optim.lr.to_string(),
            self.optim.weight_decay.to_string(),
            self.optim.beta1.to_string(),
            self.optim.beta2.to_string(),
            self.optim.eps.to_string(),
            self.iters.to_string(),
            self.batch.to_string(),
            self.eval_every.to_string(),
            self.seed.to_string(),
            prec.to_string(),
            self.nsd_tau.to_string(),
        ];
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_comments_and_overrides() {
        let mut c = ExperimentConfig::from_text(
            "# experiment\n\
             model.upsampler = dtc_over_linear  # deformable\n\
             dtc.r = inf\n\
             \n\
             train.iters=10\n",
        )
        .unwrap();
        assert_eq!(c.upsampler, "dtc_over_linear");
        assert_eq!(c.r, ReceptiveField::Infinite);
        assert_eq!(c.iters, 10);
        c.apply_overrides(&["train.seed=4".into(), "dtc.tanh = false".into()]).unwrap();
        assert_eq!(c.seed, 4);
        assert!(!c.use_tanh);
    }

    #[test]
    fn unknown_and_malformed_keys_rejected() {
        assert!(ExperimentConfig::from_text("model.width = 3").is_err());
        assert!(ExperimentConfig::from_text("train.iters").is_err());
        assert!(ExperimentConfig::from_text("train.iters = many").is_err());
        assert!(ExperimentConfig::from_text("model.upsampler = bicubic").is_err());
    }

    #[test]
    fn render_round_trips() {
        let mut c = ExperimentConfig::default();
        c.apply_overrides(&["dtc.r=2.5".into(), "model.up_channels=half".into(), "model.upsampler=tc".into()])
            .unwrap();
        assert_eq!(ExperimentConfig::from_text(&c.render()).unwrap(), ExperimentConfig {
            extent: Some(64),
            ..c
        });
    }

    #[test]
    fn channel_constraint_surfaces_at_validation() {
        let c = ExperimentConfig::from_text("model.upsampler = dtc_over_linear\nmodel.up_channels = half").unwrap();
        let e = c.validate().unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.message().contains("channel constraint"));
    }
}
