use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::semantic::{MaskConfig, MaskThresholds};

/// Training hyperparameters. Text form is one `key = value` per line with `#`
/// comments; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda_seg: f64,
    pub lambda_knn: f64,
    pub lambda_ne: f64,
    pub lambda_mask: f64,
    pub lambda_content: f64,
    pub lambda_style: f64,
    pub lr_color: f64,
    pub lr_opacity: f64,
    pub lr_sem: f64,
    pub lr_mask: f64,
    pub lr_head: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub recon_iters: usize,
    pub stylize_iters: usize,
    pub seed: u64,
    pub mask: MaskConfig,
    pub knn_k: usize,
    /// KNN distance scale as a fraction of the scene's bounding-box diagonal.
    pub knn_sigma_fraction: f64,
    pub stylize_opacity: bool,
    /// PSNR is evaluated over all views every this many iterations.
    pub eval_every: usize,
    /// Where to dump the scene when a non-finite loss aborts training.
    pub snapshot_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_seg: 0.02,
            lambda_knn: 0.005,
            lambda_ne: 0.005,
            lambda_mask: 5e-4,
            lambda_content: 1.0,
            lambda_style: 10.0,
            lr_color: 2.5e-3,
            lr_opacity: 5e-2,
            lr_sem: 1e-2,
            lr_mask: 1e-2,
            lr_head: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            recon_iters: 3000,
            stylize_iters: 1500,
            seed: 0,
            mask: MaskConfig::default(),
            knn_k: 5,
            knn_sigma_fraction: 0.01,
            stylize_opacity: true,
            eval_every: 100,
            snapshot_path: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::invalid(format!("cannot parse {key} = {value:?}")))
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lambda_seg" => self.lambda_seg = parse(key, value)?,
            "lambda_knn" => self.lambda_knn = parse(key, value)?,
            "lambda_ne" => self.lambda_ne = parse(key, value)?,
            "lambda_mask" => self.lambda_mask = parse(key, value)?,
            "lambda_content" => self.lambda_content = parse(key, value)?,
            "lambda_style" => self.lambda_style = parse(key, value)?,
            "lr_color" => self.lr_color = parse(key, value)?,
            "lr_opacity" => self.lr_opacity = parse(key, value)?,
            "lr_sem" => self.lr_sem = parse(key, value)?,
            "lr_mask" => self.lr_mask = parse(key, value)?,
            "lr_head" => self.lr_head = parse(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "recon_iters" => self.recon_iters = parse(key, value)?,
            "stylize_iters" => self.stylize_iters = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "eps0" => self.mask.thresholds = MaskThresholds::new(parse(key, value)?, self.mask.thresholds.eps1)?,
            "eps1" => self.mask.thresholds = MaskThresholds::new(self.mask.thresholds.eps0, parse(key, value)?)?,
            "prune_iterations" => {
                self.mask.prune_iterations = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "knn_k" => self.knn_k = parse(key, value)?,
            "knn_sigma_fraction" => self.knn_sigma_fraction = parse(key, value)?,
            "stylize_opacity" => self.stylize_opacity = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "snapshot_path" => self.snapshot_path = Some(PathBuf::from(value)),
            _ => return Err(Error::invalid(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            self.lambda_seg,
            self.lambda_knn,
            self.lambda_ne,
            self.lambda_mask,
            self.lambda_content,
            self.lambda_style,
        ];
        if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        let rates = [self.lr_color, self.lr_opacity, self.lr_sem, self.lr_mask, self.lr_head, self.adam_eps];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::invalid("learning rates must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if self.knn_k == 0 || !(self.knn_sigma_fraction > 0.0) || self.eval_every == 0 {
            return Err(Error::invalid("knn_k, knn_sigma_fraction and eval_every must be positive"));
        }
        Ok(())
    }
}
