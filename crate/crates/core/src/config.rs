//! Run configuration: a flat `key = value` text format with strict unknown-
//! key rejection and full round-trip fidelity.
//!
//! Defaults reproduce the desk-scale experiment end to end; every field can
//! be overridden from a config file or `--set key=value` flags, and the
//! exact configuration is snapshotted into every output directory.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// All knobs of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Grid side length N (multiple of 8).
    pub grid_size: usize,
    /// Saved frames per episode.
    pub frames: usize,
    /// Encoder window length.
    pub k: usize,
    /// Dynamics latent dimension.
    pub d_z: usize,
    /// Intervention latent dimension.
    pub d_a: usize,
    /// Stage-1 first-frame loss weight.
    pub beta: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub epochs_native: usize,
    pub epochs_intv: usize,
    pub epochs_gru: usize,
    /// Tikhonov regularization weight for the ECGI baseline.
    pub lambda: f64,
    pub electrode_rows: usize,
    pub electrode_cols: usize,
    pub electrode_height_mm: f64,
    /// Gaussian noise level added to observations at generation time.
    pub obs_noise_sigma: f64,
    pub seed: u64,
    /// Episodes in the native training set.
    pub native_count: usize,
    /// Episodes in the intervention training set.
    pub intervention_count: usize,
    /// Episodes in the held-out intervention evaluation set.
    pub heldout_count: usize,
    /// RK4 steps per frame interval in the latent models.
    pub rk4_steps: usize,
    /// Raw observation frames per step for the GRU ablation.
    pub obs_frames_gru: usize,
    /// Fixed learning rates; absent means "run the range test".
    pub lr_native: Option<f64>,
    pub lr_intv: Option<f64>,
    pub lr_gru: Option<f64>,
    /// Steps in the learning-rate sweep.
    pub lr_trials: usize,
    /// Validation fraction for checkpoint selection.
    pub val_fraction: f64,
    /// Artifact directory (resolved under the output root).
    pub output_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid_size: 32,
            frames: 60,
            k: 5,
            d_z: 12,
            d_a: 12,
            beta: 5.0,
            batch_size: 16,
            weight_decay: 1e-2,
            epochs_native: 60,
            epochs_intv: 30,
            epochs_gru: 30,
            lambda: 1e-2,
            electrode_rows: 8,
            electrode_cols: 8,
            electrode_height_mm: 20.0,
            obs_noise_sigma: 0.04,
            seed: 0,
            native_count: 200,
            intervention_count: 120,
            heldout_count: 100,
            rk4_steps: 4,
            obs_frames_gru: 3,
            lr_native: None,
            lr_intv: None,
            lr_gru: None,
            lr_trials: 40,
            val_fraction: 0.1,
            output_dir: "out".into(),
        }
    }
}

/// The canonical key order used by serialization.
const KEYS: &[&str] = &[
    "grid_size",
    "frames",
    "k",
    "d_z",
    "d_a",
    "beta",
    "batch_size",
    "weight_decay",
    "epochs_native",
    "epochs_intv",
    "epochs_gru",
    "lambda",
    "electrode_rows",
    "electrode_cols",
    "electrode_height_mm",
    "obs_noise_sigma",
    "seed",
    "native_count",
    "intervention_count",
    "heldout_count",
    "rk4_steps",
    "obs_frames_gru",
    "lr_native",
    "lr_intv",
    "lr_gru",
    "lr_trials",
    "val_fraction",
    "output_dir",
];

fn opt_lr_str(v: Option<f64>) -> String {
    match v {
        None => "auto".into(),
        Some(x) => format!("{x}"),
    }
}

impl RunConfig {
    /// Serialize in canonical key order; `parse` of this text is the
    /// identity.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("grid_size", self.grid_size.to_string());
        put("frames", self.frames.to_string());
        put("k", self.k.to_string());
        put("d_z", self.d_z.to_string());
        put("d_a", self.d_a.to_string());
        put("beta", format!("{}", self.beta));
        put("batch_size", self.batch_size.to_string());
        put("weight_decay", format!("{}", self.weight_decay));
        put("epochs_native", self.epochs_native.to_string());
        put("epochs_intv", self.epochs_intv.to_string());
        put("epochs_gru", self.epochs_gru.to_string());
        put("lambda", format!("{}", self.lambda));
        put("electrode_rows", self.electrode_rows.to_string());
        put("electrode_cols", self.electrode_cols.to_string());
        put("electrode_height_mm", format!("{}", self.electrode_height_mm));
        put("obs_noise_sigma", format!("{}", self.obs_noise_sigma));
        put("seed", self.seed.to_string());
        put("native_count", self.native_count.to_string());
        put("intervention_count", self.intervention_count.to_string());
        put("heldout_count", self.heldout_count.to_string());
        put("rk4_steps", self.rk4_steps.to_string());
        put("obs_frames_gru", self.obs_frames_gru.to_string());
        put("lr_native", opt_lr_str(self.lr_native));
        put("lr_intv", opt_lr_str(self.lr_intv));
        put("lr_gru", opt_lr_str(self.lr_gru));
        put("lr_trials", self.lr_trials.to_string());
        put("val_fraction", format!("{}", self.val_fraction));
        put("output_dir", self.output_dir.clone());
        s
    }

    /// Apply one `key = value` assignment (1-based `line` for messages).
    fn assign(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::Config {
                line,
                detail: format!("unknown key `{key}`"),
            });
        }
        macro_rules! num {
            ($field:ident) => {
                self.$field = value.parse().map_err(|_| Error::Config {
                    line,
                    detail: format!("cannot parse `{value}` for key `{key}`"),
                })?
            };
        }
        let lr = |value: &str| -> Result<Option<f64>> {
            if value == "auto" {
                Ok(None)
            } else {
                Ok(Some(value.parse().map_err(|_| Error::Config {
                    line,
                    detail: format!("cannot parse `{value}` as a learning rate (number or `auto`)"),
                })?))
            }
        };
        match key {
            "grid_size" => num!(grid_size),
            "frames" => num!(frames),
            "k" => num!(k),
            "d_z" => num!(d_z),
            "d_a" => num!(d_a),
            "beta" => num!(beta),
            "batch_size" => num!(batch_size),
            "weight_decay" => num!(weight_decay),
            "epochs_native" => num!(epochs_native),
            "epochs_intv" => num!(epochs_intv),
            "epochs_gru" => num!(epochs_gru),
            "lambda" => num!(lambda),
            "electrode_rows" => num!(electrode_rows),
            "electrode_cols" => num!(electrode_cols),
            "electrode_height_mm" => num!(electrode_height_mm),
            "obs_noise_sigma" => num!(obs_noise_sigma),
            "seed" => num!(seed),
            "native_count" => num!(native_count),
            "intervention_count" => num!(intervention_count),
            "heldout_count" => num!(heldout_count),
            "rk4_steps" => num!(rk4_steps),
            "obs_frames_gru" => num!(obs_frames_gru),
            "lr_native" => self.lr_native = lr(value)?,
            "lr_intv" => self.lr_intv = lr(value)?,
            "lr_gru" => self.lr_gru = lr(value)?,
            "lr_trials" => num!(lr_trials),
            "val_fraction" => num!(val_fraction),
            "output_dir" => self.output_dir = value.to_string(),
            _ => unreachable!("membership checked above"),
        }
        Ok(())
    }

    /// Parse config text on top of the defaults. Unknown keys, duplicate
    /// keys, and malformed lines are rejected with their line number;
    /// missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(Error::Config {
                    line,
                    detail: format!("expected `key = value`, found `{trimmed}`"),
                });
            };
            let key = key.trim();
            let value = value.trim();
            if seen.iter().any(|s| s == key) {
                return Err(Error::Config {
                    line,
                    detail: format!("duplicate key `{key}`"),
                });
            }
            cfg.assign(key, value, line)?;
            seen.push(key.to_string());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read and parse a config file.
    pub fn parse_file(path: &Path) -> Result<RunConfig> {
        if !path.is_file() {
            return Err(Error::MissingArtifact {
                path: path.display().to_string(),
                hint: "pass an existing config file or rely on the built-in defaults".into(),
            });
        }
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Apply a `key=value` override (as supplied by a `--set` flag).
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let Some((key, value)) = assignment.split_once('=') else {
            return Err(Error::Config {
                line: 0,
                detail: format!("override must look like key=value, found `{assignment}`"),
            });
        };
        self.assign(key.trim(), value.trim(), 0)?;
        self.validate()
    }

    /// Cross-field sanity checks.
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Error::Config { line: 0, detail };
        if self.grid_size == 0 || self.grid_size % 8 != 0 {
            return Err(bad(format!("grid_size must be a positive multiple of 8, got {}", self.grid_size)));
        }
        if self.electrode_rows * self.electrode_cols == 0 {
            return Err(bad("electrode grid must be non-empty".into()));
        }
        if self.frames == 0 || self.k == 0 || self.k > self.frames {
            return Err(bad(format!("need 0 < k ≤ frames, got k={} frames={}", self.k, self.frames)));
        }
        if self.d_a != self.d_z {
            return Err(bad(format!(
                "additive latent coupling requires d_a = d_z, got {} vs {}",
                self.d_a, self.d_z
            )));
        }
        if !(0.0..1.0).contains(&self.val_fraction) || self.val_fraction <= 0.0 {
            return Err(bad(format!("val_fraction must be in (0,1), got {}", self.val_fraction)));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size must be positive".into()));
        }
        if self.output_dir.is_empty() {
            return Err(bad("output_dir must not be empty".into()));
        }
        Ok(())
    }

    /// Training knobs for stage 1.
    pub fn native_train_config(&self) -> crate::models::TrainConfig {
        crate::models::TrainConfig {
            epochs: self.epochs_native,
            batch_size: self.batch_size,
            weight_decay: self.weight_decay,
            beta: self.beta,
            val_fraction: self.val_fraction,
            lr_override: self.lr_native,
            lr_trials: self.lr_trials,
            seed: self.seed,
        }
    }

    /// Training knobs for stage 2.
    pub fn intv_train_config(&self) -> crate::models::TrainConfig {
        crate::models::TrainConfig {
            epochs: self.epochs_intv,
            lr_override: self.lr_intv,
            ..self.native_train_config()
        }
    }

    /// Training knobs for the GRU ablation.
    pub fn gru_train_config(&self) -> crate::models::TrainConfig {
        crate::models::TrainConfig {
            epochs: self.epochs_gru,
            lr_override: self.lr_gru,
            ..self.native_train_config()
        }
    }
}
