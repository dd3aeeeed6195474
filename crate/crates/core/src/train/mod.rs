//! Gradients through the full model, Adam on the MAE objective, step-wise
//! learning-rate decay and finite-difference verification.

mod adam;
mod fit;
mod gradcheck;
mod loss;

pub use adam::{adam_step, clip_global_norm, global_norm, AdamState};
pub use fit::{predict, sample_gradient, train, tree_sum, EpochLog, TrainOutcome};
pub use gradcheck::{central_difference, grad_check, GradCheckConfig, GradCheckReport};
pub use loss::{mae_loss, mse_loss, Loss};

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::ingest::{NormStats, WindowSample};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    /// Epochs at which the rate is multiplied by `lr_decay`.
    pub decay_epochs: Vec<usize>,
    pub grad_clip_norm: f64,
    pub seed: u64,
    /// Probability of feeding the true previous frame to the decoder
    /// instead of its own prediction.
    pub scheduled_sampling: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 8,
            lr0: 0.001,
            lr_decay: 0.1,
            decay_epochs: vec![100, 150],
            grad_clip_norm: 5.0,
            seed: 0,
            scheduled_sampling: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm must be positive");
        }
        if !(0.0..=1.0).contains(&self.scheduled_sampling) {
            return bad("scheduled_sampling must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let d = Self::default();
        let decay_epochs = match kv.get("decay_epochs") {
            None => d.decay_epochs,
            Some("") | Some("none") => Vec::new(),
            Some(s) => s
                .split(',')
                .map(|e| e.trim().parse().map_err(|_| Error::Config(format!("decay_epochs: bad entry {e:?}"))))
                .collect::<Result<_>>()?,
        };
        let cfg = Self {
            epochs: kv.get_or("epochs", d.epochs)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            lr0: kv.get_or("lr0", d.lr0)?,
            lr_decay: kv.get_or("lr_decay", d.lr_decay)?,
            decay_epochs,
            grad_clip_norm: kv.get_or("grad_clip_norm", d.grad_clip_norm)?,
            seed: kv.get_or("seed", d.seed)?,
            scheduled_sampling: kv.get_or("scheduled_sampling", d.scheduled_sampling)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("epochs", self.epochs.to_string());
        kv.set("batch_size", self.batch_size.to_string());
        kv.set("lr0", format!("{:?}", self.lr0));
        kv.set("lr_decay", format!("{:?}", self.lr_decay));
        let de: Vec<String> = self.decay_epochs.iter().map(ToString::to_string).collect();
        kv.set("decay_epochs", if de.is_empty() { "none".to_string() } else { de.join(",") });
        kv.set("grad_clip_norm", format!("{:?}", self.grad_clip_norm));
        kv.set("seed", self.seed.to_string());
        kv.set("scheduled_sampling", format!("{:?}", self.scheduled_sampling));
        kv
    }
}

/// `lr0 · lr_decay^k` where `k` counts decay epochs `≤ epoch`.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    let k = config.decay_epochs.iter().filter(|&&e| e <= epoch).count();
    config.lr0 * config.lr_decay.powi(k as i32)
}

/// A window converted to normalized `[N, C]` frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared<T> {
    pub inputs: Vec<Matrix<T>>,
    pub targets: Vec<Matrix<T>>,
    pub t_anchor: usize,
}

/// Normalizes windows into model frames. Inputs and targets may use
/// different statistics.
pub fn prepare<T: Scalar>(
    samples: &[WindowSample],
    n_stations: usize,
    channels: usize,
    input_norm: &NormStats,
    target_norm: &NormStats,
) -> Result<Vec<Prepared<T>>> {
    let frame = |v: &[f64], s: &NormStats| {
        Matrix::from_vec(n_stations, channels, v.iter().map(|&x| s.apply_one(T::lit(x))).collect())
    };
    samples
        .iter()
        .map(|w| {
            Ok(Prepared {
                inputs: (0..w.n_in).map(|k| frame(w.input_frame(k), input_norm)).collect::<Result<_>>()?,
                targets: (0..w.n_out).map(|k| frame(w.target_frame(k), target_norm)).collect::<Result<_>>()?,
                t_anchor: w.t_anchor,
            })
        })
        .collect()
}
