use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Z-score statistics: one scalar mean and population standard deviation
/// shared by every channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0 && std.is_finite() && mean.is_finite()) {
            return Err(Error::DegenerateData(format!("invalid z-score stats mean={mean} std={std}")));
        }
        Ok(Self { mean, std })
    }

    #[inline]
    pub fn apply_one<T: Scalar>(&self, x: T) -> T {
        (x - T::lit(self.mean)) / T::lit(self.std)
    }

    #[inline]
    pub fn invert_one<T: Scalar>(&self, z: T) -> T {
        z * T::lit(self.std) + T::lit(self.mean)
    }
}

/// Fits mean and population std over every entry (Welford's update).
pub fn zscore_fit(train_values: &[f64]) -> Result<NormStats> {
    if train_values.len() < 2 {
        return Err(Error::Argument("z-score fit needs at least two values".into()));
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (k, &x) in train_values.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (x - mean);
    }
    let std = (m2 / train_values.len() as f64).sqrt();
    if std == 0.0 {
        return Err(Error::DegenerateData("training values have zero variance".into()));
    }
    NormStats::new(mean, std)
}

pub fn zscore_apply<T: Scalar>(x: &[T], stats: &NormStats) -> Vec<T> {
    x.iter().map(|&v| stats.apply_one(v)).collect()
}

pub fn zscore_invert<T: Scalar>(z: &[T], stats: &NormStats) -> Vec<T> {
    z.iter().map(|&v| stats.invert_one(v)).collect()
}
