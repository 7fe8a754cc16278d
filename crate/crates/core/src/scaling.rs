use serde::{Deserialize, Serialize};

/// Per-channel affine normalization `(v - offset) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScaler {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl ChannelScaler {
    pub fn identity(channels: usize) -> Self {
        Self { offset: vec![0.0; channels], scale: vec![1.0; channels] }
    }

    /// Mean/standard-deviation scaler. Channels with (near) zero spread get
    /// unit scale so constant data maps to zero instead of NaN.
    pub fn fit<'a, I>(channels: usize, rows: I) -> Self
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut n = 0usize;
        let mut sum = vec![0.0; channels];
        let mut sq = vec![0.0; channels];
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        for r in &rows {
            for (c, v) in r.iter().enumerate().take(channels) {
                sum[c] += v;
            }
            n += 1;
        }
        if n == 0 {
            return Self::identity(channels);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        for r in &rows {
            for (c, v) in r.iter().enumerate().take(channels) {
                sq[c] += (v - mean[c]).powi(2);
            }
        }
        let scale = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n as f64).sqrt();
                if sd > 1e-12 * m.abs().max(1.0) { sd } else { 1.0 }
            })
            .collect();
        Self { offset: mean, scale }
    }

    pub fn channels(&self) -> usize {
        self.offset.len()
    }

    #[inline]
    pub fn scale_value(&self, c: usize, v: f64) -> f64 {
        (v - self.offset[c]) / self.scale[c]
    }

    #[inline]
    pub fn unscale_value(&self, c: usize, v: f64) -> f64 {
        v * self.scale[c] + self.offset[c]
    }

    pub fn scale_slice(&self, v: &[f64]) -> Vec<f64> {
        v.iter().enumerate().map(|(c, &x)| self.scale_value(c, x)).collect()
    }

    pub fn unscale_slice(&self, v: &[f64]) -> Vec<f64> {
        v.iter().enumerate().map(|(c, &x)| self.unscale_value(c, x)).collect()
    }
}
