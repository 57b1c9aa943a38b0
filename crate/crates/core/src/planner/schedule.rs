use serde::{Deserialize, Serialize};

use crate::error::{KoapError, Result};
use crate::numerics::Mat;

/// Variance schedule of the forward noising process. Steps are numbered
/// `1..=len()`; step 0 denotes clean data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Betas spaced linearly from `start` to `end` over `steps` steps.
    pub fn linear(steps: usize, start: f64, end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(KoapError::Config("diffusion needs at least one step".into()));
        }
        if !(0.0 < start && start <= end && end < 1.0) {
            return Err(KoapError::Config(format!(
                "betas must satisfy 0 < start <= end < 1, got {start} .. {end}"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    start
                } else {
                    start + (end - start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Ok(Self::from_betas(betas))
    }

    fn from_betas(betas: Vec<f64>) -> Self {
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Self {
            betas,
            alphas,
            alpha_bars,
        }
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn beta(&self, step: usize) -> f64 {
        self.betas[step - 1]
    }

    pub fn alpha(&self, step: usize) -> f64 {
        self.alphas[step - 1]
    }

    /// Cumulative product of alphas up to `step`; 1 at step 0.
    pub fn alpha_bar(&self, step: usize) -> f64 {
        if step == 0 {
            1.0
        } else {
            self.alpha_bars[step - 1]
        }
    }

    /// Variance of the reverse-process posterior at `step`.
    pub fn posterior_variance(&self, step: usize) -> f64 {
        self.beta(step) * (1.0 - self.alpha_bar(step - 1)) / (1.0 - self.alpha_bar(step))
    }
}

/// `sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * noise`.
pub fn q_sample_with(alpha_bar: f64, x0: &Mat, noise: &Mat) -> Result<Mat> {
    if (x0.rows, x0.cols) != (noise.rows, noise.cols) {
        return Err(KoapError::dim("q_sample noise", x0.len(), noise.len()));
    }
    let (s0, s1) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    Ok(Mat::from_vec(
        x0.rows,
        x0.cols,
        x0.data.iter().zip(&noise.data).map(|(x, n)| s0 * x + s1 * n).collect(),
    ))
}

/// Forward-noise `x0` to diffusion step `step` (0 returns `x0`).
pub fn q_sample(schedule: &NoiseSchedule, x0: &Mat, step: usize, noise: &Mat) -> Result<Mat> {
    if step > schedule.len() {
        return Err(KoapError::Config(format!(
            "diffusion step {step} outside 0..={}",
            schedule.len()
        )));
    }
    q_sample_with(schedule.alpha_bar(step), x0, noise)
}
