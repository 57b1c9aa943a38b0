use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{TrajMeta, Trajectory};
use crate::error::{KoapError, Result};
use crate::numerics::Mat;

/// `x' = A x + B a + w`, `w ~ N(0, noise_std^2 I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtiSystem {
    pub a: Mat,
    pub b: Mat,
    #[serde(default)]
    pub noise_std: f64,
}

impl LtiSystem {
    pub const MAX_SPECTRAL_RADIUS: f64 = 1.05;

    pub fn new(a: Mat, b: Mat, noise_std: f64) -> Result<Self> {
        if a.rows != a.cols {
            return Err(KoapError::Config("A must be square".into()));
        }
        if b.rows != a.rows {
            return Err(KoapError::dim("B rows", a.rows, b.rows));
        }
        let sys = Self { a, b, noise_std };
        let rho = sys.spectral_radius();
        if rho > Self::MAX_SPECTRAL_RADIUS {
            return Err(KoapError::Config(format!(
                "spectral radius {rho:.4} exceeds {}",
                Self::MAX_SPECTRAL_RADIUS
            )));
        }
        Ok(sys)
    }

    /// Lightly damped rotation with a single input, the default oracle.
    pub fn damped_oscillator() -> Self {
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let r = 0.95;
        Self::new(
            Mat::from_rows(&[[r * c, -r * s], [r * s, r * c]]),
            Mat::from_rows(&[[0.0], [1.0]]),
            0.0,
        )
        .expect("valid default system")
    }

    pub fn state_dim(&self) -> usize {
        self.a.rows
    }

    pub fn action_dim(&self) -> usize {
        self.b.cols
    }

    pub fn spectral_radius(&self) -> f64 {
        let m = DMatrix::from_row_slice(self.a.rows, self.a.cols, &self.a.data);
        m.complex_eigenvalues().iter().map(|e| e.norm()).fold(0.0, f64::max)
    }
}

/// One noiseless step `A x + B a`.
pub fn lti_step(sys: &LtiSystem, x: &[f64], a: &[f64]) -> Result<Vec<f64>> {
    if x.len() != sys.state_dim() {
        return Err(KoapError::dim("lti_step state", sys.state_dim(), x.len()));
    }
    if a.len() != sys.action_dim() {
        return Err(KoapError::dim("lti_step action", sys.action_dim(), a.len()));
    }
    Ok(sys
        .a
        .matvec(x)
        .iter()
        .zip(sys.b.matvec(a))
        .map(|(p, q)| p + q)
        .collect())
}

/// Step with process noise drawn from `rng`.
pub fn lti_step_noisy(sys: &LtiSystem, x: &[f64], a: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let mut next = lti_step(sys, x, a)?;
    if sys.noise_std > 0.0 {
        for v in &mut next {
            let n: f64 = StandardNormal.sample(rng);
            *v += sys.noise_std * n;
        }
    }
    Ok(next)
}

/// Trajectories under i.i.d. standard-normal excitation from standard-normal
/// initial states. Each trajectory has `t_len` states and `t_len - 1` actions.
pub fn lti_generate(sys: &LtiSystem, n_traj: usize, t_len: usize, seed: u64) -> Result<Vec<Trajectory>> {
    if n_traj == 0 || t_len == 0 {
        return Err(KoapError::Config("need at least one trajectory of one state".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_traj);
    for i in 0..n_traj {
        let mut x: Vec<f64> = (0..sys.state_dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut states = vec![x.clone()];
        let mut actions = Vec::with_capacity(t_len.saturating_sub(1));
        for _ in 1..t_len {
            let a: Vec<f64> = (0..sys.action_dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
            x = lti_step_noisy(sys, &x, &a, &mut rng)?;
            states.push(x.clone());
            actions.push(a);
        }
        out.push(Trajectory {
            states,
            actions: Some(actions),
            meta: TrajMeta {
                env: "lti".into(),
                seed: seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
                mode: None,
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_examples() {
        let eye = LtiSystem::new(Mat::identity(2), Mat::identity(2), 0.0).unwrap();
        assert_eq!(lti_step(&eye, &[1.0, 0.0], &[0.0, 1.0]).unwrap(), vec![1.0, 1.0]);

        let zero_a = LtiSystem::new(Mat::zeros(2, 2), Mat::from_rows(&[[2.0], [-1.0]]), 0.0).unwrap();
        assert_eq!(lti_step(&zero_a, &[5.0, 7.0], &[3.0]).unwrap(), vec![6.0, -3.0]);

        // Quarter-turn rotation: (1, 2) -> (-2, 1), plus B a = (0, 0.5).
        let rot = LtiSystem::new(
            Mat::from_rows(&[[0.0, -1.0], [1.0, 0.0]]),
            Mat::from_rows(&[[0.0], [1.0]]),
            0.0,
        )
        .unwrap();
        assert_eq!(lti_step(&rot, &[1.0, 2.0], &[0.5]).unwrap(), vec![-2.0, 1.5]);
    }

    #[test]
    fn rejects_unstable_and_misshapen() {
        assert!(LtiSystem::new(Mat::from_rows(&[[1.2]]), Mat::from_rows(&[[1.0]]), 0.0).is_err());
        assert!(LtiSystem::new(Mat::identity(2), Mat::from_rows(&[[1.0]]), 0.0).is_err());
        assert!((LtiSystem::damped_oscillator().spectral_radius() - 0.95).abs() < 1e-12);
    }

    #[test]
    fn generated_data_is_exact_and_seeded() {
        let sys = LtiSystem::damped_oscillator();
        let a = lti_generate(&sys, 3, 10, 7).unwrap();
        assert_eq!(a, lti_generate(&sys, 3, 10, 7).unwrap());
        assert_ne!(a, lti_generate(&sys, 3, 10, 8).unwrap());
        for t in &a {
            let acts = t.actions.as_ref().unwrap();
            for (i, act) in acts.iter().enumerate() {
                assert_eq!(lti_step(&sys, &t.states[i], act).unwrap(), t.states[i + 1]);
            }
        }
    }
}
