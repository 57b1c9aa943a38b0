//! Differentiable-computation substrate shared by every model.

pub mod checkpoint;
pub mod mat;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tape;
pub mod train;

pub use mat::Mat;
pub use nn::{mlp_forward, seq_forward, Activation, Mlp, MlpSpec, RecurrentCell, SeqEncoder, SeqEncoderSpec};
pub use optim::{opt_step, AdamConfig, OptimizerState};
pub use params::{ParamVector, Segment};
pub use tape::{Tape, Var};
pub use train::{fit, TrainConfig, TrainLog};

use crate::error::{KoapError, Result};

/// Evaluate a loss builder without differentiating.
pub fn eval_loss<F>(loss: &F, params: &ParamVector) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamVector) -> Result<Var>,
{
    let mut tape = Tape::new(params.len());
    let out = loss(&mut tape, params)?;
    Ok(tape.scalar(out))
}

/// Loss value and reverse-mode gradient of `loss` at `params`.
pub fn grad<F>(loss: &F, params: &ParamVector) -> Result<(f64, Vec<f64>)>
where
    F: Fn(&mut Tape, &ParamVector) -> Result<Var>,
{
    let mut tape = Tape::new(params.len());
    let out = loss(&mut tape, params)?;
    let value = tape.scalar(out);
    let g = tape.backward(out);
    if !value.is_finite() {
        let segment = params
            .first_non_finite()
            .or_else(|| g.iter().position(|v| !v.is_finite()).and_then(|i| params.segment_of(i)))
            .unwrap_or("<loss>")
            .to_string();
        return Err(KoapError::Numerical {
            segment,
            detail: format!("loss evaluated to {value}"),
        });
    }
    Ok((value, g))
}

/// Maximum over coordinates of `|analytic - central difference| /
/// max(1, |analytic|)`.
pub fn grad_check<F>(loss: &F, params: &ParamVector, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamVector) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(KoapError::Config("grad_check eps must be positive".into()));
    }
    let (_, analytic) = grad(loss, params)?;
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + eps;
        let up = eval_loss(loss, &probe)?;
        probe.values_mut()[i] = orig - eps;
        let down = eval_loss(loss, &probe)?;
        probe.values_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let err = (a - numeric).abs() / a.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_params(a: f64, b: f64) -> (ParamVector, Segment) {
        let mut p = ParamVector::new();
        let s = p.push_zeros("p", &[2]);
        p.get_mut(&s).copy_from_slice(&[a, b]);
        (p, s)
    }

    #[test]
    fn quadratic_gradient() {
        let (p, s) = two_params(1.0, -2.0);
        let loss = |t: &mut Tape, p: &ParamVector| {
            let v = t.param(p, &s);
            let sq = t.square(v);
            Ok(t.sum(sq))
        };
        let (val, g) = grad(&loss, &p).unwrap();
        assert_eq!(val, 5.0);
        assert_eq!(g, vec![2.0, -4.0]);
        assert!(grad_check(&loss, &p, 1e-5).unwrap() <= 1e-6);
    }

    #[test]
    fn constant_loss() {
        let (p, _) = two_params(3.0, 4.0);
        let loss = |t: &mut Tape, _: &ParamVector| Ok(t.constant(Mat::from_vec(1, 1, vec![7.0])));
        let (_, g) = grad(&loss, &p).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
        assert_eq!(grad_check(&loss, &p, 1e-5).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_loss_names_segment() {
        let (mut p, s) = two_params(1.0, 1.0);
        p.get_mut(&s)[1] = f64::INFINITY;
        let loss = |t: &mut Tape, p: &ParamVector| {
            let v = t.param(p, &s);
            let sq = t.square(v);
            Ok(t.sum(sq))
        };
        match grad(&loss, &p) {
            Err(KoapError::Numerical { segment, .. }) => assert_eq!(segment, "p"),
            other => panic!("expected numerical error, got {other:?}"),
        }
    }

    #[test]
    fn grad_check_rejects_bad_eps() {
        let (p, _) = two_params(0.0, 0.0);
        let loss = |t: &mut Tape, _: &ParamVector| Ok(t.constant(Mat::zeros(1, 1)));
        assert!(grad_check(&loss, &p, 0.0).is_err());
    }
}
