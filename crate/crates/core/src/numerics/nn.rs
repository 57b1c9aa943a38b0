//! Function approximators built on the tape: affine MLPs and a recurrent
//! window encoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mat::Mat;
use super::params::{ParamVector, Segment};
use super::tape::{Tape, Var};
use crate::error::{KoapError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

/// Layer widths `[in, h1, ..., out]` with one activation per hidden layer.
/// The output layer is affine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl MlpSpec {
    /// Same activation on every hidden layer.
    pub fn uniform(widths: &[usize], act: Activation) -> Self {
        let hidden = widths.len().saturating_sub(2);
        Self {
            widths: widths.to_vec(),
            activations: vec![act; hidden],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(KoapError::Config(
                "an MLP needs at least an input and an output width".into(),
            ));
        }
        if self.widths.contains(&0) {
            return Err(KoapError::Config("MLP widths must be positive".into()));
        }
        if self.activations.len() != self.widths.len() - 2 {
            return Err(KoapError::Config(format!(
                "MLP with {} layers needs {} hidden activations, got {}",
                self.widths.len() - 1,
                self.widths.len() - 2,
                self.activations.len()
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }
}

/// An MLP bound to its weight and bias segments inside a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub weights: Vec<Segment>,
    pub biases: Vec<Segment>,
}

impl Mlp {
    /// Allocate `prefix.w{i}` / `prefix.b{i}` with Glorot weights and zero
    /// biases.
    pub fn init<R: Rng>(params: &mut ParamVector, prefix: &str, spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (i, pair) in spec.widths.windows(2).enumerate() {
            weights.push(params.push_glorot(format!("{prefix}.w{i}"), pair[0], pair[1], rng));
            biases.push(params.push_zeros(format!("{prefix}.b{i}"), &[pair[1]]));
        }
        Ok(Self { spec, weights, biases })
    }

    /// Forward a batch (rows = samples) through the network on the tape.
    pub fn forward(&self, tape: &mut Tape, params: &ParamVector, input: Var) -> Result<Var> {
        let cols = tape.value(input).cols;
        if cols != self.spec.input_dim() {
            return Err(KoapError::dim("mlp input", self.spec.input_dim(), cols));
        }
        let mut h = input;
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let wv = tape.param(params, w);
            let bv = tape.param(params, b);
            let z = tape.matmul(h, wv);
            h = tape.add_row(z, bv);
            if i < last {
                h = match self.spec.activations[i] {
                    Activation::Tanh => tape.tanh(h),
                    Activation::Relu => tape.relu(h),
                };
            }
        }
        Ok(h)
    }

    /// Plain forward pass for a batch without recording gradients.
    pub fn eval(&self, params: &ParamVector, input: &Mat) -> Result<Mat> {
        if input.cols != self.spec.input_dim() {
            return Err(KoapError::dim("mlp input", self.spec.input_dim(), input.cols));
        }
        let mut h = input.clone();
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let wm = Mat::from_vec(w.shape[0], w.shape[1], params.get(w).to_vec());
            let mut z = h.matmul(&wm);
            let bias = params.get(b);
            for r in 0..z.rows {
                for (v, bb) in z.row_mut(r).iter_mut().zip(bias) {
                    *v += bb;
                }
            }
            if i < last {
                match self.spec.activations[i] {
                    Activation::Tanh => z.data.iter_mut().for_each(|v| *v = v.tanh()),
                    Activation::Relu => z.data.iter_mut().for_each(|v| *v = v.max(0.0)),
                }
            }
            h = z;
        }
        Ok(h)
    }
}

/// Forward a single vector through an MLP.
pub fn mlp_forward(mlp: &Mlp, params: &ParamVector, input: &[f64]) -> Result<Vec<f64>> {
    Ok(mlp.eval(params, &Mat::row_vector(input))?.data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecurrentCell {
    Gru,
    Lstm,
}

/// Recurrent encoder over a state sequence. Step `j` consumes the pair
/// `(x_j, x_{j+1})` and emits one output vector, so a sequence of `L` states
/// yields `L - 1` outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqEncoderSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub cell: RecurrentCell,
}

impl SeqEncoderSpec {
    fn gates(&self) -> usize {
        match self.cell {
            RecurrentCell::Gru => 3,
            RecurrentCell::Lstm => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqEncoder {
    pub spec: SeqEncoderSpec,
    input_w: Segment,
    hidden_w: Segment,
    bias: Segment,
    out_w: Segment,
    out_b: Segment,
}

impl SeqEncoder {
    pub fn init<R: Rng>(params: &mut ParamVector, prefix: &str, spec: SeqEncoderSpec, rng: &mut R) -> Result<Self> {
        if spec.input_dim == 0 || spec.hidden_dim == 0 || spec.output_dim == 0 {
            return Err(KoapError::Config("sequence encoder dims must be positive".into()));
        }
        let g = spec.gates() * spec.hidden_dim;
        let input_w = params.push_glorot(format!("{prefix}.wx"), 2 * spec.input_dim, g, rng);
        let hidden_w = params.push_glorot(format!("{prefix}.wh"), spec.hidden_dim, g, rng);
        let bias = params.push_zeros(format!("{prefix}.b"), &[g]);
        let out_w = params.push_glorot(format!("{prefix}.wo"), spec.hidden_dim, spec.output_dim, rng);
        let out_b = params.push_zeros(format!("{prefix}.bo"), &[spec.output_dim]);
        Ok(Self {
            spec,
            input_w,
            hidden_w,
            bias,
            out_w,
            out_b,
        })
    }

    /// Batched forward. `states[j]` is a `batch x input_dim` matrix holding
    /// state `j` of every sequence. Returns `states.len() - 1` outputs, each
    /// `batch x output_dim`.
    pub fn forward(&self, tape: &mut Tape, params: &ParamVector, states: &[Var]) -> Result<Vec<Var>> {
        if states.len() < 2 {
            return Err(KoapError::Window(format!(
                "sequence encoder needs at least 2 states, got {}",
                states.len()
            )));
        }
        for &s in states {
            let c = tape.value(s).cols;
            if c != self.spec.input_dim {
                return Err(KoapError::dim("sequence encoder input", self.spec.input_dim, c));
            }
        }
        let batch = tape.value(states[0]).rows;
        let hd = self.spec.hidden_dim;
        let wx = tape.param(params, &self.input_w);
        let wh = tape.param(params, &self.hidden_w);
        let b = tape.param(params, &self.bias);
        let wo = tape.param(params, &self.out_w);
        let bo = tape.param(params, &self.out_b);
        let mut h = tape.constant(Mat::zeros(batch, hd));
        let mut c = tape.constant(Mat::zeros(batch, hd));
        let mut outputs = Vec::with_capacity(states.len() - 1);
        for pair in states.windows(2) {
            let x = tape.concat_cols(pair);
            let xw = tape.matmul(x, wx);
            let xw = tape.add_row(xw, b);
            let hw = tape.matmul(h, wh);
            match self.spec.cell {
                RecurrentCell::Gru => {
                    let xz = tape.slice_cols(xw, 0, hd);
                    let hz = tape.slice_cols(hw, 0, hd);
                    let zs = tape.add(xz, hz);
                    let z = tape.sigmoid(zs);
                    let xr = tape.slice_cols(xw, hd, hd);
                    let hr = tape.slice_cols(hw, hd, hd);
                    let rs = tape.add(xr, hr);
                    let r = tape.sigmoid(rs);
                    let xn = tape.slice_cols(xw, 2 * hd, hd);
                    let hn = tape.slice_cols(hw, 2 * hd, hd);
                    let rhn = tape.mul(r, hn);
                    let ns = tape.add(xn, rhn);
                    let n = tape.tanh(ns);
                    let keep = tape.mul(z, h);
                    let oz = tape.one_minus(z);
                    let upd = tape.mul(oz, n);
                    h = tape.add(upd, keep);
                }
                RecurrentCell::Lstm => {
                    let pre = tape.add(xw, hw);
                    let is = tape.slice_cols(pre, 0, hd);
                    let i = tape.sigmoid(is);
                    let fs = tape.slice_cols(pre, hd, hd);
                    let f = tape.sigmoid(fs);
                    let gs = tape.slice_cols(pre, 2 * hd, hd);
                    let g = tape.tanh(gs);
                    let os = tape.slice_cols(pre, 3 * hd, hd);
                    let o = tape.sigmoid(os);
                    let fc = tape.mul(f, c);
                    let ig = tape.mul(i, g);
                    c = tape.add(fc, ig);
                    let tc = tape.tanh(c);
                    h = tape.mul(o, tc);
                }
            }
            let y = tape.matmul(h, wo);
            outputs.push(tape.add_row(y, bo));
        }
        Ok(outputs)
    }
}

/// Run the encoder on a single sequence of state vectors.
pub fn seq_forward(enc: &SeqEncoder, params: &ParamVector, states: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new(params.len());
    let vars: Vec<Var> = states.iter().map(|s| tape.constant(Mat::row_vector(s))).collect();
    let outs = enc.forward(&mut tape, params, &vars)?;
    Ok(outs.into_iter().map(|v| tape.value(v).data.clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_layer(weights: [f64; 4], bias: [f64; 2]) -> (Mlp, ParamVector) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ParamVector::new();
        let mlp = Mlp::init(&mut p, "l", MlpSpec::uniform(&[2, 2], Activation::Tanh), &mut rng).unwrap();
        p.get_mut(&mlp.weights[0]).copy_from_slice(&weights);
        p.get_mut(&mlp.biases[0]).copy_from_slice(&bias);
        (mlp, p)
    }

    #[test]
    fn identity_layer() {
        let (mlp, p) = single_layer([1.0, 0.0, 0.0, 1.0], [0.0, 0.0]);
        assert_eq!(mlp_forward(&mlp, &p, &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn diagonal_layer_with_bias() {
        // Row-vector convention: y = x W + b with W = diag(2, 3).
        let (mlp, p) = single_layer([2.0, 0.0, 0.0, 3.0], [1.0, -1.0]);
        assert_eq!(mlp_forward(&mlp, &p, &[1.0, 1.0]).unwrap(), vec![3.0, 2.0]);
    }

    #[test]
    fn wrong_input_length_is_config_error() {
        let (mlp, p) = single_layer([1.0, 0.0, 0.0, 1.0], [0.0, 0.0]);
        assert!(matches!(
            mlp_forward(&mlp, &p, &[1.0, 2.0, 3.0]),
            Err(KoapError::Dimension { .. })
        ));
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::uniform(&[3], Activation::Relu).validate().is_err());
        assert!(MlpSpec::uniform(&[3, 0, 1], Activation::Relu).validate().is_err());
        assert!(MlpSpec::uniform(&[3, 4, 1], Activation::Relu).validate().is_ok());
    }

    fn encoder(cell: RecurrentCell, zero: bool) -> (SeqEncoder, ParamVector) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ParamVector::new();
        let spec = SeqEncoderSpec {
            input_dim: 2,
            hidden_dim: 5,
            output_dim: 3,
            cell,
        };
        let enc = SeqEncoder::init(&mut p, "f", spec, &mut rng).unwrap();
        if zero {
            p.values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        (enc, p)
    }

    fn window(len: usize) -> Vec<Vec<f64>> {
        (0..len).map(|i| vec![i as f64 * 0.1, -(i as f64) * 0.2]).collect()
    }

    #[test]
    fn output_length_is_transitions() {
        for cell in [RecurrentCell::Gru, RecurrentCell::Lstm] {
            let (enc, p) = encoder(cell, false);
            assert_eq!(seq_forward(&enc, &p, &window(3)).unwrap().len(), 2);
            assert_eq!(seq_forward(&enc, &p, &window(15)).unwrap().len(), 14);
            assert!(matches!(seq_forward(&enc, &p, &window(1)), Err(KoapError::Window(_))));
        }
    }

    #[test]
    fn zero_params_give_constant_output() {
        // With every weight zero the hidden state stays at 0 and the output is
        // the output bias (0) at every step.
        for cell in [RecurrentCell::Gru, RecurrentCell::Lstm] {
            let (enc, p) = encoder(cell, true);
            let out = seq_forward(&enc, &p, &window(6)).unwrap();
            for o in &out {
                assert_eq!(o, &out[0]);
                assert_eq!(o, &vec![0.0; 3]);
            }
        }
    }

    #[test]
    fn forward_is_pure() {
        let (enc, p) = encoder(RecurrentCell::Gru, false);
        let a = seq_forward(&enc, &p, &window(8)).unwrap();
        let b = seq_forward(&enc, &p, &window(8)).unwrap();
        assert_eq!(a, b);
    }
}
