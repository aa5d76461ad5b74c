//! Point-wise tokenizer: each scalar observation maps to a d-dimensional
//! embedding through a sine-activated gated linear unit, so embedding row t
//! depends only on x_t and the temporal resolution is preserved.

use thiserror::Error;

use crate::tensor::{kernels, NodeId, Tape, TensorError};

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("embed_series: input sequence is empty")]
    EmptyInput,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Tape node ids of the tokenizer parameters: w1 [1 x w], b [w],
/// w2/w3 [w x w], w4 [w x d].
#[derive(Debug, Clone, Copy)]
pub struct TokenizerNodes {
    pub w1: NodeId,
    pub b: NodeId,
    pub w2: NodeId,
    pub w3: NodeId,
    pub w4: NodeId,
}

/// Embed a whole sequence on the tape: z = GLU(sin(x w1 + b)) w4 with
/// GLU(h) = sigmoid(h w2) * (h w3), applied independently per time step.
pub fn embed_series(
    tape: &mut Tape,
    x: &[f64],
    tok: &TokenizerNodes,
) -> Result<NodeId, TokenizerError> {
    if x.is_empty() {
        return Err(TokenizerError::EmptyInput);
    }
    let t = x.len();
    let x_col = tape.constant(x.to_vec(), vec![t, 1]);
    embed_node(tape, x_col, tok).map_err(Into::into)
}

/// Same as [`embed_series`] but over an existing [t x 1] node, so generation
/// can embed fed-back values that already live on a tape.
pub fn embed_node(
    tape: &mut Tape,
    x_col: NodeId,
    tok: &TokenizerNodes,
) -> Result<NodeId, TensorError> {
    let u = tape.matmul(x_col, tok.w1)?;
    let u = tape.add_row(u, tok.b)?;
    let s = tape.sin(u);
    let gate_in = tape.matmul(s, tok.w2)?;
    let gate = tape.sigmoid(gate_in);
    let value = tape.matmul(s, tok.w3)?;
    let gated = tape.mul(gate, value)?;
    tape.matmul(gated, tok.w4)
}

/// Borrowed raw tokenizer parameters for the stepwise path.
#[derive(Debug, Clone, Copy)]
pub struct TokenizerView<'a> {
    pub w1: &'a [f64],
    pub b: &'a [f64],
    pub w2: &'a [f64],
    pub w3: &'a [f64],
    pub w4: &'a [f64],
    pub width: usize,
    pub d_model: usize,
}

/// Embed a single scalar outside the tape; bit-identical to the tape path.
pub fn embed_scalar(view: &TokenizerView<'_>, x: f64) -> Vec<f64> {
    let w = view.width;
    let mut s = vec![0.0; w];
    for i in 0..w {
        s[i] = (x * view.w1[i] + view.b[i]).sin();
    }
    let mut gate_in = vec![0.0; w];
    let mut value = vec![0.0; w];
    kernels::matmul_acc(&mut gate_in, &s, view.w2, 1, w, w);
    kernels::matmul_acc(&mut value, &s, view.w3, 1, w, w);
    let gated: Vec<f64> = gate_in
        .iter()
        .zip(&value)
        .map(|(g, v)| kernels::sigmoid(*g) * v)
        .collect();
    let mut z = vec![0.0; view.d_model];
    kernels::matmul_acc(&mut z, &gated, view.w4, 1, w, view.d_model);
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_dim_nodes(tape: &mut Tape, w1: f64, b: f64, w2: f64, w3: f64, w4: f64) -> TokenizerNodes {
        TokenizerNodes {
            w1: tape.constant(vec![w1], vec![1, 1]),
            b: tape.constant(vec![b], vec![1]),
            w2: tape.constant(vec![w2], vec![1, 1]),
            w3: tape.constant(vec![w3], vec![1, 1]),
            w4: tape.constant(vec![w4], vec![1, 1]),
        }
    }

    #[test]
    fn zero_weights_give_zero_embeddings() {
        let mut tape = Tape::new();
        let tok = one_dim_nodes(&mut tape, 0.0, 0.0, 0.0, 0.0, 0.0);
        let z = embed_series(&mut tape, &[1.0, -2.0, 3.0], &tok).unwrap();
        assert_eq!(tape.data(z), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_input_with_zero_gate_projection() {
        // w2 = 0 gives gate sigmoid(0) = 0.5; x = 0 makes the value path 0.
        let mut tape = Tape::new();
        let tok = one_dim_nodes(&mut tape, 1.0, 0.0, 0.0, 1.0, 1.0);
        let z = embed_series(&mut tape, &[0.0], &tok).unwrap();
        assert_eq!(tape.data(z), &[0.0]);
    }

    #[test]
    fn closed_form_sigmoid_evaluation() {
        // x = pi/2 with unit weights: sin = 1, gate = sigmoid(1), value = 1.
        let mut tape = Tape::new();
        let tok = one_dim_nodes(&mut tape, 1.0, 0.0, 1.0, 1.0, 1.0);
        let z = embed_series(&mut tape, &[std::f64::consts::FRAC_PI_2], &tok).unwrap();
        let expect = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((tape.data(z)[0] - expect).abs() < 1e-12);
        assert!((tape.data(z)[0] - 0.731059).abs() < 1e-6);
        // With the gate projection zeroed instead, the gate sits at 0.5.
        let tok = one_dim_nodes(&mut tape, 1.0, 0.0, 0.0, 1.0, 1.0);
        let z = embed_series(&mut tape, &[std::f64::consts::FRAC_PI_2], &tok).unwrap();
        assert!((tape.data(z)[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_input_is_a_contract_error() {
        let mut tape = Tape::new();
        let tok = one_dim_nodes(&mut tape, 1.0, 0.0, 1.0, 1.0, 1.0);
        assert!(matches!(
            embed_series(&mut tape, &[], &tok),
            Err(TokenizerError::EmptyInput)
        ));
    }

    #[test]
    fn point_wise_property_permutation_equivariance() {
        let mut tape = Tape::new();
        let tok = TokenizerNodes {
            w1: tape.constant(vec![0.7, -1.3], vec![1, 2]),
            b: tape.constant(vec![0.1, 0.4], vec![2]),
            w2: tape.constant(vec![0.2, -0.5, 0.9, 0.3], vec![2, 2]),
            w3: tape.constant(vec![1.1, 0.6, -0.2, 0.8], vec![2, 2]),
            w4: tape.constant(vec![0.5, -0.7, 0.25, 0.95], vec![2, 2]),
        };
        let xs = [0.4, -1.7, 2.2, 0.0];
        let z = embed_series(&mut tape, &xs, &tok).unwrap();
        let perm = [2usize, 0, 3, 1];
        let xp: Vec<f64> = perm.iter().map(|&i| xs[i]).collect();
        let zp = embed_series(&mut tape, &xp, &tok).unwrap();
        let d = 2;
        for (row_out, &row_in) in perm.iter().enumerate() {
            assert_eq!(
                &tape.data(zp)[row_out * d..(row_out + 1) * d],
                &tape.data(z)[row_in * d..(row_in + 1) * d]
            );
        }
    }

    #[test]
    fn sine_stage_is_bounded() {
        // |sin(x w1 + b)| <= 1 regardless of input magnitude.
        for &x in &[1e9, -3.7e5, 0.0, 42.0] {
            let v = (x * 123.456f64 + 0.789).sin();
            assert!(v.abs() <= 1.0);
        }
    }

    #[test]
    fn scalar_path_matches_tape_path() {
        let mut tape = Tape::new();
        let w1 = vec![0.7, -1.3];
        let b = vec![0.1, 0.4];
        let w2 = vec![0.2, -0.5, 0.9, 0.3];
        let w3 = vec![1.1, 0.6, -0.2, 0.8];
        let w4 = vec![0.5, -0.7, 0.25, 0.95];
        let tok = TokenizerNodes {
            w1: tape.constant(w1.clone(), vec![1, 2]),
            b: tape.constant(b.clone(), vec![2]),
            w2: tape.constant(w2.clone(), vec![2, 2]),
            w3: tape.constant(w3.clone(), vec![2, 2]),
            w4: tape.constant(w4.clone(), vec![2, 2]),
        };
        let z = embed_series(&mut tape, &[0.37], &tok).unwrap();
        let view = TokenizerView {
            w1: &w1,
            b: &b,
            w2: &w2,
            w3: &w3,
            w4: &w4,
            width: 2,
            d_model: 2,
        };
        let raw = embed_scalar(&view, 0.37);
        assert_eq!(tape.data(z), raw.as_slice());
    }
}
