//! Seeded initialization, the GRU cell, and token-sequence encoding.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::params::ParamSet;
use super::tape::{Tape, ValueId};
use super::tensor::Tensor;
use super::AutodiffError;

/// Draws weight matrices from uniform(-1/sqrt(fan_in), 1/sqrt(fan_in));
/// biases start at zero. One seeded generator per model keeps initialization
/// reproducible as long as insertion order is fixed.
pub struct Init {
    rng: ChaCha20Rng,
}

impl Init {
    pub fn with_seed(seed: u64) -> Self {
        Init { rng: ChaCha20Rng::seed_from_u64(seed) }
    }

    pub fn matrix(&mut self, rows: usize, cols: usize) -> Tensor {
        let bound = 1.0 / (cols.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| self.rng.gen_range(-bound..bound)).collect();
        Tensor { shape: vec![rows, cols], data }
    }

    /// Weight vector treated as a 1 x n matrix for the fan-in rule.
    pub fn vector(&mut self, n: usize) -> Tensor {
        let bound = 1.0 / (n.max(1) as f64).sqrt();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        Tensor { shape: vec![n], data }
    }
}

/// A GRU layer identified by a parameter-name prefix. The nine tensors live
/// in a `ParamSet`; `bind` pins them onto a tape for one forward/backward.
#[derive(Debug, Clone)]
pub struct Gru {
    pub prefix: String,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

const GATE_NAMES: [&str; 9] = ["wz", "uz", "bz", "wr", "ur", "br", "wn", "un", "bn"];

impl Gru {
    pub fn new(prefix: &str, input_dim: usize, hidden_dim: usize) -> Self {
        Gru { prefix: prefix.to_string(), input_dim, hidden_dim }
    }

    pub fn param_name(&self, gate: &str) -> String {
        format!("{}.{}", self.prefix, gate)
    }

    pub fn init_params(&self, params: &mut ParamSet, init: &mut Init) -> Result<(), AutodiffError> {
        for gate in GATE_NAMES {
            let tensor = match gate {
                "wz" | "wr" | "wn" => init.matrix(self.hidden_dim, self.input_dim),
                "uz" | "ur" | "un" => init.matrix(self.hidden_dim, self.hidden_dim),
                _ => Tensor::zeros(&[self.hidden_dim]),
            };
            params.insert(&self.param_name(gate), tensor)?;
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape, params: &ParamSet) -> Result<GruBound, AutodiffError> {
        let mut ids = Vec::with_capacity(9);
        for gate in GATE_NAMES {
            let name = self.param_name(gate);
            ids.push(tape.param(&name, params.get(&name)?.clone()));
        }
        let ids: [ValueId; 9] = ids.try_into().expect("nine gate tensors");
        Ok(GruBound { ids, hidden_dim: self.hidden_dim })
    }
}

#[derive(Debug, Clone)]
pub struct GruBound {
    ids: [ValueId; 9],
    hidden_dim: usize,
}

impl GruBound {
    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    /// One cell update:
    ///   z = sigmoid(Wz x + Uz h + bz)
    ///   r = sigmoid(Wr x + Ur h + br)
    ///   n = tanh(Wn x + r * (Un h) + bn)
    ///   h' = (1 - z) * n + z * h
    pub fn step(&self, tape: &mut Tape, x: ValueId, h: ValueId) -> Result<ValueId, AutodiffError> {
        let [wz, uz, bz, wr, ur, br, wn, un, bn] = self.ids;
        let zx = tape.matvec(wz, x)?;
        let zh = tape.matvec(uz, h)?;
        let z_pre = tape.add(zx, zh)?;
        let z_pre = tape.add(z_pre, bz)?;
        let z = tape.sigmoid(z_pre);

        let rx = tape.matvec(wr, x)?;
        let rh = tape.matvec(ur, h)?;
        let r_pre = tape.add(rx, rh)?;
        let r_pre = tape.add(r_pre, br)?;
        let r = tape.sigmoid(r_pre);

        let nx = tape.matvec(wn, x)?;
        let nh = tape.matvec(un, h)?;
        let gated = tape.mul(r, nh)?;
        let n_pre = tape.add(nx, gated)?;
        let n_pre = tape.add(n_pre, bn)?;
        let n = tape.tanh(n_pre);

        let one_minus_z = {
            let neg = tape.scale(z, -1.0);
            tape.add_const(neg, 1.0)
        };
        let a = tape.mul(one_minus_z, n)?;
        let b = tape.mul(z, h)?;
        tape.add(a, b)
    }
}

/// Embedding lookup followed by a GRU sweep; returns the final hidden state.
/// An empty token sequence encodes to the zero vector.
pub fn encode_sequence(
    tape: &mut Tape,
    embedding: ValueId,
    gru: &GruBound,
    token_ids: &[usize],
) -> Result<ValueId, AutodiffError> {
    let vocab_rows = tape.value(embedding).rows();
    let mut h = tape.constant(Tensor::zeros(&[gru.hidden_dim()]));
    for &id in token_ids {
        if id >= vocab_rows {
            return Err(AutodiffError::OutOfVocab { id, vocab_size: vocab_rows });
        }
        let x = tape.row(embedding, id)?;
        h = gru.step(tape, x, h)?;
    }
    Ok(h)
}
