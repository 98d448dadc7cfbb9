//! Layers built from tape primitives. Each layer only stores parameter names;
//! the tensors live in a [`ParamStore`](crate::ParamStore).

use crate::{ParamSpec, Real, Result, Tape, TensorError, Var};

/// `x W + b`
#[derive(Clone, Debug)]
pub struct Linear {
    w: String,
    b: Option<String>,
}

impl Linear {
    pub fn new(prefix: &str) -> Self {
        Linear {
            w: format!("{prefix}.w"),
            b: Some(format!("{prefix}.b")),
        }
    }

    pub fn without_bias(prefix: &str) -> Self {
        Linear {
            w: format!("{prefix}.w"),
            b: None,
        }
    }

    pub fn declare(&self, spec: &mut ParamSpec, input: usize, output: usize) {
        spec.matrix(self.w.clone(), input, output);
        if let Some(b) = &self.b {
            spec.bias(b.clone(), output);
        }
    }

    pub fn forward<F: Real>(&self, tape: &mut Tape<'_, F>, x: Var) -> Result<Var> {
        let w = tape.param(&self.w)?;
        let y = tape.matmul(x, w)?;
        match &self.b {
            Some(b) => {
                let b = tape.param(b)?;
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Gated recurrent unit operating on batches of rows.
///
/// `z = σ(x W_z + h U_z + b_z)`, `r = σ(x W_r + h U_r + b_r)`,
/// `ĥ = tanh(x W_h + (r ⊙ h) U_h + b_h)`, `h' = (1 - z) ⊙ h + z ⊙ ĥ`.
#[derive(Clone, Debug)]
pub struct GruCell {
    wz: Linear,
    wr: Linear,
    wh: Linear,
    uz: Linear,
    ur: Linear,
    uh: Linear,
    input: usize,
    hidden: usize,
}

impl GruCell {
    pub fn new(prefix: &str, input: usize, hidden: usize) -> Self {
        GruCell {
            wz: Linear::new(&format!("{prefix}.wz")),
            wr: Linear::new(&format!("{prefix}.wr")),
            wh: Linear::new(&format!("{prefix}.wh")),
            uz: Linear::without_bias(&format!("{prefix}.uz")),
            ur: Linear::without_bias(&format!("{prefix}.ur")),
            uh: Linear::without_bias(&format!("{prefix}.uh")),
            input,
            hidden,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn declare(&self, spec: &mut ParamSpec) {
        for l in [&self.wz, &self.wr, &self.wh] {
            l.declare(spec, self.input, self.hidden);
        }
        for l in [&self.uz, &self.ur, &self.uh] {
            l.declare(spec, self.hidden, self.hidden);
        }
    }

    /// `x`: `n x input`, `h`: `n x hidden`.
    pub fn forward<F: Real>(&self, tape: &mut Tape<'_, F>, x: Var, h: Var) -> Result<Var> {
        let (xs, hs) = (tape.value(x).shape().to_vec(), tape.value(h).shape().to_vec());
        if tape.value(x).cols() != self.input
            || tape.value(h).cols() != self.hidden
            || tape.value(x).rows() != tape.value(h).rows()
        {
            return Err(TensorError::shape("gru_cell", &xs, &hs));
        }
        let xz = self.wz.forward(tape, x)?;
        let hz = self.uz.forward(tape, h)?;
        let z = tape.add(xz, hz)?;
        let z = tape.sigmoid(z);

        let xr = self.wr.forward(tape, x)?;
        let hr = self.ur.forward(tape, h)?;
        let r = tape.add(xr, hr)?;
        let r = tape.sigmoid(r);

        let rh = tape.mul(r, h)?;
        let xh = self.wh.forward(tape, x)?;
        let hh = self.uh.forward(tape, rh)?;
        let cand = tape.add(xh, hh)?;
        let cand = tape.tanh(cand);

        let keep = tape.one_minus(z);
        let a = tape.mul(keep, h)?;
        let b = tape.mul(z, cand)?;
        tape.add(a, b)
    }
}

/// Additive attention: `score_i = wᵀ tanh(W_k key + W_m mem_i)`,
/// output `Σ softmax(score)_i mem_i`.
#[derive(Clone, Debug)]
pub struct Attention {
    key: Linear,
    mem: Linear,
    score: String,
    attn_dim: usize,
}

impl Attention {
    pub fn new(prefix: &str, attn_dim: usize) -> Self {
        Attention {
            key: Linear::new(&format!("{prefix}.key")),
            mem: Linear::without_bias(&format!("{prefix}.mem")),
            score: format!("{prefix}.score"),
            attn_dim,
        }
    }

    pub fn declare(&self, spec: &mut ParamSpec, key_dim: usize, mem_dim: usize) {
        self.key.declare(spec, key_dim, self.attn_dim);
        self.mem.declare(spec, mem_dim, self.attn_dim);
        spec.matrix(self.score.clone(), 1, self.attn_dim);
    }

    /// Projects memories once so several keys can share them.
    pub fn project_memories<F: Real>(&self, tape: &mut Tape<'_, F>, memories: Var) -> Result<Var> {
        if tape.value(memories).rows() == 0 {
            return Err(TensorError::EmptyMemory);
        }
        self.mem.forward(tape, memories)
    }

    /// `key`: `1 x key_dim`; returns `1 x mem_dim`.
    pub fn forward<F: Real>(&self, tape: &mut Tape<'_, F>, key: Var, memories: Var) -> Result<Var> {
        let projected = self.project_memories(tape, memories)?;
        self.forward_projected(tape, key, memories, projected)
    }

    pub fn forward_projected<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        key: Var,
        memories: Var,
        projected: Var,
    ) -> Result<Var> {
        if tape.value(memories).rows() == 0 {
            return Err(TensorError::EmptyMemory);
        }
        let k = self.key.forward(tape, key)?;
        let pre = tape.add_row(projected, k)?;
        let act = tape.tanh(pre);
        let w = tape.param(&self.score)?;
        let scores = tape.matmul_bt(w, act)?;
        let weights = tape.softmax(scores)?;
        tape.matmul(weights, memories)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{init_params, ParamStore, Tensor};

    #[test]
    fn zero_gru_halves_state() {
        let cell = GruCell::new("g", 3, 4);
        let mut spec = ParamSpec::new();
        cell.declare(&mut spec);
        let base: ParamStore<f64> = init_params(&spec, 0).unwrap();
        let zeros = ParamStore::from_tensors(
            base.iter()
                .map(|(n, t)| (n.to_string(), Tensor::<f64>::zeros_shape(t.shape()))),
        )
        .unwrap();
        let mut tape = Tape::new(&zeros);
        let x = tape.constant(Tensor::from_f64(1, 3, &[1.0, -2.0, 3.0]).unwrap());
        let h = tape.constant(Tensor::from_f64(1, 4, &[0.4, -0.8, 1.2, 2.0]).unwrap());
        let out = cell.forward(&mut tape, x, h).unwrap();
        assert_eq!(tape.value(out).data(), &[0.2, -0.4, 0.6, 1.0]);
    }

    #[test]
    fn gru_output_dims_follow_state() {
        for i in 1..=10usize {
            let (inp, hid, rows) = (i, 11 - i, 1 + i % 3);
            let cell = GruCell::new("g", inp, hid);
            let mut spec = ParamSpec::new();
            cell.declare(&mut spec);
            let store: ParamStore<f32> = init_params(&spec, i as u64).unwrap();
            let mut tape = Tape::new(&store);
            let x = tape.constant(Tensor::zeros(rows, inp));
            let h = tape.constant(Tensor::zeros(rows, hid));
            let out = cell.forward(&mut tape, x, h).unwrap();
            assert_eq!(tape.value(out).shape(), &[rows, hid]);
        }
    }

    #[test]
    fn gru_rejects_bad_dims() {
        let cell = GruCell::new("g", 3, 4);
        let mut spec = ParamSpec::new();
        cell.declare(&mut spec);
        let store: ParamStore<f32> = init_params(&spec, 0).unwrap();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::zeros(1, 2));
        let h = tape.constant(Tensor::zeros(1, 4));
        assert!(matches!(
            cell.forward(&mut tape, x, h),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    fn attention_store() -> (Attention, ParamStore<f64>) {
        let att = Attention::new("att", 5);
        let mut spec = ParamSpec::new();
        att.declare(&mut spec, 3, 4);
        (att, init_params(&spec, 9).unwrap())
    }

    #[test]
    fn attention_single_memory_returns_it() {
        let (att, store) = attention_store();
        let mut tape = Tape::new(&store);
        let key = tape.constant(Tensor::from_f64(1, 3, &[0.3, 0.1, -0.7]).unwrap());
        let mem = tape.constant(Tensor::from_f64(1, 4, &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let out = att.forward(&mut tape, key, mem).unwrap();
        assert!(tape.value(out).max_abs_diff(tape.value(mem)) < 1e-12);
    }

    #[test]
    fn attention_identical_rows_return_common_row() {
        let (att, store) = attention_store();
        let row = [0.5, -1.5, 2.5, 0.0];
        let mut data = Vec::new();
        for _ in 0..3 {
            data.extend_from_slice(&row);
        }
        for key in [[1.0, 0.0, 0.0], [-3.0, 2.0, 9.0]] {
            let mut tape = Tape::new(&store);
            let k = tape.constant(Tensor::from_f64(1, 3, &key).unwrap());
            let mem = tape.constant(Tensor::from_f64(3, 4, &data).unwrap());
            let out = att.forward(&mut tape, k, mem).unwrap();
            let expect = Tensor::from_f64(1, 4, &row).unwrap();
            assert!(tape.value(out).max_abs_diff(&expect) < 1e-12);
        }
    }

    #[test]
    fn attention_empty_memory_is_error() {
        let (att, store) = attention_store();
        let mut tape = Tape::new(&store);
        let k = tape.constant(Tensor::zeros(1, 3));
        let mem = tape.constant(Tensor::zeros(0, 4));
        assert_eq!(att.forward(&mut tape, k, mem).unwrap_err(), TensorError::EmptyMemory);
    }
}
