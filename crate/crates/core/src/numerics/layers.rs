//! Parameterized building blocks wired on top of [`Graph`].

use rand_chacha::ChaCha8Rng;

use super::conv::{ConvSpec, TransposedConvSpec};
use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

/// Attention heads per layer.
pub const ATTENTION_HEADS: usize = 2;

/// Dense map over rows: `[T × in] -> [T × out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: store.uniform(format!("{name}.weight"), &[in_dim, out_dim], in_dim, rng),
            bias: store.uniform(format!("{name}.bias"), &[out_dim], in_dim, rng),
            in_dim,
            out_dim,
        }
    }

    pub fn param_count(in_dim: usize, out_dim: usize) -> usize {
        in_dim * out_dim + out_dim
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w)?;
        g.add_row_bias(y, b)
    }

    /// Sets weight and bias to zero.
    pub fn zero(&self, store: &mut ParamStore) {
        store.get_mut(self.weight).data_mut().fill(0.0);
        store.get_mut(self.bias).data_mut().fill(0.0);
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv1d {
    pub fn new(store: &mut ParamStore, name: &str, spec: ConvSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            weight: store.uniform(format!("{name}.weight"), &spec.weight_shape(), spec.fan_in(), rng),
            bias: store.uniform(format!("{name}.bias"), &[spec.out_channels], spec.fan_in(), rng),
            spec,
        })
    }

    /// Channel-major input `[C × T]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv1d(x, w, b, self.spec)
    }

    /// Time-major input `[T × C]`, time-major output.
    pub fn forward_tc(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let xc = g.transpose(x)?;
        let y = self.forward(g, store, xc)?;
        g.transpose(y)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    pub spec: TransposedConvSpec,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvTranspose1d {
    pub fn new(store: &mut ParamStore, name: &str, spec: TransposedConvSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            weight: store.uniform(format!("{name}.weight"), &spec.weight_shape(), spec.fan_in(), rng),
            bias: store.uniform(format!("{name}.bias"), &[spec.out_channels], spec.fan_in(), rng),
            spec,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv_transpose1d(x, w, b, self.spec)
    }

    pub fn zero(&self, store: &mut ParamStore) {
        store.get_mut(self.weight).data_mut().fill(0.0);
        store.get_mut(self.bias).data_mut().fill(0.0);
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.ones(format!("{name}.gain"), &[dim]),
            bias: store.zeros(format!("{name}.bias"), &[dim]),
            dim,
        }
    }

    pub fn param_count(dim: usize) -> usize {
        2 * dim
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm_rows(x, gain, bias, Self::EPS)
    }
}

/// Multi-head self-attention over `[T × D]` with a lower-triangular mask.
#[derive(Debug, Clone)]
pub struct CausalSelfAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub dim: usize,
    pub heads: usize,
}

/// Output of one attention pass with the per-head weight matrices.
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Vec<Var>,
}

impl CausalSelfAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "attention width {dim} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, rng),
            key: Linear::new(store, &format!("{name}.key"), dim, dim, rng),
            value: Linear::new(store, &format!("{name}.value"), dim, dim, rng),
            output: Linear::new(store, &format!("{name}.output"), dim, dim, rng),
            dim,
            heads,
        })
    }

    pub fn param_count(dim: usize) -> usize {
        4 * Linear::param_count(dim, dim)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<AttentionOutput> {
        let shape = g.shape(x);
        if shape.len() != 2 || shape[1] != self.dim {
            return Err(Error::shape_in(
                "causal_self_attention",
                format!("width: expected {}, got {:?}", self.dim, shape),
            ));
        }
        let q = self.query.forward(g, store, x)?;
        let k = self.key.forward(g, store, x)?;
        let v = self.value.forward(g, store, x)?;
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let s = g.matmul(qh, kt)?;
            let s = g.scale(s, scale)?;
            let a = g.causal_softmax(s)?;
            outs.push(g.matmul(a, vh)?);
            weights.push(a);
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
        let output = self.output.forward(g, store, cat)?;
        Ok(AttentionOutput { output, weights })
    }
}

/// One LSTM cell with gate order input, forget, candidate, output.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmCell {
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, hidden_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w_input: store.uniform(format!("{name}.w_input"), &[input_dim, 4 * hidden_dim], hidden_dim, rng),
            w_hidden: store.uniform(format!("{name}.w_hidden"), &[hidden_dim, 4 * hidden_dim], hidden_dim, rng),
            bias: store.uniform(format!("{name}.bias"), &[4 * hidden_dim], hidden_dim, rng),
            input_dim,
            hidden_dim,
        }
    }

    pub fn param_count(input_dim: usize, hidden_dim: usize) -> usize {
        (input_dim + hidden_dim + 1) * 4 * hidden_dim
    }

    /// `x`: `[1 × input]`, `h`, `c`: `[1 × hidden]`. Returns `(h', c')`.
    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hd = self.hidden_dim;
        if g.shape(x) != [1, self.input_dim] || g.shape(h) != [1, hd] || g.shape(c) != [1, hd] {
            return Err(Error::shape_in(
                "lstm_step",
                format!("x {:?}, h {:?}, c {:?}", g.shape(x), g.shape(h), g.shape(c)),
            ));
        }
        let wi = g.param(store, self.w_input);
        let wh = g.param(store, self.w_hidden);
        let b = g.param(store, self.bias);
        let zx = g.matmul(x, wi)?;
        let zh = g.matmul(h, wh)?;
        let z = g.add(zx, zh)?;
        let z = g.add_row_bias(z, b)?;
        let zi = g.slice_cols(z, 0, hd)?;
        let zf = g.slice_cols(z, hd, hd)?;
        let zg = g.slice_cols(z, 2 * hd, hd)?;
        let zo = g.slice_cols(z, 3 * hd, hd)?;
        let i = g.sigmoid(zi)?;
        let f = g.sigmoid(zf)?;
        let cand = g.tanh(zg)?;
        let o = g.sigmoid(zo)?;
        let fc = g.mul(f, c)?;
        let ic = g.mul(i, cand)?;
        let c_next = g.add(fc, ic)?;
        let tc = g.tanh(c_next)?;
        let h_next = g.mul(o, tc)?;
        Ok((h_next, c_next))
    }
}

/// Pre-norm transformer block with causal attention and a causal
/// convolutional feed-forward (`dim -> 2·dim -> dim`).
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub norm_attn: LayerNorm,
    pub attention: CausalSelfAttention,
    pub norm_ffn: LayerNorm,
    pub ffn_in: Conv1d,
    pub ffn_out: Conv1d,
    pub dropout: f64,
}

impl TransformerBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        kernel: usize,
        groups: usize,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let (s_in, s_out) = Self::ffn_specs(dim, kernel, groups);
        Ok(Self {
            norm_attn: LayerNorm::new(store, &format!("{name}.norm_attn"), dim),
            attention: CausalSelfAttention::new(store, &format!("{name}.attention"), dim, ATTENTION_HEADS, rng)?,
            norm_ffn: LayerNorm::new(store, &format!("{name}.norm_ffn"), dim),
            ffn_in: Conv1d::new(store, &format!("{name}.ffn_in"), s_in, rng)?,
            ffn_out: Conv1d::new(store, &format!("{name}.ffn_out"), s_out, rng)?,
            dropout,
        })
    }

    fn ffn_specs(dim: usize, kernel: usize, groups: usize) -> (ConvSpec, ConvSpec) {
        (
            ConvSpec::new(dim, 2 * dim, kernel).groups(groups),
            ConvSpec::new(2 * dim, dim, kernel).groups(groups),
        )
    }

    pub fn param_count(dim: usize, kernel: usize, groups: usize) -> usize {
        let (a, b) = Self::ffn_specs(dim, kernel, groups);
        2 * LayerNorm::param_count(dim) + CausalSelfAttention::param_count(dim) + a.param_count() + b.param_count()
    }

    /// `[T × dim] -> [T × dim]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let n = self.norm_attn.forward(g, store, x)?;
        let a = self.attention.forward(g, store, n)?.output;
        let a = g.dropout(a, self.dropout)?;
        let x = g.add(x, a)?;
        let n = self.norm_ffn.forward(g, store, x)?;
        let h = self.ffn_in.forward_tc(g, store, n)?;
        let h = g.relu(h)?;
        let h = self.ffn_out.forward_tc(g, store, h)?;
        let h = g.dropout(h, self.dropout)?;
        g.add(x, h)
    }
}

/// Sinusoidal position table `[T × dim]`.
pub fn positional_encoding(t_len: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; t_len * dim];
    for t in 0..t_len {
        for i in 0..dim {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let ang = t as f64 * rate;
            data[t * dim + i] = if i % 2 == 0 { ang.sin() } else { ang.cos() };
        }
    }
    Tensor::new(vec![t_len, dim], data).expect("shape")
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    #[test]
    fn single_position_attention_is_one() {
        let mut store = ParamStore::new();
        let attn = CausalSelfAttention::new(&mut store, "a", 4, 2, &mut rng()).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![0.3, -0.2, 0.5, 0.1]]));
        let out = attn.forward(&mut g, &store, x).unwrap();
        for w in out.weights {
            assert_eq!(g.value(w).data(), &[1.0]);
        }
    }

    #[test]
    fn zero_projections_give_uniform_prefix_weights() {
        let mut store = ParamStore::new();
        let attn = CausalSelfAttention::new(&mut store, "a", 4, 2, &mut rng()).unwrap();
        attn.query.zero(&mut store);
        attn.key.zero(&mut store);
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![5, 4], (0..20).map(|i| i as f64 * 0.1).collect()).unwrap());
        let out = attn.forward(&mut g, &store, x).unwrap();
        let w = g.value(out.weights[0]);
        for t in 0..5 {
            let row_sum: f64 = w.row(t).iter().sum();
            assert!((row_sum - 1.0).abs() < 1e-12);
            for j in 0..5 {
                let expect = if j <= t { 1.0 / (t + 1) as f64 } else { 0.0 };
                assert!((w.at2(t, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn width_must_divide_heads() {
        let mut store = ParamStore::new();
        assert!(CausalSelfAttention::new(&mut store, "a", 5, 2, &mut rng()).is_err());
    }

    #[test]
    fn zero_lstm_outputs_zero() {
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "l", 3, 4, &mut rng());
        for id in [cell.w_input, cell.w_hidden, cell.bias] {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![1.0, -2.0, 0.5]]));
        let h = g.constant(Tensor::from_rows(&[vec![0.3, 0.1, -0.4, 0.9]]));
        let c = g.constant(Tensor::zeros(&[1, 4]));
        let (h2, c2) = cell.step(&mut g, &store, x, h, c).unwrap();
        assert!(g.value(h2).data().iter().all(|&v| v == 0.0));
        assert!(g.value(c2).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "l", 2, 3, &mut rng());
        for j in 3..6 {
            store.get_mut(cell.bias).data_mut()[j] = 50.0;
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![0.4, -0.7]]));
        let h = g.constant(Tensor::from_rows(&[vec![0.2, 0.0, -0.3]]));
        let c0 = vec![0.5, -1.2, 2.0];
        let c = g.constant(Tensor::from_rows(&[c0.clone()]));
        let (h2, c2) = cell.step(&mut g, &store, x, h, c).unwrap();
        // recompute i ⊙ g independently
        let wi = store.get(cell.w_input).clone();
        let wh = store.get(cell.w_hidden).clone();
        let b = store.get(cell.bias).clone();
        let xs = [0.4, -0.7];
        let hs = [0.2, 0.0, -0.3];
        for j in 0..3 {
            let z = |col: usize| -> f64 {
                b.data()[col]
                    + (0..2).map(|p| xs[p] * wi.at2(p, col)).sum::<f64>()
                    + (0..3).map(|p| hs[p] * wh.at2(p, col)).sum::<f64>()
            };
            let i = 1.0 / (1.0 + (-z(j)).exp());
            let cand = z(6 + j).tanh();
            assert!((g.value(c2).data()[j] - (c0[j] + i * cand)).abs() < 1e-9);
        }
        assert!(g.value(h2).data().iter().all(|v| v.abs() < 1.0));
    }
}
