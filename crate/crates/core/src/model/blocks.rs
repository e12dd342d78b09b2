use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// `x · W + b` over the last axis; `W` is stored `[in, out]`.
#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        zero: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = if zero {
            store.insert(format!("{name}.w"), Tensor::zeros(&[fan_in, fan_out]))?
        } else {
            store.insert_linear_weight(format!("{name}.w"), fan_in, fan_out, rng)?
        };
        let b = bias
            .then(|| store.insert(format!("{name}.b"), Tensor::zeros(&[fan_out])))
            .transpose()?;
        Ok(Linear { w, b })
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        let y = x.matmul(tape.param(store, self.w))?;
        match self.b {
            Some(b) => y.add(tape.param(store, b)),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

pub(crate) const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: store.insert(format!("{name}.gain"), Tensor::full(&[dim], 1.0))?,
            bias: store.insert(format!("{name}.bias"), Tensor::zeros(&[dim]))?,
        })
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        let axis = x.shape().len() - 1;
        x.layer_norm(axis, tape.param(store, self.gain), tape.param(store, self.bias), LN_EPS)
    }
}

/// Bottleneck MLP producing a softmax weight vector:
/// `Softmax(W2 · Dropout(ReLU(W1 x + b1)) + b2)`.
#[derive(Debug, Clone)]
pub(crate) struct AttentionMlp {
    pub l1: Linear,
    pub l2: Linear,
    pub dropout: f64,
}

impl AttentionMlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        hidden: usize,
        dropout: f64,
        zero: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(AttentionMlp {
            l1: Linear::new(store, &format!("{name}.l1"), dim, hidden, true, false, rng)?,
            l2: Linear::new(store, &format!("{name}.l2"), hidden, dim, true, zero, rng)?,
            dropout,
        })
    }

    /// `pooled` is `[b, dim]`; returns `[b, dim]` rows on the simplex.
    pub fn weights<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        pooled: Var<'t>,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<Var<'t>> {
        let h = self.l1.forward(tape, store, pooled)?.relu()?;
        let h = h.dropout(self.dropout, training, rng)?;
        self.l2.forward(tape, store, h)?.softmax(1)
    }
}

/// Multi-head self-attention without projection biases. The per-head maps
/// `W^Q_i`, `W^K_i`, `W^V_i` are column blocks of one `[d, d]` matrix each,
/// and `W^O_i` are the row blocks of the output map, so the concatenation
/// followed by `W^O` equals the sum of per-head products.
#[derive(Debug, Clone)]
pub(crate) struct MultiHeadAttention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "model width {d} is not divisible by {heads} attention heads"
            )));
        }
        let mut w = |suffix: &str| store.insert_linear_weight(format!("{name}.{suffix}"), d, d, &mut *rng);
        Ok(MultiHeadAttention {
            wq: w("wq")?,
            wk: w("wk")?,
            wv: w("wv")?,
            wo: w("wo")?,
            heads,
        })
    }

    /// `x` is `[b, t, d]`. Returns the output and the attention maps
    /// `[b·heads, t, t]`.
    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let shape = x.shape();
        let (b, t, d) = (shape[0], shape[1], shape[2]);
        let (h, dk) = (self.heads, d / self.heads);
        let split = |v: Var<'t>| -> Result<Var<'t>> {
            v.reshape(&[b, t, h, dk])?
                .permute(&[0, 2, 1, 3])?
                .reshape(&[b * h, t, dk])
        };
        let q = split(x.matmul(tape.param(store, self.wq))?)?;
        let k = x
            .matmul(tape.param(store, self.wk))?
            .reshape(&[b, t, h, dk])?
            .permute(&[0, 2, 3, 1])?
            .reshape(&[b * h, dk, t])?;
        let v = split(x.matmul(tape.param(store, self.wv))?)?;
        let attn = q.bmm(k)?.scale(1.0 / (dk as f64).sqrt())?.softmax(2)?;
        let z = attn
            .bmm(v)?
            .reshape(&[b, h, t, dk])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, t, d])?;
        Ok((z.matmul(tape.param(store, self.wo))?, attn))
    }
}

/// Pre-norm encoder layer: `x + Drop(MHA(LN(x)))`, then
/// `x + Drop(FFN(LN(x)))` with a GELU feed-forward.
#[derive(Debug, Clone)]
pub(crate) struct EncoderLayer {
    pub ln1: LayerNorm,
    pub mha: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub dropout: f64,
}

impl EncoderLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        d_ff: usize,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(EncoderLayer {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d)?,
            mha: MultiHeadAttention::new(store, &format!("{name}.attn"), d, heads, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d)?,
            ff1: Linear::new(store, &format!("{name}.ff1"), d, d_ff, true, false, rng)?,
            ff2: Linear::new(store, &format!("{name}.ff2"), d_ff, d, true, false, rng)?,
            dropout,
        })
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: Var<'t>,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let (a, maps) = self.mha.forward(tape, store, self.ln1.forward(tape, store, x)?)?;
        let x = x.add(a.dropout(self.dropout, training, rng)?)?;
        let f = self
            .ff1
            .forward(tape, store, self.ln2.forward(tape, store, x)?)?
            .gelu()?;
        let f = self.ff2.forward(tape, store, f)?;
        Ok((x.add(f.dropout(self.dropout, training, rng)?)?, maps))
    }
}
