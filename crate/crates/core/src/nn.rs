//! Layers shared by the encoder, the scoring network and the entity scorer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Dropout state for one forward pass. Without an RNG dropout is the identity.
pub struct Dropout {
    pub p: f64,
    pub rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn disabled() -> Self {
        Self { p: 0.0, rng: None }
    }

    pub fn apply(&mut self, g: &mut Graph, x: Var) -> Var {
        match self.rng.as_mut() {
            Some(rng) if self.p > 0.0 => g.dropout(x, self.p, rng),
            _ => x,
        }
    }
}

/// Uniform in `[−1/√fan_in, 1/√fan_in]`.
pub fn init_matrix<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    rows: usize,
    cols: usize,
    fan_in: usize,
    rng: &mut R,
) {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    store.insert(name, Matrix::uniform(rows, cols, bound, rng));
}

pub fn init_linear<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    bias: bool,
    rng: &mut R,
) {
    init_matrix(store, &format!("{prefix}.w"), fan_in, fan_out, fan_in, rng);
    if bias {
        init_matrix(store, &format!("{prefix}.b"), 1, fan_out, fan_in, rng);
    }
}

pub fn init_layer_norm(store: &mut ParamStore, prefix: &str, d: usize) {
    store.insert(format!("{prefix}.gain"), Matrix::filled(1, d, 1.0));
    store.insert(format!("{prefix}.bias"), Matrix::zeros(1, d));
}

/// `x · W (+ b)` using `{prefix}.w` and, when present, `{prefix}.b`.
pub fn linear(g: &mut Graph, store: &ParamStore, x: Var, prefix: &str) -> Var {
    let w = g.param(store, &format!("{prefix}.w"));
    let y = g.matmul(x, w);
    let bias = format!("{prefix}.b");
    if store.contains(&bias) {
        let b = g.param(store, &bias);
        g.add_row(y, b)
    } else {
        y
    }
}

pub fn layer_norm(g: &mut Graph, store: &ParamStore, x: Var, prefix: &str) -> Var {
    let gain = g.param(store, &format!("{prefix}.gain"));
    let bias = g.param(store, &format!("{prefix}.bias"));
    g.layer_norm(x, gain, bias)
}

/// Output of multi-head scaled dot-product attention.
pub struct Attention {
    /// Heads concatenated, `n_q × d`.
    pub output: Var,
    /// Per-head `n_q × n_k` weight matrices.
    pub weights: Vec<Var>,
}

/// `softmax(Q_h K_hᵀ / √d_k) V_h` per head over column blocks of width
/// `d / heads`, heads concatenated. `key_mask[j] == false` hides key `j`.
pub fn multi_head_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    key_mask: Option<&[bool]>,
) -> Result<Attention> {
    let d = g.value(q).cols();
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!(
            "hidden size {d} is not divisible by {heads} heads"
        )));
    }
    if g.value(k).cols() != d || g.value(v).cols() != d {
        return Err(Error::shape("attention projections", d, g.value(k).cols()));
    }
    if g.value(k).rows() != g.value(v).rows() {
        return Err(Error::shape("attention keys/values", g.value(k).rows(), g.value(v).rows()));
    }
    let dk = d / heads;
    let inv_sqrt = 1.0 / (dk as f64).sqrt();
    let mut outputs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, h * dk, dk),
                g.slice_cols(k, h * dk, dk),
                g.slice_cols(v, h * dk, dk),
            )
        };
        let logits = g.matmul_t(qh, kh);
        let logits = g.scale(logits, inv_sqrt);
        let w = g.softmax(logits, key_mask)?;
        outputs.push(g.matmul(w, vh));
        weights.push(w);
    }
    let output = if heads == 1 {
        outputs[0]
    } else {
        g.hconcat(&outputs)
    };
    Ok(Attention { output, weights })
}

/// `W₂ · gelu(W₁ x + b₁) + b₂` with dropout after the activation.
pub fn feed_forward(
    g: &mut Graph,
    store: &ParamStore,
    x: Var,
    prefix: &str,
    dropout: &mut Dropout,
) -> Var {
    let h = linear(g, store, x, &format!("{prefix}.in"));
    let h = g.gelu(h);
    let h = dropout.apply(g, h);
    linear(g, store, h, &format!("{prefix}.out"))
}

pub fn init_feed_forward<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    d: usize,
    d_ff: usize,
    rng: &mut R,
) {
    init_linear(store, &format!("{prefix}.in"), d, d_ff, true, rng);
    init_linear(store, &format!("{prefix}.out"), d_ff, d, true, rng);
}

/// Checks that `name` exists with the given shape.
pub fn expect_shape(store: &ParamStore, name: &str, shape: (usize, usize)) -> Result<()> {
    match store.get(name) {
        None => Err(Error::Config(format!("parameter `{name}` missing"))),
        Some(m) if m.shape() != shape => Err(Error::shape(
            format!("parameter `{name}`"),
            format!("{shape:?}"),
            format!("{:?}", m.shape()),
        )),
        Some(_) => Ok(()),
    }
}
