use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::nn::{self, Dropout};
use crate::tensor::Matrix;

/// How the token and entity pathways are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    LearnedSigmoid,
    GatedGelu,
    Additive,
    EqualWeighting,
    LearnedTanh,
    HardSwitch,
    AttentionBased,
}

impl FusionKind {
    pub const ALL: [FusionKind; 7] = [
        FusionKind::LearnedSigmoid,
        FusionKind::GatedGelu,
        FusionKind::Additive,
        FusionKind::EqualWeighting,
        FusionKind::LearnedTanh,
        FusionKind::HardSwitch,
        FusionKind::AttentionBased,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::LearnedSigmoid => "learned_sigmoid",
            Self::GatedGelu => "gated_gelu",
            Self::Additive => "additive",
            Self::EqualWeighting => "equal_weighting",
            Self::LearnedTanh => "learned_tanh",
            Self::HardSwitch => "hard_switch",
            Self::AttentionBased => "attention_based",
        }
    }

    /// Kinds whose output is `gate ⊙ A_t + (1 − gate) ⊙ A_et`.
    pub fn is_gated(self) -> bool {
        matches!(
            self,
            Self::LearnedSigmoid | Self::GatedGelu | Self::EqualWeighting | Self::LearnedTanh | Self::HardSwitch
        )
    }
}

impl std::str::FromStr for FusionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion kind `{s}`")))
    }
}

/// Slots in the attention-based fusion stack, and its head count.
const ATTENTION_FUSION_HEADS: usize = 2;

pub(crate) fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, kind: FusionKind, d: usize, rng: &mut R) {
    match kind {
        FusionKind::LearnedSigmoid | FusionKind::LearnedTanh => {
            nn::init_linear(store, &format!("{prefix}.wf"), 2 * d, d, false, rng);
            nn::init_layer_norm(store, &format!("{prefix}.ln"), d);
        }
        FusionKind::GatedGelu => {
            nn::init_linear(store, &format!("{prefix}.w1"), 2 * d, d, true, rng);
            nn::init_linear(store, &format!("{prefix}.w2"), d, d, true, rng);
        }
        FusionKind::Additive => nn::init_layer_norm(store, &format!("{prefix}.ln"), d),
        FusionKind::EqualWeighting | FusionKind::HardSwitch => {}
        FusionKind::AttentionBased => {
            for p in ["q", "k", "v", "o"] {
                nn::init_linear(store, &format!("{prefix}.attn.{p}"), d, d, false, rng);
            }
        }
    }
}

pub(crate) fn validate(store: &ParamStore, prefix: &str, kind: FusionKind, d: usize) -> Result<()> {
    match kind {
        FusionKind::LearnedSigmoid | FusionKind::LearnedTanh => {
            nn::expect_shape(store, &format!("{prefix}.wf.w"), (2 * d, d))?;
            nn::expect_shape(store, &format!("{prefix}.ln.gain"), (1, d))?;
        }
        FusionKind::GatedGelu => {
            nn::expect_shape(store, &format!("{prefix}.w1.w"), (2 * d, d))?;
            nn::expect_shape(store, &format!("{prefix}.w2.w"), (d, d))?;
        }
        FusionKind::Additive => nn::expect_shape(store, &format!("{prefix}.ln.gain"), (1, d))?,
        FusionKind::EqualWeighting | FusionKind::HardSwitch => {}
        FusionKind::AttentionBased => {
            if d % ATTENTION_FUSION_HEADS != 0 {
                return Err(Error::Config(format!(
                    "attention_based fusion needs an even hidden size, got {d}"
                )));
            }
            for p in ["q", "k", "v", "o"] {
                nn::expect_shape(store, &format!("{prefix}.attn.{p}.w"), (d, d))?;
            }
        }
    }
    Ok(())
}

pub(crate) struct Fused {
    pub fused: Var,
    /// Weight on the token pathway; absent for `additive`.
    pub gate: Option<Var>,
}

fn convex(g: &mut Graph, gate: Var, a_t: Var, a_et: Var) -> Var {
    let left = g.mul(gate, a_t);
    let inv = g.affine(gate, -1.0, 1.0);
    let right = g.mul(inv, a_et);
    g.add(left, right)
}

pub(crate) fn fuse_on(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    kind: FusionKind,
    a_t: Var,
    a_et: Var,
    entities_present: bool,
    dropout: &mut Dropout,
) -> Result<Fused> {
    let shape = g.value(a_t).shape();
    if g.value(a_et).shape() != shape {
        return Err(Error::shape(
            "fusion inputs",
            format!("{shape:?}"),
            format!("{:?}", g.value(a_et).shape()),
        ));
    }
    let (n, d) = shape;
    let gated = |g: &mut Graph, gate: Var| Fused {
        fused: convex(g, gate, a_t, a_et),
        gate: Some(gate),
    };
    Ok(match kind {
        FusionKind::LearnedSigmoid | FusionKind::LearnedTanh => {
            let cat = g.hconcat(&[a_t, a_et]);
            let z = nn::linear(g, store, cat, &format!("{prefix}.wf"));
            let z = nn::layer_norm(g, store, z, &format!("{prefix}.ln"));
            let gate = if kind == FusionKind::LearnedSigmoid {
                g.sigmoid(z)
            } else {
                let t = g.tanh(z);
                g.affine(t, 0.5, 0.5)
            };
            gated(g, gate)
        }
        FusionKind::GatedGelu => {
            let cat = g.hconcat(&[a_t, a_et]);
            let h = nn::linear(g, store, cat, &format!("{prefix}.w1"));
            let h = g.gelu(h);
            let h = dropout.apply(g, h);
            let z = nn::linear(g, store, h, &format!("{prefix}.w2"));
            let gate = g.sigmoid(z);
            gated(g, gate)
        }
        FusionKind::Additive => {
            let s = g.add(a_t, a_et);
            Fused {
                fused: nn::layer_norm(g, store, s, &format!("{prefix}.ln")),
                gate: None,
            }
        }
        FusionKind::EqualWeighting => {
            let gate = g.constant(Matrix::filled(n, d, 0.5));
            gated(g, gate)
        }
        FusionKind::HardSwitch => {
            let gate = g.constant(Matrix::filled(n, d, if entities_present { 0.0 } else { 1.0 }));
            Fused {
                fused: if entities_present { a_et } else { a_t },
                gate: Some(gate),
            }
        }
        FusionKind::AttentionBased => attention_fusion(g, store, prefix, a_t, a_et, d)?,
    })
}

/// Per position, the `A_t` row attends over the two-row stack
/// `[A_t row; A_et row]` with two heads; heads are concatenated and
/// output-projected. The reported gate is each head's weight on the token
/// slot, repeated across that head's columns.
fn attention_fusion(g: &mut Graph, store: &ParamStore, prefix: &str, a_t: Var, a_et: Var, d: usize) -> Result<Fused> {
    let heads = ATTENTION_FUSION_HEADS;
    if d % heads != 0 {
        return Err(Error::Config(format!(
            "attention_based fusion needs an even hidden size, got {d}"
        )));
    }
    let dk = d / heads;
    let proj = |g: &mut Graph, x: Var, p: &str| nn::linear(g, store, x, &format!("{prefix}.attn.{p}"));
    let q = proj(g, a_t, "q");
    let k_t = proj(g, a_t, "k");
    let k_e = proj(g, a_et, "k");
    let v_t = proj(g, a_t, "v");
    let v_e = proj(g, a_et, "v");
    let inv_sqrt = 1.0 / (dk as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut gates = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dk, dk);
        let logit = |g: &mut Graph, k: Var| {
            let kh = g.slice_cols(k, h * dk, dk);
            let prod = g.mul(qh, kh);
            let s = g.row_sum(prod);
            g.scale(s, inv_sqrt)
        };
        let l_t = logit(g, k_t);
        let l_e = logit(g, k_e);
        let logits = g.hconcat(&[l_t, l_e]);
        let w = g.softmax(logits, None)?;
        let w_t = g.slice_cols(w, 0, 1);
        let w_e = g.slice_cols(w, 1, 1);
        let vth = g.slice_cols(v_t, h * dk, dk);
        let veh = g.slice_cols(v_e, h * dk, dk);
        let a = g.mul_col(w_t, vth);
        let b = g.mul_col(w_e, veh);
        outs.push(g.add(a, b));
        let ones = g.constant(Matrix::filled(g.value(a_t).rows(), dk, 1.0));
        gates.push(g.mul_col(w_t, ones));
    }
    let cat = g.hconcat(&outs);
    let fused = proj(g, cat, "o");
    let gate = g.hconcat(&gates);
    Ok(Fused {
        fused,
        gate: Some(gate),
    })
}
