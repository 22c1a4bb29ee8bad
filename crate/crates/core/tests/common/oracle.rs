//! Straight-line recomputation of the scoring network with nested vectors.
//! Shares nothing with the library beyond reading parameter values.

use regent::autodiff::ParamStore;
use regent::fixtures::TinyFixture;
use regent::model::FusionKind;

type M = Vec<Vec<f64>>;

fn p(store: &ParamStore, name: &str) -> M {
    let m = store.get(name).unwrap_or_else(|| panic!("missing {name}"));
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn mm(a: &M, b: &M) -> M {
    let n = b[0].len();
    a.iter()
        .map(|row| {
            (0..n)
                .map(|j| row.iter().enumerate().map(|(k, x)| x * b[k][j]).sum())
                .collect()
        })
        .collect()
}

fn add(a: &M, b: &M) -> M {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect())
        .collect()
}

fn add_bias(a: &M, b: &M) -> M {
    a.iter()
        .map(|x| x.iter().zip(&b[0]).map(|(u, v)| u + v).collect())
        .collect()
}

fn map(a: &M, f: impl Fn(f64) -> f64) -> M {
    a.iter().map(|r| r.iter().map(|&x| f(x)).collect()).collect()
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn layer_norm(a: &M, gain: &M, bias: &M) -> M {
    a.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let sd = (var + 1e-5).sqrt();
            row.iter()
                .enumerate()
                .map(|(j, x)| (x - mean) / sd * gain[0][j] + bias[0][j])
                .collect()
        })
        .collect()
}

fn ln(store: &ParamStore, prefix: &str, a: &M) -> M {
    layer_norm(a, &p(store, &format!("{prefix}.gain")), &p(store, &format!("{prefix}.bias")))
}

fn linear(store: &ParamStore, prefix: &str, a: &M) -> M {
    let y = mm(a, &p(store, &format!("{prefix}.w")));
    match store.get(&format!("{prefix}.b")) {
        Some(_) => add_bias(&y, &p(store, &format!("{prefix}.b"))),
        None => y,
    }
}

/// Multi-head attention; keys with `keep[j] == false` are skipped.
fn attention(q: &M, k: &M, v: &M, heads: usize, keep: &[bool]) -> M {
    let d = q[0].len();
    let dk = d / heads;
    let mut out = vec![vec![0.0; d]; q.len()];
    for h in 0..heads {
        let cols = h * dk..(h + 1) * dk;
        for (i, qi) in q.iter().enumerate() {
            let logits: Vec<Option<f64>> = k
                .iter()
                .enumerate()
                .map(|(j, kj)| {
                    keep[j].then(|| cols.clone().map(|c| qi[c] * kj[c]).sum::<f64>() / (dk as f64).sqrt())
                })
                .collect();
            let max = logits.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| l.map_or(0.0, |x| (x - max).exp())).collect();
            let total: f64 = exps.iter().sum();
            for (j, e) in exps.iter().enumerate() {
                for c in cols.clone() {
                    out[i][c] += e / total * v[j][c];
                }
            }
        }
    }
    out
}

fn fuse(store: &ParamStore, prefix: &str, kind: FusionKind, at: &M, aet: &M, active: bool) -> M {
    let cat: M = at.iter().zip(aet).map(|(a, b)| a.iter().chain(b).cloned().collect()).collect();
    let convex = |gate: &M| -> M {
        (0..at.len())
            .map(|i| (0..at[0].len()).map(|j| gate[i][j] * at[i][j] + (1.0 - gate[i][j]) * aet[i][j]).collect())
            .collect()
    };
    match kind {
        FusionKind::LearnedSigmoid => {
            let z = ln(store, &format!("{prefix}.ln"), &mm(&cat, &p(store, &format!("{prefix}.wf.w"))));
            convex(&map(&z, sigmoid))
        }
        FusionKind::LearnedTanh => {
            let z = ln(store, &format!("{prefix}.ln"), &mm(&cat, &p(store, &format!("{prefix}.wf.w"))));
            convex(&map(&z, |x| (1.0 + x.tanh()) / 2.0))
        }
        FusionKind::GatedGelu => {
            let h = map(&linear(store, &format!("{prefix}.w1"), &cat), gelu);
            convex(&map(&linear(store, &format!("{prefix}.w2"), &h), sigmoid))
        }
        FusionKind::Additive => ln(store, &format!("{prefix}.ln"), &add(at, aet)),
        FusionKind::EqualWeighting => map(&add(at, aet), |x| 0.5 * x),
        FusionKind::HardSwitch => {
            if active {
                aet.clone()
            } else {
                at.clone()
            }
        }
        FusionKind::AttentionBased => {
            let w = |s: &str| p(store, &format!("{prefix}.attn.{s}.w"));
            let d = at[0].len();
            let dk = d / 2;
            let mut out = vec![vec![0.0; d]; at.len()];
            for i in 0..at.len() {
                // Two-row stack for position i.
                let stack = vec![at[i].clone(), aet[i].clone()];
                let q = mm(&vec![at[i].clone()], &w("q"));
                let k = mm(&stack, &w("k"));
                let v = mm(&stack, &w("v"));
                for h in 0..2 {
                    let cols = h * dk..(h + 1) * dk;
                    let l: Vec<f64> = (0..2)
                        .map(|s| cols.clone().map(|c| q[0][c] * k[s][c]).sum::<f64>() / (dk as f64).sqrt())
                        .collect();
                    let m = l[0].max(l[1]);
                    let e: Vec<f64> = l.iter().map(|x| (x - m).exp()).collect();
                    for c in cols {
                        out[i][c] = (e[0] * v[0][c] + e[1] * v[1][c]) / (e[0] + e[1]);
                    }
                }
            }
            mm(&out, &w("o"))
        }
    }
}

/// Score of the fixture pair recomputed from scratch.
pub fn oracle_score(fx: &TinyFixture) -> f64 {
    let c = &fx.model.config;
    let s = &fx.model.params;
    let d = c.encoder.hidden_dim;
    let heads = c.num_heads;
    let emb = p(s, "encoder.tok_emb");
    let lookup = |ids: &[u32]| -> M { ids.iter().map(|&i| emb[i as usize].clone()).collect() };
    let qx = lookup(&fx.query.subwords);
    let dx = lookup(&fx.doc.subwords);
    let doc_keep: Vec<bool> = (0..dx.len()).map(|i| i < fx.doc.length).collect();
    let alpha = p(s, "bm25_scale")[0][0];
    let active = !c.flags.disable_entities && !fx.query_entities.is_empty() && !fx.doc_entities.is_empty();
    let rows = |m: &regent::tensor::Matrix| -> M { (0..m.rows()).map(|r| m.row(r).to_vec()).collect() };
    let wp = p(s, "entity_projection");
    let eq = mm(&rows(&fx.query_entities.scaled_embeddings), &wp);
    let ed = mm(&rows(&fx.doc_entities.scaled_embeddings), &wp);

    let mut x = qx;
    for l in 0..c.num_cross_layers {
        let pre = format!("cross{l}");
        let q = mm(&x, &p(s, &format!("{pre}.token.q.w")));
        let mut k = mm(&dx, &p(s, &format!("{pre}.token.k.w")));
        let mut v = mm(&dx, &p(s, &format!("{pre}.token.v.w")));
        if !c.flags.disable_token_bm25 {
            for (i, r) in fx.relevance.scores.iter().enumerate() {
                for j in 0..d {
                    k[i][j] += alpha * r;
                    v[i][j] += alpha * r;
                }
            }
        }
        let at = mm(&attention(&q, &k, &v, heads, &doc_keep), &p(s, &format!("{pre}.token.o.w")));
        let aet = if active {
            let ee = |n: &str| p(s, &format!("{pre}.entity_entity.{n}.w"));
            let et = |n: &str| p(s, &format!("{pre}.entity_token.{n}.w"));
            let all = vec![true; ed.len()];
            let ae = attention(&mm(&eq, &ee("q")), &mm(&ed, &ee("k")), &mm(&ed, &ee("v")), heads, &all);
            let all = vec![true; ae.len()];
            attention(&mm(&x, &et("q")), &mm(&ae, &et("k")), &mm(&ae, &et("v")), heads, &all)
        } else {
            vec![vec![0.0; d]; x.len()]
        };
        let o = fuse(s, &format!("{pre}.fusion"), c.fusion, &at, &aet, active);
        let h = ln(s, &format!("{pre}.ln1"), &add(&x, &o));
        let ff = linear(s, &format!("{pre}.ffn.out"), &map(&linear(s, &format!("{pre}.ffn.in"), &h), gelu));
        x = ln(s, &format!("{pre}.ln2"), &add(&h, &ff));
    }
    let n = fx.query.length;
    let mut h: M = vec![(0..d).map(|j| (0..n).map(|i| x[i][j]).sum::<f64>() / n as f64).collect()];
    for b in 0..c.head_blocks {
        let z = map(&linear(s, &format!("head.block{b}"), &h), gelu);
        h = ln(s, &format!("head.block{b}.ln"), &add(&h, &z));
    }
    let neural = linear(s, "head.out", &h)[0][0];
    if c.flags.document_level_bm25 {
        let w = p(s, "doc_bm25.w");
        w[0][0] * neural + w[1][0] * fx.doc_bm25
    } else {
        neural
    }
}
