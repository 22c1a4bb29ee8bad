use rayon::prelude::*;
use regent::fixtures::TinyFixture;
use regent::model::RegentModel;

pub const STEP: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct Mismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel: f64,
}

/// Worst entry over every trainable scalar, by relative error
/// `|a − n| / max(|a|, |n|, floor)`.
pub fn worst_relative_error(fx: &TinyFixture, floor: f64) -> (usize, Mismatch) {
    let input = fx.input();
    let (_, grads) = fx.model.backward(&input, 1.0).unwrap();
    let mut coords = Vec::new();
    for name in fx.model.params.trainable_names() {
        let n = fx.model.params.expect(&name).len();
        coords.extend((0..n).map(|i| (name.clone(), i)));
    }
    let count = coords.len();
    let worst = coords
        .into_par_iter()
        .map(|(name, i)| {
            let eval = |delta: f64| {
                let mut m: RegentModel = fx.model.clone();
                m.params.get_mut(&name).unwrap().data_mut()[i] += delta;
                m.forward(&input).unwrap()
            };
            let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
            let analytic = grads.get(&name).unwrap().data()[i];
            let denom = analytic.abs().max(numeric.abs()).max(floor);
            let rel = if denom == 0.0 { 0.0 } else { (analytic - numeric).abs() / denom };
            Mismatch { param: name, index: i, analytic, numeric, rel }
        })
        .reduce_with(|a, b| if b.rel > a.rel { b } else { a })
        .unwrap();
    (count, worst)
}
