mod common;

use proptest::prelude::*;
use regent::eval::{average_precision, ndcg_at_k, precision_at_k};
use regent::trec::{Qrels, RunEntry};

#[test]
fn matches_reference_trec_eval() {
    let dev = common::parity::max_deviation();
    assert!(dev < 5e-5, "deviation {dev}");
}

#[test]
fn trec_eval_tie_order_matters_on_fixture() {
    // The fixture file lists tied documents in ascending id order; scoring
    // that order verbatim would disagree with the reference.
    let (run, qrels, reference) = common::parity::load();
    let mut differs = false;
    for (q, r) in &reference {
        let entries: Vec<RunEntry> = run
            .get(q)
            .iter()
            .enumerate()
            .map(|(i, e)| RunEntry::new(e.doc_id.clone(), -(i as f64)))
            .collect();
        differs |= (average_precision(&entries, &qrels, q) - r.map).abs() > 1e-9;
    }
    assert!(differs);
}

fn run_of(len: usize) -> Vec<RunEntry> {
    (0..len).map(|i| RunEntry::new(format!("d{i:02}"), (len - i) as f64)).collect()
}

proptest! {
    #[test]
    fn moving_a_relevant_doc_up_never_hurts(
        grades in prop::collection::vec(0u32..3, 2..30),
        pick in any::<prop::sample::Index>(),
    ) {
        prop_assume!(grades.iter().any(|&g| g > 0));
        let mut qrels = Qrels::new();
        for (i, &g) in grades.iter().enumerate() {
            qrels.insert("q", format!("d{i:02}"), g);
        }
        let run = run_of(grades.len());
        let i = pick.index(grades.len() - 1) + 1;
        prop_assume!(grades[i] > grades[i - 1]);
        let mut swapped = run.clone();
        let (hi, lo) = (swapped[i - 1].score, swapped[i].score);
        swapped[i - 1].score = lo;
        swapped[i].score = hi;
        let metrics = |r: &[RunEntry]| {
            (average_precision(r, &qrels, "q"), ndcg_at_k(r, &qrels, "q", 20), precision_at_k(r, &qrels, "q", 20))
        };
        let (a0, n0, p0) = metrics(&run);
        let (a1, n1, p1) = metrics(&swapped);
        prop_assert!(a1 >= a0 - 1e-12 && n1 >= n0 - 1e-12 && p1 >= p0);
        for v in [a0, n0, p0, a1, n1, p1] {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        }
    }
}
