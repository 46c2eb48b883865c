//! Binary classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Default decision threshold on the positive-class probability.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Counts relative to a designated positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tp: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tn + self.fp + self.fn_ + self.tp
    }

    /// `[[tn, fp], [fn, tp]]`, rows are the actual class.
    pub fn as_matrix(&self) -> [[u64; 2]; 2] {
        [[self.tn, self.fp], [self.fn_, self.tp]]
    }

    /// The same predictions viewed with the other class as positive.
    pub fn swapped(&self) -> Confusion {
        Confusion {
            tn: self.tp,
            fp: self.fn_,
            fn_: self.fp,
            tp: self.tn,
        }
    }

    /// Negative predictive value `tn / (tn + fn)`, 0 when undefined.
    pub fn npv(&self) -> f64 {
        ratio(self.tn, self.tn + self.fn_).0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    /// No positive predictions; precision reported as 0.
    pub precision_undefined: bool,
    /// No positive labels; recall reported as 0.
    pub recall_undefined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub roc_auc: f64,
    pub confusion: Confusion,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn binary_metrics(labels: &[usize], predicted: &[usize], positive_class: usize) -> Result<BinaryMetrics> {
    if labels.is_empty() {
        return Err(invalid("cannot score an empty evaluation set"));
    }
    if labels.len() != predicted.len() {
        return Err(invalid(format!("{} labels vs {} predictions", labels.len(), predicted.len())));
    }
    let mut c = Confusion::default();
    for (&y, &p) in labels.iter().zip(predicted) {
        match (y == positive_class, p == positive_class) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    let (precision, precision_undefined) = ratio(c.tp, c.tp + c.fp);
    let (recall, recall_undefined) = ratio(c.tp, c.tp + c.fn_);
    Ok(BinaryMetrics {
        accuracy: (c.tp + c.tn) as f64 / c.total() as f64,
        precision,
        recall,
        f1: harmonic(precision, recall),
        confusion: c,
        precision_undefined,
        recall_undefined,
    })
}

/// Mann-Whitney AUC: `P(s+ > s-) + P(s+ = s-) / 2`, using average ranks
/// for tied scores.
pub fn roc_auc(labels: &[usize], scores: &[f64], positive_class: usize) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(invalid(format!("{} labels vs {} scores", labels.len(), scores.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(invalid("NaN score"));
    }
    let n_pos = labels.iter().filter(|&&y| y == positive_class).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(invalid("ROC AUC needs both classes present"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let avg = (i + j + 2) as f64 / 2.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == positive_class).count();
        pos_rank_sum += avg * pos_in_group as f64;
        i = j + 1;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    let u = pos_rank_sum - np * (np + 1.0) / 2.0;
    Ok(u / (np * nn))
}

/// Threshold the positive-class probabilities and compute every metric.
pub fn evaluate(labels: &[usize], positive_probs: &[f64], positive_class: usize, threshold: f64) -> Result<EvalResult> {
    if labels.len() != positive_probs.len() {
        return Err(invalid("labels and scores differ in length"));
    }
    let negative_class = usize::from(positive_class == 0);
    let predicted: Vec<usize> = positive_probs
        .iter()
        .map(|&p| if p >= threshold { positive_class } else { negative_class })
        .collect();
    let m = binary_metrics(labels, &predicted, positive_class)?;
    Ok(EvalResult {
        accuracy: m.accuracy,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        roc_auc: roc_auc(labels, positive_probs, positive_class)?,
        confusion: m.confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 1, 0, 1];
        let m = binary_metrics(&y, &y, 1).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn all_positive_predictor_on_test_split_counts() {
        let mut y = vec![0; 7505];
        y.extend(vec![1; 11728]);
        let pred = vec![1; y.len()];
        let m = binary_metrics(&y, &pred, 1).unwrap();
        let expected = 11728.0 / 19233.0;
        assert_eq!(m.accuracy, expected);
        assert_eq!(m.precision, expected);
        assert_eq!(m.recall, 1.0);
        assert!((m.accuracy - 0.6098).abs() < 1e-4);
        assert!((m.f1 - 2.0 * expected / (expected + 1.0)).abs() < 1e-15);
        assert_eq!(m.confusion.total(), 19233);
    }

    #[test]
    fn swapping_positive_class_transposes_confusion() {
        let y = [0, 0, 1, 1, 1, 0, 1];
        let p = [0, 1, 1, 0, 1, 0, 1];
        let a = binary_metrics(&y, &p, 1).unwrap();
        let b = binary_metrics(&y, &p, 0).unwrap();
        assert_eq!(b.confusion, a.confusion.swapped());
        assert_eq!(b.precision, a.confusion.npv());
        assert_eq!(a.precision, b.confusion.npv());
        assert_eq!(a.accuracy, b.accuracy);
    }

    #[test]
    fn empty_denominators_are_flagged() {
        let m = binary_metrics(&[0, 0], &[0, 0], 1).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(m.precision_undefined && m.recall_undefined);
        assert!(binary_metrics(&[], &[], 1).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0, 0, 1, 1], &[0.1, 0.2, 0.8, 0.9], 1).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0, 0, 1, 1], &[0.1, 0.4, 0.35, 0.8], 1).unwrap(), 0.75);
        assert_eq!(roc_auc(&[0, 1, 0, 1, 1], &[0.3; 5], 1).unwrap(), 0.5);
        assert!(roc_auc(&[1, 1], &[0.2, 0.3], 1).is_err());
        assert!(roc_auc(&[0, 1], &[f64::NAN, 0.3], 1).is_err());
    }

    fn brute_auc(y: &[usize], s: &[f64]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..y.len() {
            for j in 0..y.len() {
                if y[i] == 1 && y[j] == 0 {
                    den += 1.0;
                    num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                }
            }
        }
        num / den
    }

    fn labelled_scores() -> impl Strategy<Value = (Vec<usize>, Vec<f64>)> {
        (2usize..60).prop_flat_map(|n| {
            (
                proptest::collection::vec(0usize..2, n),
                // coarse scores so ties are common
                proptest::collection::vec((0u8..12).prop_map(|k| k as f64 / 11.0), n),
            )
        })
        .prop_filter("both classes", |(y, _)| y.contains(&0) && y.contains(&1))
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_count((y, s) in labelled_scores()) {
            let a = roc_auc(&y, &s, 1).unwrap();
            prop_assert!((a - brute_auc(&y, &s)).abs() < 1e-12);
        }

        #[test]
        fn auc_invariant_under_increasing_transform((y, s) in labelled_scores()) {
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert_eq!(roc_auc(&y, &s, 1).unwrap(), roc_auc(&y, &t, 1).unwrap());
        }

        #[test]
        fn accuracy_is_trace_over_total(y in proptest::collection::vec(0usize..2, 1..80), flip in proptest::collection::vec(any::<bool>(), 80)) {
            let p: Vec<usize> = y.iter().zip(&flip).map(|(&a, &f)| if f { 1 - a } else { a }).collect();
            let m = binary_metrics(&y, &p, 1).unwrap();
            let c = m.confusion;
            prop_assert_eq!(m.accuracy, (c.tp + c.tn) as f64 / c.total() as f64);
            prop_assert_eq!(c.total(), y.len() as u64);
            if m.precision + m.recall > 0.0 {
                prop_assert!((m.f1 - 2.0 * m.precision * m.recall / (m.precision + m.recall)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn permuted_labels_give_chance_auc() {
        use rand::seq::SliceRandom;
        let mut rng = crate::rng::stream(17, crate::rng::Domain::Shuffle, &[]);
        let n = 400;
        let scores: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let mut labels: Vec<usize> = (0..n).map(|i| usize::from(i >= n / 2)).collect();
        let trials = 200;
        let mut aucs = Vec::with_capacity(trials);
        for _ in 0..trials {
            labels.shuffle(&mut rng);
            aucs.push(roc_auc(&labels, &scores, 1).unwrap());
        }
        let mean = aucs.iter().sum::<f64>() / trials as f64;
        // null sd of the AUC for n1 = n2 = 200: sqrt((n1+n2+1)/(12 n1 n2))
        let se = (401.0f64 / (12.0 * 200.0 * 200.0)).sqrt() / (trials as f64).sqrt();
        assert!((mean - 0.5).abs() < 5.0 * se, "{mean}");
    }
}
