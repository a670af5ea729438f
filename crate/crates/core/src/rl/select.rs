//! Rollout filtering by query accuracy and Best-of-N selection.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Inclusive accuracy band kept for RL.
pub const ACCURACY_BAND: (f64, f64) = (0.2, 0.8);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryAccuracy {
    pub query_id: u64,
    pub accuracy: f64,
}

pub fn in_band(accuracy: f64) -> bool {
    (ACCURACY_BAND.0..=ACCURACY_BAND.1).contains(&accuracy)
}

/// Keeps queries whose accuracy lies in `[0.2, 0.8]`, preserving order.
pub fn filter_rollouts(queries: &[QueryAccuracy]) -> Result<Vec<QueryAccuracy>> {
    if let Some(q) = queries.iter().find(|q| !(0.0..=1.0).contains(&q.accuracy)) {
        return Err(invalid(format!("accuracy {} of query {} outside [0,1]", q.accuracy, q.query_id)));
    }
    Ok(queries.iter().copied().filter(|q| in_band(q.accuracy)).collect())
}

/// Index of the highest score; the lowest index wins ties.
pub fn select_best_of_n<T>(candidates: &[T], scores: &[f64]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(invalid("no candidates"));
    }
    if candidates.len() != scores.len() {
        return Err(invalid(format!("{} candidates but {} scores", candidates.len(), scores.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(invalid("NaN score"));
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn qs(acc: &[f64]) -> Vec<QueryAccuracy> {
        acc.iter()
            .enumerate()
            .map(|(i, &accuracy)| QueryAccuracy {
                query_id: i as u64,
                accuracy,
            })
            .collect()
    }

    #[test]
    fn filter_examples() {
        let kept = filter_rollouts(&qs(&[0.1, 0.2, 0.5, 0.8, 0.9])).unwrap();
        assert_eq!(kept.iter().map(|q| q.accuracy).collect::<Vec<_>>(), vec![0.2, 0.5, 0.8]);
        assert!(filter_rollouts(&qs(&[0.0; 4])).unwrap().is_empty());
        assert_eq!(filter_rollouts(&qs(&[0.5; 3])).unwrap().len(), 3);
        assert!(filter_rollouts(&qs(&[1.5])).is_err());
    }

    #[test]
    fn best_of_n_examples() {
        assert_eq!(select_best_of_n(&["a", "b", "c"], &[0.1, 0.9, 0.4]).unwrap(), 1);
        assert_eq!(select_best_of_n(&["a"], &[0.3]).unwrap(), 0);
        assert_eq!(select_best_of_n(&["a", "b"], &[0.5, 0.5]).unwrap(), 0);
        assert!(select_best_of_n::<u8>(&[], &[]).is_err());
        assert!(select_best_of_n(&[1, 2], &[0.5]).is_err());
    }

    proptest! {
        #[test]
        fn argmax_survives_monotone_maps(scores in prop::collection::vec(-5.0f64..5.0, 1..16)) {
            let idx = select_best_of_n(&scores, &scores).unwrap();
            let mapped: Vec<f64> = scores.iter().map(|s| (0.7 * s).exp() + 3.0).collect();
            prop_assert_eq!(select_best_of_n(&scores, &mapped).unwrap(), idx);
            let cubed: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
            prop_assert_eq!(select_best_of_n(&scores, &cubed).unwrap(), idx);
        }
    }
}
