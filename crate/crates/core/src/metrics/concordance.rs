use crate::error::{Error, Result};

/// Harrell's concordance index.
///
/// A pair (i, j) is comparable when `times[i] < times[j]` and sample i is an
/// event; equal times are never comparable. A comparable pair is concordant
/// when the earlier event has the strictly higher risk score; exactly tied
/// scores count 1/2. Errors when no pair is comparable.
pub fn concordance_index(risks: &[f64], times: &[f64], is_event: &[bool]) -> Result<f64> {
    if risks.len() != times.len() || times.len() != is_event.len() {
        return Err(Error::ShapeMismatch {
            op: "concordance_index",
            left: vec![risks.len(), times.len()],
            right: vec![is_event.len()],
        });
    }
    let mut comparable = 0u64;
    let mut score = 0.0f64;
    for i in 0..risks.len() {
        if !is_event[i] {
            continue;
        }
        for j in 0..risks.len() {
            if times[i] < times[j] {
                comparable += 1;
                if risks[i] > risks[j] {
                    score += 1.0;
                } else if risks[i] == risks[j] {
                    score += 0.5;
                }
            }
        }
    }
    if comparable == 0 {
        return Err(Error::UndefinedMetric {
            detail: "no comparable pairs for the concordance index".to_string(),
        });
    }
    Ok(score / comparable as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_and_inverted_rankings() {
        let times = vec![1.0, 2.0, 3.0, 4.0];
        let events = vec![true; 4];
        let risks = vec![4.0, 3.0, 2.0, 1.0];
        assert_eq!(concordance_index(&risks, &times, &events).unwrap(), 1.0);
        let inv: Vec<f64> = risks.iter().map(|r| -r).collect();
        assert_eq!(concordance_index(&inv, &times, &events).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_example() {
        // pairs: (t1,t2) C, (t1,t3) C, (t2,t3) D -> 2/3
        let got = concordance_index(&[3.0, 1.0, 2.0], &[1.0, 2.0, 3.0], &[true; 3]).unwrap();
        assert_relative_eq!(got, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn tied_scores_count_half() {
        let got = concordance_index(&[1.0, 1.0], &[1.0, 2.0], &[true, true]).unwrap();
        assert_eq!(got, 0.5);
    }

    #[test]
    fn censored_samples_only_anchor_when_event() {
        // censored first sample: its earlier time gives no comparable pair
        let times = vec![1.0, 2.0, 3.0];
        let events = vec![false, true, true];
        // only (2,3) is comparable
        let got = concordance_index(&[0.0, 5.0, 1.0], &times, &events).unwrap();
        assert_eq!(got, 1.0);
    }

    #[test]
    fn equal_times_are_not_comparable() {
        let err = concordance_index(&[1.0, 2.0], &[3.0, 3.0], &[true, true]);
        assert!(matches!(err, Err(Error::UndefinedMetric { .. })));
    }

    #[test]
    fn random_scores_hover_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 400;
        let times: Vec<f64> = (1..=n).map(|i| i as f64).collect();
        let events = vec![true; n];
        let risks: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let c = concordance_index(&risks, &times, &events).unwrap();
        assert!((c - 0.5).abs() < 0.05, "c = {c}");
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(concordance_index(&[1.0], &[1.0, 2.0], &[true, true]).is_err());
    }
}
