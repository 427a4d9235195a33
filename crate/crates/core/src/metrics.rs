//! Accuracy, pooled equal error rate, and minimum average detection cost
//! (Cavg·100) over trial scores.
//!
//! EER is located by sweeping every distinct score as an accept-if-≥θ
//! threshold and taking the balanced error (P_miss+P_fa)/2 at the best
//! operating point. Cavg uses a single global threshold over all class
//! scores with P_target = 0.5 and unit costs. Both are validated against
//! exhaustive brute-force enumeration in tests.

use crate::scores::TrialScores;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("utterance {0} has no label")]
    Unlabeled(String),
    #[error("trial set needs at least one target and one non-target")]
    DegenerateTrials,
    #[error("class {0} has no trials")]
    EmptyClass(usize),
    #[error("no scores")]
    Empty,
}

/// (score, is_target) trials from one-vs-rest expansion: each utterance with
/// K classes yields one target and K−1 non-target trials.
#[derive(Clone, Debug, Default)]
pub struct TrialSet {
    pub trials: Vec<(f64, bool)>,
}

impl TrialSet {
    pub fn from_scores(scores: &[TrialScores]) -> Result<TrialSet, MetricsError> {
        let mut trials = Vec::new();
        for s in scores {
            let label = s
                .label
                .ok_or_else(|| MetricsError::Unlabeled(s.utt_id.clone()))?;
            for (j, &v) in s.scores.iter().enumerate() {
                trials.push((v, j == label));
            }
        }
        Ok(TrialSet { trials })
    }

    /// Trials of the one-vs-rest detector for a single target class.
    pub fn for_class(scores: &[TrialScores], class: usize) -> Result<TrialSet, MetricsError> {
        let mut trials = Vec::new();
        for s in scores {
            let label = s
                .label
                .ok_or_else(|| MetricsError::Unlabeled(s.utt_id.clone()))?;
            trials.push((s.scores[class], label == class));
        }
        Ok(TrialSet { trials })
    }
}

/// Percent of utterances whose argmax score matches the label. Ties break
/// toward the lowest class index.
pub fn accuracy(scores: &[TrialScores]) -> Result<f64, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut correct = 0usize;
    for s in scores {
        let label = s
            .label
            .ok_or_else(|| MetricsError::Unlabeled(s.utt_id.clone()))?;
        let mut best = 0usize;
        for (j, &v) in s.scores.iter().enumerate() {
            if v > s.scores[best] {
                best = j;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / scores.len() as f64)
}

/// Miss/false-alarm rates at an accept-if-score≥θ threshold.
fn rates_at(trials: &[(f64, bool)], theta: f64, n_target: usize, n_non: usize) -> (f64, f64) {
    let mut miss = 0usize;
    let mut fa = 0usize;
    for &(s, is_target) in trials {
        if is_target && s < theta {
            miss += 1;
        }
        if !is_target && s >= theta {
            fa += 1;
        }
    }
    (miss as f64 / n_target as f64, fa as f64 / n_non as f64)
}

fn candidate_thresholds(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut t: Vec<f64> = values.collect();
    t.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    t.dedup();
    // one sentinel above the max rejects everything
    if let Some(&max) = t.last() {
        t.push(max + 1.0);
    }
    t
}

/// Pooled equal error rate (percent): the balanced error at the best single
/// threshold over all trials.
pub fn eer(trials: &TrialSet) -> Result<f64, MetricsError> {
    let n_target = trials.trials.iter().filter(|t| t.1).count();
    let n_non = trials.trials.len() - n_target;
    if n_target == 0 || n_non == 0 {
        return Err(MetricsError::DegenerateTrials);
    }
    let mut best = f64::INFINITY;
    for theta in candidate_thresholds(trials.trials.iter().map(|t| t.0)) {
        let (pm, pf) = rates_at(&trials.trials, theta, n_target, n_non);
        best = best.min(0.5 * (pm + pf));
    }
    Ok(100.0 * best)
}

/// Mean of the per-class one-vs-rest EERs (secondary diagnostic; the pooled
/// EER is the primary number).
pub fn eer_language_averaged(scores: &[TrialScores]) -> Result<f64, MetricsError> {
    let k = scores.first().map(|s| s.scores.len()).ok_or(MetricsError::Empty)?;
    let mut total = 0.0;
    for class in 0..k {
        total += eer(&TrialSet::for_class(scores, class)?)?;
    }
    Ok(total / k as f64)
}

/// DET operating points (P_miss, P_fa) at every candidate threshold,
/// for CSV emission.
pub fn det_points(trials: &TrialSet) -> Result<Vec<(f64, f64)>, MetricsError> {
    let n_target = trials.trials.iter().filter(|t| t.1).count();
    let n_non = trials.trials.len() - n_target;
    if n_target == 0 || n_non == 0 {
        return Err(MetricsError::DegenerateTrials);
    }
    Ok(candidate_thresholds(trials.trials.iter().map(|t| t.0))
        .into_iter()
        .map(|theta| rates_at(&trials.trials, theta, n_target, n_non))
        .collect())
}

/// Minimum Cavg·100 over a single global threshold: hard decisions, priors
/// P_target = 0.5, unit miss/false-alarm costs, false alarms averaged over
/// the K−1 non-target classes.
pub fn min_cavg(scores: &[TrialScores]) -> Result<f64, MetricsError> {
    let k = scores.first().map(|s| s.scores.len()).ok_or(MetricsError::Empty)?;
    if k < 2 {
        return Err(MetricsError::DegenerateTrials);
    }
    let mut class_count = vec![0usize; k];
    for s in scores {
        let label = s
            .label
            .ok_or_else(|| MetricsError::Unlabeled(s.utt_id.clone()))?;
        class_count[label] += 1;
    }
    if let Some(empty) = class_count.iter().position(|&c| c == 0) {
        return Err(MetricsError::EmptyClass(empty));
    }

    let thetas = candidate_thresholds(scores.iter().flat_map(|s| s.scores.iter().copied()));
    let mut best = f64::INFINITY;
    for theta in thetas {
        best = best.min(cavg_at(scores, &class_count, k, theta));
    }
    Ok(100.0 * best)
}

fn cavg_at(scores: &[TrialScores], class_count: &[usize], k: usize, theta: f64) -> f64 {
    const P_TARGET: f64 = 0.5;
    let mut total = 0.0;
    for target in 0..k {
        // miss: utterances of `target` whose target score falls below θ
        let misses = scores
            .iter()
            .filter(|s| s.label == Some(target) && s.scores[target] < theta)
            .count();
        let p_miss = misses as f64 / class_count[target] as f64;
        // false alarms of `target` against each other class
        let mut fa_sum = 0.0;
        for non in 0..k {
            if non == target {
                continue;
            }
            let fas = scores
                .iter()
                .filter(|s| s.label == Some(non) && s.scores[target] >= theta)
                .count();
            fa_sum += fas as f64 / class_count[non] as f64;
        }
        total += P_TARGET * p_miss + (1.0 - P_TARGET) / (k as f64 - 1.0) * fa_sum;
    }
    total / k as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Domain;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ts(utt: &str, scores: Vec<f64>, label: usize) -> TrialScores {
        TrialScores {
            utt_id: utt.into(),
            scores,
            label: Some(label),
            domain: Domain::Test,
        }
    }

    #[test]
    fn accuracy_counts_and_ties() {
        let all_correct = vec![
            ts("a", vec![0.9, 0.1], 0),
            ts("b", vec![0.2, 0.8], 1),
        ];
        assert_eq!(accuracy(&all_correct).unwrap(), 100.0);

        let three_of_four = vec![
            ts("a", vec![0.9, 0.1], 0),
            ts("b", vec![0.2, 0.8], 1),
            ts("c", vec![0.6, 0.4], 0),
            ts("d", vec![0.7, 0.3], 1),
        ];
        assert_eq!(accuracy(&three_of_four).unwrap(), 75.0);

        // uniform scores tie-break to class 0, so on balanced 5-class data
        // exactly the class-0 rows are counted correct: 20%
        let mixed: Vec<TrialScores> = (0..10)
            .map(|i| ts(&format!("m{i}"), vec![0.2; 5], i % 5))
            .collect();
        assert_eq!(accuracy(&mixed).unwrap(), 20.0);
    }

    #[test]
    fn accuracy_rejects_unlabeled() {
        let mut rows = vec![ts("a", vec![0.9, 0.1], 0)];
        rows[0].label = None;
        assert!(matches!(
            accuracy(&rows),
            Err(MetricsError::Unlabeled(_))
        ));
    }

    #[test]
    fn eer_trivial_cases() {
        // perfectly separated
        let sep = TrialSet {
            trials: vec![(0.9, true), (0.8, true), (0.2, false), (0.1, false)],
        };
        assert_eq!(eer(&sep).unwrap(), 0.0);
        // identical paired scores
        let tied = TrialSet {
            trials: vec![(0.5, true), (0.5, false), (0.3, true), (0.3, false)],
        };
        assert_eq!(eer(&tied).unwrap(), 50.0);
    }

    #[test]
    fn eer_hand_example() {
        let set = TrialSet {
            trials: vec![(0.9, true), (0.8, false), (0.7, true), (0.1, false)],
        };
        assert_eq!(eer(&set).unwrap(), 25.0);
    }

    #[test]
    fn eer_needs_both_trial_kinds() {
        let only_targets = TrialSet {
            trials: vec![(0.9, true)],
        };
        assert!(eer(&only_targets).is_err());
    }

    /// O(n²) oracle: every midpoint between consecutive sorted scores plus
    /// sentinels, recounting rates from scratch.
    fn eer_bruteforce(trials: &[(f64, bool)]) -> f64 {
        let n_target = trials.iter().filter(|t| t.1).count();
        let n_non = trials.len() - n_target;
        let mut values: Vec<f64> = trials.iter().map(|t| t.0).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut candidates = vec![values[0] - 1.0, values[values.len() - 1] + 1.0];
        candidates.extend(values.iter().copied());
        for w in values.windows(2) {
            candidates.push(0.5 * (w[0] + w[1]));
        }
        let mut best = f64::INFINITY;
        for theta in candidates {
            let miss = trials.iter().filter(|&&(s, t)| t && s < theta).count();
            let fa = trials.iter().filter(|&&(s, t)| !t && s >= theta).count();
            let bal = 0.5 * (miss as f64 / n_target as f64 + fa as f64 / n_non as f64);
            best = best.min(bal);
        }
        100.0 * best
    }

    fn cavg_bruteforce(scores: &[TrialScores], k: usize) -> f64 {
        let mut class_count = vec![0usize; k];
        for s in scores {
            class_count[s.label.unwrap()] += 1;
        }
        let mut values: Vec<f64> = scores.iter().flat_map(|s| s.scores.clone()).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut candidates = vec![values[0] - 1.0, values[values.len() - 1] + 1.0];
        candidates.extend(values.iter().copied());
        for w in values.windows(2) {
            candidates.push(0.5 * (w[0] + w[1]));
        }
        let mut best = f64::INFINITY;
        for theta in candidates {
            best = best.min(cavg_at(scores, &class_count, k, theta));
        }
        100.0 * best
    }

    #[test]
    fn eer_matches_bruteforce_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let n = rng.gen_range(4..200);
            let mut trials = Vec::with_capacity(n);
            trials.push((rng.gen_range(-1.0..2.0), true));
            trials.push((rng.gen_range(-1.0..2.0), false));
            for _ in 2..n {
                // quantized scores produce plenty of ties
                let s = (rng.gen_range(-1.0f64..2.0) * 8.0).round() / 8.0;
                trials.push((s, rng.gen_bool(0.3)));
            }
            let set = TrialSet { trials };
            let fast = eer(&set).unwrap();
            let brute = eer_bruteforce(&set.trials);
            assert_eq!(fast, brute, "set {set:?}");
        }
    }

    #[test]
    fn cavg_trivial_and_hand_cases() {
        // perfect scores → 0
        let perfect = vec![
            ts("a", vec![0.9, 0.1], 0),
            ts("b", vec![0.1, 0.9], 1),
        ];
        assert_eq!(min_cavg(&perfect).unwrap(), 0.0);

        // all scores identical → min(accept-all, reject-all) = 0.5
        let flat = vec![
            ts("a", vec![0.5, 0.5], 0),
            ts("b", vec![0.5, 0.5], 1),
        ];
        assert_eq!(min_cavg(&flat).unwrap(), 50.0);

        // hand-built 2-class, 4-utterance set vs exhaustive enumeration
        let hand = vec![
            ts("a", vec![0.9, 0.3], 0),
            ts("b", vec![0.6, 0.5], 1),
            ts("c", vec![0.2, 0.7], 1),
            ts("d", vec![0.4, 0.1], 0),
        ];
        let got = min_cavg(&hand).unwrap();
        let want = cavg_bruteforce(&hand, 2);
        assert_eq!(got, want);
    }

    #[test]
    fn cavg_rejects_empty_class() {
        let rows = vec![ts("a", vec![0.9, 0.1], 0), ts("b", vec![0.8, 0.2], 0)];
        assert!(matches!(
            min_cavg(&rows),
            Err(MetricsError::EmptyClass(1))
        ));
    }

    #[test]
    fn cavg_matches_bruteforce_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let k = rng.gen_range(2..5);
            let n = rng.gen_range(k..40);
            let rows: Vec<TrialScores> = (0..n)
                .map(|i| {
                    let scores = (0..k)
                        .map(|_| (rng.gen_range(0.0..1.0) * 8.0f64).round() / 8.0)
                        .collect();
                    ts(&format!("u{i}"), scores, i % k)
                })
                .collect();
            let fast = min_cavg(&rows).unwrap();
            let brute = cavg_bruteforce(&rows, k);
            assert_eq!(fast, brute);
        }
    }

    #[test]
    fn monotone_transforms_leave_metrics_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let rows: Vec<TrialScores> = (0..30)
            .map(|i| {
                let scores = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                ts(&format!("u{i}"), scores, i % 4)
            })
            .collect();
        let transform = |rows: &[TrialScores], f: &dyn Fn(f64) -> f64| -> Vec<TrialScores> {
            rows.iter()
                .map(|r| TrialScores {
                    scores: r.scores.iter().map(|&v| f(v)).collect(),
                    ..r.clone()
                })
                .collect()
        };
        for f in [
            &(|x: f64| 2.0 * x + 1.0) as &dyn Fn(f64) -> f64,
            &|x: f64| x.atan(),
            &|x: f64| x.exp(),
        ] {
            let mapped = transform(&rows, f);
            assert_eq!(accuracy(&rows).unwrap(), accuracy(&mapped).unwrap());
            assert_eq!(
                eer(&TrialSet::from_scores(&rows).unwrap()).unwrap(),
                eer(&TrialSet::from_scores(&mapped).unwrap()).unwrap()
            );
            assert_eq!(min_cavg(&rows).unwrap(), min_cavg(&mapped).unwrap());
        }
    }

    #[test]
    fn metrics_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..50 {
            let n = rng.gen_range(3..60);
            let rows: Vec<TrialScores> = (0..n)
                .map(|i| {
                    let scores = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
                    ts(&format!("u{i}"), scores, i % 3)
                })
                .collect();
            let e = eer(&TrialSet::from_scores(&rows).unwrap()).unwrap();
            let c = min_cavg(&rows).unwrap();
            assert!((0.0..=100.0).contains(&e));
            assert!((0.0..=100.0).contains(&c));
        }
    }

    #[test]
    fn language_averaged_eer_close_to_pooled_on_balanced_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let rows: Vec<TrialScores> = (0..60)
            .map(|i| {
                let label = i % 3;
                let scores = (0..3)
                    .map(|j| {
                        let base: f64 = if j == label { 0.8 } else { 0.2 };
                        base + rng.gen_range(-0.5..0.5)
                    })
                    .collect();
                ts(&format!("u{i}"), scores, label)
            })
            .collect();
        let pooled = eer(&TrialSet::from_scores(&rows).unwrap()).unwrap();
        let averaged = eer_language_averaged(&rows).unwrap();
        assert!((pooled - averaged).abs() < 15.0);
        assert!(pooled > 0.0 && pooled < 50.0);
    }
}
