mod common;

use common::{amplified_trials, iid_trials};
use scalevit::channels::{pca_rank_channels, top_k, ChannelRanking};
use scalevit::signal::Trial;
use scalevit::Error;

/// Pooled sample covariance, computed independently of the crate.
fn covariance(trials: &[Trial]) -> Vec<Vec<f64>> {
    let c = trials[0].n_channels();
    let rows: Vec<Vec<f64>> = trials
        .iter()
        .flat_map(|t| (0..t.n_samples()).map(move |s| (0..c).map(|ch| t.samples[[ch, s]] as f64).collect()))
        .collect();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..c).map(|ch| rows.iter().map(|r| r[ch]).sum::<f64>() / n).collect();
    let mut cov = vec![vec![0.0; c]; c];
    for r in &rows {
        for i in 0..c {
            for j in 0..c {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    cov.iter_mut().flatten().for_each(|v| *v /= n - 1.0);
    cov
}

/// Cyclic Jacobi eigendecomposition; returns (eigenvalues, eigenvectors as
/// columns).
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j].powi(2)).sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

fn oracle_scores(trials: &[Trial]) -> Vec<f64> {
    let (values, vectors) = jacobi_eigen(covariance(trials));
    let total: f64 = values.iter().map(|l| l.max(0.0)).sum();
    let c = values.len();
    (0..c)
        .map(|ch| (0..c).map(|j| values[j].max(0.0) / total * vectors[ch][j].powi(2)).sum())
        .collect()
}

fn score_of(r: &ChannelRanking, ch: usize) -> f64 {
    r.entries.iter().find(|(i, _)| *i == ch).unwrap().1
}

#[test]
fn amplified_channel_ranks_first() {
    let trials = amplified_trials(6, 8, 400, 10.0, 1);
    let r = pca_rank_channels(&trials).unwrap();
    assert_eq!(r.entries[0].0, 0);
    let sum: f64 = r.entries.iter().map(|e| e.1).sum();
    assert!((sum - 1.0).abs() < 1e-9);
    assert!((r.cumulative.last().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn scores_match_eigendecomposition_oracle() {
    let trials = amplified_trials(4, 6, 300, 3.0, 9);
    let r = pca_rank_channels(&trials).unwrap();
    let oracle = oracle_scores(&trials);
    for (ch, expect) in oracle.iter().enumerate() {
        assert!((score_of(&r, ch) - expect).abs() < 1e-9, "channel {ch}");
    }
    // the same scores are each channel's share of the total variance
    let cov = covariance(&trials);
    let trace: f64 = (0..cov.len()).map(|i| cov[i][i]).sum();
    for ch in 0..cov.len() {
        assert!((score_of(&r, ch) - cov[ch][ch] / trace).abs() < 1e-9);
    }
}

#[test]
fn iid_channels_score_uniformly() {
    let trials = iid_trials(10, 8, 2000, 4);
    let r = pca_rank_channels(&trials).unwrap();
    for &(_, s) in &r.entries {
        assert!((s - 1.0 / 8.0).abs() < 0.05, "{s}");
    }
}

#[test]
fn trial_order_does_not_matter() {
    let trials = amplified_trials(5, 5, 200, 2.0, 3);
    let a = pca_rank_channels(&trials).unwrap();
    let mut reversed = trials.clone();
    reversed.reverse();
    reversed.swap(0, 2);
    let b = pca_rank_channels(&reversed).unwrap();
    assert_eq!(a.entries.iter().map(|e| e.0).collect::<Vec<_>>(), b.entries.iter().map(|e| e.0).collect::<Vec<_>>());
    for (x, y) in a.entries.iter().zip(&b.entries) {
        assert!((x.1 - y.1).abs() < 1e-12);
    }
}

#[test]
fn top_k_takes_the_head_of_the_ranking() {
    let trials = amplified_trials(3, 6, 200, 10.0, 5);
    let r = pca_rank_channels(&trials).unwrap();
    let s = top_k(&r, 3).unwrap();
    assert_eq!(s.name, "pca-3");
    assert_eq!(s.channel_names[0], "ch1");
    let expect: Vec<String> = r.entries[..3].iter().map(|(i, _)| r.channel_names[*i].clone()).collect();
    assert_eq!(s.channel_names, expect);
    assert!(matches!(top_k(&r, 0), Err(Error::BadK { .. })));
    assert!(matches!(top_k(&r, 7), Err(Error::BadK { k: 7, n: 6 })));
}

#[test]
fn needs_two_trials() {
    let trials = amplified_trials(1, 3, 50, 1.0, 2);
    assert!(pca_rank_channels(&trials).is_err());
}
