//! Named channel subsets over the 40-channel DEAP layout, and PCA-based
//! channel ranking.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Trial;

/// The preprocessed DEAP channel order; index `i` here is channel `i + 1`.
pub const DEAP_CHANNELS: [&str; 40] = [
    "Fp1", "AF3", "F3", "F7", "FC5", "FC1", "C3", "T7", "CP5", "CP1", "P3", "P7", "PO3", "O1",
    "Oz", "Pz", "Fp2", "AF4", "Fz", "F4", "F8", "FC6", "FC2", "Cz", "C4", "T8", "CP6", "CP2",
    "P4", "P8", "PO4", "O2", "hEOG", "vEOG", "zEMG", "tEMG", "GSR", "Resp", "Plet", "Temp",
];

pub const N_EEG: usize = 32;

/// Brain-region groups, keyed by the exact alphabetic prefix of the 10-20
/// name (so `fp`, `f` and `fc` are disjoint).
pub const REGION_GROUPS: [&str; 10] = ["t", "f", "c", "fp", "af", "po", "fc", "cp", "o", "p"];

const MUSE_12: [&str; 12] = [
    "AF3", "AF4", "Fp1", "Fp2", "F7", "F8", "P7", "P8", "CP5", "CP6", "T7", "T8",
];
const MUSE_8: [&str; 8] = ["AF3", "AF4", "F7", "F8", "P7", "P8", "T7", "T8"];
const MUSE_4A: [&str; 4] = ["AF3", "AF4", "P7", "P8"];
const MUSE_4B: [&str; 4] = ["F7", "F8", "T7", "T8"];
// Sold as a 12-electrode device but listed with these 14 names; all 14 kept.
const EMOTIV: [&str; 14] = [
    "AF3", "F7", "F3", "FC5", "T7", "P7", "O1", "O2", "P8", "T8", "FC6", "F4", "F8", "AF4",
];

/// 1-based index of a canonical channel name (case-insensitive).
pub fn deap_index(name: &str) -> Option<usize> {
    DEAP_CHANNELS
        .iter()
        .position(|c| c.eq_ignore_ascii_case(name))
        .map(|i| i + 1)
}

/// Region prefix of an electrode name, lowercased, with the midline `z`
/// dropped (`"FC5"` → `"fc"`, `"Fz"` → `"f"`).
fn region_prefix(name: &str) -> String {
    let letters: String = name
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect::<String>()
        .to_ascii_lowercase();
    match letters.strip_suffix('z') {
        Some(stem) if !stem.is_empty() => stem.to_owned(),
        _ => letters,
    }
}

/// Named, ordered list of channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSubset {
    pub name: String,
    pub channel_names: Vec<String>,
    /// 1-based indices into [`DEAP_CHANNELS`].
    pub indices: Vec<usize>,
}

impl ChannelSubset {
    fn from_indices(name: &str, indices: Vec<usize>) -> Self {
        Self {
            name: name.to_owned(),
            channel_names: indices.iter().map(|&i| DEAP_CHANNELS[i - 1].to_owned()).collect(),
            indices,
        }
    }

    fn from_names(name: &str, names: &[&str]) -> Self {
        let indices = names
            .iter()
            .map(|n| deap_index(n).expect("registry names are canonical"))
            .collect();
        Self::from_indices(name, indices)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Row positions of this subset's channels in `dataset_channels`,
    /// matched by name.
    pub fn positions_in(&self, dataset_channels: &[String]) -> Result<Vec<usize>> {
        self.channel_names
            .iter()
            .map(|want| {
                dataset_channels
                    .iter()
                    .position(|have| have.eq_ignore_ascii_case(want))
                    .ok_or_else(|| Error::MissingChannel(want.clone()))
            })
            .collect()
    }
}

/// Every registered subset name, in documentation order.
pub fn registry_names() -> Vec<String> {
    let mut names: Vec<String> = [
        "all", "eeg-only", "non-eeg", "emotiv", "muse-12", "muse-8", "muse-4a", "muse-4b",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    names.extend(REGION_GROUPS.iter().map(|s| s.to_string()));
    names.extend((1..=DEAP_CHANNELS.len()).map(|i| format!("channel-{i}")));
    names
}

/// Looks up a subset by name (case-insensitive).
pub fn resolve_subset(name: &str) -> Result<ChannelSubset> {
    let key = name.trim().to_ascii_lowercase();
    let subset = match key.as_str() {
        "all" => ChannelSubset::from_indices(&key, (1..=40).collect()),
        "eeg-only" => ChannelSubset::from_indices(&key, (1..=32).collect()),
        "non-eeg" => ChannelSubset::from_indices(&key, (33..=40).collect()),
        "emotiv" => ChannelSubset::from_names(&key, &EMOTIV),
        "muse-12" => ChannelSubset::from_names(&key, &MUSE_12),
        "muse-8" => ChannelSubset::from_names(&key, &MUSE_8),
        "muse-4a" => ChannelSubset::from_names(&key, &MUSE_4A),
        "muse-4b" => ChannelSubset::from_names(&key, &MUSE_4B),
        k if REGION_GROUPS.contains(&k) => {
            let indices = (1..=N_EEG)
                .filter(|&i| region_prefix(DEAP_CHANNELS[i - 1]) == k)
                .collect();
            ChannelSubset::from_indices(k, indices)
        }
        k => match k.strip_prefix("channel-").and_then(|n| n.parse::<usize>().ok()) {
            Some(i) if (1..=DEAP_CHANNELS.len()).contains(&i) => {
                ChannelSubset::from_indices(k, vec![i])
            }
            _ => return Err(Error::UnknownSubset(name.to_owned())),
        },
    };
    Ok(subset)
}

/// Registry as JSON: `{"electrodes": {name: [...]}, "indices": {name: [...]}}`.
pub fn registry_json() -> serde_json::Value {
    let mut electrodes = BTreeMap::new();
    let mut indices = BTreeMap::new();
    for name in registry_names() {
        let s = resolve_subset(&name).expect("registered");
        electrodes.insert(name.clone(), s.channel_names);
        indices.insert(name, s.indices);
    }
    serde_json::json!({ "electrodes": electrodes, "indices": indices })
}

/// Channels ordered by relevance, highest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRanking {
    /// `(position in the dataset layout, score)`.
    pub entries: Vec<(usize, f64)>,
    pub channel_names: Vec<String>,
    pub cumulative: Vec<f64>,
}

/// PCA over channels-as-variables, pooling every (trial, sample) as an
/// observation. Channel `c` scores `sum_j evr_j * v_jc^2`, with `evr_j` the
/// explained-variance ratio and `v_j` the unit eigenvector of component `j`.
/// Scores sum to one.
pub fn pca_rank_channels(trials: &[Trial]) -> Result<ChannelRanking> {
    if trials.len() < 2 {
        return Err(Error::TooFewItems {
            needed: 2,
            got: trials.len(),
        });
    }
    let names = &trials[0].channel_names;
    let c = names.len();
    if trials.iter().any(|t| &t.channel_names != names) {
        return Err(Error::BadShape("trials disagree on channel layout".into()));
    }

    // Per-channel pooled means, then covariance; accumulated in trial order.
    let n_obs: usize = trials.iter().map(Trial::n_samples).sum();
    let mut mean = vec![0.0f64; c];
    for t in trials {
        for (ch, row) in t.samples.rows().into_iter().enumerate() {
            mean[ch] += row.iter().map(|&v| v as f64).sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n_obs as f64);

    let mut cov = DMatrix::<f64>::zeros(c, c);
    let mut centered = vec![0.0f64; c];
    for t in trials {
        for s in 0..t.n_samples() {
            for ch in 0..c {
                centered[ch] = t.samples[[ch, s]] as f64 - mean[ch];
            }
            for i in 0..c {
                let xi = centered[i];
                for j in i..c {
                    cov[(i, j)] += xi * centered[j];
                }
            }
        }
    }
    let denom = (n_obs.max(2) - 1) as f64;
    for i in 0..c {
        for j in i..c {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateData("non-finite covariance".into()));
    }

    let eig = SymmetricEigen::new(cov);
    let eigenvalues: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateData("zero total variance".into()));
    }
    let mut scores = vec![0.0f64; c];
    for (j, &lambda) in eigenvalues.iter().enumerate() {
        let evr = lambda / total;
        for (ch, score) in scores.iter_mut().enumerate() {
            *score += evr * eig.eigenvectors[(ch, j)].powi(2);
        }
    }
    // Vectors are orthonormal, so the scores already sum to ~1; renormalize
    // away the rounding.
    let sum: f64 = scores.iter().sum();
    scores.iter_mut().for_each(|s| *s /= sum);

    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let entries: Vec<(usize, f64)> = order.iter().map(|&i| (i, scores[i])).collect();
    let cumulative = entries
        .iter()
        .scan(0.0, |acc, (_, s)| {
            *acc += s;
            Some(*acc)
        })
        .collect();
    Ok(ChannelRanking {
        entries,
        channel_names: names.clone(),
        cumulative,
    })
}

/// First `k` ranked channels as a subset (named `pca-{k}`).
pub fn top_k(ranking: &ChannelRanking, k: usize) -> Result<ChannelSubset> {
    let n = ranking.entries.len();
    if k < 1 || k > n {
        return Err(Error::BadK { k, n });
    }
    let chosen = &ranking.entries[..k];
    let channel_names: Vec<String> = chosen
        .iter()
        .map(|(i, _)| ranking.channel_names[*i].clone())
        .collect();
    let indices = chosen
        .iter()
        .zip(&channel_names)
        .map(|((i, _), name)| deap_index(name).unwrap_or(i + 1))
        .collect();
    Ok(ChannelSubset {
        name: format!("pca-{k}"),
        channel_names,
        indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn canonical_table() {
        assert_eq!(deap_index("hEOG"), Some(33));
        assert_eq!(deap_index("FP1"), Some(1));
        assert_eq!(deap_index("Temp"), Some(40));
        assert_eq!(deap_index("AF7"), None);
        let unique: HashSet<_> = DEAP_CHANNELS.iter().collect();
        assert_eq!(unique.len(), 40);
    }

    #[test]
    fn named_subsets() {
        let s = resolve_subset("muse-4a").unwrap();
        assert_eq!(s.channel_names, vec!["AF3", "AF4", "P7", "P8"]);
        assert_eq!(s.indices, vec![2, 18, 12, 30]);
        let s = resolve_subset("EEG-ONLY").unwrap();
        assert_eq!(s.indices, (1..=32).collect::<Vec<_>>());
        assert_eq!(resolve_subset("non-eeg").unwrap().indices, (33..=40).collect::<Vec<_>>());
        assert_eq!(resolve_subset("channel-33").unwrap().channel_names, vec!["hEOG"]);
        assert_eq!(resolve_subset("emotiv").unwrap().len(), 14);
        assert_eq!(resolve_subset("muse-12").unwrap().len(), 12);
        assert_eq!(resolve_subset("muse-8").unwrap().len(), 8);
        assert_eq!(
            resolve_subset("muse-4b").unwrap().channel_names,
            vec!["F7", "F8", "T7", "T8"]
        );
        assert!(matches!(resolve_subset("bogus"), Err(Error::UnknownSubset(_))));
        assert!(resolve_subset("channel-41").is_err());
        assert!(resolve_subset("channel-0").is_err());
    }

    #[test]
    fn region_groups_partition_eeg() {
        let sizes: Vec<usize> = REGION_GROUPS
            .iter()
            .map(|g| resolve_subset(g).unwrap().len())
            .collect();
        // t f c fp af po fc cp o p
        assert_eq!(sizes, vec![2, 5, 3, 2, 2, 2, 4, 4, 3, 5]);
        let mut seen = HashSet::new();
        for g in REGION_GROUPS {
            for i in resolve_subset(g).unwrap().indices {
                assert!(i <= N_EEG);
                assert!(seen.insert(i), "channel {i} in two groups");
            }
        }
        assert_eq!(seen.len(), N_EEG);
    }

    #[test]
    fn registry_subsets_are_valid() {
        for name in registry_names() {
            let s = resolve_subset(&name).unwrap();
            assert!(!s.is_empty());
            let unique: HashSet<_> = s.indices.iter().collect();
            assert_eq!(unique.len(), s.len());
            for (i, n) in s.indices.iter().zip(&s.channel_names) {
                assert!((1..=40).contains(i));
                assert_eq!(deap_index(n), Some(*i));
            }
        }
        let json = registry_json();
        assert_eq!(json["electrodes"]["muse-4a"], serde_json::json!(["AF3", "AF4", "P7", "P8"]));
    }

    #[test]
    fn positions_by_name() {
        let names: Vec<String> = ["P8", "x", "af3", "P7", "AF4"].iter().map(|s| s.to_string()).collect();
        let s = resolve_subset("muse-4a").unwrap();
        assert_eq!(s.positions_in(&names).unwrap(), vec![2, 4, 3, 0]);
        let s = resolve_subset("muse-4b").unwrap();
        assert!(matches!(s.positions_in(&names), Err(Error::MissingChannel(_))));
    }

    #[test]
    fn top_k_bounds() {
        let ranking = ChannelRanking {
            entries: vec![(2, 0.5), (0, 0.3), (1, 0.2)],
            channel_names: vec!["Fz".into(), "Cz".into(), "hEOG".into()],
            cumulative: vec![0.5, 0.8, 1.0],
        };
        let s = top_k(&ranking, 1).unwrap();
        assert_eq!(s.channel_names, vec!["hEOG"]);
        assert_eq!(s.indices, vec![33]);
        assert_eq!(top_k(&ranking, 3).unwrap().channel_names, vec!["hEOG", "Fz", "Cz"]);
        assert!(matches!(top_k(&ranking, 0), Err(Error::BadK { .. })));
        assert!(matches!(top_k(&ranking, 4), Err(Error::BadK { .. })));
    }
}
