//! Trials, emotion labels, normalization and cross-validation folds.

use std::collections::{BTreeMap, HashSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Valence/arousal quadrant. Integer codes are fixed: Q1 = 0 … Q4 = 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quadrant {
    /// High arousal, high valence.
    Q1,
    /// High arousal, low valence.
    Q2,
    /// Low arousal, low valence.
    Q3,
    /// Low arousal, high valence.
    Q4,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [Quadrant::Q1, Quadrant::Q2, Quadrant::Q3, Quadrant::Q4];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn from_levels(high_valence: bool, high_arousal: bool) -> Self {
        match (high_arousal, high_valence) {
            (true, true) => Quadrant::Q1,
            (true, false) => Quadrant::Q2,
            (false, false) => Quadrant::Q3,
            (false, true) => Quadrant::Q4,
        }
    }

    pub fn high_valence(self) -> bool {
        matches!(self, Quadrant::Q1 | Quadrant::Q4)
    }

    pub fn high_arousal(self) -> bool {
        matches!(self, Quadrant::Q1 | Quadrant::Q2)
    }
}

/// Per-trial labels: experimenter quadrant plus participant SAM ratings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    pub vaq_quadrant: Quadrant,
    pub sam_valence: f32,
    pub sam_arousal: f32,
}

impl Labels {
    pub fn new(vaq_quadrant: Quadrant, sam_valence: f32, sam_arousal: f32) -> Result<Self> {
        check_sam("sam_valence", sam_valence as f64)?;
        check_sam("sam_arousal", sam_arousal as f64)?;
        Ok(Self {
            vaq_quadrant,
            sam_valence,
            sam_arousal,
        })
    }

    /// Quadrant implied by the SAM ratings at the standard threshold of 5.
    pub fn sam_quadrant(&self) -> Quadrant {
        quadrant_from_ratings(self.sam_valence as f64, self.sam_arousal as f64, SAM_THRESHOLD)
            .expect("labels validated at construction")
    }
}

/// Valence/arousal ratings above this are "high".
pub const SAM_THRESHOLD: f64 = 5.0;

fn check_sam(what: &'static str, value: f64) -> Result<()> {
    if !(1.0..=9.0).contains(&value) {
        return Err(Error::OutOfRange { what, value });
    }
    Ok(())
}

/// One participant watching one video: channel × time samples plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub participant_id: u16,
    pub video_id: u16,
    pub samples: Array2<f32>,
    pub sample_rate_hz: f64,
    pub channel_names: Vec<String>,
    pub labels: Labels,
}

impl Trial {
    pub fn new(
        participant_id: u16,
        video_id: u16,
        samples: Array2<f32>,
        sample_rate_hz: f64,
        channel_names: Vec<String>,
        labels: Labels,
    ) -> Result<Self> {
        let (n_channels, n_samples) = samples.dim();
        if n_channels < 1 || n_samples < 2 {
            return Err(Error::BadShape(format!(
                "trial needs >= 1 channel and >= 2 samples, got {n_channels}x{n_samples}"
            )));
        }
        if channel_names.len() != n_channels {
            return Err(Error::BadShape(format!(
                "{} channel names for {n_channels} channels",
                channel_names.len()
            )));
        }
        let unique: HashSet<&str> = channel_names.iter().map(String::as_str).collect();
        if unique.len() != channel_names.len() {
            return Err(Error::BadShape("duplicate channel names".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("trial samples"));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::OutOfRange {
                what: "sample_rate_hz",
                value: sample_rate_hz,
            });
        }
        Ok(Self {
            participant_id,
            video_id,
            samples,
            sample_rate_hz,
            channel_names,
            labels,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    /// One channel widened to f64.
    pub fn channel(&self, index: usize) -> Vec<f64> {
        self.samples.row(index).iter().map(|&v| v as f64).collect()
    }
}

/// Z-score with the population standard deviation. Constant input maps to
/// all zeros.
pub fn zscore_normalize(signal: &[f64]) -> Result<Vec<f64>> {
    if signal.len() < 2 {
        return Err(Error::TooFewItems {
            needed: 2,
            got: signal.len(),
        });
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("signal"));
    }
    let n = signal.len() as f64;
    let mean = signal.iter().sum::<f64>() / n;
    let var = signal.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    // Relative guard: a "constant" signal may carry rounding noise in the mean.
    if std == 0.0 || std <= 4.0 * f64::EPSILON * mean.abs() {
        return Ok(vec![0.0; signal.len()]);
    }
    Ok(signal.iter().map(|v| (v - mean) / std).collect())
}

/// Maps SAM-style ratings to a quadrant; "high" means strictly above
/// `threshold`.
pub fn quadrant_from_ratings(valence: f64, arousal: f64, threshold: f64) -> Result<Quadrant> {
    check_sam("valence", valence)?;
    check_sam("arousal", arousal)?;
    Ok(Quadrant::from_levels(valence > threshold, arousal > threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FoldMode {
    /// Trials shuffled and dealt round-robin, ignoring participant.
    RandomTrial,
    /// Participants shuffled and dealt round-robin; a participant's trials
    /// never span two folds.
    CrossPerson,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub mode: FoldMode,
    /// Fold index per trial, parallel to the trial list.
    pub assignment: Vec<usize>,
}

impl FoldAssignment {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Builds a k-fold assignment. Deterministic for a given trial order, `k`
/// and `seed`.
pub fn make_folds(trials: &[Trial], k: usize, seed: u64, mode: FoldMode) -> Result<FoldAssignment> {
    let participants: Vec<u16> = trials.iter().map(|t| t.participant_id).collect();
    make_folds_for(&participants, k, seed, mode)
}

/// [`make_folds`] over bare participant ids, one per trial.
pub fn make_folds_for(
    participants: &[u16],
    k: usize,
    seed: u64,
    mode: FoldMode,
) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::BadConfig(format!("k must be >= 2, got {k}")));
    }
    if participants.len() < k {
        return Err(Error::TooFewItems {
            needed: k,
            got: participants.len(),
        });
    }
    let mut rng = rng::rng_from(seed, &[0xF01D]);
    let assignment = match mode {
        FoldMode::RandomTrial => {
            let mut order: Vec<usize> = (0..participants.len()).collect();
            rng::shuffle(&mut rng, &mut order);
            let mut assignment = vec![0; participants.len()];
            for (pos, &trial) in order.iter().enumerate() {
                assignment[trial] = pos % k;
            }
            assignment
        }
        FoldMode::CrossPerson => {
            let mut people: Vec<u16> = participants.to_vec();
            people.sort_unstable();
            people.dedup();
            if people.len() < k {
                return Err(Error::TooFewItems {
                    needed: k,
                    got: people.len(),
                });
            }
            rng::shuffle(&mut rng, &mut people);
            let fold_of: BTreeMap<u16, usize> = people
                .iter()
                .enumerate()
                .map(|(pos, &p)| (p, pos % k))
                .collect();
            participants.iter().map(|p| fold_of[p]).collect()
        }
    };
    Ok(FoldAssignment { k, mode, assignment })
}
