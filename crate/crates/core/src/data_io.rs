//! The portable "EEGP" dataset format and the synthetic dataset generator.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic      b"EEGP"
//! version    u16            (currently 1)
//! n_trials   u32
//! n_channels u16
//! n_samples  u32
//! fs         f32
//! meta_len   u32
//! meta       meta_len bytes of UTF-8 JSON {channel_names, source, format_version}
//! per trial:
//!   participant u16, video u16, vaq u8, sam_valence f32, sam_arousal f32,
//!   samples f32 x (n_channels * n_samples), row-major by channel
//! crc32      u32            over every preceding byte
//! ```

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::channels::DEAP_CHANNELS;
use crate::error::{Error, Result};
use crate::rng;
use crate::signal::{quadrant_from_ratings, Labels, Quadrant, Trial, SAM_THRESHOLD};

pub const MAGIC: [u8; 4] = *b"EEGP";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 2 + 4 + 4;
const TRIAL_HEADER_LEN: usize = 2 + 2 + 1 + 4 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Deap,
    Synthetic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Metadata {
    channel_names: Vec<String>,
    source: Source,
    format_version: u16,
}

/// Trials sharing one channel layout and sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct PortableDataset {
    pub trials: Vec<Trial>,
    pub channel_names: Vec<String>,
    pub sample_rate_hz: f32,
    pub source: Source,
}

impl PortableDataset {
    pub fn new(
        trials: Vec<Trial>,
        channel_names: Vec<String>,
        sample_rate_hz: f32,
        source: Source,
    ) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::EmptyData);
        }
        let n_samples = trials[0].n_samples();
        for t in &trials {
            if t.channel_names != channel_names || t.n_samples() != n_samples {
                return Err(Error::BadShape(format!(
                    "trial p{} v{} does not match the dataset layout",
                    t.participant_id, t.video_id
                )));
            }
            if t.sample_rate_hz != sample_rate_hz as f64 {
                return Err(Error::BadShape("mixed sample rates".into()));
            }
        }
        Ok(Self {
            trials,
            channel_names,
            sample_rate_hz,
            source,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.trials[0].n_samples()
    }

    /// `participant,video,vaq,sam_v,sam_a` with a header line.
    pub fn labels_csv(&self) -> String {
        let mut out = String::from("participant,video,vaq,sam_v,sam_a\n");
        for t in &self.trials {
            out.push_str(&format!(
                "{},{},{:?},{},{}\n",
                t.participant_id,
                t.video_id,
                t.labels.vaq_quadrant,
                t.labels.sam_valence,
                t.labels.sam_arousal
            ));
        }
        out
    }
}

pub fn encode_portable(ds: &PortableDataset) -> Result<Vec<u8>> {
    let n_channels = u16::try_from(ds.channel_names.len())
        .map_err(|_| Error::BadShape("more than 65535 channels".into()))?;
    let n_trials = u32::try_from(ds.trials.len())
        .map_err(|_| Error::BadShape("too many trials".into()))?;
    let n_samples = u32::try_from(ds.n_samples())
        .map_err(|_| Error::BadShape("too many samples".into()))?;
    let meta = serde_json::to_vec(&Metadata {
        channel_names: ds.channel_names.clone(),
        source: ds.source,
        format_version: FORMAT_VERSION,
    })?;

    let payload = ds.trials.len() * (TRIAL_HEADER_LEN + 4 * ds.channel_names.len() * ds.n_samples());
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 + meta.len() + payload + 4);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&n_trials.to_le_bytes());
    buf.extend_from_slice(&n_channels.to_le_bytes());
    buf.extend_from_slice(&n_samples.to_le_bytes());
    buf.extend_from_slice(&ds.sample_rate_hz.to_le_bytes());
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta);
    for t in &ds.trials {
        buf.extend_from_slice(&t.participant_id.to_le_bytes());
        buf.extend_from_slice(&t.video_id.to_le_bytes());
        buf.push(t.labels.vaq_quadrant.code());
        buf.extend_from_slice(&t.labels.sam_valence.to_le_bytes());
        buf.extend_from_slice(&t.labels.sam_arousal.to_le_bytes());
        for v in t.samples.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> &'a [u8] {
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        s
    }
    fn u8(&mut self) -> u8 {
        self.take(1)[0]
    }
    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take(2).try_into().unwrap())
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take(4).try_into().unwrap())
    }
    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take(4).try_into().unwrap())
    }
}

/// Parses an EEGP byte buffer. Lengths are validated against the header
/// before anything is read past it.
pub fn decode_portable(bytes: &[u8]) -> Result<PortableDataset> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected: HEADER_LEN + 4,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(Error::Truncated {
            expected: HEADER_LEN + 4,
            found: bytes.len(),
        });
    }
    let mut cur = Cursor { bytes, pos: 4 };
    let version = cur.u16();
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let n_trials = cur.u32() as u64;
    let n_channels = cur.u16() as u64;
    let n_samples = cur.u32() as u64;
    let fs = cur.f32();
    let meta_len = cur.u32() as u64;

    let per_trial = (n_channels * n_samples)
        .checked_mul(4)
        .and_then(|v| v.checked_add(TRIAL_HEADER_LEN as u64));
    let expected = per_trial
        .and_then(|p| p.checked_mul(n_trials))
        .and_then(|v| v.checked_add(HEADER_LEN as u64 + 4 + meta_len + 4))
        .ok_or(Error::SizeMismatch {
            expected: usize::MAX,
            found: bytes.len(),
        })?;
    let expected = usize::try_from(expected).map_err(|_| Error::SizeMismatch {
        expected: usize::MAX,
        found: bytes.len(),
    })?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::SizeMismatch {
            expected,
            found: bytes.len(),
        });
    }
    let body = &bytes[..expected - 4];
    let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }

    let meta: Metadata = serde_json::from_slice(cur.take(meta_len as usize))
        .map_err(|e| Error::Corrupt(format!("metadata: {e}")))?;
    if meta.channel_names.len() as u64 != n_channels {
        return Err(Error::Corrupt(format!(
            "header declares {n_channels} channels, metadata lists {}",
            meta.channel_names.len()
        )));
    }
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::Corrupt(format!("sample rate {fs}")));
    }

    let (c, s) = (n_channels as usize, n_samples as usize);
    let mut trials = Vec::with_capacity(n_trials as usize);
    for _ in 0..n_trials {
        let participant = cur.u16();
        let video = cur.u16();
        let code = cur.u8();
        let vaq = Quadrant::from_code(code)
            .ok_or_else(|| Error::Corrupt(format!("quadrant code {code}")))?;
        let sam_v = cur.f32();
        let sam_a = cur.f32();
        let labels = Labels::new(vaq, sam_v, sam_a).map_err(|e| Error::Corrupt(e.to_string()))?;
        let raw = cur.take(4 * c * s);
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let samples = Array2::from_shape_vec((c, s), values).expect("length checked");
        let trial = Trial::new(participant, video, samples, fs as f64, meta.channel_names.clone(), labels)
            .map_err(|e| Error::Corrupt(e.to_string()))?;
        trials.push(trial);
    }
    PortableDataset::new(trials, meta.channel_names, fs, meta.source)
        .map_err(|e| Error::Corrupt(e.to_string()))
}

pub fn read_portable(path: &Path) -> Result<PortableDataset> {
    decode_portable(&std::fs::read(path)?)
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_portable(ds: &PortableDataset, path: &Path) -> Result<()> {
    write_atomic(path, &encode_portable(ds)?)
}

/// Desk-scale stand-in for a real recording campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_participants: u16,
    pub n_videos: u16,
    pub n_channels: u16,
    pub fs_hz: f32,
    pub duration_s: f32,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_participants: 8,
            n_videos: 8,
            n_channels: 40,
            fs_hz: 128.0,
            duration_s: 4.0,
            noise_sigma: 0.3,
            seed: 0,
        }
    }
}

/// Tone frequency encoding high (10 Hz) or low (6 Hz) valence.
pub fn synth_tone_hz(high_valence: bool) -> f64 {
    if high_valence {
        10.0
    } else {
        6.0
    }
}

/// Tone amplitude encoding high (2.0) or low (1.0) arousal.
pub fn synth_amplitude(high_arousal: bool) -> f64 {
    if high_arousal {
        2.0
    } else {
        1.0
    }
}

/// Generates trials whose quadrant is encoded in the signal: every channel
/// carries a tone at [`synth_tone_hz`] with amplitude [`synth_amplitude`]
/// and a random phase, plus white noise. Samples are clipped to
/// `±(amplitude + 6 * noise_sigma)`. Videos are assigned quadrants
/// round-robin (video `v` → `Q((v - 1) mod 4 + 1)`); SAM ratings are 7 for
/// "high" and 3 for "low", each plus uniform jitter in `[-1, 1]`.
pub fn synth_generate(config: &SynthConfig) -> Result<PortableDataset> {
    let valid = config.n_participants > 0
        && config.n_videos > 0
        && config.n_channels > 0
        && config.fs_hz.is_finite()
        && config.fs_hz > 0.0
        && config.duration_s.is_finite()
        && config.duration_s > 0.0
        && config.noise_sigma.is_finite()
        && config.noise_sigma >= 0.0;
    if !valid {
        return Err(Error::BadConfig(format!("{config:?}")));
    }
    let fs = config.fs_hz as f64;
    let n_samples = (config.duration_s as f64 * fs).round() as usize;
    if n_samples < 2 {
        return Err(Error::BadConfig("duration shorter than two samples".into()));
    }
    if synth_tone_hz(true) >= fs / 2.0 {
        return Err(Error::BadConfig(format!("sample rate {fs} cannot carry a 10 Hz tone")));
    }
    let channel_names: Vec<String> = (0..config.n_channels as usize)
        .map(|i| match DEAP_CHANNELS.get(i) {
            Some(name) if config.n_channels as usize <= DEAP_CHANNELS.len() => name.to_string(),
            _ => format!("ch{}", i + 1),
        })
        .collect();

    let mut trials = Vec::with_capacity(config.n_participants as usize * config.n_videos as usize);
    for p in 1..=config.n_participants {
        for v in 1..=config.n_videos {
            let quadrant = Quadrant::ALL[(v as usize - 1) % 4];
            let mut r = rng::rng_from(config.seed, &[p as u64, v as u64]);
            let jitter = |r: &mut rng::Rng| 2.0 * rng::unit_f64(r) - 1.0;
            let level = |high: bool| if high { 7.0 } else { 3.0 };
            let sam_v = (level(quadrant.high_valence()) + jitter(&mut r)) as f32;
            let sam_a = (level(quadrant.high_arousal()) + jitter(&mut r)) as f32;
            debug_assert_eq!(
                quadrant_from_ratings(sam_v as f64, sam_a as f64, SAM_THRESHOLD).unwrap(),
                quadrant
            );

            let freq = synth_tone_hz(quadrant.high_valence());
            let amp = synth_amplitude(quadrant.high_arousal());
            let limit = amp + 6.0 * config.noise_sigma;
            let mut samples = Array2::<f32>::zeros((config.n_channels as usize, n_samples));
            for mut row in samples.rows_mut() {
                let phase = std::f64::consts::TAU * rng::unit_f64(&mut r);
                for (n, x) in row.iter_mut().enumerate() {
                    let t = n as f64 / fs;
                    let tone = amp * (std::f64::consts::TAU * freq * t + phase).sin();
                    let noise = if config.noise_sigma > 0.0 {
                        config.noise_sigma * rng::normal(&mut r)
                    } else {
                        0.0
                    };
                    *x = (tone + noise).clamp(-limit, limit) as f32;
                }
            }
            let labels = Labels::new(quadrant, sam_v, sam_a)?;
            trials.push(Trial::new(p, v, samples, fs, channel_names.clone(), labels)?);
        }
    }
    PortableDataset::new(trials, channel_names, config.fs_hz, Source::Synthetic)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PortableDataset {
        synth_generate(&SynthConfig {
            n_participants: 2,
            n_videos: 4,
            n_channels: 3,
            duration_s: 1.0,
            seed: 5,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn roundtrip_bytes() {
        let ds = small();
        let bytes = encode_portable(&ds).unwrap();
        let back = decode_portable(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(encode_portable(&back).unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_portable(&small()).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_portable(&bad), Err(Error::BadMagic(_))));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_portable(&bad), Err(Error::VersionMismatch { found: 9, .. })));

        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                decode_portable(&bytes[..cut]),
                Err(Error::Truncated { .. })
            ), "cut at {cut}");
        }

        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_portable(&long), Err(Error::SizeMismatch { .. })));

        let mut flipped = bytes.clone();
        let mid = bytes.len() - 40;
        flipped[mid] ^= 0x10;
        assert!(matches!(decode_portable(&flipped), Err(Error::ChecksumMismatch { .. })));

        // Inflated trial count: declared size exceeds the buffer.
        let mut inflated = bytes.clone();
        inflated[6..10].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_portable(&inflated), Err(Error::Truncated { .. })));
    }

    #[test]
    fn synth_labels_consistent_and_balanced() {
        let ds = synth_generate(&SynthConfig {
            n_participants: 3,
            n_videos: 8,
            n_channels: 2,
            duration_s: 0.5,
            ..SynthConfig::default()
        })
        .unwrap();
        let mut counts = [0usize; 4];
        for t in &ds.trials {
            let l = t.labels;
            assert!((1.0..=9.0).contains(&l.sam_valence));
            assert!((1.0..=9.0).contains(&l.sam_arousal));
            assert_eq!(l.sam_quadrant(), l.vaq_quadrant);
            counts[l.vaq_quadrant.code() as usize] += 1;
        }
        assert_eq!(counts, [6; 4]);
    }

    #[test]
    fn synth_bounded_and_deterministic() {
        let cfg = SynthConfig {
            n_participants: 2,
            n_videos: 4,
            n_channels: 4,
            noise_sigma: 0.8,
            seed: 21,
            ..SynthConfig::default()
        };
        let a = synth_generate(&cfg).unwrap();
        assert_eq!(a, synth_generate(&cfg).unwrap());
        for t in &a.trials {
            let amp = synth_amplitude(t.labels.vaq_quadrant.high_arousal());
            let limit = (amp + 6.0 * cfg.noise_sigma) as f32;
            assert!(t.samples.iter().all(|v| v.abs() <= limit));
        }
        assert_eq!(a.channel_names, vec!["Fp1", "AF3", "F3", "F7"]);
        assert!(synth_generate(&SynthConfig { n_videos: 0, ..cfg.clone() }).is_err());
        assert!(synth_generate(&SynthConfig { noise_sigma: -1.0, ..cfg }).is_err());
    }

    #[test]
    fn labels_csv_layout() {
        let csv = small().labels_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("participant,video,vaq,sam_v,sam_a"));
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(&first[..3], &["1", "1", "Q1"]);
        assert_eq!(csv.lines().count(), 9);
    }
}
