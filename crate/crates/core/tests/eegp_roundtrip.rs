use proptest::prelude::*;
use scalevit::data_io::{decode_portable, encode_portable, read_portable, synth_generate, write_portable, PortableDataset, Source, SynthConfig};
use scalevit::rng;
use scalevit::signal::{Labels, Quadrant, Trial};
use scalevit::Error;

fn random_dataset(seed: u64, n_trials: usize, n_channels: usize, n_samples: usize) -> PortableDataset {
    let mut r = rng::rng_from(seed, &[]);
    let names: Vec<String> = (0..n_channels).map(|i| format!("e{i}")).collect();
    let trials = (0..n_trials)
        .map(|t| {
            let q = Quadrant::ALL[rng::below(&mut r, 4)];
            let sam_v = 1.0 + 8.0 * rng::unit_f64(&mut r) as f32;
            let sam_a = 1.0 + 8.0 * rng::unit_f64(&mut r) as f32;
            let samples = ndarray::Array2::from_shape_simple_fn((n_channels, n_samples), || {
                (rng::normal(&mut r) * 50.0) as f32
            });
            Trial::new(t as u16 % 7 + 1, t as u16 + 1, samples, 256.0, names.clone(), Labels::new(q, sam_v, sam_a).unwrap())
                .unwrap()
        })
        .collect();
    PortableDataset::new(trials, names, 256.0, Source::Deap).unwrap()
}

fn assert_bit_identical(a: &PortableDataset, b: &PortableDataset) {
    assert_eq!(a.channel_names, b.channel_names);
    assert_eq!(a.sample_rate_hz.to_bits(), b.sample_rate_hz.to_bits());
    assert_eq!(a.source, b.source);
    assert_eq!(a.trials.len(), b.trials.len());
    for (x, y) in a.trials.iter().zip(&b.trials) {
        assert_eq!((x.participant_id, x.video_id), (y.participant_id, y.video_id));
        assert_eq!(x.labels.vaq_quadrant, y.labels.vaq_quadrant);
        assert_eq!(x.labels.sam_valence.to_bits(), y.labels.sam_valence.to_bits());
        assert_eq!(x.labels.sam_arousal.to_bits(), y.labels.sam_arousal.to_bits());
        assert!(x.samples.iter().zip(&y.samples).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn file_roundtrip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..5 {
        let ds = random_dataset(seed, 3 + seed as usize, 1 + seed as usize * 3, 17 + seed as usize * 40);
        let path = dir.path().join(format!("d{seed}.eegp"));
        write_portable(&ds, &path).unwrap();
        let back = read_portable(&path).unwrap();
        assert_bit_identical(&ds, &back);
        assert_eq!(std::fs::read(&path).unwrap(), encode_portable(&back).unwrap());
    }
    // only the target file is left behind
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 5);
}

#[test]
fn synthetic_dataset_roundtrip() {
    let ds = synth_generate(&SynthConfig { n_participants: 2, n_videos: 4, ..Default::default() }).unwrap();
    let back = decode_portable(&encode_portable(&ds).unwrap()).unwrap();
    assert_bit_identical(&ds, &back);
}

#[test]
fn corruption_is_rejected() {
    let bytes = encode_portable(&random_dataset(3, 2, 3, 32)).unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_portable(&bad), Err(Error::BadMagic(_))));
    for cut in [2, 10, 30, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(decode_portable(&bytes[..cut]), Err(Error::Truncated { .. }) | Err(Error::BadMagic(_))), "cut {cut}");
    }
    let mut flipped = bytes.clone();
    let mid = bytes.len() - 20;
    flipped[mid] ^= 0x40;
    assert!(matches!(decode_portable(&flipped), Err(Error::ChecksumMismatch { .. })));
    let mut version = bytes.clone();
    version[4] = 9;
    assert!(matches!(decode_portable(&version), Err(Error::VersionMismatch { found: 9, .. })));
    let mut long = bytes;
    long.push(0);
    assert!(matches!(decode_portable(&long), Err(Error::SizeMismatch { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn random_datasets_roundtrip(seed in any::<u64>(), t in 1usize..5, c in 1usize..6, s in 2usize..64) {
        let ds = random_dataset(seed, t, c, s);
        let back = decode_portable(&encode_portable(&ds).unwrap()).unwrap();
        assert_bit_identical(&ds, &back);
    }
}
