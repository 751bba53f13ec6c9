use chrono::NaiveDate;
use proptest::prelude::*;
use sdi_core::edf_io::{load_epochs, parse_edf, write_edf, Channel, ChannelMap, Recording, SignalSpec};
use sdi_core::model::{load_from_path, save_to_path, ModelConfig, SdiModel};
use sdi_core::synth::{gen_night, signal_specs, SynthProfile};
use sdi_core::Error;

fn start() -> chrono::NaiveDateTime {
    NaiveDate::from_ymd_opt(2021, 3, 14).unwrap().and_hms_opt(22, 15, 0).unwrap()
}

fn channel_strategy() -> impl Strategy<Value = (String, usize, f64, Vec<f64>)> {
    // (label, samples per 1 s record, physical half-range, unit samples in [-1, 1])
    (prop::sample::select(vec![50usize, 100, 128, 200]), 1.0f64..2000.0, 1usize..6).prop_flat_map(|(rate, lim, n)| {
        (Just(format!("CH{rate}")), Just(rate), Just(lim), prop::collection::vec(-1.0f64..=1.0, rate * n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 40, ..ProptestConfig::default() })]

    #[test]
    fn edf_round_trip_within_quantum(chans in prop::collection::vec(channel_strategy(), 1..4)) {
        let n_records = chans.iter().map(|c| c.3.len() / c.1).min().unwrap();
        let mut channels = Vec::new();
        let mut specs = Vec::new();
        for (label, rate, lim, unit) in &chans {
            let samples: Vec<f64> = unit[..rate * n_records].iter().map(|u| u * lim).collect();
            specs.push(SignalSpec::new(label, -lim, *lim, *rate));
            channels.push(Channel { label: label.clone(), sampling_rate: *rate as f64, samples });
        }
        let rec = Recording::new(channels, start()).unwrap();
        let bytes = write_edf(&rec, &specs).unwrap();
        let back = parse_edf(&bytes).unwrap();
        prop_assert_eq!(back.start_datetime(), start());
        prop_assert_eq!(back.channels().len(), rec.channels().len());
        for ((a, b), spec) in rec.channels().iter().zip(back.channels()).zip(&specs) {
            prop_assert_eq!(&a.label, &b.label);
            prop_assert_eq!(a.sampling_rate, b.sampling_rate);
            prop_assert_eq!(a.samples.len(), b.samples.len());
            let half = spec.quantum() / 2.0 * (1.0 + 1e-9);
            for (x, y) in a.samples.iter().zip(&b.samples) {
                prop_assert!((x - y).abs() <= half, "{} vs {} (quantum {})", x, y, spec.quantum());
            }
        }
        // quantized values survive a second pass unchanged
        let again = parse_edf(&write_edf(&back, &specs).unwrap()).unwrap();
        prop_assert_eq!(again, back);
    }
}

#[test]
fn synthetic_night_loads_into_epochs() {
    let night = gen_night(&SynthProfile { n_epochs: 12, seed: 3, ..SynthProfile::default() }).unwrap();
    let bytes = write_edf(&night.recording, &signal_specs(&night.recording)).unwrap();
    let events = night.annotations().arousal_events().unwrap();
    let grid = load_epochs(&bytes, &ChannelMap::default(), Some(&night.stages), Some(&events)).unwrap();
    assert_eq!(grid.len(), 12);
    assert_eq!(grid.stages.as_deref(), Some(night.stages.as_slice()));
    let direct = night.to_grid().unwrap();
    let q: Vec<f64> = signal_specs(&night.recording).iter().map(|s| s.quantum()).collect();
    for e in 0..grid.len() {
        for (c, (a, b)) in grid.epoch(e).chunks(3000).zip(direct.epoch(e).chunks(3000)).enumerate() {
            for (x, y) in a.iter().zip(b) {
                assert!(((x - y) as f64).abs() <= q[c] / 2.0 + 1e-3 * q[c].max(1e-3), "channel {c}");
            }
        }
    }
}

#[test]
fn missing_role_is_named() {
    let night = gen_night(&SynthProfile { n_epochs: 2, seed: 1, ..SynthProfile::default() }).unwrap();
    let mut chans: Vec<Channel> = night.recording.channels().to_vec();
    chans.retain(|c| !c.label.contains("ECG"));
    let rec = Recording::new(chans, start()).unwrap();
    let specs = signal_specs(&rec);
    let bytes = write_edf(&rec, &specs).unwrap();
    match load_epochs(&bytes, &ChannelMap::default(), None, None) {
        Err(e @ Error::MissingChannel { .. }) => assert!(e.to_string().contains("ECG"), "{e}"),
        other => panic!("expected a missing-channel error, got {other:?}"),
    }
}

#[test]
fn checkpoint_file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let mut m = SdiModel::new(ModelConfig::desk(), 12).unwrap();
    m.round_to_f32();
    save_to_path(&m, &path).unwrap();
    let back = load_from_path(&path).unwrap();
    assert_eq!(back.params(), m.params());
    assert_eq!(back.config(), m.config());
    let night = gen_night(&SynthProfile { n_epochs: 3, seed: 2, ..SynthProfile::default() }).unwrap();
    let grid = night.to_grid().unwrap();
    for e in 0..grid.len() {
        assert_eq!(back.predict(grid.epoch(e)).unwrap(), m.predict(grid.epoch(e)).unwrap());
    }
}
