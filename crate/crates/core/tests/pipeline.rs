use proptest::prelude::*;

use fsoturb::capture::{read_capture, write_capture};
use fsoturb::channel::{apply_channel, ChannelConfig, ChannelSim, Transient};
use fsoturb::experiment::{generate_capture, load_capture_prefix, simulate_capture, table2, ExperimentSpec};
use fsoturb::metrics::ber_compute;
use fsoturb::modem::{BitSequence, SampleStream};
use fsoturb::preset::LinkPreset;

#[test]
fn weak_transmitter_errors_rise_with_level() {
    let mut preset = LinkPreset::stabilized();
    preset.tx_gain = 0.03;
    let spec = ExperimentSpec {
        levels: vec![0, 5],
        table2_bits: 2_000_000,
        seed: 3,
        ..ExperimentSpec::with_preset(preset)
    };
    let rows = table2(&[spec]).unwrap();
    assert_eq!(rows[0].errors, 0, "{:?}", rows[0]);
    assert!(rows[1].errors > 0, "{:?}", rows[1]);
    assert!(rows[1].q.value().unwrap() < rows[0].q.value().unwrap());
}

#[test]
fn generated_capture_reads_back_as_simulated() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("level4_file2.fsoc");
    let spec = ExperimentSpec {
        seed: 11,
        ..ExperimentSpec::default()
    };
    let n = spec.sync_span() + 5000;
    let m = generate_capture(&spec, 4, 1, n as u64, &path).unwrap();
    let sim = simulate_capture(&spec, 4, 1, n).unwrap();
    assert_eq!(m.frame_offset, Some(sim.offset));
    let loaded = load_capture_prefix(&spec, &path, n).unwrap();
    assert_eq!((loaded.level, loaded.capture_id, loaded.offset), (4, 1, sim.offset));
    assert_eq!(loaded.stream.samples, sim.stream.samples);
}

fn channel_strategy() -> impl Strategy<Value = ChannelConfig> {
    (0.0f64..0.5, 1usize..50, 0.0f64..0.2, -0.1f64..0.1, 0.1f64..2.0, any::<bool>()).prop_map(
        |(scint, block, sigma, offset, gain, transient)| ChannelConfig {
            scint_index: scint,
            corr_time: 1e-6,
            fading_block: block,
            awgn_sigma: sigma,
            background_offset: offset,
            tx_gain: gain,
            transient: transient.then_some(Transient {
                cn2_init: 1e-15,
                cn2_target: 4e-15,
                tau_s: 1e-5,
            }),
            ..ChannelConfig::default()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn channel_output_ignores_chunk_boundaries(
        cfg in channel_strategy(),
        tx in prop::collection::vec(0.0f32..1.0, 1..600),
        cuts in prop::collection::vec(1usize..97, 0..8),
        seed in any::<u64>(),
    ) {
        let stream = SampleStream::new(tx.clone(), 40e6, 8).unwrap();
        let whole = apply_channel(&stream, &cfg, 0.5, seed).unwrap();
        let mut sim = ChannelSim::new(&cfg, 40e6, 0.5, seed).unwrap();
        let mut buf = tx;
        let mut rest: &mut [f32] = &mut buf;
        for c in cuts {
            let k = c.min(rest.len());
            let (head, tail) = rest.split_at_mut(k);
            sim.process_in_place(head);
            rest = tail;
        }
        sim.process_in_place(rest);
        prop_assert_eq!(whole.samples, buf);
    }

    #[test]
    fn capture_files_round_trip(
        samples in prop::collection::vec(any::<f32>().prop_filter("finite", |x| x.is_finite()), 1..500),
        level in 0u8..6,
        sps in 2usize..32,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.fsoc");
        let stream = SampleStream::new(samples, 40e6, sps).unwrap();
        write_capture(&path, &stream, level).unwrap();
        let (back, l) = read_capture(&path).unwrap();
        prop_assert_eq!(l, level);
        prop_assert_eq!(back, stream);
    }

    #[test]
    fn ber_is_symmetric_and_complements(bits in prop::collection::vec(0u8..2, 1..400), flips in prop::collection::vec(any::<bool>(), 400)) {
        let a = BitSequence::new(bits.clone()).unwrap();
        let b = BitSequence::new(bits.iter().zip(&flips).map(|(&x, &f)| x ^ u8::from(f)).collect()).unwrap();
        let inv = BitSequence::new(bits.iter().map(|x| 1 - x).collect()).unwrap();
        let expected = flips[..bits.len()].iter().filter(|&&f| f).count() as f64 / bits.len() as f64;
        prop_assert_eq!(ber_compute(&a, &b).unwrap(), ber_compute(&b, &a).unwrap());
        prop_assert_eq!(ber_compute(&a, &b).unwrap().0, expected);
        prop_assert_eq!(ber_compute(&a, &inv).unwrap().0, 1.0);
    }
}
