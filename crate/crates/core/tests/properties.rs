use proptest::prelude::*;

use spsnn::datasets::spikefile::{decode_spike_file, encode_spike_file};
use spsnn::datasets::SpikeDataset;
use spsnn::geometry::{
    distance, euclidean_delays, pair_delay, pair_delay_grad, tortuous_delays, SpatialEmbedding,
};
use spsnn::gradcore::SpikeQueue;
use spsnn::neurons::Jumps;
use spsnn::objectives::readout_logits;
use spsnn::simulator::{InputSpike, Sample};
use spsnn::trainer::{lr_schedule, prune_weights};
use spsnn::Error;

fn embedding() -> impl Strategy<Value = SpatialEmbedding> {
    (1usize..=4, 2usize..=7, 0.1f64..5.0).prop_flat_map(|(dims, n, scale)| {
        prop::collection::vec(-10.0f64..10.0, n * dims)
            .prop_map(move |p| SpatialEmbedding::new(p, dims, scale).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn euclidean_delays_form_a_metric(emb in embedding()) {
        let d = euclidean_delays(&emb).unwrap();
        let n = d.n;
        let tol = 1e-9 * emb.scale * 40.0;
        for i in 0..n {
            prop_assert_eq!(d.get(i, i), 0.0);
            for j in 0..n {
                prop_assert!(d.get(i, j) >= 0.0);
                prop_assert_eq!(d.get(i, j), d.get(j, i));
                for k in 0..n {
                    prop_assert!(d.get(i, k) <= d.get(i, j) + d.get(j, k) + tol);
                }
            }
        }
    }

    #[test]
    fn tortuous_delays_stay_in_bounds(
        emb in embedding(),
        eps in 0.0f64..0.999,
        seed in any::<u64>(),
    ) {
        let n = emb.n_neurons();
        let mut x = seed;
        let e: Vec<f64> = (0..n * n)
            .map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((x >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 20.0
            })
            .collect();
        let straight = euclidean_delays(&emb).unwrap();
        let t = tortuous_delays(&emb.clone().with_tortuosity(e, eps).unwrap()).unwrap();
        for k in 0..n * n {
            let d = straight.delays[k];
            prop_assert!(t.delays[k] >= 0.5 * (1.0 - eps) * d - 1e-12);
            prop_assert!(t.delays[k] <= 0.5 * (1.0 + eps) * d + 1e-12);
        }
    }

    #[test]
    fn delay_gradient_is_scaled_unit_vector(emb in embedding(), i in 0usize..7, j in 0usize..7) {
        let n = emb.n_neurons();
        let (i, j) = (i % n, j % n);
        prop_assume!(i != j);
        let (a, b) = (emb.position(i), emb.position(j));
        let dist = distance(a, b);
        prop_assume!(dist > 1e-3);
        let mut g = vec![0.0; emb.dims];
        let de = pair_delay_grad(a, b, emb.scale, None, &mut g);
        prop_assert_eq!(de, 0.0);
        let mut norm = 0.0;
        for k in 0..emb.dims {
            let expect = emb.scale * (a[k] - b[k]) / dist;
            prop_assert!((g[k] - expect).abs() <= 1e-12 * emb.scale.max(1.0));
            // Independent check by central differences.
            let h = 1e-6;
            let mut ap = a.to_vec();
            let mut am = a.to_vec();
            ap[k] += h;
            am[k] -= h;
            let fd = (pair_delay(&ap, b, emb.scale, None) - pair_delay(&am, b, emb.scale, None)) / (2.0 * h);
            prop_assert!((g[k] - fd).abs() <= 1e-5 * emb.scale.max(1.0));
            norm += g[k] * g[k];
        }
        prop_assert!((norm.sqrt() - emb.scale).abs() <= 1e-9 * emb.scale);
    }

    #[test]
    fn tortuous_gradient_matches_finite_differences(
        a in prop::collection::vec(-5.0f64..5.0, 3),
        b in prop::collection::vec(-5.0f64..5.0, 3),
        e in -3.0f64..3.0,
        eps in 0.0f64..0.99,
    ) {
        prop_assume!(distance(&a, &b) > 1e-2);
        let mut g = vec![0.0; 3];
        let de = pair_delay_grad(&a, &b, 1.0, Some((e, eps)), &mut g);
        let h = 1e-6;
        let fd = (pair_delay(&a, &b, 1.0, Some((e + h, eps))) - pair_delay(&a, &b, 1.0, Some((e - h, eps)))) / (2.0 * h);
        prop_assert!((de - fd).abs() < 1e-6);
    }
}

#[derive(Debug, Clone)]
struct Event {
    step: usize,
    target: usize,
    offset: usize,
    w: f64,
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn queue_matches_event_list(
        cap in 2usize..12,
        raw in prop::collection::vec((0usize..40, 0usize..4, 1usize..20, -2.0f64..2.0), 0..60),
    ) {
        let n = 4;
        let mut events: Vec<Event> = raw
            .into_iter()
            .map(|(step, target, offset, w)| Event { step, target, offset, w })
            .collect();
        events.sort_by_key(|e| e.step);
        let horizon = 70;
        let mut q: SpikeQueue<Jumps> = SpikeQueue::new(n, cap);
        let mut got = vec![vec![0.0; horizon]; n];
        let mut cursor = 0;
        for k in 0..horizon {
            for (j, row) in got.iter_mut().enumerate() {
                row[k] = q.dequeue_jumps(j).i;
            }
            while cursor < events.len() && events[cursor].step == k {
                let e = &events[cursor];
                q.slot_mut(e.target, e.offset).0.i += e.w;
                cursor += 1;
            }
            q.advance();
        }
        // Oracle: every event lands `min(offset, cap - 1)` steps after emission.
        let mut want = vec![vec![0.0; horizon]; n];
        for e in &events {
            let t = e.step + e.offset.min(cap - 1);
            if t < horizon {
                want[e.target][t] += e.w;
            }
        }
        for j in 0..n {
            for k in 0..horizon {
                prop_assert!((got[j][k] - want[j][k]).abs() < 1e-12, "neuron {} step {}", j, k);
            }
        }
    }

    #[test]
    fn schedule_is_nonincreasing_after_warmup(a in 500usize..20_000, b in 500usize..20_000, peak in 1e-5f64..1.0) {
        let cfg = spsnn::config::TrainConfig::default();
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(lr_schedule(hi, peak, &cfg) <= lr_schedule(lo, peak, &cfg) + 1e-15);
    }

    #[test]
    fn pruning_reaches_the_requested_sparsity(
        w in prop::collection::vec(-3.0f64..3.0, 1..200),
        sp in 0.0f64..=1.0,
    ) {
        let mut p = w.clone();
        prune_weights(&mut p, sp);
        let zeros = p.iter().filter(|x| **x == 0.0).count();
        prop_assert!(zeros as f64 >= (sp * w.len() as f64).ceil() - 1e-9);
        // Survivors are untouched and at least as strong as anything pruned.
        let weakest_kept = p.iter().filter(|x| **x != 0.0).map(|x| x.abs()).fold(f64::INFINITY, f64::min);
        for (a, b) in w.iter().zip(&p) {
            if *b != 0.0 {
                prop_assert_eq!(a, b);
            } else {
                prop_assert!(a.abs() <= weakest_kept);
            }
        }
    }

    #[test]
    fn argmax_ignores_positive_logit_scaling(
        counts in prop::collection::vec(0.0f64..20.0, 6),
        w in prop::collection::vec(-1.0f64..1.0, 18),
        c in 1e-3f64..1e3,
    ) {
        let argmax = |z: &[f64]| {
            let mut best = 0;
            for k in 0..z.len() {
                if z[k] > z[best] {
                    best = k;
                }
            }
            best
        };
        let z = readout_logits(&counts, &w, 3);
        let scaled: Vec<f64> = w.iter().map(|x| x * c).collect();
        let zs = readout_logits(&counts, &scaled, 3);
        // Scaling can only break near-ties through rounding.
        let mut sorted = z.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        prop_assume!(sorted[0] - sorted[1] > 1e-9 * sorted[0].abs().max(1.0));
        prop_assert_eq!(argmax(&z), argmax(&zs));
    }
}

fn dataset() -> impl Strategy<Value = SpikeDataset> {
    (1u32..40, 1u16..12).prop_flat_map(|(n_neurons, n_classes)| {
        let sample = (
            0..n_classes as usize,
            prop::collection::vec((0..n_neurons as usize, 0.0f32..1000.0), 0..30),
        )
            .prop_map(|(label, mut raw)| {
                // Sorting by time keeps every neuron's times nondecreasing.
                raw.sort_by(|a, b| a.1.total_cmp(&b.1));
                Sample {
                    inputs: raw
                        .into_iter()
                        .map(|(neuron, t)| InputSpike { neuron, time: t as f64 })
                        .collect(),
                    label,
                }
            });
        prop::collection::vec(sample, 0..8).prop_map(move |samples| SpikeDataset {
            n_neurons,
            n_classes,
            samples,
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn spike_files_round_trip(d in dataset()) {
        let bytes = encode_spike_file(&d).unwrap();
        let back = decode_spike_file(&bytes).unwrap();
        prop_assert_eq!(&back, &d);
        prop_assert_eq!(encode_spike_file(&back).unwrap(), bytes);
    }

    #[test]
    fn corrupted_spike_files_fail_inside_the_buffer(
        d in dataset(),
        cut in any::<prop::sample::Index>(),
        flips in prop::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 0..4),
    ) {
        let mut bytes = encode_spike_file(&d).unwrap();
        for (i, x) in flips {
            let k = i.index(bytes.len());
            bytes[k] ^= x;
        }
        let len = cut.index(bytes.len() + 1);
        let buf = &bytes[..len];
        match decode_spike_file(buf) {
            Ok(parsed) => {
                prop_assert!(parsed.validate().is_ok());
            }
            Err(Error::Parse { offset, .. }) => prop_assert!(offset as usize <= buf.len()),
            Err(other) => prop_assert!(false, "unexpected error {:?}", other),
        }
    }

    #[test]
    fn random_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..256), header in any::<bool>()) {
        let mut buf = bytes;
        if header && buf.len() >= 6 {
            buf[..4].copy_from_slice(b"SPKF");
            buf[4..6].copy_from_slice(&1u16.to_le_bytes());
        }
        if let Err(Error::Parse { offset, .. }) = decode_spike_file(&buf) {
            prop_assert!(offset as usize <= buf.len());
        }
    }
}
