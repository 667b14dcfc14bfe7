//! Randomised invariants across the public API.

use proptest::prelude::*;
use rand::RngCore;

use genuin::classifier::{compute_eer, gmm_loglik, GmmModel, Label, Provenance, ScoreSet};
use genuin::features::{FeatureKind, FeatureMatrix};
use genuin::genuinize::{genuinize_basic, genuinize_indices_perturbed};
use genuin::pmf::{cdf_from_pmf, estimate_pmf, extend_cdf, Keep, Pmf};
use genuin::seed::rng_from_seed;
use genuin::vad::{energy_vad_amplitudes, VadConfig};
use genuin::wav::{read_wav, write_wav, Waveform};

fn pmf_from_weights(bits: u32, weights: &[u32]) -> Pmf {
    let total: f64 = weights.iter().map(|&w| f64::from(w)).sum();
    Pmf::from_mass(bits, weights.iter().map(|&w| f64::from(w) / total).collect()).unwrap()
}

fn weights(levels: usize) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(prop_oneof![Just(0u32), 1u32..1000], levels)
        .prop_filter("needs some mass", |w| w.iter().any(|&x| x > 0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wav_round_trip(samples in prop::collection::vec(1u32..=65536, 1..400), rate in 4000u32..48000) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let w = Waveform::new(samples, rate).unwrap();
        write_wav(&path, &w).unwrap();
        let back = read_wav(&path).unwrap();
        prop_assert_eq!(back.samples(), w.samples());
        prop_assert_eq!(back.sample_rate(), rate);
    }

    #[test]
    fn cdf_is_monotone_and_ends_at_one(w in weights(256)) {
        let p = pmf_from_weights(8, &w);
        let cdf = cdf_from_pmf(&p);
        let v = cdf.values();
        prop_assert!(v.windows(2).all(|p| p[0] <= p[1]));
        prop_assert!((v[v.len() - 1] - 1.0).abs() <= 1e-9);
        let ext = extend_cdf(&p, 0).unwrap();
        prop_assert_eq!(ext.values(), v);
    }

    #[test]
    fn pmf_estimate_ignores_order(
        files in prop::collection::vec(prop::collection::vec(1u32..=65536, 1..200), 1..6),
        seed in any::<u64>(),
    ) {
        let waves: Vec<Waveform> = files.iter().map(|f| Waveform::new(f.clone(), 8000).unwrap()).collect();
        let mut shuffled = files.clone();
        let mut rng = rng_from_seed(seed);
        for f in &mut shuffled {
            for i in (1..f.len()).rev() {
                f.swap(i, rng.next_u32() as usize % (i + 1));
            }
        }
        shuffled.reverse();
        let waves2: Vec<Waveform> = shuffled.into_iter().map(|f| Waveform::new(f, 8000).unwrap()).collect();
        let a = estimate_pmf(&waves, None, Keep::All).unwrap();
        let b = estimate_pmf(&waves2, None, Keep::All).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn basic_map_is_monotone(src in prop::collection::vec(1u32..=256, 1..300), w in weights(256)) {
        let target = cdf_from_pmf(&pmf_from_weights(8, &w));
        let out = genuin::genuinize::genuinize_indices_basic(&src, 8, &target).unwrap();
        let mut pairs: Vec<(u32, u32)> = src.iter().copied().zip(out).collect();
        pairs.sort();
        prop_assert!(pairs.windows(2).all(|p| p[0].1 <= p[1].1));
        prop_assert!(pairs.iter().all(|&(_, q)| w[q as usize - 1] > 0));
    }

    #[test]
    fn perturbed_map_is_monotone_in_extended_index(
        src in prop::collection::vec(1u32..=256, 1..300),
        w in weights(256),
        d in 1u32..6,
        seed in any::<u64>(),
    ) {
        let target = cdf_from_pmf(&pmf_from_weights(8, &w));
        let out = genuinize_indices_perturbed(&src, 8, &target, d, &mut rng_from_seed(seed)).unwrap();
        // replay the documented dither draws to recover each sample's extended index
        let mut rng = rng_from_seed(seed);
        let mut pairs: Vec<(u64, u32)> = src
            .iter()
            .zip(&out)
            .map(|(&k, &q)| {
                let n = u64::from(rng.next_u32() >> (32 - d));
                ((u64::from(k) << d) - n, q)
            })
            .collect();
        pairs.sort();
        prop_assert!(pairs.windows(2).all(|p| p[0].1 <= p[1].1));
    }

    #[test]
    fn matched_input_is_a_fixed_point(samples in prop::collection::vec(1u32..=65536, 1..500)) {
        let w = Waveform::new(samples, 8000).unwrap();
        let own = cdf_from_pmf(&Pmf::from_indices(16, w.samples()).unwrap());
        let out = genuinize_basic(&w, &own).unwrap();
        prop_assert_eq!(out.samples(), w.samples());
    }

    #[test]
    fn vad_ignores_power_of_two_gain(
        x in prop::collection::vec(-1.0f64..1.0, 1..2000),
        len in 1usize..300,
        hop in 1usize..300,
        shift in -20i32..4,
    ) {
        let cfg = VadConfig { alpha: 0.03, frame_len: len, frame_hop: hop };
        prop_assume!(x.len() >= len && hop <= len);
        let a = energy_vad_amplitudes(&x, &cfg).unwrap();
        let g = 2f64.powi(shift);
        let scaled: Vec<f64> = x.iter().map(|v| v * g).collect();
        let b = energy_vad_amplitudes(&scaled, &cfg).unwrap();
        prop_assert_eq!(a.len(), x.len());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn lfcc_is_finite(samples in prop::collection::vec(prop_oneof![Just(32768u32), 1u32..=65536], 160..2000)) {
        let w = Waveform::new(samples, 8000).unwrap();
        let m = FeatureKind::Lfcc.extractor().extract(&w).unwrap();
        prop_assert!(m.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn eer_ignores_monotone_transforms(
        genuine in prop::collection::vec(-80i32..80, 1..60),
        spoof in prop::collection::vec(-80i32..80, 1..60),
    ) {
        let make = |f: &dyn Fn(f64) -> f64| {
            let mut s = ScoreSet::default();
            for (i, &g) in genuine.iter().enumerate() {
                s.push(format!("g{i}"), Label::Genuine, f(f64::from(g) / 8.0));
            }
            for (i, &v) in spoof.iter().enumerate() {
                s.push(format!("s{i}"), Label::Spoof, f(f64::from(v) / 8.0));
            }
            compute_eer(&s).unwrap()
        };
        let base = make(&|x| x);
        for f in [&(|x: f64| 3.0 * x - 7.0) as &dyn Fn(f64) -> f64, &|x: f64| (x / 4.0).exp(), &|x: f64| x * x * x] {
            prop_assert!((make(f) - base).abs() < 1e-12);
        }
        prop_assert!((0.0..=100.0).contains(&base));
    }

    #[test]
    fn loglik_ignores_frame_order(rows in 1usize..80, seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let mut unit = || (rng.next_u32() as f64 / u32::MAX as f64) * 4.0 - 2.0;
        let dim = 3;
        let data: Vec<f32> = (0..rows * dim).map(|_| unit() as f32).collect();
        let model = GmmModel::new(
            vec![0.3, 0.7],
            (0..2 * dim).map(|_| unit()).collect(),
            (0..2 * dim).map(|_| 0.2 + unit().abs()).collect(),
            dim,
            Provenance::Original,
            "",
        )
        .unwrap();
        let x = FeatureMatrix::new(rows, dim, data.clone(), "").unwrap();
        let reversed: Vec<f32> = data.chunks(dim).rev().flatten().copied().collect();
        let y = FeatureMatrix::new(rows, dim, reversed, "").unwrap();
        let (a, b) = (gmm_loglik(&model, &x).unwrap(), gmm_loglik(&model, &y).unwrap());
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }
}
