mod common;

use common::{diversity_oracle, dynamic_oracle, random_chromagram, random_train, xcorr_oracle, Rng};
use cuekit_core::metrics::{
    chroma_diversity, chroma_diversity_with, dynamic_variation_distance, instrumentation_distance, rhythm_xcorr, DbEnvelope,
    ImpulseTrain, InstrumentDistribution,
};
use proptest::prelude::*;

#[test]
fn diversity_matches_pairwise_oracle() {
    let mut rng = Rng::new(31);
    for _ in 0..100 {
        let n = rng.int(2, 6) as usize;
        let set: Vec<_> = (0..n).map(|_| {
            let len = rng.int(1, 80) as usize;
            random_chromagram(&mut rng, len)
        }).collect();
        let seg = [0.5, 1.0, 2.0][rng.int(0, 2) as usize];
        assert!((chroma_diversity_with(&set, seg).unwrap() - diversity_oracle(&set, seg)).abs() < 1e-12);
    }
}

#[test]
fn identical_pieces_have_no_diversity() {
    let c = random_chromagram(&mut Rng::new(32), 40);
    assert!(chroma_diversity(&[c.clone(), c.clone(), c]).unwrap().abs() < 1e-9);
}

#[test]
fn xcorr_matches_quadratic_oracle() {
    let mut rng = Rng::new(33);
    for _ in 0..100 {
        let (lx, ly) = (rng.int(1, 300) as usize, rng.int(1, 300) as usize);
        let x = random_train(&mut rng, lx, 0.1);
        let y = random_train(&mut rng, ly, 0.1);
        let lag = rng.range(0.0, 0.6);
        let r = rhythm_xcorr(&x, &y, lag).unwrap();
        let oracle = xcorr_oracle(&x, &y, r.max_lag_bins as i64);
        assert_eq!(r.raw.len(), oracle.len());
        for (a, b) in r.raw.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(r.peak, oracle.iter().cloned().fold(f64::MIN, f64::max));
    }
}

#[test]
fn shifted_train_peaks_at_one() {
    let mut rng = Rng::new(34);
    for d in [-7i64, -1, 0, 3, 12] {
        let mut x = random_train(&mut rng, 400, 0.05);
        // keep the shifted copy whole
        for v in x.values.iter_mut().take(20) { *v = 0; }
        for v in x.values.iter_mut().skip(380) { *v = 0; }
        let mut y = ImpulseTrain::zeros(100.0, 4.0);
        for (t, v) in x.values.iter().enumerate() {
            if *v != 0 { y.values[(t as i64 + d) as usize] = 1; }
        }
        let r = rhythm_xcorr(&x, &y, 0.15).unwrap();
        assert_eq!(r.lag_bins, d);
        assert!((r.normalized - 1.0).abs() < 1e-12);
    }
}

#[test]
fn dynamic_distance_matches_oracle() {
    let mut rng = Rng::new(35);
    for _ in 0..100 {
        let env = |rng: &mut Rng| DbEnvelope {
            frame: 0.1,
            values: (0..rng.int(1, 200)).map(|_| rng.range(-90.0, 0.0)).collect(),
        };
        let (a, b) = (env(&mut rng), env(&mut rng));
        assert!((dynamic_variation_distance(&a, &b).unwrap() - dynamic_oracle(&a, &b)).abs() < 1e-12);
    }
}

#[test]
fn instrumentation_example() {
    let a = InstrumentDistribution::from_durations([("strings", 3.0), ("piano", 1.0)]).unwrap();
    let b = InstrumentDistribution::from_durations([("strings", 1.0)]).unwrap();
    let d = instrumentation_distance(&a, &b).unwrap();
    let cos = 0.75 / (0.75f64.powi(2) + 0.25f64.powi(2)).sqrt();
    assert!((d - (1.0 - cos)).abs() < 1e-12);
    assert_eq!(instrumentation_distance(&a, &a).unwrap(), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn normalized_peak_is_a_fraction(seed in 0u64..10_000) {
        let mut rng = Rng::new(seed);
        let x = random_train(&mut rng, 200, 0.2);
        let y = random_train(&mut rng, 200, 0.2);
        let r = rhythm_xcorr(&x, &y, 0.05).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.normalized));
        prop_assert!(r.lag_bins.unsigned_abs() as usize <= r.max_lag_bins);
    }

    #[test]
    fn diversity_is_symmetric_in_order(seed in 0u64..10_000) {
        let mut rng = Rng::new(seed);
        let mut set: Vec<_> = (0..3).map(|_| random_chromagram(&mut rng, 30)).collect();
        let d = chroma_diversity(&set).unwrap();
        set.reverse();
        prop_assert!((chroma_diversity(&set).unwrap() - d).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn dynamic_distance_is_bounded(seed in 0u64..10_000) {
        let mut rng = Rng::new(seed);
        let a = DbEnvelope { frame: 0.1, values: (0..50).map(|_| rng.range(-60.0, 0.0)).collect() };
        let b = DbEnvelope { frame: 0.1, values: (0..50).map(|_| rng.range(-60.0, 0.0)).collect() };
        let d = dynamic_variation_distance(&a, &b).unwrap();
        prop_assert!((0.0..=2.0).contains(&d));
    }
}
