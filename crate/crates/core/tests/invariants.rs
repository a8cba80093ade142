use auctionmetrics::dist::{kolmogorov, levy, wasserstein1, Interpolation, PiecewiseCdf};
use auctionmetrics::io::{read_fp_samples_from, write_fp_samples_to};
use auctionmetrics::isotonic::pava;
use auctionmetrics::sim::{FpObservation, FpSampleSet};
use proptest::prelude::*;

fn staircase() -> impl Strategy<Value = PiecewiseCdf> {
    (prop::collection::vec(0.0f64..1.0, 1..10), prop::collection::vec(0.0f64..1.0, 10)).prop_map(|(mut xs, mut vs)| {
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        vs.truncate(xs.len());
        vs.sort_by(f64::total_cmp);
        *vs.last_mut().unwrap() = 1.0;
        PiecewiseCdf::new(xs, vs, Interpolation::Step, true).unwrap()
    })
}

proptest! {
    #[test]
    fn pava_is_monotone_and_keeps_the_mean(y in prop::collection::vec(-5.0f64..5.0, 1..60)) {
        let fit = pava(&y, None);
        prop_assert_eq!(fit.len(), y.len());
        prop_assert!(fit.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        let (a, b): (f64, f64) = (y.iter().sum(), fit.iter().sum());
        prop_assert!((a - b).abs() <= 1e-9 * y.len() as f64);
    }

    #[test]
    fn pava_leaves_sorted_input_alone(mut y in prop::collection::vec(-5.0f64..5.0, 1..60)) {
        y.sort_by(f64::total_cmp);
        prop_assert_eq!(pava(&y, None), y);
    }

    #[test]
    fn metric_chain_holds(f in staircase(), g in staircase()) {
        let l = levy(&f, &g);
        let d = kolmogorov(&f, &g);
        prop_assert!(l <= d + 1e-9);
        prop_assert!(l <= wasserstein1(&f, &g).sqrt() + 1e-9);
        prop_assert!((d - kolmogorov(&g, &f)).abs() <= 1e-12);
        prop_assert!(kolmogorov(&f, &f) == 0.0);
    }

    #[test]
    fn empirical_cdf_is_a_cdf(samples in prop::collection::vec(0.0f64..=1.0, 1..200), probes in prop::collection::vec(-0.5f64..1.5, 20)) {
        let f = PiecewiseCdf::empirical(&samples).unwrap();
        let mut probes = probes;
        probes.sort_by(f64::total_cmp);
        let vals: Vec<f64> = probes.iter().map(|&x| f.eval(x)).collect();
        prop_assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(f.eval(1.0), 1.0);
    }

    #[test]
    fn first_price_csv_round_trips(rows in prop::collection::vec((0.0f64..=1.0, 0usize..4), 1..100)) {
        let obs: Vec<FpObservation> = rows.iter().map(|&(y, winner)| FpObservation { y, winner }).collect();
        let set = FpSampleSet::new(4, obs).unwrap();
        let mut buf = Vec::new();
        write_fp_samples_to(&mut buf, &set).unwrap();
        let back = read_fp_samples_from(buf.as_slice(), Some(4)).unwrap();
        prop_assert_eq!(back.observations(), set.observations());
    }
}
