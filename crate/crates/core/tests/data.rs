use bcgnn::correlation::{average_ranks, coefficient, kendall_tau_b, pearson, sign_indicator, spearman};
use bcgnn::dataio::{parse_csv, split_labels, write_csv};
use bcgnn::missingness::{
    connectivity_guard, gen_mar, gen_mcar, gen_mnar, generate_with, mar_probabilities, mnar_probabilities,
};
use bcgnn::numcore::{seeded_rng, Matrix};
use bcgnn::synth::{generate, SynthConfig};
use bcgnn::{pairwise_corr, Column, Estimator, Labels, Mask, Mechanism, MissSpec, Schema};
use proptest::prelude::*;
use rand::Rng;

fn uniform(n: usize, m: usize, seed: u64) -> Matrix {
    let mut rng = seeded_rng(seed);
    Matrix::from_vec(n, m, (0..n * m).map(|_| rng.random::<f64>()).collect()).unwrap()
}

proptest! {
    #[test]
    fn spearman_is_pearson_of_ranks(
        pairs in proptest::collection::vec((0i32..6, -3i32..3), 3..30),
    ) {
        // small integer ranges force ties
        let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        let s = spearman(&x, &y);
        let oracle = pearson(&average_ranks(&x).unwrap(), &average_ranks(&y).unwrap());
        prop_assert_eq!(s.is_some(), oracle.is_some());
        if let (Some(s), Some(o)) = (s, oracle) {
            prop_assert!((s - o).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&s));
            prop_assert!((s - spearman(&y, &x).unwrap()).abs() < 1e-12);
            // monotone transforms leave ranks alone
            let ex: Vec<f64> = x.iter().map(|v| v.exp()).collect();
            prop_assert!((s - spearman(&ex, &y).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn kendall_matches_pair_count(
        pairs in proptest::collection::vec((0i32..5, 0i32..5), 2..25),
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        let (mut c, mut d, mut tx, mut ty) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                use std::cmp::Ordering::Equal;
                let (a, b) = (x[i].partial_cmp(&x[j]).unwrap(), y[i].partial_cmp(&y[j]).unwrap());
                if a == Equal && b == Equal {
                } else if a == Equal {
                    tx += 1.0;
                } else if b == Equal {
                    ty += 1.0;
                } else if a == b {
                    c += 1.0;
                } else {
                    d += 1.0;
                }
            }
        }
        let denom = ((c + d + tx) * (c + d + ty)).sqrt();
        match kendall_tau_b(&x, &y) {
            Some(t) => prop_assert!((t - (c - d) / denom).abs() < 1e-12),
            None => prop_assert!(denom == 0.0),
        }
    }

    #[test]
    fn mcar_masks_are_seeded(seed in 0u64..1000, rate in 0.05f64..0.95) {
        let a = gen_mcar(30, 4, rate, seed).unwrap();
        prop_assert_eq!(&a, &gen_mcar(30, 4, rate, seed).unwrap());
        prop_assert_eq!((a.rows(), a.cols()), (30, 4));
    }

    #[test]
    fn guard_leaves_every_row_and_column_connected(
        bits in proptest::collection::vec(proptest::bool::weighted(0.15), 48),
        seed in 0u64..100,
    ) {
        let mut mask = Mask::from_bits(8, 6, bits).unwrap();
        let before = mask.clone();
        let repairs = connectivity_guard(&mut mask, seed);
        for r in 0..8 {
            prop_assert!((0..6).any(|c| mask.get(r, c)));
        }
        for c in 0..6 {
            prop_assert!(mask.observed_in_column(c) > 0);
        }
        prop_assert_eq!(mask.count_observed(), before.count_observed() + repairs);
    }
}

#[test]
fn correlation_hand_cases() {
    let x = [1.0, 2.0, 3.0, 4.0];
    let y = [2.0, 1.0, 4.0, 3.0];
    assert_eq!(spearman(&x, &y), Some(0.6));
    assert!((kendall_tau_b(&x, &y).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]).unwrap(), vec![3.5, 1.0, 3.5, 2.0]);
    assert_eq!(coefficient(&[1.0, 1.0, 1.0], &x[..3], Estimator::Pearson), None);
    assert_eq!(sign_indicator(f64::NAN), 0);
    assert_eq!(sign_indicator(-0.0999), 0);
    assert_eq!(sign_indicator(-0.1), -1);
}

#[test]
fn pairwise_correlation_uses_co_observed_rows() {
    let d = Matrix::from_rows(&[
        vec![1.0, 1.0, 5.0],
        vec![2.0, 2.0, 4.0],
        vec![3.0, 100.0, 3.0],
        vec![4.0, 4.0, 2.0],
        vec![5.0, 5.0, 1.0],
    ])
    .unwrap();
    let mut mask = Mask::full(5, 3);
    mask.set(2, 1, false);
    let c = pairwise_corr(&d, &mask, Estimator::Spearman).unwrap();
    assert_eq!(c.coefficients.get(0, 1), 1.0);
    assert_eq!(c.pair_count(0, 1), 4);
    assert_eq!(c.coefficients.get(0, 2), -1.0);
    for w in 0..3 {
        assert_eq!(c.signs.get(w, w), 0);
        for v in 0..3 {
            assert_eq!(c.signs.get(w, v), c.signs.get(v, w));
        }
    }
    assert_eq!(c.signs.get(1, 2), -1);
}

#[test]
fn degenerate_mechanisms_are_exactly_mcar() {
    let d = uniform(200, 4, 1);
    let rates = vec![0.3, 0.5, 0.7, 0.4];
    let mut mar = MissSpec::draw(Mechanism::Mar, rates.clone(), 7).unwrap();
    mar.mar_dependency = vec![false; 4];
    let (pi, clipped) = mar_probabilities(&d, &mar).unwrap();
    assert_eq!(clipped, 0);
    for k in 0..200 {
        assert_eq!(pi.row(k), &rates[..]);
    }
    let mut mnar = MissSpec::draw(Mechanism::Mnar, rates.clone(), 7).unwrap();
    mnar.mnar_weights = vec![0.0; 4];
    let (pi, _) = mnar_probabilities(&d, &mnar).unwrap();
    for k in 0..200 {
        assert_eq!(pi.row(k), &rates[..]);
    }
    let mcar = generate_with(&d, &mut MissSpec::draw(Mechanism::Mcar, rates, 7).unwrap()).unwrap();
    assert_eq!(generate_with(&d, &mut mar).unwrap(), mcar);
    assert_eq!(generate_with(&d, &mut mnar).unwrap(), mcar);
}

#[test]
fn mechanism_probabilities_have_the_target_mean() {
    let d = uniform(500, 5, 2);
    let (_, spec) = gen_mar(&d, &[0.3; 5], 3).unwrap();
    let (pi, clipped) = mar_probabilities(&d, &spec).unwrap();
    assert_eq!(clipped, 0);
    for j in 0..5 {
        let mean = (0..500).map(|k| pi.get(k, j)).sum::<f64>() / 500.0;
        assert!((mean - 0.3).abs() < 1e-12);
    }
    let (_, spec) = gen_mnar(&d, &[0.5; 5], 3).unwrap();
    let (pi, _) = mnar_probabilities(&d, &spec).unwrap();
    // larger values are less likely to go missing
    for j in 0..5 {
        let lo = (0..500).filter(|&k| d.get(k, j) < 0.5).map(|k| pi.get(k, j)).sum::<f64>();
        let hi = (0..500).filter(|&k| d.get(k, j) >= 0.5).map(|k| pi.get(k, j)).sum::<f64>();
        assert!(lo > hi || spec.mnar_weights[j] < 1e-3);
    }
}

#[test]
fn mechanism_input_errors() {
    assert!(gen_mcar(10, 2, 0.0, 1).is_err());
    assert!(gen_mcar(10, 2, 1.0, 1).is_err());
    let mut d = uniform(10, 2, 1);
    d.set(3, 1, f64::NAN);
    assert!(gen_mar(&d, &[0.3, 0.3], 1).is_err());
    assert!(gen_mnar(&uniform(10, 3, 1), &[0.3, 0.3], 1).is_err());
    assert!("mcar".parse::<Mechanism>().is_ok());
    assert!("mcr".parse::<Mechanism>().is_err());
}

#[test]
fn csv_round_trip_with_labels_and_categories() {
    let schema = Schema::new(vec![Column::continuous("x"), Column::categorical("c", &["lo", "hi"])])
        .unwrap()
        .with_label(Column::continuous("y"))
        .unwrap();
    let text = "x,c,y\n1.5,hi,3\n,lo,\n-2,,0.25\n";
    let ds = parse_csv(text, &schema).unwrap();
    assert_eq!(ds.num_rows(), 3);
    assert!(!ds.is_observed(1, 0) && !ds.is_observed(2, 1));
    assert_eq!(ds.raw().get(0, 1), 1.0);
    assert_eq!(ds.labels.as_ref().unwrap().observed, vec![true, false, true]);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    write_csv(&path, &schema, ds.raw(), ds.labels.as_ref()).unwrap();
    let back = parse_csv(&std::fs::read_to_string(&path).unwrap(), &schema).unwrap();
    assert_eq!(back.mask(), ds.mask());
    let (a, b) = (back.labels.as_ref().unwrap(), ds.labels.as_ref().unwrap());
    assert_eq!(a.observed, b.observed);
    assert_eq!((a.values[0], a.values[2]), (b.values[0], b.values[2]));
    for (a, b) in back.raw().data().iter().zip(ds.raw().data()) {
        assert!(a == b || (a.is_nan() && b.is_nan()));
    }

    // the label column may be absent
    assert!(parse_csv("x,c\n1,lo\n", &schema).unwrap().labels.is_none());
    assert!(parse_csv("c,x\nlo,1\n", &schema).is_err());
    assert!(parse_csv("x,c,y\n1,mid,2\n", &schema).is_err());
    assert!(parse_csv("x,c,y\n 1,lo,2\n", &schema).is_err());
}

#[test]
fn label_split_is_seventy_thirty() {
    let eligible: Vec<bool> = (0..20).map(|i| i % 5 != 0).collect();
    let split = split_labels(&eligible, 4).unwrap();
    assert_eq!(split.iter().filter(|&&b| b).count(), 12);
    assert!(split.iter().zip(&eligible).all(|(s, e)| !s || *e));
    assert_eq!(split, split_labels(&eligible, 4).unwrap());
    assert_eq!(split_labels(&[true, true], 0).unwrap().iter().filter(|&&b| b).count(), 1);
    assert!(split_labels(&[true], 0).is_err());
    let _ = Labels { values: vec![], observed: vec![] };
}

#[test]
fn synthetic_data_plants_monotone_pairs() {
    let s = generate(&SynthConfig { seed: 4, ..SynthConfig::default() }).unwrap();
    let d = s.dataset.raw();
    let col = |j: usize| (0..d.rows()).map(|i| d.get(i, j)).collect::<Vec<_>>();
    assert!(!s.description.planted_pairs.is_empty());
    for &(a, b) in &s.description.planted_pairs {
        assert!(spearman(&col(a), &col(b)).unwrap().abs() >= 0.5, "pair ({a}, {b})");
    }
    let again = generate(&SynthConfig { seed: 4, ..SynthConfig::default() }).unwrap();
    assert_eq!(again.dataset.raw(), d);
    assert_eq!(again.description, s.description);

    let ind = generate(&SynthConfig { seed: 4, independent: true, ..SynthConfig::default() }).unwrap();
    let d = ind.dataset.raw();
    let col = |j: usize| (0..d.rows()).map(|i| d.get(i, j)).collect::<Vec<_>>();
    let mut weak = 0;
    for a in 0..8 {
        for b in a + 1..8 {
            weak += usize::from(spearman(&col(a), &col(b)).unwrap().abs() < 0.1);
        }
    }
    assert!(weak >= 26, "{weak} of 28 pairs below 0.1");
    assert!(generate(&SynthConfig { n: 1, ..SynthConfig::default() }).is_err());
}
