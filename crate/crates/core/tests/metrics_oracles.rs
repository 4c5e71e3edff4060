use mmc_core::metrics::{auroc_aupr, bin_table, ece, ece_from_bins, nll_and_accuracy, ECE_BINS};
use proptest::prelude::*;

/// Fraction of (ID, OOD) pairs ordered correctly, ties counting one half.
fn pair_count_auroc(id: &[f64], ood: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &a in id {
        for &b in ood {
            wins += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (id.len() * ood.len()) as f64
}

fn scores(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    // Small integer grid so ties are common.
    prop::collection::vec((0i32..12).prop_map(|v| f64::from(v) * 0.5), 1..max_len)
}

proptest! {
    #[test]
    fn auroc_matches_exhaustive_pairs(id in scores(100), ood in scores(100)) {
        let (auroc, aupr) = auroc_aupr(&id, &ood).unwrap();
        prop_assert!((auroc - pair_count_auroc(&id, &ood)).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&aupr));
    }

    #[test]
    fn ece_ignores_prediction_order(
        rows in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..200),
        rotate in 0usize..200,
    ) {
        let conf: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let correct: Vec<bool> = rows.iter().map(|r| r.1).collect();
        let base = ece(&conf, &correct).unwrap();
        let k = rotate % rows.len();
        let mut rc = conf.clone();
        let mut rk = correct.clone();
        rc.rotate_left(k);
        rk.rotate_left(k);
        rc.reverse();
        rk.reverse();
        prop_assert!((ece(&rc, &rk).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn ece_agrees_with_its_bin_table(rows in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..200)) {
        let conf: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let acc: Vec<f64> = rows.iter().map(|r| f64::from(u8::from(r.1))).collect();
        let bins = bin_table(&conf, &acc).unwrap();
        prop_assert_eq!(bins.len(), ECE_BINS);
        prop_assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), rows.len());
        let weighted: f64 = bins
            .iter()
            .map(|b| b.count as f64 * (b.mean_accuracy - b.mean_confidence).abs())
            .sum::<f64>() / rows.len() as f64;
        prop_assert!((ece_from_bins(&bins) - weighted).abs() < 1e-12);
    }
}

#[test]
fn auroc_hand_cases() {
    assert_eq!(auroc_aupr(&[3.0, 2.0], &[1.0]).unwrap().0, 1.0);
    assert_eq!(auroc_aupr(&[2.0], &[1.0, 3.0]).unwrap().0, 0.5);
    assert_eq!(auroc_aupr(&[1.0; 4], &[1.0; 3]).unwrap().0, 0.5);
    assert_eq!(auroc_aupr(&[5.0, 6.0], &[1.0, 2.0]).unwrap(), (1.0, 1.0));
}

#[test]
fn nll_of_a_three_row_hand_case() {
    let probs = vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.1, 0.8], vec![0.3, 0.4, 0.3]];
    let r = nll_and_accuracy(&probs, &[0, 2, 0]).unwrap();
    let oracle = -(0.7f64.ln() + 0.8f64.ln() + 0.3f64.ln()) / 3.0;
    assert!((r.nll - oracle).abs() < 1e-15);
    assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-15);
}
