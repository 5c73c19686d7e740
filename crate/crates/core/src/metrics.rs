//! Evaluation metrics pooled across all series and prediction steps, plus
//! the persistence baseline.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::TimeSeriesPanel;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: actual {actual:?}, predicted {predicted:?}")]
    ShapeMismatch {
        actual: (usize, usize),
        predicted: (usize, usize),
    },
    #[error("denominator is zero (all actuals are zero)")]
    ZeroDenominator,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub nrmse: f64,
    pub nd: f64,
    pub n_series: usize,
    pub horizon: usize,
}

fn check_shapes(actual: &Array2<f64>, predicted: &Array2<f64>) -> Result<(), MetricsError> {
    if actual.dim() != predicted.dim() {
        return Err(MetricsError::ShapeMismatch {
            actual: actual.dim(),
            predicted: predicted.dim(),
        });
    }
    Ok(())
}

/// Root mean squared error divided by the mean absolute actual:
/// √(mean (Z − Ẑ)²) / mean |Z|.
pub fn nrmse(actual: &Array2<f64>, predicted: &Array2<f64>) -> Result<f64, MetricsError> {
    check_shapes(actual, predicted)?;
    let count = actual.len() as f64;
    let mse = actual
        .iter()
        .zip(predicted.iter())
        .map(|(z, zh)| (z - zh) * (z - zh))
        .sum::<f64>()
        / count;
    let denom = actual.iter().map(|z| z.abs()).sum::<f64>() / count;
    if denom == 0.0 {
        return Err(MetricsError::ZeroDenominator);
    }
    Ok(mse.sqrt() / denom)
}

/// Sum of absolute deviations over the sum of absolute actuals:
/// Σ|Z − Ẑ| / Σ|Z|.
pub fn nd(actual: &Array2<f64>, predicted: &Array2<f64>) -> Result<f64, MetricsError> {
    check_shapes(actual, predicted)?;
    let num: f64 = actual
        .iter()
        .zip(predicted.iter())
        .map(|(z, zh)| (z - zh).abs())
        .sum();
    let denom: f64 = actual.iter().map(|z| z.abs()).sum();
    if denom == 0.0 {
        return Err(MetricsError::ZeroDenominator);
    }
    Ok(num / denom)
}

pub fn report(actual: &Array2<f64>, predicted: &Array2<f64>) -> Result<MetricsReport, MetricsError> {
    Ok(MetricsReport {
        nrmse: nrmse(actual, predicted)?,
        nd: nd(actual, predicted)?,
        n_series: actual.nrows(),
        horizon: actual.ncols(),
    })
}

/// Hold every node's last conditioning-range observation flat across the
/// prediction range.
pub fn persistence_baseline(panel: &TimeSeriesPanel) -> Array2<f64> {
    assert!(panel.t0 >= 1, "conditioning range must be nonempty");
    let horizon = panel.horizon();
    let n = panel.n_nodes();
    let mut out = Array2::zeros((n, horizon));
    for i in 0..n {
        let last = panel.targets[[i, panel.t0 - 1]];
        out.row_mut(i).fill(last);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use chrono::NaiveDate;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn perfect_forecast_scores_zero() {
        let z = array![[1.0, 2.0, 3.0]];
        assert_eq!(nrmse(&z, &z).unwrap(), 0.0);
        assert_eq!(nd(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn hand_worked_values() {
        let z = array![[1.0, 2.0, 3.0]];
        let zh = array![[2.0, 2.0, 2.0]];
        // RMSE = √(2/3), mean |Z| = 2
        assert_abs_diff_eq!(
            nrmse(&z, &zh).unwrap(),
            (2.0f64 / 3.0).sqrt() / 2.0,
            epsilon = 1e-12
        );
        // Σ|diff| = 2, Σ|Z| = 6
        assert_abs_diff_eq!(nd(&z, &zh).unwrap(), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_forecast_of_nonnegative_series_has_nd_one() {
        let z = array![[1.0, 2.0], [0.5, 4.0]];
        let zh = Array2::zeros((2, 2));
        assert_abs_diff_eq!(nd(&z, &zh).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_denominator_is_an_error() {
        let z = Array2::zeros((1, 3));
        let zh = array![[1.0, 1.0, 1.0]];
        assert!(matches!(nd(&z, &zh), Err(MetricsError::ZeroDenominator)));
        assert!(matches!(nrmse(&z, &zh), Err(MetricsError::ZeroDenominator)));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let z = Array2::zeros((1, 3));
        let zh = Array2::zeros((2, 3));
        assert!(matches!(nd(&z, &zh), Err(MetricsError::ShapeMismatch { .. })));
    }

    fn panel_with(targets: Array2<f64>, t0: usize) -> TimeSeriesPanel {
        let t = targets.ncols();
        let n = targets.nrows();
        TimeSeriesPanel {
            node_ids: (0..n).map(|i| format!("{:05}", i + 1)).collect(),
            dates: (0..t)
                .map(|k| {
                    NaiveDate::from_ymd_opt(2020, 5, 1).unwrap() + chrono::Days::new(k as u64)
                })
                .collect(),
            targets,
            covariates: (0..t).map(|_| Array2::zeros((n, 1))).collect(),
            feature_names: vec!["f".into()],
            t0,
        }
    }

    #[test]
    fn persistence_holds_last_observation() {
        let panel = panel_with(array![[1.0, 5.0, 10.0, 11.0, 12.0]], 3);
        let pred = persistence_baseline(&panel);
        assert_eq!(pred, array![[10.0, 10.0]]);
        let actual = panel.targets.slice(ndarray::s![.., 3..]).to_owned();
        // ND = (1 + 2) / (11 + 12)
        assert_abs_diff_eq!(nd(&actual, &pred).unwrap(), 3.0 / 23.0, epsilon = 1e-12);

        // constant series scores zero against itself
        let flat = panel_with(Array2::from_elem((2, 10), 4.0), 3);
        let pred = persistence_baseline(&flat);
        let actual = flat.targets.slice(ndarray::s![.., 3..]).to_owned();
        assert_eq!(nd(&actual, &pred).unwrap(), 0.0);

        // horizon 7 gives 7 identical columns
        let panel = panel_with(Array2::from_elem((3, 12), 2.0), 5);
        assert_eq!(persistence_baseline(&panel).ncols(), 7);
    }

    proptest! {
        #[test]
        fn metrics_scale_invariant_and_permutation_invariant(
            zv in proptest::collection::vec(0.1..10.0f64, 6),
            pv in proptest::collection::vec(-10.0..10.0f64, 6),
            c in 0.001..1000.0f64,
        ) {
            let z = Array2::from_shape_vec((2, 3), zv.clone()).unwrap();
            let p = Array2::from_shape_vec((2, 3), pv.clone()).unwrap();
            let base_nd = nd(&z, &p).unwrap();
            let base_nrmse = nrmse(&z, &p).unwrap();

            let scaled_nd = nd(&(&z * c), &(&p * c)).unwrap();
            let scaled_nrmse = nrmse(&(&z * c), &(&p * c)).unwrap();
            prop_assert!((base_nd - scaled_nd).abs() <= 1e-12 * base_nd.max(1.0));
            prop_assert!((base_nrmse - scaled_nrmse).abs() <= 1e-12 * base_nrmse.max(1.0));

            // permute cells the same way on both sides
            let mut zp = zv.clone();
            let mut pp = pv.clone();
            zp.rotate_left(2);
            pp.rotate_left(2);
            let zp = Array2::from_shape_vec((2, 3), zp).unwrap();
            let pp = Array2::from_shape_vec((2, 3), pp).unwrap();
            prop_assert!((nd(&zp, &pp).unwrap() - base_nd).abs() < 1e-12);
            prop_assert!((nrmse(&zp, &pp).unwrap() - base_nrmse).abs() < 1e-9);
        }

        #[test]
        fn metrics_zero_iff_equal(
            zv in proptest::collection::vec(0.5..5.0f64, 4),
            noise in proptest::collection::vec(-1.0..1.0f64, 4),
        ) {
            let z = Array2::from_shape_vec((2, 2), zv).unwrap();
            prop_assert_eq!(nd(&z, &z).unwrap(), 0.0);
            prop_assert_eq!(nrmse(&z, &z).unwrap(), 0.0);
            if noise.iter().any(|&e| e.abs() > 1e-9) {
                let p = &z + &Array2::from_shape_vec((2, 2), noise).unwrap();
                prop_assert!(nd(&z, &p).unwrap() > 0.0);
                prop_assert!(nrmse(&z, &p).unwrap() > 0.0);
            }
        }
    }
}
