//! Evaluation metrics: prediction error, classification accuracy and
//! confusion counts, and the risk-return ratio of a predicted-sign
//! strategy.

use serde::Serialize;

use crate::error::{Error, Result};

/// Trading days per year, used to annualize the daily risk-return ratio.
pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

/// Root-mean-squared error between predictions and actuals.
pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Input("rmse on empty input".into()));
    }
    if pred.len() != actual.len() {
        return Err(Error::Input(format!(
            "rmse length mismatch: {} vs {}",
            pred.len(),
            actual.len()
        )));
    }
    let mse: f64 = pred
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(mse.sqrt())
}

/// Fraction of exact class matches.
pub fn accuracy(pred: &[usize], actual: &[usize]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Input("accuracy on empty input".into()));
    }
    if pred.len() != actual.len() {
        return Err(Error::Input(format!(
            "accuracy length mismatch: {} vs {}",
            pred.len(),
            actual.len()
        )));
    }
    let hits = pred.iter().zip(actual).filter(|(p, a)| p == a).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// 3×3 confusion counts indexed `[actual][predicted]`.
pub fn confusion(pred: &[usize], actual: &[usize]) -> Result<[[usize; 3]; 3]> {
    if pred.len() != actual.len() {
        return Err(Error::Input(format!(
            "confusion length mismatch: {} vs {}",
            pred.len(),
            actual.len()
        )));
    }
    let mut table = [[0usize; 3]; 3];
    for (&p, &a) in pred.iter().zip(actual) {
        if p > 2 || a > 2 {
            return Err(Error::Input(format!("class id out of range: pred {p}, actual {a}")));
        }
        table[a][p] += 1;
    }
    Ok(table)
}

/// Mean excess return over its sample standard deviation (n−1), plus the
/// √252-annualized value. Undefined when returns never vary.
pub fn sharpe(daily_returns: &[f64], risk_free_daily: f64) -> Result<(f64, f64)> {
    if daily_returns.len() < 2 {
        return Err(Error::UndefinedMetric(format!(
            "sharpe needs at least 2 returns, got {}",
            daily_returns.len()
        )));
    }
    let n = daily_returns.len() as f64;
    let excess: Vec<f64> = daily_returns.iter().map(|r| r - risk_free_daily).collect();
    let mean = excess.iter().sum::<f64>() / n;
    let var = excess.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    if std == 0.0 {
        return Err(Error::UndefinedMetric(
            "sharpe undefined: zero return variance".into(),
        ));
    }
    let daily = mean / std;
    Ok((daily, daily * TRADING_DAYS_PER_YEAR.sqrt()))
}

/// Evaluation summary of one split.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub accuracy: f64,
    /// Daily risk-return ratio of the predicted-sign strategy; absent when
    /// undefined (zero variance).
    pub sharpe_daily: Option<f64>,
    pub sharpe_annual: Option<f64>,
    pub confusion: [[usize; 3]; 3],
    pub n_samples: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(rmse(&[1.0, 2.0], &[3.0, 0.0]).unwrap(), 2.0);
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rmse_detects_translation() {
        let x = [0.3, -0.7, 1.1, 0.0, 2.2];
        for c in [0.5, -1.25, 3.0] {
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            assert!((rmse(&x, &shifted).unwrap() - c.abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0], &[1, 2]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 2, 2], &[0, 1, 2, 1]).unwrap(), 0.75);
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn accuracy_survives_consistent_relabeling() {
        let pred = [0, 1, 2, 1, 0, 2, 2];
        let actual = [0, 2, 2, 1, 1, 2, 0];
        let base = accuracy(&pred, &actual).unwrap();
        // Apply the cycle 0→1→2→0 to both sides.
        let relabel = |c: usize| (c + 1) % 3;
        let p2: Vec<usize> = pred.iter().map(|&c| relabel(c)).collect();
        let a2: Vec<usize> = actual.iter().map(|&c| relabel(c)).collect();
        assert_eq!(base, accuracy(&p2, &a2).unwrap());
    }

    #[test]
    fn confusion_counts_land_in_the_right_cells() {
        let t = confusion(&[0, 1, 2, 2, 0], &[0, 1, 1, 2, 2]).unwrap();
        assert_eq!(t[0][0], 1);
        assert_eq!(t[1][1], 1);
        assert_eq!(t[1][2], 1);
        assert_eq!(t[2][2], 1);
        assert_eq!(t[2][0], 1);
        let total: usize = t.iter().flatten().sum();
        assert_eq!(total, 5);
    }

    #[test]
    fn sharpe_hand_value() {
        let (daily, annual) = sharpe(&[0.01, 0.03, -0.01, 0.01], 0.0).unwrap();
        assert!((daily - 0.6123724356957945).abs() < 1e-9);
        assert!((annual - daily * 252f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sharpe_scale_invariant_and_undefined_cases() {
        let r = [0.012, -0.004, 0.007, 0.001, -0.009];
        let (base, _) = sharpe(&r, 0.0).unwrap();
        for c in [2.0, 0.5, 10.0] {
            let scaled: Vec<f64> = r.iter().map(|v| v * c).collect();
            let (s, _) = sharpe(&scaled, 0.0).unwrap();
            assert!((s - base).abs() < 1e-12);
        }
        assert!(matches!(
            sharpe(&[0.01, 0.01, 0.01], 0.0),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(sharpe(&[0.01], 0.0), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn sharpe_uses_excess_returns() {
        // Constant shift of the risk-free rate moves the mean, not the std.
        let r = [0.02, 0.00, 0.01, -0.01];
        let (with_rf, _) = sharpe(&r, 0.005).unwrap();
        let shifted: Vec<f64> = r.iter().map(|v| v - 0.005).collect();
        let (direct, _) = sharpe(&shifted, 0.0).unwrap();
        assert!((with_rf - direct).abs() < 1e-12);
    }
}
