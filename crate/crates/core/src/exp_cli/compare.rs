//! Measurement-versus-prediction records with z-scores, ratios and verdicts.

use serde::Serialize;

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Marginal,
    Fail,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Marginal => "MARGINAL",
            Verdict::Fail => "FAIL",
        }
    }
}

/// |z| cuts for pass and marginal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    pub pass: f64,
    pub marginal: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { pass: 3.0, marginal: 5.0 }
    }
}

/// A measured quantity; `stderr = None` means the value carries no error estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub quantity: String,
    pub n: String,
    pub value: f64,
    pub stderr: Option<f64>,
}

impl Measurement {
    pub fn new(quantity: impl Into<String>, n: impl Into<String>, value: f64, stderr: Option<f64>) -> Self {
        Measurement { quantity: quantity.into(), n: n.into(), value, stderr }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionKind {
    /// A value, exact or with its own standard error.
    Value,
    /// A scaling exponent; compared by ratio and absolute deviation.
    Exponent,
}

/// Predicted value with its source.
///
/// `allowance` is a systematic deviation that is tolerated before any statistical excess counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub value: f64,
    pub stderr: Option<f64>,
    pub allowance: f64,
    pub kind: PredictionKind,
    pub source: String,
}

impl Prediction {
    pub fn exact(value: f64, source: impl Into<String>) -> Self {
        Prediction { value, stderr: None, allowance: 0.0, kind: PredictionKind::Value, source: source.into() }
    }

    pub fn estimated(value: f64, stderr: f64, source: impl Into<String>) -> Self {
        Prediction { stderr: Some(stderr), ..Self::exact(value, source) }
    }

    /// Exponent claim with an absolute tolerance on the fitted slope.
    pub fn exponent(value: f64, tolerance: f64, source: impl Into<String>) -> Self {
        Prediction { allowance: tolerance, kind: PredictionKind::Exponent, ..Self::exact(value, source) }
    }

    pub fn with_allowance(mut self, allowance: f64) -> Self {
        self.allowance = allowance;
        self
    }

    pub fn is_exact(&self) -> bool {
        self.stderr.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub quantity: String,
    pub n: String,
    pub measurement: f64,
    pub stderr: Option<f64>,
    pub prediction: f64,
    pub prediction_stderr: Option<f64>,
    pub allowance: f64,
    pub kind: PredictionKind,
    pub source: String,
    /// (deviation beyond the allowance) / combined SE; absent when no SE applies.
    pub z: Option<f64>,
    pub ratio: Option<f64>,
    pub verdict: Verdict,
}

/// z = (measurement − prediction)/SE beyond the allowance, plus the ratio, classified against `th`.
///
/// Exponent claims are classified by |slope − target| against the allowance, scaled by
/// `th.marginal / th.pass` for the marginal band. Value comparisons with zero combined SE
/// pass only inside the allowance.
pub fn compare_to_prediction(m: &Measurement, p: &Prediction, th: Thresholds) -> Result<Comparison> {
    if m.stderr.is_none() && !p.is_exact() && p.kind == PredictionKind::Value {
        return Err(LabError::invalid(format!(
            "measurement `{}` has no standard error but the prediction is inexact",
            m.quantity
        )));
    }
    if m.stderr.is_some_and(|s| s < 0.0 || s.is_nan()) || p.stderr.is_some_and(|s| s < 0.0 || s.is_nan()) {
        return Err(LabError::invalid("standard errors must be nonnegative"));
    }
    let dev = m.value - p.value;
    let ratio = (p.value != 0.0).then(|| m.value / p.value);
    let excess = (dev.abs() - p.allowance).max(0.0);
    let (z, verdict) = if !m.value.is_finite() {
        (None, Verdict::Fail)
    } else {
        match p.kind {
            PredictionKind::Exponent => {
                let verdict = if dev.abs() <= p.allowance {
                    Verdict::Pass
                } else if dev.abs() <= p.allowance * th.marginal / th.pass {
                    Verdict::Marginal
                } else {
                    Verdict::Fail
                };
                let se = m.stderr.unwrap_or(0.0);
                (if se > 0.0 { Some(excess.copysign(dev) / se) } else { None }, verdict)
            }
            PredictionKind::Value => {
                let se = (m.stderr.unwrap_or(0.0).powi(2) + p.stderr.unwrap_or(0.0).powi(2)).sqrt();
                if se > 0.0 {
                    let z = excess.copysign(dev) / se;
                    let verdict = if z.abs() <= th.pass {
                        Verdict::Pass
                    } else if z.abs() <= th.marginal {
                        Verdict::Marginal
                    } else {
                        Verdict::Fail
                    };
                    (Some(z), verdict)
                } else {
                    (None, if excess == 0.0 { Verdict::Pass } else { Verdict::Fail })
                }
            }
        }
    };
    Ok(Comparison {
        quantity: m.quantity.clone(),
        n: m.n.clone(),
        measurement: m.value,
        stderr: m.stderr,
        prediction: p.value,
        prediction_stderr: p.stderr,
        allowance: p.allowance,
        kind: p.kind,
        source: p.source.clone(),
        z,
        ratio,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(v: f64, se: Option<f64>) -> Measurement {
        Measurement::new("q", "", v, se)
    }

    #[test]
    fn equal_values_pass_with_zero_z() {
        let c = compare_to_prediction(&m(1.5, Some(0.1)), &Prediction::exact(1.5, "src"), Thresholds::default()).unwrap();
        assert_eq!(c.z, Some(0.0));
        assert_eq!(c.verdict, Verdict::Pass);
        assert_eq!(c.ratio, Some(1.0));
        assert_eq!(c.source, "src");
    }

    #[test]
    fn z_bands() {
        let th = Thresholds::default();
        let p = Prediction::exact(0.0, "s");
        assert_eq!(compare_to_prediction(&m(0.29, Some(0.1)), &p, th).unwrap().verdict, Verdict::Pass);
        assert_eq!(compare_to_prediction(&m(-0.4, Some(0.1)), &p, th).unwrap().verdict, Verdict::Marginal);
        let c = compare_to_prediction(&m(0.6, Some(0.1)), &p, th).unwrap();
        assert_eq!(c.verdict, Verdict::Fail);
        assert!((c.z.unwrap() - 6.0).abs() < 1e-12);
        assert_eq!(c.ratio, None);
    }

    #[test]
    fn prediction_error_combines() {
        let c = compare_to_prediction(&m(1.0, Some(0.3)), &Prediction::estimated(0.0, 0.4, "s"), Thresholds::default())
            .unwrap();
        assert!((c.z.unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn allowance_absorbs_systematic_part() {
        let p = Prediction::exact(1.0, "s").with_allowance(0.5);
        let c = compare_to_prediction(&m(1.7, Some(0.1)), &p, Thresholds::default()).unwrap();
        assert!((c.z.unwrap() - 2.0).abs() < 1e-9);
        let c = compare_to_prediction(&m(1.2, None), &p, Thresholds::default()).unwrap();
        assert_eq!((c.z, c.verdict), (None, Verdict::Pass));
        let c = compare_to_prediction(&m(1.6, Some(0.0)), &p, Thresholds::default()).unwrap();
        assert_eq!(c.verdict, Verdict::Fail);
    }

    #[test]
    fn exponent_claims_use_ratio_form() {
        let p = Prediction::exponent(0.5, 0.05, "s");
        let c = compare_to_prediction(&m(0.52, None), &p, Thresholds::default()).unwrap();
        assert_eq!(c.kind, PredictionKind::Exponent);
        assert!((c.ratio.unwrap() - 1.04).abs() < 1e-12);
        assert_eq!(c.verdict, Verdict::Pass);
        assert_eq!(compare_to_prediction(&m(0.57, None), &p, Thresholds::default()).unwrap().verdict, Verdict::Marginal);
        assert_eq!(compare_to_prediction(&m(0.7, None), &p, Thresholds::default()).unwrap().verdict, Verdict::Fail);
    }

    #[test]
    fn missing_stderr_with_inexact_prediction_is_error() {
        assert!(compare_to_prediction(&m(1.0, None), &Prediction::estimated(1.0, 0.1, "s"), Thresholds::default()).is_err());
        assert!(compare_to_prediction(&m(1.0, None), &Prediction::exact(1.0, "s"), Thresholds::default()).is_ok());
    }

    #[test]
    fn non_finite_measurement_fails() {
        let c = compare_to_prediction(&m(f64::NAN, Some(1.0)), &Prediction::exact(0.0, "s"), Thresholds::default()).unwrap();
        assert_eq!(c.verdict, Verdict::Fail);
    }
}
