//! Verdicts and the certificate record shared by both criteria.

use serde::{Deserialize, Serialize};

use crate::region::GridMeta;

/// Default band around zero in which no sign is claimed.
pub const DEFAULT_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING-KEBAB-CASE")]
pub enum Verdict {
    Contractive,
    Inconclusive,
    NotContractive,
    InvalidMetric,
}

impl Verdict {
    /// Sign test of a bound against a symmetric margin.
    pub fn from_bound(bound: f64, margin: f64) -> Self {
        if !bound.is_finite() {
            Verdict::Inconclusive
        } else if bound < -margin {
            Verdict::Contractive
        } else if bound > margin {
            Verdict::NotContractive
        } else {
            Verdict::Inconclusive
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionMethod {
    /// Finite-time exponents, `𝚺_d < 0`.
    First,
    /// Metric roots, `Λ < 0`.
    Second,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CertificateGrid {
    pub region: GridMeta,
    /// Horizons of the first method; empty for the second.
    pub horizons: Vec<f64>,
    /// State attaining `Λ` (or the worst `Σ_d` at the best horizon).
    pub argmax: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Margins {
    pub verdict: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionCertificate {
    pub method: CriterionMethod,
    pub d: f64,
    /// `𝚺_d` estimate (first method) or `Λ` (second method).
    #[serde(rename = "Lambda")]
    pub bound: f64,
    #[serde(rename = "LambdaMinus")]
    pub reverse_bound: Option<f64>,
    #[serde(rename = "decayRate")]
    pub decay_rate: Option<f64>,
    pub verdict: Verdict,
    pub grid: CertificateGrid,
    pub margins: Margins,
    #[serde(rename = "toolVersion")]
    pub tool_version: String,
    #[serde(rename = "offendingPoint")]
    pub offending_point: Option<Vec<f64>>,
    pub notes: Vec<String>,
}

impl ContractionCertificate {
    pub fn is_contractive(&self) -> bool {
        self.verdict == Verdict::Contractive
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_bands() {
        assert_eq!(Verdict::from_bound(-4.5, DEFAULT_MARGIN), Verdict::Contractive);
        assert_eq!(Verdict::from_bound(0.02, DEFAULT_MARGIN), Verdict::NotContractive);
        assert_eq!(Verdict::from_bound(1e-9, DEFAULT_MARGIN), Verdict::Inconclusive);
        assert_eq!(Verdict::from_bound(f64::NAN, DEFAULT_MARGIN), Verdict::Inconclusive);
    }

    #[test]
    fn verdict_serializes_kebab() {
        let s = serde_json::to_string(&Verdict::NotContractive).unwrap();
        assert_eq!(s, "\"NOT-CONTRACTIVE\"");
    }
}
