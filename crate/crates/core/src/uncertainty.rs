//! Evidential aleatoric uncertainty of the first answer token.
//!
//! The top-K logits at the first answer token are mapped to positive
//! Dirichlet evidence. The aleatoric uncertainty is the expected entropy of
//! the categorical drawn from that Dirichlet:
//!
//! `AU = -Σ_k (α_k / α_0) (ψ(α_k + 1) − ψ(α_0 + 1))`
//!
//! Being an expected entropy, AU lies in `[0, ln K]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum UncertaintyError {
    #[error("no logits supplied")]
    Empty,
    #[error("evidence must be positive and finite, got {0}")]
    NonPositive(f64),
}

/// Positivity transform applied to raw logits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EvidenceTransform {
    #[default]
    Softplus,
    Clamp { epsilon: f64 },
}

impl EvidenceTransform {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Softplus => softplus(x).max(f64::MIN_POSITIVE),
            Self::Clamp { epsilon } => x.max(epsilon),
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Dirichlet evidence: K positive parameters and their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceVector {
    alphas: Vec<f64>,
    alpha_0: f64,
}

impl EvidenceVector {
    pub fn new(alphas: Vec<f64>) -> Result<Self, UncertaintyError> {
        if alphas.is_empty() {
            return Err(UncertaintyError::Empty);
        }
        if let Some(&bad) = alphas.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(UncertaintyError::NonPositive(bad));
        }
        let alpha_0 = alphas.iter().sum();
        Ok(Self { alphas, alpha_0 })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_0(&self) -> f64 {
        self.alpha_0
    }
}

pub fn dirichlet_params(logits: &[f64], transform: EvidenceTransform) -> Result<EvidenceVector, UncertaintyError> {
    EvidenceVector::new(logits.iter().map(|&x| transform.apply(x)).collect())
}

/// Digamma function for `x > 0`; NaN otherwise.
///
/// Shifts the argument above 10 with `ψ(x) = ψ(x + 1) − 1/x`, then sums the
/// asymptotic series through the `x^-14` term. Absolute error is below 1e-14
/// on `[1e-3, 1e3]`.
pub fn digamma(mut x: f64) -> f64 {
    if x.is_nan() || x <= 0.0 || !x.is_finite() {
        return f64::NAN;
    }
    let mut shift = 0.0;
    while x < 10.0 {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli terms B_2n / (2n), innermost last.
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    shift + x.ln() - 0.5 * inv - series
}

pub fn aleatoric_uncertainty(ev: &EvidenceVector) -> f64 {
    let psi_total = digamma(ev.alpha_0 + 1.0);
    let au: f64 = ev
        .alphas
        .iter()
        .map(|&a| (a / ev.alpha_0) * (digamma(a + 1.0) - psi_total))
        .sum();
    // Rounding can leave -0.0 or a tiny negative for a single class.
    (-au).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateDecision {
    Accept,
    Refine,
}

/// `Refine` iff `au` strictly exceeds `threshold`.
pub fn gate(au: f64, threshold: f64) -> GateDecision {
    if au > threshold {
        GateDecision::Refine
    } else {
        GateDecision::Accept
    }
}

pub const DEFAULT_AU_THRESHOLD: f64 = 1.55;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuReport {
    pub au: f64,
    pub threshold: f64,
    pub decision: GateDecision,
    pub alphas: EvidenceVector,
}

/// Takes the top `k` logits (already sorted descending by the gateway) and
/// produces the gate report.
pub fn assess(
    logits: &[f64],
    k: usize,
    transform: EvidenceTransform,
    threshold: f64,
) -> Result<AuReport, UncertaintyError> {
    let alphas = dirichlet_params(&logits[..logits.len().min(k)], transform)?;
    let au = aleatoric_uncertainty(&alphas);
    Ok(AuReport {
        au,
        threshold,
        decision: gate(au, threshold),
        alphas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softplus_of_zero_is_ln2() {
        let ev = dirichlet_params(&[0.0; 4], EvidenceTransform::Softplus).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!(ev.alphas().iter().all(|a| (a - ln2).abs() < 1e-15));
        assert!((ev.alpha_0() - 4.0 * ln2).abs() < 1e-12);
    }

    #[test]
    fn clamp_floor() {
        let ev = dirichlet_params(&[-5.0], EvidenceTransform::Clamp { epsilon: 1e-6 }).unwrap();
        assert_eq!(ev.alphas(), &[1e-6]);
    }

    #[test]
    fn softplus_asymptote() {
        let ev = dirichlet_params(&[40.0, 25.5], EvidenceTransform::Softplus).unwrap();
        assert!((ev.alphas()[0] - 40.0).abs() < 1e-12);
        assert!((ev.alphas()[1] - 25.5).abs() < 1e-10);
        // Very negative logits stay strictly positive.
        let ev = dirichlet_params(&[-1000.0], EvidenceTransform::Softplus).unwrap();
        assert!(ev.alphas()[0] > 0.0);
    }

    #[test]
    fn empty_logits_rejected() {
        assert_eq!(
            dirichlet_params(&[], EvidenceTransform::Softplus),
            Err(UncertaintyError::Empty)
        );
        assert!(EvidenceVector::new(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn single_class_has_zero_au() {
        for a in [1e-3, 0.5, 1.0, 7.0, 900.0] {
            let ev = EvidenceVector::new(vec![a]).unwrap();
            assert_eq!(aleatoric_uncertainty(&ev), 0.0);
        }
    }

    #[test]
    fn uniform_unit_evidence() {
        // ψ(5) − ψ(2) = 1/2 + 1/3 + 1/4 by the recurrence ψ(n+1) = ψ(n) + 1/n.
        let oracle = 1.0 / 2.0 + 1.0 / 3.0 + 1.0 / 4.0;
        let ev = EvidenceVector::new(vec![1.0; 4]).unwrap();
        assert!((aleatoric_uncertainty(&ev) - oracle).abs() < 1e-12);
    }

    #[test]
    fn concentrated_evidence_lowers_au() {
        let flat = aleatoric_uncertainty(&EvidenceVector::new(vec![1.0; 4]).unwrap());
        let peaked = aleatoric_uncertainty(&EvidenceVector::new(vec![10.0, 1.0, 1.0, 1.0]).unwrap());
        // Harmonic-number oracle: (10/13)(H13 − H10) + (3/13)(H13 − H1).
        let h = |n: u32| (1..=n).map(|i| 1.0 / i as f64).sum::<f64>();
        let oracle = 10.0 / 13.0 * (h(13) - h(10)) + 3.0 / 13.0 * (h(13) - h(1));
        assert!((peaked - oracle).abs() < 1e-12);
        assert!(peaked < flat);
    }

    #[test]
    fn gate_boundaries() {
        assert_eq!(gate(1.6, DEFAULT_AU_THRESHOLD), GateDecision::Refine);
        assert_eq!(gate(0.0, 0.1), GateDecision::Accept);
        assert_eq!(gate(1.55, 1.55), GateDecision::Accept);
    }

    #[test]
    fn assess_uses_top_k_prefix() {
        let r = assess(&[30.0, 29.0, 28.0, 1.0, 0.5], 3, EvidenceTransform::Softplus, 1.55).unwrap();
        assert_eq!(r.alphas.alphas().len(), 3);
        assert_eq!(r.decision, GateDecision::Accept);
        // Ten equal large logits sit near ln 10 > 1.55.
        let r = assess(&[20.0; 10], 10, EvidenceTransform::Softplus, 1.55).unwrap();
        assert!(r.au > 2.2 && r.au < 10f64.ln());
        assert_eq!(r.decision, GateDecision::Refine);
    }

    #[test]
    fn digamma_known_values() {
        let euler = 0.577_215_664_901_532_9;
        assert!((digamma(1.0) + euler).abs() < 1e-14);
        assert!((digamma(0.5) + euler + 2.0 * std::f64::consts::LN_2).abs() < 1e-14);
        assert!(digamma(0.0).is_nan());
        assert!(digamma(-1.0).is_nan());
    }

    fn au_of(alphas: &[f64]) -> f64 {
        aleatoric_uncertainty(&EvidenceVector::new(alphas.to_vec()).unwrap())
    }

    fn entropy(p: &[f64]) -> f64 {
        -p.iter().filter(|x| **x > 0.0).map(|x| x * x.ln()).sum::<f64>()
    }

    #[test]
    fn uniform_maximizes_au_on_k3_grid() {
        for total in [0.3, 3.0, 30.0] {
            let uniform = au_of(&[total / 3.0; 3]);
            let steps = 60;
            for i in 1..steps {
                for j in 1..(steps - i) {
                    let a = total * i as f64 / steps as f64;
                    let b = total * j as f64 / steps as f64;
                    let c = total - a - b;
                    assert!(au_of(&[a, b, c]) <= uniform + 1e-12);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn au_nonnegative_and_bounded(alphas in prop::collection::vec(1e-3f64..1e3, 1..12)) {
            let au = au_of(&alphas);
            prop_assert!(au >= 0.0);
            prop_assert!(au <= (alphas.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn au_permutation_invariant(alphas in prop::collection::vec(1e-2f64..1e2, 2..10), rot in 0usize..10) {
            let mut rotated = alphas.clone();
            rotated.rotate_left(rot % alphas.len());
            rotated.reverse();
            prop_assert!((au_of(&alphas) - au_of(&rotated)).abs() < 1e-12);
        }

        // Scaling evidence up at fixed proportions sharpens the Dirichlet
        // around its mean, so the expected entropy rises toward the entropy
        // of the mean.
        #[test]
        fn au_increases_with_total_evidence(props in prop::collection::vec(0.05f64..1.0, 2..8), base in 0.1f64..5.0) {
            let sum: f64 = props.iter().sum();
            let p: Vec<f64> = props.iter().map(|x| x / sum).collect();
            let at = |c: f64| au_of(&p.iter().map(|x| x * base * c).collect::<Vec<_>>());
            let (a1, a2, a10) = (at(1.0), at(2.0), at(10.0));
            prop_assert!(a1 < a2 && a2 < a10);
            prop_assert!(a10 < entropy(&p));
        }
    }
}
