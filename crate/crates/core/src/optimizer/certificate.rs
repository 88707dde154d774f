//! Uniqueness certificates for the minimizer.
//!
//! For a single term `(A, p)` with positive diagonal, the minimizer over
//! `V_γ` is unique exactly when `A` or `[[A, p], [1ᵀ, 1]]` is irreducible.
//! For a sum of terms it suffices that one term satisfies this, since the
//! remaining terms are convex and positive. For a growth-bound family the
//! condition can be checked on `L` or on `[[L, z + Lz + v], [1ᵀ, 1]]`.

use std::fmt;

use serde::Serialize;

use super::{Objective, OptimizeError};
use crate::growth::{GrowthBound, PredictorTerm};
use crate::numat::{augment_ap, augment_lzv, is_irreducible};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Certificate {
    UniqueGuaranteed,
    UniquenessUnknown,
}

impl fmt::Display for Certificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Certificate::UniqueGuaranteed => "UNIQUE_GUARANTEED",
            Certificate::UniquenessUnknown => "UNIQUENESS_UNKNOWN",
        })
    }
}

/// Irreducibility of `A` and of `[[A, p], [1ᵀ, 1]]` for one term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TermCheck {
    pub a_irreducible: bool,
    pub augmented_irreducible: bool,
}

impl TermCheck {
    pub fn certifies(&self) -> bool {
        self.a_irreducible || self.augmented_irreducible
    }
}

/// Checks for one growth bound of a family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GrowthCheck {
    pub l_irreducible: bool,
    /// Irreducibility of `[[L, z + Lz + v], [1ᵀ, 1]]`.
    pub lzv_irreducible: bool,
    /// The same conditions on the derived term `A = I + e^{Lτ}`,
    /// `p = 2(Az + v)`.
    pub term: TermCheck,
}

impl GrowthCheck {
    pub fn certifies(&self) -> bool {
        self.l_irreducible || self.lzv_irreducible || self.term.certifies()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateReport {
    pub certificate: Certificate,
    pub terms: Vec<TermCheck>,
    /// Present when the report was built from growth bounds.
    pub growth: Option<Vec<GrowthCheck>>,
    /// First term (or input) index that certifies uniqueness.
    pub witness: Option<usize>,
}

pub fn check_term(term: &PredictorTerm) -> TermCheck {
    let a_irreducible = is_irreducible(term.a()).expect("predictor matrices are square");
    let augmented = augment_ap(term.a(), term.p()).expect("p matches A");
    TermCheck {
        a_irreducible,
        augmented_irreducible: is_irreducible(&augmented).expect("augmented matrix is square"),
    }
}

fn verdict(witness: Option<usize>) -> Certificate {
    if witness.is_some() {
        Certificate::UniqueGuaranteed
    } else {
        Certificate::UniquenessUnknown
    }
}

/// Certificate of an objective given by its `(A, p)` terms. Exact for a
/// single term, sufficient for a sum.
pub fn certify_objective(obj: &Objective) -> CertificateReport {
    let terms: Vec<TermCheck> = obj.terms().iter().map(check_term).collect();
    let witness = if obj.dim() == 1 {
        Some(0)
    } else {
        terms.iter().position(TermCheck::certifies)
    };
    CertificateReport {
        certificate: verdict(witness),
        terms,
        growth: None,
        witness,
    }
}

pub fn uniqueness_certificate(obj: &Objective) -> Certificate {
    certify_objective(obj).certificate
}

/// Certificate of the family built from growth bounds and measurement error
/// `z`. Sufficient only.
pub fn certify_growth_family(
    bounds: &[GrowthBound],
    z: &[f64],
) -> Result<CertificateReport, OptimizeError> {
    let obj = Objective::from_growth(bounds, z)?;
    let mut growth = Vec::with_capacity(bounds.len());
    let mut terms = Vec::with_capacity(bounds.len());
    for (gb, term) in bounds.iter().zip(obj.terms()) {
        let lzv = augment_lzv(gb.l(), z, gb.v()).map_err(crate::growth::GrowthError::from)?;
        let term_check = check_term(term);
        terms.push(term_check);
        growth.push(GrowthCheck {
            l_irreducible: is_irreducible(gb.l()).map_err(crate::growth::GrowthError::from)?,
            lzv_irreducible: is_irreducible(&lzv).map_err(crate::growth::GrowthError::from)?,
            term: term_check,
        });
    }
    let witness = if obj.dim() == 1 {
        Some(0)
    } else {
        growth.iter().position(GrowthCheck::certifies)
    };
    Ok(CertificateReport {
        certificate: verdict(witness),
        terms,
        growth: Some(growth),
        witness,
    })
}
