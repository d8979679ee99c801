//! Shamir secret sharing over [`FieldElement`].
//!
//! Parties are numbered `1..=n` and party `i` holds `f(i)` for a random
//! polynomial `f` of degree `t` with `f(0)` equal to the secret.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldElement, ELEMENT_BYTES};

/// Wire size of a share: party index, degree, then the 8-byte residue.
pub const SHARE_BYTES: usize = 2 + ELEMENT_BYTES;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Share {
    pub party: u8,
    pub value: FieldElement,
    pub degree: u8,
}

impl Share {
    pub fn new(party: u8, value: FieldElement, degree: u8) -> Self {
        Self {
            party,
            value,
            degree,
        }
    }

    pub fn point(&self) -> FieldElement {
        FieldElement::from(u64::from(self.party))
    }

    pub fn to_bytes(&self) -> [u8; SHARE_BYTES] {
        let mut out = [0u8; SHARE_BYTES];
        out[0] = self.party;
        out[1] = self.degree;
        out[2..].copy_from_slice(&self.value.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != SHARE_BYTES || bytes[0] == 0 {
            return Err(Error::MalformedShare);
        }
        let mut word = [0u8; ELEMENT_BYTES];
        word.copy_from_slice(&bytes[2..]);
        Ok(Self {
            party: bytes[0],
            degree: bytes[1],
            value: FieldElement::from_le_bytes(word)?,
        })
    }
}

/// Party count and threshold degree of a sharing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharingParams {
    n: usize,
    t: usize,
}

impl SharingParams {
    pub fn new(n: usize, t: usize) -> Result<Self> {
        if t == 0 || n < 2 * t + 1 || n > usize::from(u8::MAX) {
            return Err(Error::InvalidParams { n, t });
        }
        Ok(Self { n, t })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Minimum number of shares that determine the secret.
    pub fn reconstruction_threshold(&self) -> usize {
        self.t + 1
    }
}

impl Default for SharingParams {
    fn default() -> Self {
        Self { n: 3, t: 1 }
    }
}

/// Evaluates `coeffs[0] + coeffs[1] x + ...` at `x`.
pub fn eval_poly(coeffs: &[FieldElement], x: FieldElement) -> FieldElement {
    coeffs
        .iter()
        .rev()
        .fold(FieldElement::ZERO, |acc, &c| acc * x + c)
}

/// Shares `secret` with a fresh random polynomial of degree `t`.
pub fn share<R: Rng + ?Sized>(
    secret: FieldElement,
    params: SharingParams,
    rng: &mut R,
) -> Vec<Share> {
    let mut coeffs = Vec::with_capacity(params.t + 1);
    coeffs.push(secret);
    coeffs.extend((0..params.t).map(|_| FieldElement::random(rng)));
    share_with_polynomial(&coeffs, params.n)
}

/// Evaluates a caller-supplied polynomial at points `1..=n`.
///
/// `coeffs[0]` is the secret; the share degree is `coeffs.len() - 1`.
pub fn share_with_polynomial(coeffs: &[FieldElement], n: usize) -> Vec<Share> {
    let degree = coeffs.len().saturating_sub(1) as u8;
    (1..=n as u8)
        .map(|party| {
            let x = FieldElement::from(u64::from(party));
            Share::new(party, eval_poly(coeffs, x), degree)
        })
        .collect()
}

/// Lagrange basis coefficients `λ_i(x)` for the given distinct points.
pub fn lagrange_coefficients(points: &[FieldElement], x: FieldElement) -> Result<Vec<FieldElement>> {
    let mut out = Vec::with_capacity(points.len());
    for (i, &xi) in points.iter().enumerate() {
        let mut num = FieldElement::ONE;
        let mut den = FieldElement::ONE;
        for (j, &xj) in points.iter().enumerate() {
            if i != j {
                num *= x - xj;
                den *= xi - xj;
            }
        }
        out.push(num * den.inv()?);
    }
    Ok(out)
}

/// Value at `x` of the unique polynomial of degree `< points.len()` through `points`.
pub fn interpolate_at(points: &[(FieldElement, FieldElement)], x: FieldElement) -> Result<FieldElement> {
    let xs: Vec<_> = points.iter().map(|p| p.0).collect();
    let lambdas = lagrange_coefficients(&xs, x)?;
    Ok(lambdas
        .iter()
        .zip(points)
        .map(|(&l, &(_, y))| l * y)
        .sum())
}

fn validate(shares: &[Share]) -> Result<usize> {
    let first = shares.first().ok_or(Error::InsufficientShares { needed: 1, got: 0 })?;
    let degree = first.degree;
    let mut seen = [false; 256];
    for s in shares {
        if s.degree != degree {
            return Err(Error::DegreeMismatch(degree, s.degree));
        }
        if s.party == 0 {
            return Err(Error::MalformedShare);
        }
        if std::mem::replace(&mut seen[usize::from(s.party)], true) {
            return Err(Error::DuplicateParty(s.party));
        }
    }
    let needed = usize::from(degree) + 1;
    if shares.len() < needed {
        return Err(Error::InsufficientShares {
            needed,
            got: shares.len(),
        });
    }
    Ok(needed)
}

fn points(shares: &[Share]) -> Vec<(FieldElement, FieldElement)> {
    shares.iter().map(|s| (s.point(), s.value)).collect()
}

/// Recovers the secret from the first `t + 1` shares.
pub fn reconstruct(shares: &[Share]) -> Result<FieldElement> {
    let needed = validate(shares)?;
    interpolate_at(&points(&shares[..needed]), FieldElement::ZERO)
}

/// Like [`reconstruct`], but additionally verifies that every share beyond
/// the first `t + 1` lies on the same degree-`t` polynomial.
///
/// This detects, but does not correct, inconsistent shares.
pub fn reconstruct_checked(shares: &[Share]) -> Result<FieldElement> {
    let needed = validate(shares)?;
    let basis = points(&shares[..needed]);
    for extra in &shares[needed..] {
        if interpolate_at(&basis, extra.point())? != extra.value {
            return Err(Error::InconsistentShares {
                degree: needed - 1,
            });
        }
    }
    interpolate_at(&basis, FieldElement::ZERO)
}

fn check_pair(a: &Share, b: &Share) -> Result<()> {
    if a.party != b.party {
        return Err(Error::PartyMismatch(a.party, b.party));
    }
    if a.degree != b.degree {
        return Err(Error::DegreeMismatch(a.degree, b.degree));
    }
    Ok(())
}

pub fn add_local(a: &Share, b: &Share) -> Result<Share> {
    check_pair(a, b)?;
    Ok(Share::new(a.party, a.value + b.value, a.degree))
}

pub fn sub_local(a: &Share, b: &Share) -> Result<Share> {
    check_pair(a, b)?;
    Ok(Share::new(a.party, a.value - b.value, a.degree))
}

pub fn add_const(a: &Share, c: FieldElement) -> Share {
    Share::new(a.party, a.value + c, a.degree)
}

pub fn scale_local(a: &Share, c: FieldElement) -> Share {
    Share::new(a.party, a.value * c, a.degree)
}

/// Builds a full degree-`t` sharing of `alternative` that agrees with the
/// given `known` shares (at most `t` of them).
///
/// Interpolates through the known points plus `(0, alternative)`; missing
/// points are pinned to zero at the lowest unused party indices. The
/// existence of this extension for every alternative secret is what makes
/// `t` shares reveal nothing.
pub fn extend_to_secret(
    known: &[Share],
    alternative: FieldElement,
    params: SharingParams,
) -> Result<Vec<Share>> {
    if known.len() > params.t {
        return Err(Error::InvalidParams {
            n: known.len(),
            t: params.t,
        });
    }
    let mut basis: Vec<(FieldElement, FieldElement)> = vec![(FieldElement::ZERO, alternative)];
    basis.extend(points(known));
    let mut filler = (1..=params.n as u8).filter(|p| known.iter().all(|s| s.party != *p));
    while basis.len() < params.t + 1 {
        let p = filler.next().ok_or(Error::InvalidParams {
            n: params.n,
            t: params.t,
        })?;
        basis.push((FieldElement::from(u64::from(p)), FieldElement::ZERO));
    }
    (1..=params.n as u8)
        .map(|party| {
            let x = FieldElement::from(u64::from(party));
            Ok(Share::new(party, interpolate_at(&basis, x)?, params.t as u8))
        })
        .collect()
}
