//! Domain types: couplings, problems, the entropy exponent and `ln β`.
//!
//! The combinatorial weight `β(N, p)` enters only through its exponent,
//! `ln β(N, p) = N·g(p/N)` with
//!
//! ```text
//! g(x) = ((1 − 2x)/2)·ln(1 − 2x) + x,   0 ≤ x ≤ 1/2,
//! ```
//!
//! extended by continuity to `g(1/2) = 1/2`. Alternative weights can be
//! plugged in through [`BetaHook`].

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("occupation fraction {0} outside [0, 1/2]")]
    Domain(f64),
    #[error("weighted occupation p = {p} exceeds close packing N/2 for N = {n}")]
    WeightOutOfRange { n: u64, p: u64 },
    #[error("coupling vector is empty")]
    EmptyCouplings,
    #[error("coupling J{index} = {value} is not finite")]
    NonFiniteCoupling { index: usize, value: f64 },
    #[error("number of sites must be positive")]
    ZeroSites,
    #[error("truncation parameter mu = {0} must be finite and lie in (0, 1)")]
    InvalidMu(f64),
    #[error("mu*N = {0} < 1 admits no nonzero index")]
    TruncationTooSmall(f64),
    #[error("beta table has no entry for (N = {n}, p = {p})")]
    MissingBeta { n: u64, p: u64 },
}

/// Entropy exponent `g(x)` with its continuity value at `x = 1/2`.
pub fn entropy_exponent<T: Scalar>(x: T) -> Result<T, ModelError> {
    let half = T::of(0.5);
    if !(x >= T::zero() && x <= half) {
        return Err(ModelError::Domain(x.as_f64()));
    }
    let one_minus = T::one() - (x + x);
    if one_minus == T::zero() {
        return Ok(half);
    }
    Ok(one_minus * half * one_minus.ln() + x)
}

/// `ln β(N, p) = N·g(p/N)`, evaluated as `((N − 2p)/2)·ln((N − 2p)/N) + p`
/// so that integer inputs lose nothing to the division.
pub fn beta_log<T: Scalar>(n: u64, p: u64) -> Result<T, ModelError> {
    if n == 0 {
        return Err(ModelError::ZeroSites);
    }
    if 2 * p > n {
        return Err(ModelError::WeightOutOfRange { n, p });
    }
    let free = n - 2 * p;
    let p_t = T::of_u64(p);
    if free == 0 {
        return Ok(p_t);
    }
    if p == 0 {
        return Ok(T::zero());
    }
    let free_t = T::of_u64(free);
    Ok(free_t * T::of(0.5) * (free_t / T::of_u64(n)).ln() + p_t)
}

/// Which aggregate feeds the logarithm of the entropy bracket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropyVariant {
    /// `g(Σ i ρᵢ)`: a single weighted aggregate, the form implied by `β(N, Σ i αᵢ)`.
    #[default]
    Weighted,
    /// `((1 − 2Σρᵢ)/2)·ln(1 − 2Σρᵢ) + Σ i ρᵢ`, the bracket exactly as typeset.
    Printed,
}

impl fmt::Display for EntropyVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntropyVariant::Weighted => "weighted",
            EntropyVariant::Printed => "printed",
        })
    }
}

impl FromStr for EntropyVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "weighted" => Ok(EntropyVariant::Weighted),
            "printed" => Ok(EntropyVariant::Printed),
            other => Err(format!("unknown entropy variant `{other}` (expected weighted|printed)")),
        }
    }
}

/// The per-site entropy bracket of the stationary-point exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EntropyExponent {
    pub variant: EntropyVariant,
}

impl EntropyExponent {
    pub fn new(variant: EntropyVariant) -> Self {
        Self { variant }
    }

    /// Weighted aggregate `Σ i ρᵢ` (1-based weights).
    pub fn weighted_aggregate<T: Scalar>(rho: &[T]) -> T {
        rho.iter()
            .enumerate()
            .map(|(k, &r)| T::of_u64(k as u64 + 1) * r)
            .sum()
    }

    /// Plain aggregate `Σ ρᵢ`.
    pub fn plain_aggregate<T: Scalar>(rho: &[T]) -> T {
        rho.iter().copied().sum()
    }

    /// The aggregate that appears inside the logarithm for this variant.
    pub fn log_aggregate<T: Scalar>(&self, rho: &[T]) -> T {
        match self.variant {
            EntropyVariant::Weighted => Self::weighted_aggregate(rho),
            EntropyVariant::Printed => Self::plain_aggregate(rho),
        }
    }

    /// Bracket value. Unlike [`entropy_exponent`] this accepts negative
    /// aggregates, since stationary points may sit at negative densities.
    pub fn bracket<T: Scalar>(&self, rho: &[T]) -> Result<T, ModelError> {
        let s = self.log_aggregate(rho);
        let arg = T::one() - (s + s);
        if !(arg >= T::zero()) {
            return Err(ModelError::Domain(s.as_f64()));
        }
        let log_part = if arg == T::zero() {
            T::zero()
        } else {
            arg * T::of(0.5) * arg.ln()
        };
        Ok(log_part + Self::weighted_aggregate(rho))
    }
}

type BetaFn = dyn Fn(u64, u64) -> Option<f64> + Send + Sync;

/// Caller-supplied `ln β(N, p)` table, consulted for `0 ≤ p ≤ N/2`.
#[derive(Clone)]
pub struct BetaTable {
    ln_beta: Arc<BetaFn>,
}

impl BetaTable {
    pub fn new(f: impl Fn(u64, u64) -> Option<f64> + Send + Sync + 'static) -> Self {
        Self { ln_beta: Arc::new(f) }
    }

    pub fn lookup(&self, n: u64, p: u64) -> Option<f64> {
        (self.ln_beta)(n, p)
    }
}

impl fmt::Debug for BetaTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("BetaTable(..)")
    }
}

/// Source of the combinatorial weight `β(N, p)`.
#[derive(Debug, Clone, Default)]
pub enum BetaHook {
    /// `exp(N·g(p/N))`, restricted to `p ≤ ⌊N/2⌋`.
    #[default]
    Asymptotic,
    /// `β ≡ 1`, with the close-packing cap lifted.
    Unit,
    /// External table, restricted to `p ≤ ⌊N/2⌋`.
    Table(BetaTable),
}

impl BetaHook {
    pub fn is_unit(&self) -> bool {
        matches!(self, BetaHook::Unit)
    }

    /// Largest admissible weighted occupation, `None` when uncapped.
    pub fn weight_cap(&self, n: u64) -> Option<u64> {
        match self {
            BetaHook::Unit => None,
            _ => Some(n / 2),
        }
    }

    pub fn ln_beta<T: Scalar>(&self, n: u64, p: u64) -> Result<T, ModelError> {
        match self {
            BetaHook::Asymptotic => beta_log(n, p),
            BetaHook::Unit => Ok(T::zero()),
            BetaHook::Table(table) => {
                if 2 * p > n {
                    return Err(ModelError::WeightOutOfRange { n, p });
                }
                table
                    .lookup(n, p)
                    .map(T::of)
                    .ok_or(ModelError::MissingBeta { n, p })
            }
        }
    }
}

/// Coefficients `J̄₁..J̄_{s+1}`; entry `k` (0-based) carries weight `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> CouplingVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self, ModelError> {
        if values.is_empty() {
            return Err(ModelError::EmptyCouplings);
        }
        if let Some((k, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(ModelError::NonFiniteCoupling {
                index: k + 1,
                value: v.as_f64(),
            });
        }
        Ok(Self { values })
    }

    /// Builds without checking; [`validate`] reports any violation later.
    pub fn unchecked(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    /// 1-based access matching the coupling labels.
    pub fn get(&self, index: usize) -> Option<T> {
        index.checked_sub(1).and_then(|k| self.values.get(k).copied())
    }

    /// Iterates `(weight, coupling)` pairs with weights starting at 1.
    pub fn weighted(&self) -> impl Iterator<Item = (u64, T)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(|(k, &v)| (k as u64 + 1, v))
    }

    pub fn max_abs(&self) -> T {
        self.values
            .iter()
            .fold(T::zero(), |acc, v| acc.max(v.abs()))
    }

    pub fn sum(&self) -> T {
        self.values.iter().copied().sum()
    }
}

/// A validated unit of work: couplings, size, truncation and entropy form.
#[derive(Debug, Clone)]
pub struct Problem<T: Scalar = f64> {
    pub couplings: CouplingVector<T>,
    pub n_sites: u64,
    pub mu: T,
    pub variant: EntropyVariant,
    pub beta: BetaHook,
}

impl<T: Scalar> Problem<T> {
    pub fn new(couplings: Vec<T>, n_sites: u64, mu: T) -> Result<Self, ModelError> {
        let problem = Self {
            couplings: CouplingVector::new(couplings)?,
            n_sites,
            mu,
            variant: EntropyVariant::Weighted,
            beta: BetaHook::Asymptotic,
        };
        problem.check_structure()?;
        Ok(problem)
    }

    pub fn with_variant(mut self, variant: EntropyVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_beta(mut self, beta: BetaHook) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_n_sites(&self, n_sites: u64) -> Self {
        let mut p = self.clone();
        p.n_sites = n_sites;
        p
    }

    /// Number of couplings, `s + 1`.
    pub fn order(&self) -> usize {
        self.couplings.len()
    }

    pub fn entropy(&self) -> EntropyExponent {
        EntropyExponent::new(self.variant)
    }

    /// `⌊μN⌋`, the per-index cap on αᵢ.
    pub fn alpha_cap(&self) -> u64 {
        (self.mu * T::of_u64(self.n_sites))
            .floor()
            .to_u64()
            .unwrap_or(0)
    }

    /// Cap on `Σ i αᵢ`, `None` when the β hook lifts it.
    pub fn weight_cap(&self) -> Option<u64> {
        self.beta.weight_cap(self.n_sites)
    }

    pub fn ln_beta(&self, p: u64) -> Result<T, ModelError> {
        self.beta.ln_beta(self.n_sites, p)
    }

    /// Structural checks only; regime ordering is reported by [`validate`].
    pub fn check_structure(&self) -> Result<(), ModelError> {
        if self.couplings.is_empty() {
            return Err(ModelError::EmptyCouplings);
        }
        if let Some((i, v)) = self.couplings.weighted().find(|(_, v)| !v.is_finite()) {
            return Err(ModelError::NonFiniteCoupling {
                index: i as usize,
                value: v.as_f64(),
            });
        }
        if self.n_sites == 0 {
            return Err(ModelError::ZeroSites);
        }
        if !(self.mu.is_finite() && self.mu > T::zero() && self.mu < T::one()) {
            return Err(ModelError::InvalidMu(self.mu.as_f64()));
        }
        let mu_n = self.mu * T::of_u64(self.n_sites);
        if mu_n < T::one() {
            return Err(ModelError::TruncationTooSmall(mu_n.as_f64()));
        }
        Ok(())
    }
}

/// Separation factors used to flag violations of `|J̄ᵢ| << μ << 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeThresholds {
    /// Warn unless `max|J̄ᵢ| ≤ μ / coupling_separation`.
    pub coupling_separation: f64,
    /// Warn unless `μ ≤ mu_max`.
    pub mu_max: f64,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        Self {
            coupling_separation: 10.0,
            mu_max: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegimeWarning {
    CouplingNotSmallAgainstMu { max_abs_coupling: f64, mu: f64 },
    MuNotSmall { mu: f64 },
}

impl fmt::Display for RegimeWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegimeWarning::CouplingNotSmallAgainstMu { max_abs_coupling, mu } => write!(
                f,
                "max|J| = {max_abs_coupling} is not small against mu = {mu}"
            ),
            RegimeWarning::MuNotSmall { mu } => write!(f, "mu = {mu} is not small against 1"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    pub warnings: Vec<RegimeWarning>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.warnings.is_empty()
    }
}

pub fn validate<T: Scalar>(problem: &Problem<T>) -> Result<ValidationReport, ModelError> {
    validate_with(problem, RegimeThresholds::default())
}

pub fn validate_with<T: Scalar>(
    problem: &Problem<T>,
    thresholds: RegimeThresholds,
) -> Result<ValidationReport, ModelError> {
    problem.check_structure()?;
    let mu = problem.mu.as_f64();
    let max_abs = problem.couplings.max_abs().as_f64();
    let mut warnings = Vec::new();
    if max_abs > mu / thresholds.coupling_separation {
        warnings.push(RegimeWarning::CouplingNotSmallAgainstMu {
            max_abs_coupling: max_abs,
            mu,
        });
    }
    if mu > thresholds.mu_max {
        warnings.push(RegimeWarning::MuNotSmall { mu });
    }
    Ok(ValidationReport { warnings })
}
