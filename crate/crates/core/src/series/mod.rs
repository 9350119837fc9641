//! Exact evaluation of the truncated sum
//!
//! ```text
//! Z* = Σ_α β(N, Σ i αᵢ) · Π (N·J̄ᵢ)^{αᵢ} / αᵢ!
//! ```
//!
//! over `0 ≤ αᵢ ≤ ⌊μN⌋` with `Σ i αᵢ ≤ ⌊N/2⌋` (the cap is dropped for the
//! unit β hook). Terms may alternate in sign, so accumulation is sign-aware
//! and optionally carried out in software floating point.

mod accumulate;
mod extended;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Serialize, Serializer};
use thiserror::Error;

pub use accumulate::{CompensatedSum, SignedLogSum};
pub use extended::big_to_f64;

use crate::model::{ModelError, Problem};
use crate::scalar::Scalar;

/// Fixed chunk size for the parallel reduction; the reduction order depends
/// on it and not on the worker count.
pub(crate) const CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeriesError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("multi-precision arithmetic failed: {0}")]
    Precision(String),
    #[error("index {0:?} is not admissible for this problem")]
    InadmissibleIndex(Vec<u64>),
    #[error("invalid precision `{0}` (expected fast | extended | extended:<bits>)")]
    ParsePrecision(String),
}

/// Exponents `α₁..α_{s+1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct MultiIndex(Vec<u64>);

impl MultiIndex {
    pub fn new(alpha: Vec<u64>) -> Self {
        Self(alpha)
    }

    pub fn zero(len: usize) -> Self {
        Self(vec![0; len])
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    /// `p(α) = Σ i·αᵢ` with 1-based weights.
    pub fn weighted_sum(&self) -> u64 {
        self.0
            .iter()
            .enumerate()
            .map(|(k, &a)| (k as u64 + 1) * a)
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }
}

impl From<Vec<u64>> for MultiIndex {
    fn from(v: Vec<u64>) -> Self {
        Self(v)
    }
}

/// Lexicographic odometer over the admissible index set.
#[derive(Debug, Clone)]
pub struct IndexIter {
    current: Vec<u64>,
    weight: u64,
    cap: u64,
    weight_cap: Option<u64>,
    done: bool,
}

impl IndexIter {
    fn fits(&self, weight: u64) -> bool {
        self.weight_cap.is_none_or(|c| weight <= c)
    }
}

impl Iterator for IndexIter {
    type Item = MultiIndex;

    fn next(&mut self) -> Option<MultiIndex> {
        if self.done {
            return None;
        }
        let out = MultiIndex(self.current.clone());
        let mut j = self.current.len();
        loop {
            if j == 0 {
                self.done = true;
                break;
            }
            j -= 1;
            let w = j as u64 + 1;
            if self.current[j] < self.cap && self.fits(self.weight + w) {
                self.current[j] += 1;
                self.weight += w;
                break;
            }
            self.weight -= self.current[j] * w;
            self.current[j] = 0;
        }
        Some(out)
    }
}

/// Every admissible α exactly once, in lexicographic order (first index most
/// significant). Negative α are omitted: they integrate to zero in the
/// contour representation, see [`crate::contour::residue_oracle`].
pub fn enumerate_indices<T: Scalar>(problem: &Problem<T>) -> IndexIter {
    IndexIter {
        current: vec![0; problem.order()],
        weight: 0,
        cap: problem.alpha_cap(),
        weight_cap: problem.weight_cap(),
        done: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Negative,
    Zero,
    Positive,
}

impl Sign {
    pub fn as_i8(self) -> i8 {
        match self {
            Sign::Negative => -1,
            Sign::Zero => 0,
            Sign::Positive => 1,
        }
    }

    pub fn is_negative(self) -> bool {
        self == Sign::Negative
    }
}

impl Serialize for Sign {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i8(self.as_i8())
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_i8())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogTerm<T> {
    pub sign: Sign,
    /// `ln|term|`; `-inf` when the sign is zero.
    pub log_abs: T,
}

/// Precomputed per-problem pieces for repeated term evaluation.
pub struct TermEvaluator<T: Scalar> {
    ln_coupling: Vec<T>,
    negative: Vec<bool>,
    zero: Vec<bool>,
    ln_factorial: Vec<T>,
    ln_beta: Vec<Result<T, ModelError>>,
    n_sites: u64,
}

impl<T: Scalar> TermEvaluator<T> {
    pub fn new(problem: &Problem<T>) -> Self {
        let n = T::of_u64(problem.n_sites);
        let cap = problem.alpha_cap();
        let couplings = problem.couplings.as_slice();
        let max_weight = problem.weight_cap().unwrap_or_else(|| {
            let order = couplings.len() as u64;
            cap * order * (order + 1) / 2
        });
        let mut ln_factorial = Vec::with_capacity(cap as usize + 1);
        let mut acc = CompensatedSum::<T>::default();
        ln_factorial.push(T::zero());
        for k in 1..=cap {
            acc.add(T::of_u64(k).ln());
            ln_factorial.push(acc.value());
        }
        Self {
            ln_coupling: couplings.iter().map(|j| (n * j.abs()).ln()).collect(),
            negative: couplings.iter().map(|j| *j < T::zero()).collect(),
            zero: couplings.iter().map(|j| *j == T::zero()).collect(),
            ln_factorial,
            ln_beta: (0..=max_weight).map(|p| problem.ln_beta(p)).collect(),
            n_sites: problem.n_sites,
        }
    }

    /// Term value plus the magnitude of the logarithmic pieces that were
    /// added together (used to bound the rounding error of `log_abs`).
    fn evaluate(&self, alpha: &MultiIndex) -> Result<(LogTerm<T>, T), ModelError> {
        let mut log_abs = T::zero();
        let mut scale = T::zero();
        let mut odd = false;
        for (k, &a) in alpha.as_slice().iter().enumerate() {
            if a == 0 {
                continue;
            }
            if self.zero[k] {
                return Ok((
                    LogTerm {
                        sign: Sign::Zero,
                        log_abs: T::neg_infinity(),
                    },
                    T::zero(),
                ));
            }
            odd ^= self.negative[k] && a % 2 == 1;
            let power = T::of_u64(a) * self.ln_coupling[k];
            let fact = self.ln_factorial[a as usize];
            log_abs = log_abs + power - fact;
            scale = scale + power.abs() + fact;
        }
        let p = alpha.weighted_sum() as usize;
        let lb = match self.ln_beta.get(p) {
            Some(r) => r.clone()?,
            None => {
                return Err(ModelError::WeightOutOfRange {
                    n: self.n_sites,
                    p: p as u64,
                })
            }
        };
        let sign = if odd { Sign::Negative } else { Sign::Positive };
        Ok((
            LogTerm {
                sign,
                log_abs: log_abs + lb,
            },
            scale + lb.abs(),
        ))
    }

    pub fn term(&self, alpha: &MultiIndex) -> Result<LogTerm<T>, ModelError> {
        self.evaluate(alpha).map(|(t, _)| t)
    }
}

/// Sign and log-magnitude of a single summand:
/// `ln β(N, p(α)) + Σ αᵢ ln(N|J̄ᵢ|) − Σ ln αᵢ!`.
pub fn log_term<T: Scalar>(problem: &Problem<T>, alpha: &MultiIndex) -> Result<LogTerm<T>, SeriesError> {
    let admissible = alpha.as_slice().len() == problem.order()
        && alpha.as_slice().iter().all(|&a| a <= problem.alpha_cap())
        && problem.weight_cap().is_none_or(|c| alpha.weighted_sum() <= c);
    if !admissible {
        return Err(SeriesError::InadmissibleIndex(alpha.as_slice().to_vec()));
    }
    Ok(TermEvaluator::new(problem).term(alpha)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum PrecisionMode {
    /// Native floating point with compensated summation.
    Fast,
    /// Software floats carrying `bits` mantissa bits; checked against `2·bits`.
    Extended { bits: usize },
}

impl Default for PrecisionMode {
    fn default() -> Self {
        PrecisionMode::Extended { bits: 128 }
    }
}

impl fmt::Display for PrecisionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrecisionMode::Fast => f.write_str("fast"),
            PrecisionMode::Extended { bits } => write!(f, "extended:{bits}"),
        }
    }
}

impl FromStr for PrecisionMode {
    type Err = SeriesError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        match t.split_once(':') {
            None if t == "fast" => Ok(PrecisionMode::Fast),
            None if t == "extended" => Ok(PrecisionMode::default()),
            Some(("extended", bits)) => match bits.parse::<usize>() {
                Ok(b) if b >= 64 => Ok(PrecisionMode::Extended { bits: b }),
                _ => Err(SeriesError::ParsePrecision(s.to_string())),
            },
            _ => Err(SeriesError::ParsePrecision(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrecisionPolicy {
    pub mode: PrecisionMode,
    /// Cancellation index above which any result is flagged untrusted.
    pub abort_cancellation_threshold: f64,
    /// Relative error budget a FAST result must stay under.
    pub fast_tolerance: f64,
    /// Allowed relative disagreement between `bits` and `2·bits` runs.
    pub width_tolerance: f64,
}

impl Default for PrecisionPolicy {
    fn default() -> Self {
        Self::new(PrecisionMode::default())
    }
}

impl PrecisionPolicy {
    pub fn new(mode: PrecisionMode) -> Self {
        Self {
            mode,
            abort_cancellation_threshold: 1e12,
            fast_tolerance: 1e-10,
            width_tolerance: 1e-20,
        }
    }

    pub fn fast() -> Self {
        Self::new(PrecisionMode::Fast)
    }

    pub fn extended(bits: usize) -> Self {
        Self::new(PrecisionMode::Extended { bits })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrustFlag {
    CancellationAboveThreshold { index: f64, threshold: f64 },
    FastErrorBudget { estimate: f64, budget: f64 },
    WidthDisagreement { relative: f64, tolerance: f64 },
}

impl fmt::Display for TrustFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrustFlag::CancellationAboveThreshold { index, threshold } => {
                write!(f, "cancellation index {index:e} exceeds {threshold:e}")
            }
            TrustFlag::FastErrorBudget { estimate, budget } => {
                write!(f, "estimated relative error {estimate:e} exceeds {budget:e}")
            }
            TrustFlag::WidthDisagreement { relative, tolerance } => {
                write!(f, "doubled-width result differs by {relative:e} (> {tolerance:e})")
            }
        }
    }
}

/// Signed value of `Z*` held as sign and `ln|Z*|`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesEstimate<T> {
    pub log_abs: T,
    pub sign: Sign,
    /// `(1/N)·ln Z*` when `Z* > 0`.
    pub per_site: Option<T>,
    pub term_count: usize,
    /// `Σ|term| / |Σ term|`; infinite when the sum vanishes.
    pub cancellation_index: f64,
    pub mode: PrecisionMode,
    /// FAST only: `κ·ε·(1 + max log scale)`.
    pub error_estimate: Option<f64>,
    /// EXTENDED only: relative change when the width is doubled.
    pub width_discrepancy: Option<f64>,
    pub flags: Vec<TrustFlag>,
}

impl<T: Scalar> SeriesEstimate<T> {
    pub fn trusted(&self) -> bool {
        self.flags.is_empty()
    }

    /// `Z*` itself; may overflow to ±inf for large systems.
    pub fn value(&self) -> T {
        match self.sign {
            Sign::Zero => T::zero(),
            Sign::Positive => self.log_abs.exp(),
            Sign::Negative => -self.log_abs.exp(),
        }
    }
}

/// Sums `Z*` term by term under the given precision policy.
pub fn exact_sum<T: Scalar>(
    problem: &Problem<T>,
    policy: &PrecisionPolicy,
) -> Result<SeriesEstimate<T>, SeriesError> {
    problem.check_structure()?;
    let indices: Vec<MultiIndex> = enumerate_indices(problem).collect();
    let mut estimate = match policy.mode {
        PrecisionMode::Fast => fast_sum(problem, &indices, policy)?,
        PrecisionMode::Extended { bits } => extended_sum(problem, &indices, bits, policy)?,
    };
    if estimate.cancellation_index > policy.abort_cancellation_threshold {
        estimate.flags.push(TrustFlag::CancellationAboveThreshold {
            index: estimate.cancellation_index,
            threshold: policy.abort_cancellation_threshold,
        });
    }
    Ok(estimate)
}

fn finish<T: Scalar>(
    problem: &Problem<T>,
    sign: Sign,
    log_abs: T,
    term_count: usize,
    cancellation_index: f64,
    mode: PrecisionMode,
) -> SeriesEstimate<T> {
    let per_site = (sign == Sign::Positive).then(|| log_abs / T::of_u64(problem.n_sites));
    SeriesEstimate {
        log_abs,
        sign,
        per_site,
        term_count,
        cancellation_index,
        mode,
        error_estimate: None,
        width_discrepancy: None,
        flags: Vec::new(),
    }
}

fn fast_sum<T: Scalar>(
    problem: &Problem<T>,
    indices: &[MultiIndex],
    policy: &PrecisionPolicy,
) -> Result<SeriesEstimate<T>, SeriesError> {
    let evaluator = TermEvaluator::new(problem);
    let partials: Vec<Result<(SignedLogSum<T>, T), ModelError>> = indices
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = SignedLogSum::default();
            let mut scale = T::zero();
            for alpha in chunk {
                let (term, s) = evaluator.evaluate(alpha)?;
                if term.sign != Sign::Zero {
                    acc.push(term.sign.is_negative(), term.log_abs);
                    scale = scale.max(s);
                }
            }
            Ok((acc, scale))
        })
        .collect();
    let mut total = SignedLogSum::default();
    let mut scale = T::zero();
    for partial in partials {
        let (acc, s) = partial?;
        total.merge(&acc);
        scale = scale.max(s);
    }
    let (signed, absolute, pivot) = total.parts();
    let (sign, log_abs, kappa) = if signed == T::zero() || !pivot.is_finite() {
        (Sign::Zero, T::neg_infinity(), f64::INFINITY)
    } else {
        let sign = if signed < T::zero() { Sign::Negative } else { Sign::Positive };
        (sign, pivot + signed.abs().ln(), (absolute / signed.abs()).as_f64())
    };
    let mut est = finish(problem, sign, log_abs, indices.len(), kappa, PrecisionMode::Fast);
    let estimate = kappa * T::epsilon().as_f64() * (1.0 + scale.as_f64());
    est.error_estimate = Some(estimate);
    if !(estimate <= policy.fast_tolerance) {
        est.flags.push(TrustFlag::FastErrorBudget {
            estimate,
            budget: policy.fast_tolerance,
        });
    }
    Ok(est)
}

fn extended_sum<T: Scalar>(
    problem: &Problem<T>,
    indices: &[MultiIndex],
    bits: usize,
    policy: &PrecisionPolicy,
) -> Result<SeriesEstimate<T>, SeriesError> {
    let narrow = extended::sum_terms(problem, indices, bits)?;
    let wide = extended::sum_terms(problem, indices, 2 * bits)?;
    let mode = PrecisionMode::Extended { bits };
    let mut est = if wide.is_zero() {
        finish(problem, Sign::Zero, T::neg_infinity(), indices.len(), f64::INFINITY, mode)
    } else {
        let sign = if wide.signed.is_negative() { Sign::Negative } else { Sign::Positive };
        let log_abs = T::of(wide.ln_abs()?);
        finish(problem, sign, log_abs, indices.len(), wide.cancellation_index(), mode)
    };
    let discrepancy = if wide.is_zero() && narrow.is_zero() {
        0.0
    } else {
        narrow.relative_difference(&wide)
    };
    est.width_discrepancy = Some(discrepancy);
    if !(discrepancy <= policy.width_tolerance) {
        est.flags.push(TrustFlag::WidthDisagreement {
            relative: discrepancy,
            tolerance: policy.width_tolerance,
        });
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BetaHook;

    fn problem(j: Vec<f64>, n: u64, mu: f64) -> Problem<f64> {
        Problem::new(j, n, mu).unwrap()
    }

    fn collect(p: &Problem<f64>) -> Vec<Vec<u64>> {
        enumerate_indices(p).map(|a| a.as_slice().to_vec()).collect()
    }

    #[test]
    fn enumeration_examples() {
        assert_eq!(collect(&problem(vec![0.1], 10, 0.2)), vec![vec![0], vec![1], vec![2]]);
        assert_eq!(collect(&problem(vec![0.1, 0.1], 2, 0.5)), vec![vec![0, 0], vec![1, 0]]);
        assert!(Problem::new(vec![0.1], 10, 0.05).is_err());
    }

    #[test]
    fn enumeration_matches_brute_force() {
        for &(order, n, mu) in &[(1usize, 30u64, 0.3), (2, 20, 0.25), (3, 17, 0.4), (3, 60, 0.1)] {
            let p = problem(vec![0.01; order], n, mu);
            let cap = p.alpha_cap();
            let mut brute = Vec::new();
            let total = (cap + 1).pow(order as u32);
            for code in 0..total {
                let mut c = code;
                let mut alpha = vec![0; order];
                for k in (0..order).rev() {
                    alpha[k] = c % (cap + 1);
                    c /= cap + 1;
                }
                if MultiIndex(alpha.clone()).weighted_sum() <= n / 2 {
                    brute.push(alpha);
                }
            }
            assert_eq!(collect(&p), brute);
        }
    }

    #[test]
    fn unit_hook_lifts_weight_cap() {
        let p = problem(vec![0.1, 0.1], 2, 0.5).with_beta(BetaHook::Unit);
        assert_eq!(collect(&p), vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
    }

    #[test]
    fn log_term_examples() {
        let p = problem(vec![0.1], 2, 0.9);
        let t = log_term(&p, &MultiIndex::zero(1)).unwrap();
        assert_eq!(t, LogTerm { sign: Sign::Positive, log_abs: 0.0 });
        let t = log_term(&p, &MultiIndex::new(vec![1])).unwrap();
        assert_eq!(t.sign, Sign::Positive);
        assert!((t.log_abs - (std::f64::consts::E * 0.2).ln()).abs() < 1e-15);

        let p = problem(vec![-0.1], 2, 0.9);
        let t = log_term(&p, &MultiIndex::new(vec![1])).unwrap();
        assert_eq!(t.sign, Sign::Negative);
        assert!((t.log_abs - (std::f64::consts::E * 0.2).ln()).abs() < 1e-15);

        let p = problem(vec![0.0, 0.3], 20, 0.3);
        assert_eq!(log_term(&p, &MultiIndex::new(vec![1, 2])).unwrap().sign, Sign::Zero);
        assert_eq!(log_term(&p, &MultiIndex::new(vec![0, 2])).unwrap().sign, Sign::Positive);
    }

    #[test]
    fn log_factorials_are_exact_sums() {
        let p = problem(vec![1.0], 400, 0.45);
        let t = log_term(&p, &MultiIndex::new(vec![170])).unwrap();
        // ln 170! = 706.5730622457874...
        let expected = beta_direct(400, 170) + 170.0 * 400f64.ln() - 706.573_062_245_787_4;
        assert!((t.log_abs - expected).abs() < 1e-10, "{} vs {expected}", t.log_abs);
    }

    fn beta_direct(n: u64, p: u64) -> f64 {
        crate::model::beta_log(n, p).unwrap()
    }

    #[test]
    fn two_term_hand_sum() {
        let p = problem(vec![0.1], 2, 0.99);
        let expected = 1.0 + 0.2 * std::f64::consts::E;
        for policy in [PrecisionPolicy::fast(), PrecisionPolicy::default()] {
            let est = exact_sum(&p, &policy).unwrap();
            assert_eq!(est.term_count, 2);
            assert!((est.value() - expected).abs() < 1e-15, "{:?}", est);
            assert_eq!(est.cancellation_index, 1.0);
            assert!(est.trusted());
        }
    }

    #[test]
    fn zero_couplings_sum_to_one() {
        let p = problem(vec![0.0, 0.0, 0.0], 50, 0.2);
        for policy in [PrecisionPolicy::fast(), PrecisionPolicy::default()] {
            let est = exact_sum(&p, &policy).unwrap();
            assert_eq!(est.sign, Sign::Positive);
            assert_eq!(est.log_abs, 0.0);
            assert_eq!(est.per_site, Some(0.0));
        }
    }

    #[test]
    fn exactly_cancelling_sum_has_zero_sign() {
        // β ≡ 1, N = 2, J = −1/2, cap 1: 1 + (−1) = 0
        let p = Problem::new(vec![-0.5], 2, 0.5).unwrap().with_beta(BetaHook::Unit);
        let est = exact_sum(&p, &PrecisionPolicy::fast()).unwrap();
        assert_eq!(est.sign, Sign::Zero);
        assert!(est.per_site.is_none());
        let est = exact_sum(&p, &PrecisionPolicy::default()).unwrap();
        assert_eq!(est.sign, Sign::Zero);
        assert_eq!(est.width_discrepancy, Some(0.0));
    }

    #[test]
    fn no_overflow_at_large_n() {
        let p = problem(vec![1.0], 10_000, 0.5);
        let est = exact_sum(&p, &PrecisionPolicy::fast()).unwrap();
        assert!(est.log_abs.is_finite() && est.log_abs > 700.0);
        assert!(est.value().is_infinite());
        let p = problem(vec![-1.0], 10_000, 0.5);
        let fast = exact_sum(&p, &PrecisionPolicy::fast()).unwrap();
        assert!(fast.log_abs.is_finite());
    }

    #[test]
    fn precision_parsing() {
        assert_eq!("fast".parse::<PrecisionMode>().unwrap(), PrecisionMode::Fast);
        assert_eq!(
            "extended".parse::<PrecisionMode>().unwrap(),
            PrecisionMode::Extended { bits: 128 }
        );
        assert_eq!(
            "Extended:256".parse::<PrecisionMode>().unwrap(),
            PrecisionMode::Extended { bits: 256 }
        );
        assert!("extended:12".parse::<PrecisionMode>().is_err());
        assert!("quad".parse::<PrecisionMode>().is_err());
        let m = PrecisionMode::Extended { bits: 192 };
        assert_eq!(m.to_string().parse::<PrecisionMode>().unwrap(), m);
    }

    #[test]
    fn fast_sum_in_f32() {
        let p = Problem::<f32>::new(vec![0.1], 2, 0.99).unwrap();
        let est = exact_sum(&p, &PrecisionPolicy::fast()).unwrap();
        assert!((est.value() - (1.0 + 0.2 * std::f32::consts::E)).abs() < 1e-6);
    }
}
