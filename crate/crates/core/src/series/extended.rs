//! Multi-precision evaluation of the truncated sum, backed by `astro-float`.

use astro_float::{BigFloat, Consts, RoundingMode, Word};
use rayon::prelude::*;

use super::{MultiIndex, SeriesError, CHUNK};
use crate::model::{BetaHook, Problem};
use crate::scalar::Scalar;

const RM: RoundingMode = RoundingMode::ToEven;

fn consts() -> Result<Consts, SeriesError> {
    Consts::new().map_err(|e| SeriesError::Precision(format!("{e:?}")))
}

fn check(x: BigFloat) -> Result<BigFloat, SeriesError> {
    if let Some(e) = x.err() {
        return Err(SeriesError::Precision(format!("{e:?}")));
    }
    Ok(x)
}

/// Nearest `f64` to a finite `BigFloat` (±inf when out of range).
pub fn big_to_f64(x: &BigFloat) -> f64 {
    let Some((words, _, sign, exponent, _)) = x.as_raw_parts() else {
        return f64::NAN;
    };
    let Some(&top) = words.last() else {
        return 0.0;
    };
    if top == 0 {
        return 0.0;
    }
    let word_bits = Word::BITS as i32;
    let mut value = top as f64;
    if words.len() > 1 {
        value += words[words.len() - 2] as f64 / 2f64.powi(word_bits);
    }
    // value ∈ [2^63, 2^64); the number is value·2^(exponent − 64)
    let mut e = exponent as i64 - word_bits as i64;
    while e > 0 {
        let step = e.min(1000);
        value *= 2f64.powi(step as i32);
        e -= step;
    }
    while e < 0 {
        let step = (-e).min(1000);
        value /= 2f64.powi(step as i32);
        e += step;
    }
    if sign.is_negative() {
        -value
    } else {
        value
    }
}

/// Signed sum and absolute sum of every term, at one working precision.
pub(crate) struct ExtendedTotals {
    pub signed: BigFloat,
    pub absolute: BigFloat,
    pub bits: usize,
}

impl ExtendedTotals {
    pub fn is_zero(&self) -> bool {
        self.signed.is_zero()
    }

    pub fn ln_abs(&self) -> Result<f64, SeriesError> {
        let mut cc = consts()?;
        let l = check(self.signed.abs().ln(self.bits, RM, &mut cc))?;
        Ok(big_to_f64(&l))
    }

    pub fn cancellation_index(&self) -> f64 {
        if self.signed.is_zero() {
            return f64::INFINITY;
        }
        let ratio = self.absolute.div(&self.signed.abs(), self.bits, RM);
        big_to_f64(&ratio)
    }

    /// `|self − other| / |other|`, evaluated at the wider of the two precisions.
    pub fn relative_difference(&self, other: &Self) -> f64 {
        let bits = self.bits.max(other.bits);
        let diff = self.signed.sub(&other.signed, bits, RM).abs();
        if diff.is_zero() {
            return 0.0;
        }
        if other.signed.is_zero() {
            return f64::INFINITY;
        }
        big_to_f64(&diff.div(&other.signed.abs(), bits, RM))
    }
}

/// `β(N, p)` for `p = 0..=max_weight`.
fn beta_table<T: Scalar>(
    problem: &Problem<T>,
    max_weight: u64,
    bits: usize,
    cc: &mut Consts,
) -> Result<Vec<BigFloat>, SeriesError> {
    let n = problem.n_sites;
    let one = BigFloat::from_u8(1, bits);
    (0..=max_weight)
        .map(|p| match &problem.beta {
            BetaHook::Unit => Ok(one.clone()),
            BetaHook::Asymptotic => {
                if 2 * p > n {
                    return Ok(BigFloat::from_u8(0, bits));
                }
                if p == 0 {
                    return Ok(one.clone());
                }
                let free = BigFloat::from_u64(n - 2 * p, bits);
                let pw = BigFloat::from_u64(p, bits);
                let exponent = if n == 2 * p {
                    pw
                } else {
                    let ratio = free.div(&BigFloat::from_u64(n, bits), bits, RM);
                    let log = check(ratio.ln(bits, RM, cc))?;
                    let half_free = free.div(&BigFloat::from_u8(2, bits), bits, RM);
                    half_free.mul(&log, bits, RM).add(&pw, bits, RM)
                };
                check(exponent.exp(bits, RM, cc))
            }
            BetaHook::Table(_) => {
                if 2 * p > n {
                    return Ok(BigFloat::from_u8(0, bits));
                }
                let lb: f64 = problem.ln_beta(p)?.as_f64();
                check(BigFloat::from_f64(lb, bits).exp(bits, RM, cc))
            }
        })
        .collect()
}

/// `|N·J̄ᵢ|^a / a!` for `a = 0..=cap`, per coupling.
fn power_tables<T: Scalar>(problem: &Problem<T>, cap: u64, bits: usize) -> Vec<Vec<BigFloat>> {
    let n = BigFloat::from_u64(problem.n_sites, bits);
    problem
        .couplings
        .as_slice()
        .iter()
        .map(|j| {
            let x = n.mul(&BigFloat::from_f64(j.as_f64().abs(), bits), bits, RM);
            let mut row = Vec::with_capacity(cap as usize + 1);
            let mut current = BigFloat::from_u8(1, bits);
            row.push(current.clone());
            for a in 1..=cap {
                current = current
                    .mul(&x, bits, RM)
                    .div(&BigFloat::from_u64(a, bits), bits, RM);
                row.push(current.clone());
            }
            row
        })
        .collect()
}

pub(crate) fn sum_terms<T: Scalar>(
    problem: &Problem<T>,
    indices: &[MultiIndex],
    bits: usize,
) -> Result<ExtendedTotals, SeriesError> {
    let mut cc = consts()?;
    let cap = problem.alpha_cap();
    let max_weight = indices.iter().map(MultiIndex::weighted_sum).max().unwrap_or(0);
    let betas = beta_table(problem, max_weight, bits, &mut cc)?;
    let powers = power_tables(problem, cap, bits);
    let negative: Vec<bool> = problem
        .couplings
        .as_slice()
        .iter()
        .map(|j| *j < T::zero())
        .collect();

    let partials: Vec<(BigFloat, BigFloat)> = indices
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut signed = BigFloat::from_u8(0, bits);
            let mut absolute = BigFloat::from_u8(0, bits);
            for alpha in chunk {
                let mut term = betas[alpha.weighted_sum() as usize].clone();
                let mut odd = false;
                for (k, &a) in alpha.as_slice().iter().enumerate() {
                    if a > 0 {
                        term = term.mul(&powers[k][a as usize], bits, RM);
                        odd ^= negative[k] && a % 2 == 1;
                    }
                }
                absolute = absolute.add(&term, bits, RM);
                signed = if odd {
                    signed.sub(&term, bits, RM)
                } else {
                    signed.add(&term, bits, RM)
                };
            }
            (signed, absolute)
        })
        .collect();

    let mut signed = BigFloat::from_u8(0, bits);
    let mut absolute = BigFloat::from_u8(0, bits);
    for (s, a) in &partials {
        signed = signed.add(s, bits, RM);
        absolute = absolute.add(a, bits, RM);
    }
    Ok(ExtendedTotals {
        signed: check(signed)?,
        absolute: check(absolute)?,
        bits,
    })
}
