//! Stationary point of the per-site exponent
//!
//! ```text
//! F(ρ, z) = B(ρ) + Σᵢ ρᵢ ln zᵢ + Σᵢ J̄ᵢ / zᵢ
//! ```
//!
//! where the entropy bracket `B` is `g(Σ i ρᵢ)` (weighted), the typeset
//! `((1 − 2Σρᵢ)/2) ln(1 − 2Σρᵢ) + Σ i ρᵢ` (printed), or `0` under the unit β
//! hook. The value `F*` at the real stationary point is the conjectured
//! limit of `(1/N) ln Z*`.
//!
//! Three independent routes reach that point: a scalar reduction in the
//! aggregate (primary), full damped Newton on the `2(s+1)` gradient system,
//! and, for positive couplings only, maximization of the Stirling form of
//! the largest summand.

use serde::Serialize;
use thiserror::Error;

use crate::contour::factorial_tail;
use crate::linalg;
use crate::model::{BetaHook, EntropyExponent, EntropyVariant, ModelError, Problem};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SaddleError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("point outside the exponent's domain: {0}")]
    Domain(String),
    #[error("no real stationary point with aggregate < 1/2; scanned aggregate range [{lo}, {hi}] up to homotopy parameter {reached}")]
    NoRealSolution { lo: f64, hi: f64, reached: f64 },
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("singular Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("largest-term method needs positive couplings; J{index} = {value}")]
    PositivityViolation { index: usize, value: f64 },
    #[error("the stationary-point exponent needs a closed-form beta (asymptotic or unit)")]
    UnsupportedBeta,
}

/// Densities `ρᵢ` and real contour variables `zᵢ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentPoint<T> {
    pub rho: Vec<T>,
    pub z: Vec<T>,
}

impl<T: Scalar> ExponentPoint<T> {
    pub fn new(rho: Vec<T>, z: Vec<T>) -> Self {
        Self { rho, z }
    }

    /// `ρᵢ = J̄ᵢ`, `zᵢ = 1`: the stationary point of the unit-β exponent.
    pub fn default_start(problem: &Problem<T>) -> Self {
        Self {
            rho: problem.couplings.as_slice().to_vec(),
            z: vec![T::one(); problem.order()],
        }
    }

    fn flat(&self) -> Vec<T> {
        self.rho.iter().chain(&self.z).copied().collect()
    }

    fn from_flat(x: &[T]) -> Self {
        let d = x.len() / 2;
        Self {
            rho: x[..d].to_vec(),
            z: x[d..].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    ScalarFixedPoint,
    NewtonFull,
    LargestTerm,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaddleSolution<T> {
    pub point: ExponentPoint<T>,
    /// `F*`, the per-site exponent at the point.
    pub value: T,
    /// `Σ i ρᵢ` (weighted / unit) or `Σ ρᵢ` (printed).
    pub aggregate: T,
    /// `‖∇F‖∞`, or `‖∇L‖∞` for the largest-term maximizer.
    pub residual_norm: T,
    pub method: SolveMethod,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Bracket {
    Weighted,
    Printed,
    Unit,
}

fn bracket_kind<T: Scalar>(problem: &Problem<T>) -> Result<Bracket, SaddleError> {
    match (&problem.beta, problem.variant) {
        (BetaHook::Unit, _) => Ok(Bracket::Unit),
        (BetaHook::Asymptotic, EntropyVariant::Weighted) => Ok(Bracket::Weighted),
        (BetaHook::Asymptotic, EntropyVariant::Printed) => Ok(Bracket::Printed),
        (BetaHook::Table(_), _) => Err(SaddleError::UnsupportedBeta),
    }
}

/// `1 − 2S` for the aggregate feeding the logarithm; must be positive.
fn log_argument<T: Scalar>(kind: Bracket, rho: &[T]) -> Result<T, SaddleError> {
    let s = match kind {
        Bracket::Printed => EntropyExponent::plain_aggregate(rho),
        _ => EntropyExponent::weighted_aggregate(rho),
    };
    let q = T::one() - (s + s);
    if kind != Bracket::Unit && !(q > T::zero()) {
        return Err(SaddleError::Domain(format!(
            "log argument 1 - 2S = {} is not positive",
            q.as_f64()
        )));
    }
    Ok(q)
}

fn check_point<T: Scalar>(problem: &Problem<T>, point: &ExponentPoint<T>) -> Result<(), SaddleError> {
    let d = problem.order();
    if point.rho.len() != d || point.z.len() != d {
        return Err(SaddleError::Domain(format!(
            "expected {d} densities and {d} contour variables"
        )));
    }
    if let Some(k) = point.z.iter().position(|z| !(*z > T::zero())) {
        return Err(SaddleError::Domain(format!(
            "z{} = {} is not positive",
            k + 1,
            point.z[k].as_f64()
        )));
    }
    Ok(())
}

/// Entropy bracket `B(ρ)` and its gradient in ρ.
fn bracket_parts<T: Scalar>(kind: Bracket, rho: &[T]) -> Result<(T, Vec<T>), SaddleError> {
    let q = log_argument(kind, rho)?;
    let d = rho.len();
    let weights = (1..=d as u64).map(T::of_u64);
    Ok(match kind {
        Bracket::Unit => (T::zero(), vec![T::zero(); d]),
        Bracket::Weighted => {
            let s = EntropyExponent::weighted_aggregate(rho);
            let lq = q.ln();
            (q * T::of(0.5) * lq + s, weights.map(|w| -w * lq).collect())
        }
        Bracket::Printed => {
            let s_w = EntropyExponent::weighted_aggregate(rho);
            let lq = q.ln();
            (
                q * T::of(0.5) * lq + s_w,
                weights.map(|w| -lq - T::one() + w).collect(),
            )
        }
    })
}

/// `∂²B/∂ρᵢ∂ρⱼ`.
fn bracket_hessian<T: Scalar>(kind: Bracket, rho: &[T]) -> Result<Vec<Vec<T>>, SaddleError> {
    let q = log_argument(kind, rho)?;
    let d = rho.len();
    let two_over_q = T::of(2.0) / q;
    Ok((1..=d as u64)
        .map(|i| {
            (1..=d as u64)
                .map(|j| match kind {
                    Bracket::Unit => T::zero(),
                    Bracket::Weighted => two_over_q * T::of_u64(i * j),
                    Bracket::Printed => two_over_q,
                })
                .collect()
        })
        .collect())
}

/// The braced per-site exponent `F(ρ, z)` (not its exponential).
pub fn exponent<T: Scalar>(problem: &Problem<T>, point: &ExponentPoint<T>) -> Result<T, SaddleError> {
    let kind = bracket_kind(problem)?;
    check_point(problem, point)?;
    let (b, _) = bracket_parts(kind, &point.rho)?;
    let j = problem.couplings.as_slice();
    let coupling: T = point
        .rho
        .iter()
        .zip(&point.z)
        .zip(j)
        .map(|((r, z), jj)| *r * z.ln() + *jj / *z)
        .sum();
    Ok(b + coupling)
}

/// `(∂F/∂ρ₁..∂F/∂ρ_{s+1}, ∂F/∂z₁..∂F/∂z_{s+1})`.
pub fn gradient<T: Scalar>(problem: &Problem<T>, point: &ExponentPoint<T>) -> Result<Vec<T>, SaddleError> {
    let kind = bracket_kind(problem)?;
    check_point(problem, point)?;
    let (_, db) = bracket_parts(kind, &point.rho)?;
    let j = problem.couplings.as_slice();
    let mut g: Vec<T> = db.iter().zip(&point.z).map(|(b, z)| *b + z.ln()).collect();
    g.extend(
        point
            .rho
            .iter()
            .zip(&point.z)
            .zip(j)
            .map(|((r, z), jj)| (*r - *jj / *z) / *z),
    );
    Ok(g)
}

/// Analytic Hessian of `F`, ordered as [`gradient`].
pub fn hessian<T: Scalar>(problem: &Problem<T>, point: &ExponentPoint<T>) -> Result<Vec<Vec<T>>, SaddleError> {
    let kind = bracket_kind(problem)?;
    check_point(problem, point)?;
    let d = problem.order();
    let j = problem.couplings.as_slice();
    let hb = bracket_hessian(kind, &point.rho)?;
    let mut h = vec![vec![T::zero(); 2 * d]; 2 * d];
    for a in 0..d {
        for b in 0..d {
            h[a][b] = hb[a][b];
        }
        let z = point.z[a];
        h[a][d + a] = T::one() / z;
        h[d + a][a] = T::one() / z;
        h[d + a][d + a] = (-point.rho[a] + T::of(2.0) * j[a] / z) / (z * z);
    }
    Ok(h)
}

fn inf_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Scalar reduction of the stationary equations to `S = Σ aₖ (1 − 2S)^{−eₖ}`.
struct ScalarEquation<T> {
    coeff: Vec<T>,
    power: Vec<i32>,
}

impl<T: Scalar> ScalarEquation<T> {
    fn h(&self, s: T) -> T {
        let q = T::one() - (s + s);
        self.coeff
            .iter()
            .zip(&self.power)
            .map(|(a, &e)| *a * q.powi(-e))
            .sum()
    }

    fn dh(&self, s: T) -> T {
        let q = T::one() - (s + s);
        self.coeff
            .iter()
            .zip(&self.power)
            .map(|(a, &e)| T::of(2.0) * T::of(e as f64) * *a * q.powi(-e - 1))
            .sum()
    }

    /// Newton on `S − t·h(S) = 0` from `start`, kept inside `S < 1/2`.
    /// Succeeds only on the branch where `1 − t·h′ > 0`.
    fn correct(&self, t: T, start: T, iterations: usize) -> Option<T> {
        let half = T::of(0.5);
        let mut s = start;
        for _ in 0..iterations {
            let phi = s - t * self.h(s);
            let dphi = T::one() - t * self.dh(s);
            if !(dphi > T::zero()) || !phi.is_finite() {
                return None;
            }
            let mut next = s - phi / dphi;
            if !(next < half) {
                next = (s + half) * T::of(0.5);
            }
            let done = (next - s).abs() <= T::epsilon() * T::of(4.0) * next.abs().max(T::one());
            s = next;
            if done {
                let dphi = T::one() - t * self.dh(s);
                return (dphi > T::zero() && s < half).then_some(s);
            }
        }
        None
    }

    /// Root on the branch continuously connected to `S = 0` at `t = 0`.
    fn solve(&self) -> Result<(T, usize), SaddleError> {
        let mut t = T::zero();
        let mut s = T::zero();
        let mut dt = T::one();
        let mut lo = T::zero();
        let mut hi = T::zero();
        let mut steps = 0;
        let min_step = T::of(1e-10);
        while t < T::one() {
            let t_next = (t + dt).min(T::one());
            let slope = self.h(s) / (T::one() - t * self.dh(s));
            let predicted = (s + (t_next - t) * slope).min((s + T::of(0.5)) * T::of(0.5));
            match self.correct(t_next, predicted, 60) {
                Some(root) if (root - predicted).abs() <= T::of(0.1) + (root - s).abs() => {
                    t = t_next;
                    s = root;
                    lo = lo.min(s);
                    hi = hi.max(s);
                    dt = (dt + dt).min(T::one());
                }
                _ => {
                    dt = dt * T::of(0.5);
                    if dt < min_step {
                        return Err(SaddleError::NoRealSolution {
                            lo: lo.as_f64(),
                            hi: hi.max(predicted).min(T::of(0.5)).as_f64(),
                            reached: t.as_f64(),
                        });
                    }
                }
            }
            steps += 1;
        }
        Ok((s, steps))
    }
}

/// Stationary point via the one-dimensional aggregate equation.
///
/// Weighted: `zᵢ = (1 − 2S)^i`, `ρᵢ = J̄ᵢ (1 − 2S)^{−i}`, `S = Σ i J̄ᵢ (1 − 2S)^{−i}`.
/// Printed: `zᵢ = (1 − 2S₁) e^{1−i}`, `ρᵢ = J̄ᵢ e^{i−1} / (1 − 2S₁)`.
/// The root is tracked by homotopy from the trivial problem `J̄ = 0`.
pub fn solve_scalar<T: Scalar>(problem: &Problem<T>, tol: T) -> Result<SaddleSolution<T>, SaddleError> {
    problem.check_structure()?;
    let kind = bracket_kind(problem)?;
    let j = problem.couplings.as_slice();
    let d = problem.order();
    let e = T::one().exp();
    let (point, aggregate, iterations) = match kind {
        Bracket::Unit => {
            let point = ExponentPoint::default_start(problem);
            let s = EntropyExponent::weighted_aggregate(&point.rho);
            (point, s, 0)
        }
        Bracket::Weighted => {
            let eq = ScalarEquation {
                coeff: (1..=d).map(|i| T::of_u64(i as u64) * j[i - 1]).collect(),
                power: (1..=d as i32).collect(),
            };
            let (s, steps) = eq.solve()?;
            let q = T::one() - (s + s);
            let z: Vec<T> = (1..=d as i32).map(|i| q.powi(i)).collect();
            let rho = j.iter().zip(&z).map(|(jj, zz)| *jj / *zz).collect();
            (ExponentPoint::new(rho, z), s, steps)
        }
        Bracket::Printed => {
            let c: T = j
                .iter()
                .enumerate()
                .map(|(k, jj)| *jj * e.powi(k as i32))
                .sum();
            let eq = ScalarEquation {
                coeff: vec![c],
                power: vec![1],
            };
            let (s, steps) = eq.solve()?;
            let q = T::one() - (s + s);
            let z: Vec<T> = (0..d as i32).map(|k| q * e.powi(-k)).collect();
            let rho = j.iter().zip(&z).map(|(jj, zz)| *jj / *zz).collect();
            (ExponentPoint::new(rho, z), s, steps)
        }
    };
    finish(problem, point, aggregate, tol, SolveMethod::ScalarFixedPoint, iterations)
}

fn finish<T: Scalar>(
    problem: &Problem<T>,
    point: ExponentPoint<T>,
    aggregate: T,
    tol: T,
    method: SolveMethod,
    iterations: usize,
) -> Result<SaddleSolution<T>, SaddleError> {
    let value = exponent(problem, &point)?;
    let residual = inf_norm(&gradient(problem, &point)?);
    if !(residual <= tol) || !value.is_finite() {
        return Err(SaddleError::NonConvergence {
            iterations,
            residual: residual.as_f64(),
        });
    }
    Ok(SaddleSolution {
        point,
        value,
        aggregate,
        residual_norm: residual,
        method,
        iterations,
    })
}

pub const DEFAULT_MAX_ITERATIONS: usize = 200;

/// Damped Newton on `∇F = 0` in all `2(s+1)` unknowns.
pub fn solve_newton<T: Scalar>(
    problem: &Problem<T>,
    tol: T,
    start: Option<&ExponentPoint<T>>,
) -> Result<SaddleSolution<T>, SaddleError> {
    solve_newton_with(problem, tol, start, DEFAULT_MAX_ITERATIONS)
}

pub fn solve_newton_with<T: Scalar>(
    problem: &Problem<T>,
    tol: T,
    start: Option<&ExponentPoint<T>>,
    max_iterations: usize,
) -> Result<SaddleSolution<T>, SaddleError> {
    problem.check_structure()?;
    let kind = bracket_kind(problem)?;
    let mut point = start
        .cloned()
        .unwrap_or_else(|| ExponentPoint::default_start(problem));
    let mut g = gradient(problem, &point)?;
    let mut norm = inf_norm(&g);
    let mut iteration = 0;
    while !(norm <= tol) {
        if iteration >= max_iterations {
            return Err(SaddleError::NonConvergence {
                iterations: iteration,
                residual: norm.as_f64(),
            });
        }
        let h = hessian(problem, &point)?;
        let step = linalg::solve(h, g.iter().map(|v| -*v).collect())
            .ok_or(SaddleError::SingularJacobian { iteration })?;
        let x = point.flat();
        let merit = g.iter().fold(T::zero(), |s, v| s + *v * *v);
        let mut lambda = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<T> = x.iter().zip(&step).map(|(a, b)| *a + lambda * *b).collect();
            let candidate = ExponentPoint::from_flat(&trial);
            if let Ok(gc) = gradient(problem, &candidate) {
                let m = gc.iter().fold(T::zero(), |s, v| s + *v * *v);
                if m.is_finite() && m <= merit * (T::one() - T::of(1e-4) * lambda) {
                    accepted = Some((candidate, gc));
                    break;
                }
            }
            lambda = lambda * T::of(0.5);
        }
        let Some((candidate, gc)) = accepted else {
            return Err(SaddleError::NonConvergence {
                iterations: iteration,
                residual: norm.as_f64(),
            });
        };
        point = candidate;
        g = gc;
        norm = inf_norm(&g);
        iteration += 1;
    }
    let aggregate = match kind {
        Bracket::Printed => EntropyExponent::plain_aggregate(&point.rho),
        _ => EntropyExponent::weighted_aggregate(&point.rho),
    };
    finish(problem, point, aggregate, tol, SolveMethod::NewtonFull, iteration)
}

/// Stirling form of `(1/N) ln(term)` at `ρ = α/N`:
/// `B(ρ) + Σ ρᵢ (ln(J̄ᵢ/ρᵢ) + 1)`, with its gradient.
fn stirling_form<T: Scalar>(kind: Bracket, j: &[T], rho: &[T]) -> Result<(T, Vec<T>), SaddleError> {
    if rho.iter().any(|r| !(*r > T::zero())) {
        return Err(SaddleError::Domain("densities must be positive".into()));
    }
    let (b, db) = bracket_parts(kind, rho)?;
    let value = b + rho
        .iter()
        .zip(j)
        .map(|(r, jj)| *r * ((*jj / *r).ln() + T::one()))
        .sum::<T>();
    let grad = db
        .iter()
        .zip(rho.iter().zip(j))
        .map(|(b, (r, jj))| *b + (*jj / *r).ln())
        .collect();
    Ok((value, grad))
}

/// Maximizes the Stirling form of a single summand over real `ρ > 0`.
/// Only meaningful when every summand is positive, i.e. all `J̄ᵢ > 0`.
/// The returned point carries `zᵢ = J̄ᵢ/ρᵢ`.
pub fn largest_term<T: Scalar>(problem: &Problem<T>, tol: T) -> Result<SaddleSolution<T>, SaddleError> {
    problem.check_structure()?;
    if let Some((i, v)) = problem.couplings.weighted().find(|(_, v)| !(*v > T::zero())) {
        return Err(SaddleError::PositivityViolation {
            index: i as usize,
            value: v.as_f64(),
        });
    }
    let kind = bracket_kind(problem)?;
    let j = problem.couplings.as_slice();
    let d = j.len();
    let mut rho = j.to_vec();
    let (mut value, mut grad) = stirling_form(kind, j, &rho)?;
    let mut iteration = 0;
    while !(inf_norm(&grad) <= tol) {
        if iteration >= DEFAULT_MAX_ITERATIONS {
            return Err(SaddleError::NonConvergence {
                iterations: iteration,
                residual: inf_norm(&grad).as_f64(),
            });
        }
        let mut h = bracket_hessian(kind, &rho)?;
        for k in 0..d {
            h[k][k] = h[k][k] - T::one() / rho[k];
        }
        let step = linalg::solve(h, grad.iter().map(|v| -*v).collect())
            .ok_or(SaddleError::SingularJacobian { iteration })?;
        let merit = grad.iter().fold(T::zero(), |s, v| s + *v * *v);
        let mut lambda = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<T> = rho.iter().zip(&step).map(|(r, s)| *r + lambda * *s).collect();
            if let Ok((v, g)) = stirling_form(kind, j, &trial) {
                let m = g.iter().fold(T::zero(), |s, x| s + *x * *x);
                // ascent, or at least a smaller gradient near the optimum
                if v.is_finite() && (v >= value || m <= merit * (T::one() - T::of(1e-4) * lambda)) {
                    accepted = Some((trial, v, g));
                    break;
                }
            }
            lambda = lambda * T::of(0.5);
        }
        let Some((r, v, g)) = accepted else {
            return Err(SaddleError::NonConvergence {
                iterations: iteration,
                residual: inf_norm(&grad).as_f64(),
            });
        };
        rho = r;
        value = v;
        grad = g;
        iteration += 1;
    }
    let aggregate = match kind {
        Bracket::Printed => EntropyExponent::plain_aggregate(&rho),
        _ => EntropyExponent::weighted_aggregate(&rho),
    };
    let z = j.iter().zip(&rho).map(|(jj, r)| *jj / *r).collect();
    Ok(SaddleSolution {
        point: ExponentPoint::new(rho, z),
        value,
        aggregate,
        residual_norm: inf_norm(&grad),
        method: SolveMethod::LargestTerm,
        iterations: iteration,
    })
}

/// `Σ J̄ᵢ`: the exact per-site value when `β ≡ 1`.
pub fn beta_one_value<T: Scalar>(problem: &Problem<T>) -> T {
    problem.couplings.sum()
}

/// Upper bound on `|(1/N) ln Z* − Σ J̄ᵢ|` under the unit β hook, where each
/// coordinate is a partial exponential sum truncated at `⌊μN⌋`:
/// `(1/N) Σᵢ −ln(1 − e^{−N J̄ᵢ} Σ_{k > ⌊μN⌋} (N|J̄ᵢ|)^k / k!)`.
/// Infinite when some relative tail reaches 1.
pub fn beta_one_defect_bound<T: Scalar>(problem: &Problem<T>) -> T {
    let n = T::of_u64(problem.n_sites);
    let cap = problem.alpha_cap();
    let total: T = problem
        .couplings
        .as_slice()
        .iter()
        .map(|j| {
            let x = n * *j;
            let relative = factorial_tail(x.abs(), cap + 1) * (-x).exp();
            if relative >= T::one() {
                T::infinity()
            } else {
                -(-relative).ln_1p()
            }
        })
        .sum();
    total / n
}
