//! Coefficient extraction by contour integration.
//!
//! `Z*` is recovered as the constant term of
//!
//! ```text
//! [Σ_α β(N, p(α)) Π zⱼ^{αⱼ}] · exp(N Σ J̄ⱼ / zⱼ)
//! ```
//!
//! i.e. `(1/2πi)^{s+1} ∮…∮ (dz/z) (…)`, evaluated with the M-node
//! trapezoidal rule on circles `zⱼ = rⱼ e^{iθ}`. The rule is exact on
//! Laurent modes `|n| < M`, so the only quadrature error is aliasing from
//! the exponential's factorial tail, which [`node_count_estimate`] bounds.

use num_complex::Complex;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::{ModelError, Problem};
use crate::scalar::Scalar;
use crate::series::{enumerate_indices, CompensatedSum, MultiIndex};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContourError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("expected {expected} positive radii, got {got:?}")]
    InvalidRadii { expected: usize, got: Vec<f64> },
    #[error("{nodes} nodes per circle cannot resolve modes up to {cap} (need at least {min})")]
    TooFewNodes { nodes: usize, cap: u64, min: usize },
    #[error("expected {expected} contour points, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("contour point {0} is zero")]
    ZeroPoint(usize),
}

/// How the tensor-product rule is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum QuadratureStrategy {
    /// Grid when the node budget allows, otherwise factorized.
    #[default]
    Auto,
    /// Evaluate the full integrand at every node of the `M^{s+1}` grid.
    Grid,
    /// Same rule, reorganized as a product of one-dimensional node sums per
    /// mode; cost `O((s+1)·M·⌊μN⌋ + #α)`.
    Factorized,
}

/// Grid work (node count times bracket length) above which `Auto` factorizes.
const GRID_BUDGET: usize = 50_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSpec<T> {
    /// Circle radii; `None` means every radius is 1.
    pub radii: Option<Vec<T>>,
    /// Nodes per circle; `None` means [`node_count_estimate`].
    pub nodes: Option<usize>,
    pub tail_tolerance: T,
    pub strategy: QuadratureStrategy,
}

impl<T: Scalar> Default for QuadratureSpec<T> {
    fn default() -> Self {
        Self {
            radii: None,
            nodes: None,
            tail_tolerance: T::of(1e-12),
            strategy: QuadratureStrategy::Auto,
        }
    }
}

impl<T: Scalar> QuadratureSpec<T> {
    pub fn with_radii(mut self, radii: Vec<T>) -> Self {
        self.radii = Some(radii);
        self
    }

    pub fn with_nodes(mut self, nodes: usize) -> Self {
        self.nodes = Some(nodes);
        self
    }

    pub fn with_strategy(mut self, strategy: QuadratureStrategy) -> Self {
        self.strategy = strategy;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuadratureFlag {
    ImaginaryPart { ratio: f64 },
    TailAboveTolerance { bound: f64, tolerance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadratureResult<T> {
    pub re: T,
    pub im: T,
    pub nodes: usize,
    pub radii: Vec<T>,
    pub tail_bound: T,
    pub strategy: QuadratureStrategy,
    pub flags: Vec<QuadratureFlag>,
}

impl<T: Scalar> QuadratureResult<T> {
    pub fn value(&self) -> Complex<T> {
        Complex::new(self.re, self.im)
    }

    pub fn per_site(&self, n_sites: u64) -> Option<T> {
        (self.re > T::zero()).then(|| self.re.ln() / T::of_u64(n_sites))
    }
}

/// `Σ_{k ≥ from} x^k / k!` for `x ≥ 0`, summed upward from its first term.
pub fn factorial_tail<T: Scalar>(x: T, from: u64) -> T {
    if x <= T::zero() {
        return if from == 0 { T::one() } else { T::zero() };
    }
    let mut ln_first = T::zero();
    for k in 1..=from {
        ln_first = ln_first + x.ln() - T::of_u64(k).ln();
    }
    let mut term = ln_first.exp();
    let mut sum = CompensatedSum::default();
    let mut k = from;
    loop {
        sum.add(term);
        k += 1;
        term = term * x / T::of_u64(k);
        let s = sum.value();
        if term == T::zero() || (T::of_u64(k) > x && term <= s * T::epsilon() * T::of(1e-3)) {
            return sum.value();
        }
        if k > from + 100_000 {
            return sum.value();
        }
    }
}

/// Smallest legal node count for the problem's truncation.
pub fn structural_node_minimum<T: Scalar>(problem: &Problem<T>) -> usize {
    2 * problem.alpha_cap() as usize + 2
}

fn tail_for_nodes<T: Scalar>(x: T, nodes: usize, cap: u64) -> T {
    let from = (nodes as u64).saturating_sub(cap);
    factorial_tail(x, from)
}

/// Minimal `M ≥ 2⌊μN⌋ + 2` whose aliasing tail
/// `Σ_{k ≥ M − ⌊μN⌋} x^k/k!`, with `x = N·max|J̄ᵢ| / min rⱼ`, is below `tol`.
pub fn node_count_estimate<T: Scalar>(problem: &Problem<T>, radii: &[T], tol: T) -> usize {
    let minimum = structural_node_minimum(problem);
    if !(tol < T::infinity()) {
        return minimum;
    }
    let r_min = radii.iter().copied().fold(T::infinity(), T::min);
    let r_min = if r_min.is_finite() && r_min > T::zero() { r_min } else { T::one() };
    let x = T::of_u64(problem.n_sites) * problem.couplings.max_abs() / r_min;
    let cap = problem.alpha_cap();
    let mut nodes = minimum;
    while tail_for_nodes(x, nodes, cap) >= tol {
        nodes += 1;
    }
    nodes
}

/// Aliasing tail per coupling at the given radii and node count; the maximum
/// over couplings is reported.
pub fn tail_bound<T: Scalar>(problem: &Problem<T>, radii: &[T], nodes: usize) -> T {
    let n = T::of_u64(problem.n_sites);
    let cap = problem.alpha_cap();
    problem
        .couplings
        .as_slice()
        .iter()
        .zip(radii)
        .map(|(j, &r)| tail_for_nodes(n * j.abs() / r, nodes, cap))
        .fold(T::zero(), T::max)
}

/// Bracket modes `(β(N, p(α)), α)` over the admissible index set.
fn bracket_modes<T: Scalar>(problem: &Problem<T>) -> Result<Vec<(T, MultiIndex)>, ModelError> {
    enumerate_indices(problem)
        .map(|alpha| Ok((problem.ln_beta(alpha.weighted_sum())?.exp(), alpha)))
        .collect()
}

/// `Σ_α β(N, p(α)) Π zⱼ^{αⱼ}` over the same index set as the exact sum.
pub fn bracket_eval<T: Scalar>(problem: &Problem<T>, z: &[Complex<T>]) -> Result<Complex<T>, ContourError> {
    if z.len() != problem.order() {
        return Err(ContourError::Dimension {
            expected: problem.order(),
            got: z.len(),
        });
    }
    if let Some(k) = z.iter().position(|w| w.norm() == T::zero()) {
        return Err(ContourError::ZeroPoint(k));
    }
    let modes = bracket_modes(problem)?;
    let mut re = CompensatedSum::default();
    let mut im = CompensatedSum::default();
    for (beta, alpha) in &modes {
        let mut w = Complex::new(*beta, T::zero());
        for (zj, &a) in z.iter().zip(alpha.as_slice()) {
            if a > 0 {
                w = w * zj.powu(a as u32);
            }
        }
        re.add(w.re);
        im.add(w.im);
    }
    Ok(Complex::new(re.value(), im.value()))
}

/// `rⱼ e^{2πi·k/M}` raised to `a`, with the angle reduced mod M first.
fn node_power<T: Scalar>(radius: T, k: usize, a: i64, nodes: usize) -> Complex<T> {
    let m = nodes as i64;
    let turn = (a * k as i64).rem_euclid(m) as u64;
    let theta = T::TAU() * T::of_u64(turn) / T::of_u64(nodes as u64);
    Complex::from_polar(radius.powi(a as i32), theta)
}

/// Per circle: node weights `exp(N J̄ⱼ / zⱼₖ)` and powers `zⱼₖ^a, a ≤ cap`.
struct CircleTables<T> {
    exp_factor: Vec<Complex<T>>,
    powers: Vec<Vec<Complex<T>>>,
}

fn circle_tables<T: Scalar>(n: T, coupling: T, radius: T, nodes: usize, cap: u64) -> CircleTables<T> {
    let exp_factor = (0..nodes)
        .map(|k| (node_power(radius, k, -1, nodes) * (n * coupling)).exp())
        .collect();
    let powers = (0..nodes)
        .map(|k| (0..=cap).map(|a| node_power(radius, k, a as i64, nodes)).collect())
        .collect();
    CircleTables { exp_factor, powers }
}

fn check_spec<T: Scalar>(problem: &Problem<T>, spec: &QuadratureSpec<T>) -> Result<(Vec<T>, usize), ContourError> {
    let order = problem.order();
    let radii = spec.radii.clone().unwrap_or_else(|| vec![T::one(); order]);
    if radii.len() != order || radii.iter().any(|r| !(r.is_finite() && *r > T::zero())) {
        return Err(ContourError::InvalidRadii {
            expected: order,
            got: radii.iter().map(|r| r.as_f64()).collect(),
        });
    }
    let minimum = structural_node_minimum(problem);
    let nodes = spec
        .nodes
        .unwrap_or_else(|| node_count_estimate(problem, &radii, spec.tail_tolerance));
    if nodes < minimum {
        return Err(ContourError::TooFewNodes {
            nodes,
            cap: problem.alpha_cap(),
            min: minimum,
        });
    }
    Ok((radii, nodes))
}

/// Tensor trapezoidal approximation of the `(s+1)`-fold contour integral.
pub fn quadrature_eval<T: Scalar>(
    problem: &Problem<T>,
    spec: &QuadratureSpec<T>,
) -> Result<QuadratureResult<T>, ContourError> {
    problem.check_structure()?;
    let (radii, nodes) = check_spec(problem, spec)?;
    let order = problem.order();
    let cap = problem.alpha_cap();
    let n = T::of_u64(problem.n_sites);
    let modes = bracket_modes(problem)?;
    let tables: Vec<CircleTables<T>> = problem
        .couplings
        .as_slice()
        .iter()
        .zip(&radii)
        .map(|(&j, &r)| circle_tables(n, j, r, nodes, cap))
        .collect();

    let grid_work = (nodes as f64).powi(order as i32) * modes.len() as f64;
    let strategy = match spec.strategy {
        QuadratureStrategy::Auto if grid_work <= GRID_BUDGET as f64 => QuadratureStrategy::Grid,
        QuadratureStrategy::Auto => QuadratureStrategy::Factorized,
        s => s,
    };
    let value = match strategy {
        QuadratureStrategy::Grid => grid_sum(&tables, &modes, nodes, order),
        _ => factorized_sum(&tables, &modes, nodes, order),
    };

    let tail = tail_bound(problem, &radii, nodes);
    let mut flags = Vec::new();
    let ratio = (value.im.abs() / value.re.abs()).as_f64();
    if !(ratio <= 1e-8) {
        flags.push(QuadratureFlag::ImaginaryPart { ratio });
    }
    if tail > spec.tail_tolerance {
        flags.push(QuadratureFlag::TailAboveTolerance {
            bound: tail.as_f64(),
            tolerance: spec.tail_tolerance.as_f64(),
        });
    }
    Ok(QuadratureResult {
        re: value.re,
        im: value.im,
        nodes,
        radii,
        tail_bound: tail,
        strategy,
        flags,
    })
}

fn grid_sum<T: Scalar>(
    tables: &[CircleTables<T>],
    modes: &[(T, MultiIndex)],
    nodes: usize,
    order: usize,
) -> Complex<T> {
    // one slab per node of the first circle, reduced in node order
    let slabs: Vec<(CompensatedSum<T>, CompensatedSum<T>)> = (0..nodes)
        .into_par_iter()
        .map(|k0| {
            let mut re = CompensatedSum::default();
            let mut im = CompensatedSum::default();
            let mut k = vec![0usize; order];
            k[0] = k0;
            loop {
                let mut bracket = Complex::new(T::zero(), T::zero());
                for (beta, alpha) in modes {
                    let mut w = Complex::new(*beta, T::zero());
                    for (j, &a) in alpha.as_slice().iter().enumerate() {
                        if a > 0 {
                            w = w * tables[j].powers[k[j]][a as usize];
                        }
                    }
                    bracket = bracket + w;
                }
                let weight = (0..order).fold(Complex::new(T::one(), T::zero()), |acc, j| {
                    acc * tables[j].exp_factor[k[j]]
                });
                let v = bracket * weight;
                re.add(v.re);
                im.add(v.im);
                // odometer over circles 1..order
                let mut d = order;
                loop {
                    d -= 1;
                    if d == 0 {
                        return (re, im);
                    }
                    k[d] += 1;
                    if k[d] < nodes {
                        break;
                    }
                    k[d] = 0;
                }
            }
        })
        .collect();
    let mut re = CompensatedSum::default();
    let mut im = CompensatedSum::default();
    for (r, i) in &slabs {
        re.merge(r);
        im.merge(i);
    }
    let scale = T::of_u64(nodes as u64).powi(order as i32);
    Complex::new(re.value() / scale, im.value() / scale)
}

fn factorized_sum<T: Scalar>(
    tables: &[CircleTables<T>],
    modes: &[(T, MultiIndex)],
    nodes: usize,
    order: usize,
) -> Complex<T> {
    let m = T::of_u64(nodes as u64);
    let cap = tables[0].powers[0].len();
    // coefficient[j][a] = (1/M) Σ_k zⱼₖ^a exp(N J̄ⱼ / zⱼₖ)
    let coefficient: Vec<Vec<Complex<T>>> = tables
        .iter()
        .map(|t| {
            (0..cap)
                .map(|a| {
                    let mut re = CompensatedSum::default();
                    let mut im = CompensatedSum::default();
                    for k in 0..nodes {
                        let v = t.powers[k][a] * t.exp_factor[k];
                        re.add(v.re);
                        im.add(v.im);
                    }
                    Complex::new(re.value() / m, im.value() / m)
                })
                .collect()
        })
        .collect();
    let mut re = CompensatedSum::default();
    let mut im = CompensatedSum::default();
    for (beta, alpha) in modes {
        let mut w = Complex::new(*beta, T::zero());
        for j in 0..order {
            w = w * coefficient[j][alpha.as_slice()[j] as usize];
        }
        re.add(w.re);
        im.add(w.im);
    }
    Complex::new(re.value(), im.value())
}

/// Closed-form `(1/2πi)∮ z^{α−1} e^{N J̄ / z} dz`: `(N J̄)^α / α!` for
/// `α ≥ 0`, and exactly zero for `α < 0`.
pub fn residue_oracle<T: Scalar>(n_sites: u64, coupling: T, alpha: i64) -> T {
    if alpha < 0 {
        return T::zero();
    }
    let x = T::of_u64(n_sites) * coupling;
    (1..=alpha as u64).fold(T::one(), |acc, k| acc * x / T::of_u64(k))
}

/// Single-circle trapezoidal counterpart of [`residue_oracle`].
pub fn residue_quadrature<T: Scalar>(
    n_sites: u64,
    coupling: T,
    alpha: i64,
    nodes: usize,
    radius: T,
) -> Complex<T> {
    let x = T::of_u64(n_sites) * coupling;
    let mut re = CompensatedSum::default();
    let mut im = CompensatedSum::default();
    for k in 0..nodes {
        let v = node_power(radius, k, alpha, nodes) * (node_power(radius, k, -1, nodes) * x).exp();
        re.add(v.re);
        im.add(v.im);
    }
    let m = T::of_u64(nodes as u64);
    Complex::new(re.value() / m, im.value() / m)
}

/// Radii minimizing the Cauchy bound
/// `ln Σ_α β_α Π rⱼ^{αⱼ} + Σⱼ N|J̄ⱼ|/rⱼ`, a convex function of `ln r`.
/// Keeps the integrand's peak close to `Σ|term|` and thereby limits
/// rounding loss on the grid. A vanishing coupling has no exponential
/// penalty, so its radius sits at the lower clamp `1e-4`.
pub fn cauchy_radii<T: Scalar>(problem: &Problem<T>) -> Result<Vec<T>, ModelError> {
    let order = problem.order();
    let n = T::of_u64(problem.n_sites);
    let modes: Vec<(T, Vec<T>)> = enumerate_indices(problem)
        .map(|alpha| {
            let lb = problem.ln_beta(alpha.weighted_sum())?;
            Ok((lb, alpha.as_slice().iter().map(|&a| T::of_u64(a)).collect()))
        })
        .collect::<Result<_, ModelError>>()?;
    let strength: Vec<T> = problem.couplings.as_slice().iter().map(|j| n * j.abs()).collect();
    let lo = T::of(1e-4).ln();
    let hi = T::of(1e4).ln();
    let mut u: Vec<T> = strength
        .iter()
        .map(|s| if *s == T::zero() { lo } else { T::zero() })
        .collect();
    for _sweep in 0..100 {
        let mut moved = T::zero();
        for j in 0..order {
            if strength[j] == T::zero() {
                continue;
            }
            for _ in 0..30 {
                let logs: Vec<T> = modes
                    .iter()
                    .map(|(lb, a)| *lb + a.iter().zip(&u).fold(T::zero(), |s, (x, y)| s + *x * *y))
                    .collect();
                let pivot = logs.iter().copied().fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                let mut m1 = T::zero();
                let mut m2 = T::zero();
                for ((_, a), l) in modes.iter().zip(&logs) {
                    let w = (*l - pivot).exp();
                    z = z + w;
                    m1 = m1 + w * a[j];
                    m2 = m2 + w * a[j] * a[j];
                }
                let mean = m1 / z;
                let var = (m2 / z - mean * mean).max(T::zero());
                let pull = strength[j] * (-u[j]).exp();
                let grad = mean - pull;
                let hess = var + pull;
                let step = grad / hess;
                let next = (u[j] - step).max(lo).min(hi);
                moved = moved.max((next - u[j]).abs());
                u[j] = next;
                if step.abs() < T::of(1e-12) {
                    break;
                }
            }
        }
        if moved < T::of(1e-10) {
            break;
        }
    }
    Ok(u.into_iter().map(T::exp).collect())
}
