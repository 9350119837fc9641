//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use zstar::contour::{
    cauchy_radii, quadrature_eval, residue_oracle, residue_quadrature, QuadratureSpec,
    QuadratureStrategy,
};
use zstar::harness::{fit_gap_trend, run_sweep, Method, SweepPlan, Verdict};
use zstar::model::{BetaHook, EntropyVariant, Problem};
use zstar::saddle::{
    beta_one_defect_bound, beta_one_value, exponent, gradient, largest_term, solve_newton,
    solve_scalar, ExponentPoint, SaddleSolution,
};
use zstar::series::{exact_sum, PrecisionPolicy, TrustFlag};

const SEED: u64 = 0x5eed_2024;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: u32, name: &str, o: &Outcome) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    println!("criterion {id} [{tag}] {name}: {}", o.detail);
}

fn random_problem(rng: &mut StdRng, positive: bool) -> Problem<f64> {
    let order = rng.gen_range(1..=3);
    let n = rng.gen_range(10..=60u64);
    // ⌊μN⌋ ∈ [1, 6]
    let cap = rng.gen_range(1..=6u64);
    let mu = (cap as f64 + 0.5) / n as f64;
    let j = (0..order)
        .map(|_| {
            if positive {
                // small enough that a real stationary point exists for every variant
                rng.gen_range(1e-4..0.01)
            } else {
                rng.gen_range(-0.1..0.1)
            }
        })
        .collect();
    Problem::new(j, n, mu).unwrap()
}

/// Criterion 1: quadrature against the direct sum.
fn identity() -> Outcome {
    let mut rng = StdRng::seed_from_u64(SEED);
    let mut worst = 0.0f64;
    let cases = 60;
    for _ in 0..cases {
        let p = random_problem(&mut rng, false);
        let exact = exact_sum(&p, &PrecisionPolicy::extended(128)).unwrap().value();
        let spec = QuadratureSpec::default()
            .with_radii(cauchy_radii(&p).unwrap())
            .with_strategy(QuadratureStrategy::Grid);
        let q = quadrature_eval(&p, &spec).unwrap();
        worst = worst.max((q.re - exact).abs() / exact.abs());
    }
    Outcome {
        pass: worst <= 1e-8,
        detail: format!("{cases} problems, worst relative error {worst:.3e} (limit 1e-8)"),
    }
}

/// Criterion 2: unit β.
fn unit_beta() -> Outcome {
    let sets: [&[f64]; 4] = [&[0.1, 0.05], &[0.03], &[0.02, -0.01, 0.005], &[-0.05, 0.08]];
    let mut worst_f = 0.0f64;
    let mut worst_ratio = 0.0f64;
    let mut tried = 0;
    for j in sets {
        for (n, mu) in [(10u64, 0.2), (20, 0.1), (30, 0.2), (40, 0.1), (60, 0.1), (50, 0.3)] {
            let p = Problem::new(j.to_vec(), n, mu).unwrap().with_beta(BetaHook::Unit);
            let s = solve_scalar(&p, 1e-12).unwrap();
            let start = ExponentPoint::new(vec![0.01; j.len()], vec![1.2; j.len()]);
            let t = solve_newton(&p, 1e-12, Some(&start)).unwrap();
            let sum = beta_one_value(&p);
            worst_f = worst_f.max((s.value - sum).abs()).max((t.value - sum).abs());

            let est = exact_sum(&p, &PrecisionPolicy::extended(128)).unwrap();
            let defect = (est.per_site.unwrap() - sum).abs();
            let bound = beta_one_defect_bound(&p);
            // a defect below double rounding cannot be resolved from (1/N) ln Z*
            if bound < 1e-13 {
                continue;
            }
            tried += 1;
            worst_ratio = worst_ratio.max(defect / bound);
        }
    }
    Outcome {
        pass: worst_f <= 1e-12 && worst_ratio <= 2.0 && tried >= 10,
        detail: format!(
            "|F* - sum J| <= {worst_f:.3e} (limit 1e-12); worst defect/bound {worst_ratio:.3} over {tried} (N, muN) points (limit 2)"
        ),
    }
}

/// Criterion 3: largest term against the stationary point, positive couplings.
fn largest_term_agreement() -> Outcome {
    let mut rng = StdRng::seed_from_u64(SEED + 3);
    let mut worst_value = 0.0f64;
    let mut worst_rho = 0.0f64;
    let cases = 60;
    for k in 0..cases {
        let variant = if k % 2 == 0 { EntropyVariant::Weighted } else { EntropyVariant::Printed };
        let p = random_problem(&mut rng, true).with_variant(variant);
        let lt = largest_term(&p, 1e-12).unwrap();
        let st = solve_scalar(&p, 1e-12).unwrap();
        worst_value = worst_value.max((lt.value - st.value).abs());
        for (a, b) in lt.point.rho.iter().zip(&st.point.rho) {
            worst_rho = worst_rho.max((a - b).abs());
        }
    }
    Outcome {
        pass: worst_value <= 1e-10 && worst_rho <= 1e-8,
        detail: format!(
            "{cases} problems, value diff {worst_value:.3e} (limit 1e-10), rho diff {worst_rho:.3e} (limit 1e-8)"
        ),
    }
}

fn central_difference(p: &Problem<f64>, s: &SaddleSolution<f64>, h: f64) -> f64 {
    // perturb away from the stationary point so the gradient is not zero
    let d = p.order();
    let mut x: Vec<f64> = s.point.rho.iter().chain(&s.point.z).copied().collect();
    for (k, v) in x.iter_mut().enumerate() {
        if k < d {
            *v += 0.003 * (k as f64 + 1.0);
        } else {
            *v *= if k % 2 == 0 { 0.9 } else { 1.1 };
        }
    }
    let at = |x: &[f64]| ExponentPoint::new(x[..d].to_vec(), x[d..].to_vec());
    let g = gradient(p, &at(&x)).unwrap();
    let mut worst = 0.0f64;
    for c in 0..2 * d {
        let mut up = x.clone();
        let mut dn = x.clone();
        up[c] += h;
        dn[c] -= h;
        let fd = (exponent(p, &at(&up)).unwrap() - exponent(p, &at(&dn)).unwrap()) / (2.0 * h);
        worst = worst.max((fd - g[c]).abs() / g[c].abs().max(1e-3));
    }
    worst
}

/// Criterion 4: residuals, finite differences, solver agreement.
fn stationary_correctness() -> Outcome {
    let mut rng = StdRng::seed_from_u64(SEED + 4);
    let mut worst_res = 0.0f64;
    let mut worst_fd = 0.0f64;
    let mut worst_agree = 0.0f64;
    let cases = 60;
    for k in 0..cases {
        let variant = if k % 2 == 0 { EntropyVariant::Weighted } else { EntropyVariant::Printed };
        let mut p = random_problem(&mut rng, false).with_variant(variant);
        // |J| ≤ 0.01 keeps a real root inside S < 1/2
        p = Problem::new(p.couplings.as_slice().iter().map(|j| j * 0.1).collect(), p.n_sites, p.mu)
            .unwrap()
            .with_variant(variant);
        let s = solve_scalar(&p, 1e-12).unwrap();
        let t = solve_newton(&p, 1e-12, None).unwrap();
        worst_res = worst_res.max(s.residual_norm).max(t.residual_norm);
        worst_fd = worst_fd.max(central_difference(&p, &s, 1e-5));
        worst_agree = worst_agree.max((s.value - t.value).abs());
        for (a, b) in s.point.rho.iter().chain(&s.point.z).zip(t.point.rho.iter().chain(&t.point.z)) {
            worst_agree = worst_agree.max((a - b).abs());
        }
    }
    Outcome {
        pass: worst_res <= 1e-10 && worst_fd <= 1e-6 && worst_agree <= 1e-10,
        detail: format!(
            "{cases} problems, residual {worst_res:.3e} (1e-10), finite-difference rel err {worst_fd:.3e} (1e-6), scalar vs Newton {worst_agree:.3e} (1e-10)"
        ),
    }
}

/// Criterion 5: gap trend on mixed-sign couplings in the small-coupling regime.
fn gap_trend_probe() -> Outcome {
    let sets: [&[f64]; 6] = [
        &[0.01, -0.005],
        &[-0.01, 0.004],
        &[0.008, -0.003, 0.002],
        &[0.005, -0.01],
        &[0.01, -0.002, -0.001],
        &[-0.004, 0.006],
    ];
    let mut consistent = 0;
    let mut lines = Vec::new();
    for j in sets {
        let base = Problem::new(j.to_vec(), 64, 0.1).unwrap();
        let plan = SweepPlan::new(base)
            .with_methods(vec![Method::Exact, Method::Saddle])
            .with_precision(PrecisionPolicy::extended(128));
        let rows = run_sweep(&plan).unwrap();
        match fit_gap_trend(&rows) {
            Ok(t) => {
                if t.verdict == Verdict::Consistent {
                    consistent += 1;
                }
                lines.push(format!(
                    "{j:?}: R2={:.3} tail_non_increasing={} {:?}",
                    t.r_squared, t.tail_non_increasing, t.verdict
                ));
            }
            Err(e) => lines.push(format!("{j:?}: {e}")),
        }
    }
    Outcome {
        pass: consistent == sets.len(),
        detail: format!("{consistent}/{} sets consistent; {}", sets.len(), lines.join("; ")),
    }
}

/// Criterion 6: FAST flags heavy cancellation, EXTENDED stays stable.
fn cancellation() -> Outcome {
    // Under β ≡ 1 each coordinate sums to a truncated e^{NJ}; with NJ = −x and
    // a cap well above x the index is about e^{2x}.
    let cases: [(Vec<f64>, u64, f64); 4] = [
        (vec![-0.16], 50, 0.7),
        (vec![-0.15], 60, 0.6),
        (vec![-0.15, 0.01], 60, 0.6),
        (vec![-0.1, -0.08], 50, 0.8),
    ];
    let mut passed = 0;
    let mut used = 0;
    let mut lines = Vec::new();
    for (j, n, mu) in cases {
        let p = Problem::new(j.clone(), n, mu).unwrap().with_beta(BetaHook::Unit);
        let fast = exact_sum(&p, &PrecisionPolicy::fast()).unwrap();
        if fast.cancellation_index < 1e6 {
            lines.push(format!("{j:?}: kappa {:.2e} below 1e6, skipped", fast.cancellation_index));
            continue;
        }
        used += 1;
        let ext = exact_sum(&p, &PrecisionPolicy::extended(128)).unwrap();
        let flagged = fast
            .flags
            .iter()
            .any(|f| matches!(f, TrustFlag::FastErrorBudget { .. }));
        let width = ext.width_discrepancy.unwrap_or(f64::INFINITY);
        let width_ok = width <= 1e-20
            && !ext.flags.iter().any(|f| matches!(f, TrustFlag::WidthDisagreement { .. }));
        if flagged && width_ok {
            passed += 1;
        }
        lines.push(format!(
            "{j:?}: kappa {:.2e}, FAST flagged {flagged}, width diff {width:.2e}",
            fast.cancellation_index
        ));
    }
    Outcome {
        pass: used >= 3 && passed == used,
        detail: format!("{passed}/{used} constructed cases; {}", lines.join("; ")),
    }
}

/// Criterion 7: residue oracle against single-circle quadrature.
fn residue() -> Outcome {
    let mut rng = StdRng::seed_from_u64(SEED + 7);
    let mut worst_pos = 0.0f64;
    let mut worst_neg = 0.0f64;
    let mut exact_zero = true;
    let cases = 200;
    for _ in 0..cases {
        let n = rng.gen_range(1..=60u64);
        let j: f64 = rng.gen_range(-0.1..0.1);
        let alpha: i64 = rng.gen_range(-6..=6);
        let x = n as f64 * j;
        let oracle = residue_oracle(n, j, alpha);
        if alpha < 0 {
            exact_zero &= oracle == 0.0;
            let q = residue_quadrature(n, j, alpha, 64, 1.0);
            worst_neg = worst_neg.max(q.norm());
        } else {
            let radius = if alpha == 0 { 1.0 } else { x.abs() / alpha as f64 };
            let q = residue_quadrature(n, j, alpha, 64, radius);
            worst_pos = worst_pos.max((q - oracle).norm() / oracle.abs());
        }
    }
    Outcome {
        pass: exact_zero && worst_pos <= 1e-12 && worst_neg <= 1e-12,
        detail: format!(
            "{cases} cases, alpha>=0 rel err {worst_pos:.3e} (1e-12), alpha<0 quadrature |q| {worst_neg:.3e} (1e-12), oracle exactly zero for alpha<0: {exact_zero}"
        ),
    }
}

fn main() {
    type Criterion = (u32, &'static str, fn() -> Outcome);
    let criteria: [Criterion; 7] = [
        (1, "summation vs contour quadrature", identity),
        (2, "unit beta closed form and truncation defect", unit_beta),
        (3, "largest term vs stationary point", largest_term_agreement),
        (4, "stationary point correctness", stationary_correctness),
        (5, "gap trend probe", gap_trend_probe),
        (6, "cancellation robustness", cancellation),
        (7, "residue oracle", residue),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        let o = run();
        report(id, name, &o);
        if !o.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
