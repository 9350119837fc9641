//! Heuristic check of the gap column against `gap ≈ c·ln N / N`.
//!
//! The verdict is a plausibility probe. It does not establish convergence.

use serde::Serialize;
use thiserror::Error;

use super::sweep::SweepRow;

pub const MIN_ROWS: usize = 4;
pub const R_SQUARED_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrendError {
    #[error("need at least {MIN_ROWS} rows with a finite gap, got {0}")]
    InsufficientData(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Consistent,
    Inconsistent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapTrend {
    /// Least-squares `c` in `gap = c·x`, `x = ln N / N`, no intercept.
    pub slope: f64,
    /// `1 − Σ(gap − c·x)² / Σ gap²`, the no-intercept coefficient of
    /// determination; 1 when every gap is zero.
    pub r_squared: f64,
    /// Gaps never increase across the upper half of the fitted rows.
    pub tail_non_increasing: bool,
    pub rows_used: usize,
    pub verdict: Verdict,
}

/// Fits rows that carry a finite gap, ordered by `N`.
pub fn fit_gap_trend(rows: &[SweepRow]) -> Result<GapTrend, TrendError> {
    let mut pts: Vec<(u64, f64)> = rows
        .iter()
        .filter_map(|r| r.gap.filter(|g| g.is_finite()).map(|g| (r.n, g)))
        .filter(|(n, _)| *n >= 2)
        .collect();
    if pts.len() < MIN_ROWS {
        return Err(TrendError::InsufficientData(pts.len()));
    }
    pts.sort_by_key(|p| p.0);

    let x: Vec<f64> = pts.iter().map(|(n, _)| (*n as f64).ln() / *n as f64).collect();
    let g: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxg: f64 = x.iter().zip(&g).map(|(a, b)| a * b).sum();
    let sgg: f64 = g.iter().map(|v| v * v).sum();
    let slope = sxg / sxx;
    let r_squared = if sgg == 0.0 {
        1.0
    } else {
        let ssr: f64 = x.iter().zip(&g).map(|(a, b)| (b - slope * a).powi(2)).sum();
        1.0 - ssr / sgg
    };

    let top = &g[g.len() / 2..];
    let tail_non_increasing = top.windows(2).all(|w| w[1] <= w[0]);
    let verdict = if r_squared >= R_SQUARED_THRESHOLD && tail_non_increasing {
        Verdict::Consistent
    } else {
        Verdict::Inconsistent
    };
    Ok(GapTrend {
        slope,
        r_squared,
        tail_non_increasing,
        rows_used: pts.len(),
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(gaps: &[(u64, f64)]) -> Vec<SweepRow> {
        gaps.iter()
            .map(|&(n, g)| SweepRow {
                n,
                gap: Some(g),
                ..Default::default()
            })
            .collect()
    }

    const LADDER: [u64; 6] = [8, 16, 32, 64, 128, 256];

    #[test]
    fn recovers_generator() {
        let r = rows(&LADDER.map(|n| (n, 0.37 * (n as f64).ln() / n as f64)));
        let t = fit_gap_trend(&r).unwrap();
        assert!((t.slope - 0.37).abs() < 1e-14);
        assert!((t.r_squared - 1.0).abs() < 1e-14);
        assert_eq!(t.verdict, Verdict::Consistent);
    }

    #[test]
    fn constant_is_inconsistent() {
        let t = fit_gap_trend(&rows(&LADDER.map(|n| (n, 0.01)))).unwrap();
        assert!(t.tail_non_increasing);
        assert!(t.r_squared < R_SQUARED_THRESHOLD);
        assert_eq!(t.verdict, Verdict::Inconsistent);
    }

    #[test]
    fn zero_gaps_are_consistent() {
        let t = fit_gap_trend(&rows(&LADDER.map(|n| (n, 0.0)))).unwrap();
        assert_eq!((t.slope, t.r_squared, t.verdict), (0.0, 1.0, Verdict::Consistent));
    }

    #[test]
    fn rising_tail_is_inconsistent() {
        let mut g = LADDER.map(|n| (n, (n as f64).ln() / n as f64));
        g[5].1 = g[4].1 * 1.01;
        assert_eq!(fit_gap_trend(&rows(&g)).unwrap().verdict, Verdict::Inconsistent);
    }

    #[test]
    fn absent_and_unsorted_rows() {
        let mut r = rows(&[(64, 0.1), (16, 0.3), (32, 0.2)]);
        assert_eq!(fit_gap_trend(&r), Err(TrendError::InsufficientData(3)));
        r.push(SweepRow { n: 8, ..Default::default() });
        r.push(SweepRow { n: 128, gap: Some(f64::NAN), ..Default::default() });
        assert_eq!(fit_gap_trend(&r), Err(TrendError::InsufficientData(3)));
        r.push(SweepRow { n: 256, gap: Some(0.05), ..Default::default() });
        let t = fit_gap_trend(&r).unwrap();
        assert_eq!(t.rows_used, 4);
        assert!(t.tail_non_increasing);
    }
}
