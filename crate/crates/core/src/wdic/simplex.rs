//! Bounded-variable primal simplex for covering LPs
//! `min c·x  s.t.  A x ≥ 1, 0 ≤ x ≤ 1` on a dense tableau.
//!
//! Rows become equalities with surplus variables, `A x − s = 1`. A feasible
//! 0/1 cover serves as the starting point with every `x` nonbasic (at its
//! upper bound when chosen) and the surplus variables basic, so no phase one
//! is needed. Pricing is Dantzig's rule; after a run of degenerate pivots the
//! solver switches to Bland's rule permanently, which rules out cycling.

use super::{Columns, WdicError, FEASIBILITY_TOL};

/// Iteration cap is this factor times `rows + cols`.
pub const DEFAULT_ITERATION_FACTOR: usize = 50;

const DEGENERATE_STREAK: usize = 50;
const COST_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const STEP_TOL: f64 = 1e-12;

/// Returns `(x, objective)` for an optimal vertex. `start` must be a covering
/// selection when given; otherwise a greedy one is built.
pub(crate) fn solve_covering(cols: &Columns, start: Option<&[bool]>) -> Result<(Vec<f64>, f64), WdicError> {
    let k = cols.cols.len();
    let m = cols.rows;
    if m == 0 {
        return Ok((vec![0.0; k], 0.0));
    }
    let start = match start {
        Some(s) => s.to_vec(),
        None => greedy_start(cols).ok_or_else(|| infeasible_rows(cols))?,
    };
    let mut t = Tableau::new(cols, &start);
    let limit = DEFAULT_ITERATION_FACTOR * (m + k);
    t.run(limit)?;
    let x: Vec<f64> = t.value[..k].iter().map(|v| v.clamp(0.0, 1.0)).collect();
    // Guard against drift: the returned point must satisfy every row.
    let mut lhs = vec![0.0; m];
    for (j, rows) in cols.cols.iter().enumerate() {
        for &r in rows {
            lhs[r] += x[j];
        }
    }
    if lhs.iter().any(|&v| v < 1.0 - FEASIBILITY_TOL) {
        return Err(WdicError::NumericalFailure { iterations: t.iterations });
    }
    let obj = x.iter().zip(&cols.costs).map(|(a, c)| a * c).sum();
    Ok((x, obj))
}

fn infeasible_rows(cols: &Columns) -> WdicError {
    let mut covered = vec![false; cols.rows];
    for rows in &cols.cols {
        for &r in rows {
            covered[r] = true;
        }
    }
    WdicError::Infeasible(
        (0..cols.rows)
            .filter(|&r| !covered[r])
            .map(|r| r.to_string())
            .collect(),
    )
}

pub(crate) fn greedy_start(cols: &Columns) -> Option<Vec<bool>> {
    let mut uncovered = vec![true; cols.rows];
    let mut left = cols.rows;
    let mut chosen = vec![false; cols.cols.len()];
    while left > 0 {
        let mut best: Option<(usize, usize)> = None;
        for (j, rows) in cols.cols.iter().enumerate() {
            if chosen[j] {
                continue;
            }
            let gain = rows.iter().filter(|&&r| uncovered[r]).count();
            if gain == 0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((b, g)) => gain as f64 * cols.costs[b] > g as f64 * cols.costs[j],
            };
            if better {
                best = Some((j, gain));
            }
        }
        let (j, _) = best?;
        chosen[j] = true;
        for &r in &cols.cols[j] {
            if uncovered[r] {
                uncovered[r] = false;
                left -= 1;
            }
        }
    }
    Some(chosen)
}

struct Tableau {
    m: usize,
    n: usize,
    /// Row-major `m × n` matrix `B⁻¹ M` for `M = [A | −I]`.
    a: Vec<f64>,
    /// Reduced costs.
    d: Vec<f64>,
    upper: Vec<f64>,
    value: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    at_upper: Vec<bool>,
    bland: bool,
    iterations: usize,
}

impl Tableau {
    fn new(cols: &Columns, start: &[bool]) -> Self {
        let k = cols.cols.len();
        let m = cols.rows;
        let n = k + m;
        let mut a = vec![0.0; m * n];
        let mut value = vec![0.0; n];
        let mut lhs = vec![0.0; m];
        for (j, rows) in cols.cols.iter().enumerate() {
            let x = if start[j] { 1.0 } else { 0.0 };
            value[j] = x;
            for &r in rows {
                a[r * n + j] = -1.0;
                lhs[r] += x;
            }
        }
        for r in 0..m {
            a[r * n + k + r] = 1.0;
            value[k + r] = lhs[r] - 1.0;
        }
        let mut d = vec![0.0; n];
        d[..k].copy_from_slice(&cols.costs);
        let mut upper = vec![f64::INFINITY; n];
        upper[..k].iter_mut().for_each(|u| *u = 1.0);
        let mut is_basic = vec![false; n];
        is_basic[k..].iter_mut().for_each(|b| *b = true);
        Tableau {
            m,
            n,
            a,
            d,
            upper,
            value,
            basis: (k..n).collect(),
            is_basic,
            at_upper: start.iter().copied().chain(std::iter::repeat(false).take(m)).collect(),
            bland: false,
            iterations: 0,
        }
    }

    fn entering(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.n {
            if self.is_basic[j] {
                continue;
            }
            let dj = self.d[j];
            let improving = if self.at_upper[j] { dj > COST_TOL } else { dj < -COST_TOL };
            if !improving {
                continue;
            }
            if self.bland {
                return Some(j);
            }
            if best.is_none_or(|(_, b)| dj.abs() > b) {
                best = Some((j, dj.abs()));
            }
        }
        best.map(|(j, _)| j)
    }

    fn run(&mut self, limit: usize) -> Result<(), WdicError> {
        let mut streak = 0;
        loop {
            let Some(j) = self.entering() else {
                return Ok(());
            };
            if self.iterations >= limit {
                return Err(WdicError::NumericalFailure { iterations: self.iterations });
            }
            self.iterations += 1;
            let dir = if self.at_upper[j] { -1.0 } else { 1.0 };

            // Ratio test. A basic variable moves by `-dir * a[r][j]` per unit step.
            let mut step = self.upper[j];
            let mut leave: Option<(usize, bool, f64)> = None;
            for r in 0..self.m {
                let rate = -dir * self.a[r * self.n + j];
                if rate.abs() <= PIVOT_TOL {
                    continue;
                }
                let b = self.basis[r];
                let (limit_r, to_upper) = if rate < 0.0 {
                    ((self.value[b] / -rate).max(0.0), false)
                } else if self.upper[b].is_finite() {
                    (((self.upper[b] - self.value[b]) / rate).max(0.0), true)
                } else {
                    continue;
                };
                let take = match leave {
                    _ if limit_r < step - STEP_TOL => true,
                    Some((lr, _, piv)) if limit_r <= step + STEP_TOL => {
                        if self.bland {
                            b < self.basis[lr]
                        } else {
                            rate.abs() > piv
                        }
                    }
                    _ => false,
                };
                if take {
                    step = step.min(limit_r);
                    leave = Some((r, to_upper, rate.abs()));
                }
            }
            if step.is_infinite() {
                return Err(WdicError::Unbounded);
            }

            if step <= STEP_TOL {
                streak += 1;
                if streak > DEGENERATE_STREAK {
                    self.bland = true;
                }
            } else {
                streak = 0;
            }

            self.value[j] += dir * step;
            for r in 0..self.m {
                let b = self.basis[r];
                self.value[b] -= dir * self.a[r * self.n + j] * step;
            }

            match leave {
                // The entering variable reaches its own opposite bound first.
                None => {
                    self.at_upper[j] = !self.at_upper[j];
                    self.value[j] = if self.at_upper[j] { self.upper[j] } else { 0.0 };
                }
                Some((r, to_upper, _)) => {
                    let out = self.basis[r];
                    self.value[out] = if to_upper { self.upper[out] } else { 0.0 };
                    self.is_basic[out] = false;
                    self.at_upper[out] = to_upper;
                    self.pivot(r, j);
                    self.basis[r] = j;
                    self.is_basic[j] = true;
                    self.at_upper[j] = false;
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let n = self.n;
        let p = self.a[r * n + j];
        for c in 0..n {
            self.a[r * n + c] /= p;
        }
        self.a[r * n + j] = 1.0;
        let (before, rest) = self.a.split_at_mut(r * n);
        let (row, after) = rest.split_at_mut(n);
        for other in before.chunks_exact_mut(n).chain(after.chunks_exact_mut(n)) {
            let f = other[j];
            if f != 0.0 {
                for (o, &v) in other.iter_mut().zip(row.iter()) {
                    *o -= f * v;
                }
                other[j] = 0.0;
            }
        }
        let f = self.d[j];
        if f != 0.0 {
            for (o, &v) in self.d.iter_mut().zip(row.iter()) {
                *o -= f * v;
            }
            self.d[j] = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cols(rows: usize, sets: &[(&[usize], f64)]) -> Columns {
        Columns {
            rows,
            cols: sets.iter().map(|(r, _)| r.to_vec()).collect(),
            costs: sets.iter().map(|&(_, c)| c).collect(),
        }
    }

    #[test]
    fn triangle_has_half_integral_optimum() {
        // Three edges of a triangle as intents, each vertex covers two.
        let c = cols(3, &[(&[0, 1], 1.0), (&[1, 2], 1.0), (&[0, 2], 1.0)]);
        let (x, obj) = solve_covering(&c, None).unwrap();
        assert!((obj - 1.5).abs() < 1e-9, "{obj}");
        for v in x {
            assert!((v - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn gap_example_lp_value() {
        let c = cols(4, &[(&[0, 1, 2], 3.0), (&[0, 1], 2.0), (&[2, 3], 2.0)]);
        let (x, obj) = solve_covering(&c, None).unwrap();
        assert!((obj - 4.0).abs() < 1e-9);
        assert!(x[0] < 1e-9 && (x[1] - 1.0).abs() < 1e-9 && (x[2] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn starting_point_does_not_matter() {
        let c = cols(3, &[(&[0, 1], 1.0), (&[1, 2], 1.0), (&[0, 2], 1.0), (&[0, 1, 2], 5.0)]);
        let (_, a) = solve_covering(&c, Some(&[false, false, false, true])).unwrap();
        let (_, b) = solve_covering(&c, Some(&[true, true, true, true])).unwrap();
        assert!((a - 1.5).abs() < 1e-9 && (b - 1.5).abs() < 1e-9);
    }

    #[test]
    fn uncoverable_row_reports_infeasible() {
        let c = cols(2, &[(&[0], 1.0)]);
        assert!(matches!(solve_covering(&c, None), Err(WdicError::Infeasible(_))));
    }
}
