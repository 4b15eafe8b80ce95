//! Dense box-constrained quadratic program solver.
//!
//! Minimizes 0.5 x'Hx + g'x subject to lo <= x <= hi for symmetric
//! positive definite H, with a primal active-set method: each iteration
//! solves the equality-constrained subproblem on the currently free
//! variables via Cholesky, takes the longest feasible step toward that
//! minimizer, and exchanges working-set members based on blocking bounds
//! and multiplier signs. Warm starting from a previous active set makes
//! consecutive similar problems (the MPC case) cheap.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundState {
    Free,
    AtLower,
    AtUpper,
}

#[derive(Debug, Clone)]
pub struct QpOptions {
    /// Convergence threshold on the KKT residual.
    pub kkt_tol: f64,
    /// Cap on equality-subproblem solves; defaults to 30 n.
    pub max_iter: Option<usize>,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self { kkt_tol: 1e-8, max_iter: None }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub active: Vec<BoundState>,
    /// Number of equality-subproblem solves performed.
    pub iterations: usize,
    pub kkt_residual: f64,
    pub converged: bool,
}

/// Worst KKT violation at `x` under the given working set: free-variable
/// stationarity, bound feasibility, and multiplier signs at the bounds.
fn kkt_residual(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    x: &DVector<f64>,
) -> f64 {
    let grad = h * x + g;
    let tol_band = 1e-12;
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        worst = worst.max(lo[i] - x[i]).max(x[i] - hi[i]);
        let at_lower = x[i] - lo[i] <= tol_band;
        let at_upper = hi[i] - x[i] <= tol_band;
        if at_lower && grad[i] >= 0.0 {
            continue;
        }
        if at_upper && grad[i] <= 0.0 {
            continue;
        }
        worst = worst.max(grad[i].abs());
    }
    worst
}

/// Solve the box QP. `warm` seeds the working set, typically with the
/// active set of the previous, similar problem.
pub fn solve_box_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    warm: Option<&[BoundState]>,
    opts: &QpOptions,
) -> Result<QpSolution> {
    let n = g.len();
    assert_eq!(h.nrows(), n);
    assert_eq!(h.ncols(), n);
    assert_eq!(lo.len(), n);
    assert_eq!(hi.len(), n);
    for i in 0..n {
        if !(lo[i] <= hi[i]) {
            return Err(Error::NonFinite("qp bounds"));
        }
    }
    if h.iter().chain(g.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("qp data"));
    }
    let max_iter = opts.max_iter.unwrap_or(30 * n.max(1));

    let mut active: Vec<BoundState> = match warm {
        Some(w) if w.len() == n => w.to_vec(),
        _ => vec![BoundState::Free; n],
    };
    let mut x = DVector::from_fn(n, |i, _| match active[i] {
        BoundState::AtLower => lo[i],
        BoundState::AtUpper => hi[i],
        BoundState::Free => 0.0f64.clamp(lo[i], hi[i]),
    });

    let mut iterations = 0usize;
    while iterations < max_iter {
        let free: Vec<usize> = (0..n).filter(|&i| active[i] == BoundState::Free).collect();
        let nf = free.len();

        let cand = if nf == 0 {
            x.clone()
        } else {
            let mut hff = DMatrix::<f64>::zeros(nf, nf);
            let mut rhs = DVector::<f64>::zeros(nf);
            for (a, &i) in free.iter().enumerate() {
                rhs[a] = -g[i];
                for (b, &j) in free.iter().enumerate() {
                    hff[(a, b)] = h[(i, j)];
                }
                for j in 0..n {
                    if active[j] != BoundState::Free {
                        rhs[a] -= h[(i, j)] * x[j];
                    }
                }
            }
            let chol = hff.clone().cholesky().ok_or(Error::QpNotPositiveDefinite)?;
            let mut y = chol.solve(&rhs);
            // One iterative-refinement pass tightens the subproblem solve
            // to the level the 1e-8 KKT target needs.
            let resid = &rhs - &hff * &y;
            y += chol.solve(&resid);
            let mut cand = x.clone();
            for (a, &i) in free.iter().enumerate() {
                cand[i] = y[a];
            }
            cand
        };
        iterations += 1;

        // Longest feasible step toward the subproblem minimizer.
        let mut alpha = 1.0f64;
        let mut blocker: Option<(usize, BoundState)> = None;
        for &i in &free {
            let d = cand[i] - x[i];
            if d < 0.0 && cand[i] < lo[i] {
                let a = (lo[i] - x[i]) / d;
                if a < alpha {
                    alpha = a;
                    blocker = Some((i, BoundState::AtLower));
                }
            } else if d > 0.0 && cand[i] > hi[i] {
                let a = (hi[i] - x[i]) / d;
                if a < alpha {
                    alpha = a;
                    blocker = Some((i, BoundState::AtUpper));
                }
            }
        }

        match blocker {
            Some((i, side)) => {
                for &f in &free {
                    x[f] += alpha * (cand[f] - x[f]);
                }
                x[i] = match side {
                    BoundState::AtLower => lo[i],
                    BoundState::AtUpper => hi[i],
                    BoundState::Free => unreachable!(),
                };
                active[i] = side;
            }
            None => {
                x = cand;
                // Full step taken: check multiplier signs on the working
                // set and release the most violated bound, if any.
                let grad = h * &x + g;
                let mut worst: Option<(usize, f64)> = None;
                for i in 0..n {
                    let viol = match active[i] {
                        BoundState::AtLower => -grad[i],
                        BoundState::AtUpper => grad[i],
                        BoundState::Free => continue,
                    };
                    if viol > opts.kkt_tol && worst.map_or(true, |(_, w)| viol > w) {
                        worst = Some((i, viol));
                    }
                }
                match worst {
                    Some((i, _)) => active[i] = BoundState::Free,
                    None => {
                        let res = kkt_residual(h, g, lo, hi, &x);
                        return Ok(QpSolution {
                            x,
                            active,
                            iterations,
                            kkt_residual: res,
                            converged: res <= opts.kkt_tol,
                        });
                    }
                }
            }
        }
    }

    let res = kkt_residual(h, g, lo, hi, &x);
    Ok(QpSolution { x, active, iterations, kkt_residual: res, converged: res <= opts.kkt_tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn solve(
        h: &DMatrix<f64>,
        g: &DVector<f64>,
        lo: &DVector<f64>,
        hi: &DVector<f64>,
    ) -> QpSolution {
        solve_box_qp(h, g, lo, hi, None, &QpOptions::default()).unwrap()
    }

    #[test]
    fn hand_case_clips_to_upper_bounds() {
        let h = DMatrix::identity(2, 2);
        let g = DVector::from_vec(vec![-1.0, -1.0]);
        let lo = DVector::zeros(2);
        let hi = DVector::from_element(2, 0.5);
        let sol = solve(&h, &g, &lo, &hi);
        assert!(sol.converged);
        assert_relative_eq!(sol.x[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(sol.x[1], 0.5, epsilon = 1e-12);
        assert_eq!(sol.active, vec![BoundState::AtUpper; 2]);
        assert!(sol.iterations <= 3);
    }

    #[test]
    fn interior_solution_matches_unconstrained_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let h = &a.transpose() * &a + DMatrix::identity(4, 4);
        let g = DVector::from_fn(4, |_, _| rng.random_range(-0.5..0.5));
        let lo = DVector::from_element(4, -100.0);
        let hi = DVector::from_element(4, 100.0);
        let sol = solve(&h, &g, &lo, &hi);
        let exact = h.clone().cholesky().unwrap().solve(&(-&g));
        assert!(sol.converged);
        assert_relative_eq!((sol.x - exact).norm(), 0.0, epsilon = 1e-9);
        assert!(sol.active.iter().all(|&s| s == BoundState::Free));
    }

    /// Projected gradient descent with a conservative step; slow but an
    /// independent check of the constrained minimizer.
    fn pgd_oracle(
        h: &DMatrix<f64>,
        g: &DVector<f64>,
        lo: &DVector<f64>,
        hi: &DVector<f64>,
    ) -> DVector<f64> {
        let lmax = h.clone().symmetric_eigen().eigenvalues.max();
        let eta = 1.0 / lmax;
        let n = g.len();
        let mut x = DVector::from_fn(n, |i, _| 0.0f64.clamp(lo[i], hi[i]));
        for _ in 0..60_000 {
            let grad = h * &x + g;
            let mut nx = &x - eta * grad;
            for i in 0..n {
                nx[i] = nx[i].clamp(lo[i], hi[i]);
            }
            let delta = (&nx - &x).amax();
            x = nx;
            if delta < 1e-14 {
                break;
            }
        }
        x
    }

    #[test]
    fn random_problems_match_projected_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for case in 0..200 {
            let n = rng.random_range(2..=12);
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let h = &a.transpose() * &a + DMatrix::identity(n, n);
            let g = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            let lo = DVector::from_fn(n, |_, _| rng.random_range(-1.0..0.0));
            let hi = DVector::from_fn(n, |_, _| rng.random_range(0.0..1.0));
            let sol = solve(&h, &g, &lo, &hi);
            assert!(sol.converged, "case {case} did not converge");
            assert!(sol.kkt_residual <= 1e-8, "case {case} kkt {}", sol.kkt_residual);
            let oracle = pgd_oracle(&h, &g, &lo, &hi);
            let err = (&sol.x - &oracle).amax();
            assert!(err < 1e-7, "case {case}: active-set vs pgd differ by {err}");
        }
    }

    #[test]
    fn warm_start_never_needs_more_iterations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.random_range(4..=12);
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let h = &a.transpose() * &a + DMatrix::identity(n, n);
            let g = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            let lo = DVector::from_element(n, -0.4);
            let hi = DVector::from_element(n, 0.4);
            let base = solve(&h, &g, &lo, &hi);
            // Small perturbation, same active set expected.
            let g2 = &g + DVector::from_fn(n, |_, _| rng.random_range(-1e-4..1e-4));
            let cold = solve(&h, &g2, &lo, &hi);
            let warm =
                solve_box_qp(&h, &g2, &lo, &hi, Some(&base.active), &QpOptions::default())
                    .unwrap();
            assert!(warm.converged);
            assert!(
                warm.iterations <= cold.iterations,
                "warm {} vs cold {}",
                warm.iterations,
                cold.iterations
            );
            assert_relative_eq!((warm.x - cold.x).amax(), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn active_labels_match_the_clipped_axes() {
        let h = DMatrix::identity(3, 3);
        // Separable: minimizers at 2, -3, 0.1 against bounds [-1, 1].
        let g = DVector::from_vec(vec![-2.0, 3.0, -0.1]);
        let lo = DVector::from_element(3, -1.0);
        let hi = DVector::from_element(3, 1.0);
        let sol = solve(&h, &g, &lo, &hi);
        assert!(sol.converged);
        assert_eq!(sol.active[0], BoundState::AtUpper);
        assert_eq!(sol.active[1], BoundState::AtLower);
        assert_eq!(sol.active[2], BoundState::Free);
        assert_relative_eq!(sol.x[2], 0.1, epsilon = 1e-10);
    }

    #[test]
    fn iteration_cap_reports_unconverged_but_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 8;
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let h = &a.transpose() * &a + DMatrix::identity(n, n);
        let g = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let lo = DVector::from_element(n, -0.1);
        let hi = DVector::from_element(n, 0.1);
        let opts = QpOptions { max_iter: Some(1), ..Default::default() };
        let sol = solve_box_qp(&h, &g, &lo, &hi, None, &opts).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(!sol.converged);
        for i in 0..n {
            assert!(sol.x[i] >= lo[i] - 1e-12 && sol.x[i] <= hi[i] + 1e-12);
        }
    }

    #[test]
    fn rejects_inverted_bounds_and_bad_data() {
        let h = DMatrix::identity(2, 2);
        let g = DVector::zeros(2);
        let lo = DVector::from_vec(vec![1.0, 0.0]);
        let hi = DVector::from_vec(vec![0.0, 1.0]);
        assert!(solve_box_qp(&h, &g, &lo, &hi, None, &QpOptions::default()).is_err());
        let g_bad = DVector::from_vec(vec![f64::NAN, 0.0]);
        let lo2 = DVector::zeros(2);
        let hi2 = DVector::from_element(2, 1.0);
        assert!(solve_box_qp(&h, &g_bad, &lo2, &hi2, None, &QpOptions::default()).is_err());
    }
}
