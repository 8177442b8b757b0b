//! Minimum-jerk gap filling with a degree-7 position polynomial.
//!
//! The problem is solved in normalised time `tau = (t - t0) / T`, where the
//! jerk Hessian is a fixed rational matrix, via the 14x14 KKT system
//! `[2H A'; A 0] [q; lambda] = [0; b]`.

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};
use crate::trajkit::TimeSeries;

/// Shortest interval the fill accepts, seconds.
pub const MIN_DURATION: f64 = 0.2;

const N: usize = 8;
const M: usize = 6;
const K: usize = N + M;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinJerkProblem {
    pub t0: f64,
    pub t1: f64,
    pub x0: f64,
    pub x1: f64,
    pub v0: f64,
    pub v1: f64,
    pub a0: f64,
    pub a1: f64,
}

impl MinJerkProblem {
    pub fn duration(&self) -> f64 {
        self.t1 - self.t0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinJerkSolution {
    pub t0: f64,
    pub t1: f64,
    /// `x(t) = sum_i coefficients[i] * (t - t0)^i`.
    pub coefficients: [f64; N],
    /// Integrated squared jerk over `[t0, t1]`.
    pub jerk_cost: f64,
    /// Max-norm of the KKT residual in normalised units.
    pub kkt_residual: f64,
}

fn eval(c: &[f64; N], dt: f64, order: usize) -> f64 {
    let mut acc = 0.0;
    for i in (order..N).rev() {
        let mut factor = 1.0;
        for k in 0..order {
            factor *= (i - k) as f64;
        }
        acc = acc * dt + factor * c[i];
    }
    acc
}

impl MinJerkSolution {
    pub fn position(&self, t: f64) -> f64 {
        eval(&self.coefficients, t - self.t0, 0)
    }

    pub fn velocity(&self, t: f64) -> f64 {
        eval(&self.coefficients, t - self.t0, 1)
    }

    pub fn acceleration(&self, t: f64) -> f64 {
        eval(&self.coefficients, t - self.t0, 2)
    }
}

/// `H[i][j] = integral over [0,1] of q_i''' q_j'''` for monomials `tau^i`.
pub fn jerk_hessian() -> SMatrix<f64, N, N> {
    SMatrix::from_fn(|i, j| {
        if i < 3 || j < 3 {
            return 0.0;
        }
        let fi = (i * (i - 1) * (i - 2)) as f64;
        let fj = (j * (j - 1) * (j - 2)) as f64;
        fi * fj / (i + j - 5) as f64
    })
}

/// Integrated squared jerk of `sum c_i (t - t0)^i` over a span of `duration`.
pub fn jerk_cost(coefficients: &[f64], duration: f64) -> f64 {
    let h = jerk_hessian();
    let mut q = SVector::<f64, N>::zeros();
    for (i, c) in coefficients.iter().enumerate().take(N) {
        q[i] = c * duration.powi(i as i32);
    }
    (q.transpose() * h * q)[(0, 0)] / duration.powi(5)
}

fn constraints() -> SMatrix<f64, M, N> {
    let mut a = SMatrix::<f64, M, N>::zeros();
    a[(0, 0)] = 1.0;
    a[(1, 1)] = 1.0;
    a[(2, 2)] = 2.0;
    for i in 0..N {
        a[(3, i)] = 1.0;
        a[(4, i)] = i as f64;
        a[(5, i)] = (i * i.saturating_sub(1)) as f64;
    }
    a
}

pub fn solve_min_jerk(p: &MinJerkProblem) -> Result<MinJerkSolution> {
    let values = [p.t0, p.t1, p.x0, p.x1, p.v0, p.v1, p.a0, p.a1];
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite boundary condition in {p:?}")));
    }
    let dur = p.duration();
    if dur < MIN_DURATION {
        return Err(Error::invalid(format!(
            "fill interval [{}, {}] shorter than {MIN_DURATION} s",
            p.t0, p.t1
        )));
    }

    let h = jerk_hessian();
    let a = constraints();
    // positions relative to x0 keep the system well scaled
    let b = SVector::<f64, M>::from([
        0.0,
        dur * p.v0,
        dur * dur * p.a0,
        p.x1 - p.x0,
        dur * p.v1,
        dur * dur * p.a1,
    ]);

    let mut kkt = SMatrix::<f64, K, K>::zeros();
    kkt.fixed_view_mut::<N, N>(0, 0).copy_from(&(h * 2.0));
    kkt.fixed_view_mut::<N, M>(0, N).copy_from(&a.transpose());
    kkt.fixed_view_mut::<M, N>(N, 0).copy_from(&a);
    let mut rhs = SVector::<f64, K>::zeros();
    rhs.fixed_rows_mut::<M>(N).copy_from(&b);

    let sol = kkt.lu().solve(&rhs).ok_or_else(|| {
        Error::Numerical(format!(
            "singular KKT system for fill over [{}, {}] (T = {dur} s)",
            p.t0, p.t1
        ))
    })?;
    let residual = (kkt * sol - rhs).amax();
    if !residual.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite KKT solution for fill over [{}, {}]",
            p.t0, p.t1
        )));
    }

    let q: SVector<f64, N> = sol.fixed_rows::<N>(0).into_owned();
    let jerk = (q.transpose() * h * q)[(0, 0)] / dur.powi(5);
    let mut coefficients = [0.0; N];
    for i in 0..N {
        coefficients[i] = q[i] / dur.powi(i as i32);
    }
    coefficients[0] += p.x0;
    Ok(MinJerkSolution {
        t0: p.t0,
        t1: p.t1,
        coefficients,
        jerk_cost: jerk,
        kkt_residual: residual,
    })
}

/// Position and speed of the optimal fill on the requested timestamps.
pub fn fill_min_jerk(p: &MinJerkProblem, timestamps: &[f64]) -> Result<(TimeSeries, TimeSeries)> {
    let tol = 1e-9;
    if let Some(t) = timestamps.iter().find(|&&t| t < p.t0 - tol || t > p.t1 + tol) {
        return Err(Error::invalid(format!(
            "fill timestamp {t} outside [{}, {}]",
            p.t0, p.t1
        )));
    }
    let sol = solve_min_jerk(p)?;
    let x: Vec<f64> = timestamps.iter().map(|&t| sol.position(t)).collect();
    let v: Vec<f64> = timestamps.iter().map(|&t| sol.velocity(t)).collect();
    Ok((
        TimeSeries::new(timestamps.to_vec(), x)?,
        TimeSeries::new(timestamps.to_vec(), v)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem_from(f: impl Fn(f64) -> (f64, f64, f64), t0: f64, t1: f64) -> MinJerkProblem {
        let (x0, v0, a0) = f(t0);
        let (x1, v1, a1) = f(t1);
        MinJerkProblem {
            t0,
            t1,
            x0,
            x1,
            v0,
            v1,
            a0,
            a1,
        }
    }

    #[test]
    fn quadratic_is_reproduced() {
        let f = |t: f64| (2.0 + 3.0 * t + 0.5 * t * t, 3.0 + t, 1.0);
        let p = problem_from(f, 1.0, 3.5);
        let sol = solve_min_jerk(&p).unwrap();
        assert!(sol.jerk_cost.abs() < 1e-12);
        for k in 0..=50 {
            let t = 1.0 + 2.5 * k as f64 / 50.0;
            assert!((sol.position(t) - f(t).0).abs() < 1e-8);
        }
    }

    #[test]
    fn stationary_boundary_gives_constant() {
        let p = MinJerkProblem {
            t0: 0.0,
            t1: 2.0,
            x0: 7.5,
            x1: 7.5,
            v0: 0.0,
            v1: 0.0,
            a0: 0.0,
            a1: 0.0,
        };
        let (x, v) = fill_min_jerk(&p, &[0.0, 0.5, 1.0, 1.7, 2.0]).unwrap();
        for (xi, vi) in x.values().iter().zip(v.values()) {
            assert!((xi - 7.5).abs() < 1e-12);
            assert!(vi.abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_conditions_hold() {
        let p = MinJerkProblem {
            t0: 10.0,
            t1: 12.1,
            x0: 500.0,
            x1: 521.0,
            v0: 9.0,
            v1: 11.0,
            a0: -0.4,
            a1: 0.8,
        };
        let s = solve_min_jerk(&p).unwrap();
        assert!((s.position(p.t0) - p.x0).abs() < 1e-9);
        assert!((s.position(p.t1) - p.x1).abs() < 1e-9);
        assert!((s.velocity(p.t0) - p.v0).abs() < 1e-9);
        assert!((s.velocity(p.t1) - p.v1).abs() < 1e-9);
        assert!((s.acceleration(p.t0) - p.a0).abs() < 1e-9);
        assert!((s.acceleration(p.t1) - p.a1).abs() < 1e-9);
        assert!(s.kkt_residual < 1e-9);
        assert!((jerk_cost(&s.coefficients, 2.1) - s.jerk_cost).abs() < 1e-9 * s.jerk_cost.max(1.0));
    }

    #[test]
    fn degenerate_duration_rejected() {
        let p = MinJerkProblem {
            t0: 0.0,
            t1: 0.1,
            x0: 0.0,
            x1: 1.0,
            v0: 10.0,
            v1: 10.0,
            a0: 0.0,
            a1: 0.0,
        };
        assert!(solve_min_jerk(&p).is_err());
        assert!(fill_min_jerk(&MinJerkProblem { t1: 1.0, ..p }, &[1.5]).is_err());
    }

    #[test]
    fn hessian_matches_quadrature() {
        let h = jerk_hessian();
        // midpoint quadrature of tau^(i-3) tau^(j-3) factors
        let n = 20000;
        for i in 3..N {
            for j in 3..N {
                let fi = (i * (i - 1) * (i - 2)) as f64;
                let fj = (j * (j - 1) * (j - 2)) as f64;
                let q: f64 = (0..n)
                    .map(|k| {
                        let tau = (k as f64 + 0.5) / n as f64;
                        fi * fj * tau.powi((i + j - 6) as i32)
                    })
                    .sum::<f64>()
                    / n as f64;
                assert!((h[(i, j)] - q).abs() < 1e-5 * q.max(1.0));
            }
        }
    }
}
