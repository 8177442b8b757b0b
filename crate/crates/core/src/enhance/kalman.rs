//! Forward-pass Kalman filters on (possibly nonuniform) time grids.
//!
//! Both filters observe the full state directly (H = I), using finite
//! differences of the measured quantity as the extra measurement channel.
//! Updates use the Joseph form and every posterior covariance is checked
//! for positive definiteness.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajkit::{self, TimeSeries};

/// Noise standard deviations; covariances are their squares on the diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanSpec {
    /// Constant-speed model process noise (x, v).
    pub q1: [f64; 2],
    /// Constant-speed model measurement noise (x, v).
    pub r1: [f64; 2],
    /// Constant-acceleration model process noise (x, v, a).
    pub q2: [f64; 3],
    /// Constant-acceleration model measurement noise (x, v, a).
    pub r2: [f64; 3],
}

impl Default for KalmanSpec {
    fn default() -> Self {
        Self {
            q1: [0.2, 0.8],
            r1: [0.5, 1.1],
            q2: [0.2, 0.4, 1.5],
            r2: [0.5, 1.0, 10.0],
        }
    }
}

impl KalmanSpec {
    pub fn validate(&self) -> Result<()> {
        let all = self.q1.iter().chain(&self.r1).chain(&self.q2).chain(&self.r2);
        if all.into_iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("kalman noise levels must all be > 0".into()));
        }
        Ok(())
    }
}

fn diag_sq<const D: usize>(std: &[f64; D]) -> SMatrix<f64, D, D> {
    SMatrix::from_diagonal(&SVector::from_fn(|i, _| std[i] * std[i]))
}

/// Linear Kalman filter with direct full-state observation.
struct Filter<const D: usize> {
    x: SVector<f64, D>,
    p: SMatrix<f64, D, D>,
    q: SMatrix<f64, D, D>,
    r: SMatrix<f64, D, D>,
}

impl<const D: usize> Filter<D> {
    fn predict(&mut self, f: &SMatrix<f64, D, D>) {
        self.x = f * self.x;
        self.p = f * self.p * f.transpose() + self.q;
    }

    fn update(&mut self, z: &SVector<f64, D>, step: usize) -> Result<()> {
        let s = self.p + self.r;
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| Error::Numerical(format!("singular innovation covariance at step {step}")))?;
        let k = self.p * s_inv;
        self.x += k * (z - self.x);
        let i_k = SMatrix::<f64, D, D>::identity() - k;
        let p = i_k * self.p * i_k.transpose() + k * self.r * k.transpose();
        self.p = (p + p.transpose()) * 0.5;
        if self.p.cholesky().is_none() {
            return Err(Error::Numerical(format!(
                "state covariance lost positive definiteness at step {step}"
            )));
        }
        Ok(())
    }
}

/// Filtered result with the posterior covariance at every timestamp.
#[derive(Debug, Clone)]
pub struct ConstantSpeedEstimate {
    pub x: TimeSeries,
    pub v: TimeSeries,
    pub covariances: Vec<SMatrix<f64, 2, 2>>,
}

#[derive(Debug, Clone)]
pub struct ConstantAccEstimate {
    pub x: TimeSeries,
    pub v: TimeSeries,
    pub a: TimeSeries,
    pub covariances: Vec<SMatrix<f64, 3, 3>>,
}

fn check_finite(name: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::invalid(format!("non-finite {name} measurement at index {i}"))),
        None => Ok(()),
    }
}

/// State (x, v) with transition `[[1, dt], [0, 1]]`; measures `(x, dx/dt)`.
pub fn kf_constant_speed(x: &TimeSeries, spec: &KalmanSpec) -> Result<ConstantSpeedEstimate> {
    check_finite("position", x.values())?;
    let t = x.t();
    let xs = x.values();
    let vd = trajkit::derivative(t, xs)?;
    let r = diag_sq(&spec.r1);
    let mut kf = Filter {
        x: SVector::<f64, 2>::new(xs[0], vd[0]),
        p: r,
        q: diag_sq(&spec.q1),
        r,
    };
    let n = t.len();
    let (mut ox, mut ov, mut cov) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        if i > 0 {
            let dt = t[i] - t[i - 1];
            kf.predict(&SMatrix::<f64, 2, 2>::new(1.0, dt, 0.0, 1.0));
            kf.update(&SVector::<f64, 2>::new(xs[i], vd[i]), i)?;
        }
        ox.push(kf.x[0]);
        ov.push(kf.x[1]);
        cov.push(kf.p);
    }
    Ok(ConstantSpeedEstimate {
        x: x.with_values(ox)?,
        v: x.with_values(ov)?,
        covariances: cov,
    })
}

/// State (x, v, a) with the constant-acceleration transition; measures
/// `(x, v, dv/dt)`. The large acceleration measurement noise over-smooths `a`.
pub fn kf_constant_acc(x: &TimeSeries, v: &TimeSeries, spec: &KalmanSpec) -> Result<ConstantAccEstimate> {
    if !x.same_grid(v) {
        return Err(Error::invalid("position and speed series are on different grids"));
    }
    check_finite("position", x.values())?;
    check_finite("speed", v.values())?;
    let t = x.t();
    let xs = x.values();
    let vs = v.values();
    let ad = trajkit::derivative(t, vs)?;
    let r = diag_sq(&spec.r2);
    let mut kf = Filter {
        x: SVector::<f64, 3>::new(xs[0], vs[0], ad[0]),
        p: r,
        q: diag_sq(&spec.q2),
        r,
    };
    let n = t.len();
    let mut out = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut cov = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 {
            let dt = t[i] - t[i - 1];
            let f = SMatrix::<f64, 3, 3>::new(1.0, dt, 0.5 * dt * dt, 0.0, 1.0, dt, 0.0, 0.0, 1.0);
            kf.predict(&f);
            kf.update(&SVector::<f64, 3>::new(xs[i], vs[i], ad[i]), i)?;
        }
        for (k, o) in out.iter_mut().enumerate() {
            o.push(kf.x[k]);
        }
        cov.push(kf.p);
    }
    let [ox, ov, oa] = out;
    Ok(ConstantAccEstimate {
        x: x.with_values(ox)?,
        v: x.with_values(ov)?,
        a: x.with_values(oa)?,
        covariances: cov,
    })
}

/// Noise scale for thresholding: RMSE between differentiated speed and the
/// over-smoothed filter acceleration.
pub fn estimate_noise_sigma(a_v: &TimeSeries, a_k: &TimeSeries) -> Result<f64> {
    trajkit::rmse(a_v, a_k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 * 0.1).collect()
    }

    fn is_spd<const D: usize>(m: &SMatrix<f64, D, D>) -> bool {
        (m - m.transpose()).amax() < 1e-12 && m.cholesky().is_some()
    }

    #[test]
    fn constant_speed_converges() {
        let x = TimeSeries::from_fn(grid(101), |t| 10.0 * t).unwrap();
        let est = kf_constant_speed(&x, &KalmanSpec::default()).unwrap();
        for (t, v) in est.v.t().iter().zip(est.v.values()) {
            if *t >= 2.0 {
                assert!((v - 10.0).abs() < 0.05, "v({t}) = {v}");
            }
        }
        assert!(est.covariances.iter().all(is_spd));
    }

    #[test]
    fn stationary_input_settles() {
        let x = TimeSeries::from_fn(grid(60), |_| 4.0).unwrap();
        let est = kf_constant_speed(&x, &KalmanSpec::default()).unwrap();
        assert!(est.v.values()[20..].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn nonuniform_grid_accepted() {
        let t: Vec<f64> = (0..80)
            .map(|i| i as f64 * 0.1 + if i % 3 == 0 { 0.03 } else { 0.0 })
            .collect();
        let x = TimeSeries::from_fn(t, |t| 5.0 * t).unwrap();
        let est = kf_constant_speed(&x, &KalmanSpec::default()).unwrap();
        assert!((est.v.values()[79] - 5.0).abs() < 0.05);
    }

    #[test]
    fn noisy_speed_is_smoothed() {
        // Monte-Carlo: KF speed error vs raw finite differences, medians over seeds
        let spec = KalmanSpec::default();
        let mut kf_err = Vec::new();
        let mut fd_err = Vec::new();
        let noise = Normal::new(0.0, 0.1).unwrap();
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = grid(301);
            let x: Vec<f64> = t.iter().map(|t| 10.0 * t + noise.sample(&mut rng)).collect();
            let s = TimeSeries::new(t.clone(), x).unwrap();
            let est = kf_constant_speed(&s, &spec).unwrap();
            let fd = trajkit::finite_diff(&s).unwrap();
            let tail = 20..t.len();
            let e = |v: &[f64]| {
                (v[tail.clone()].iter().map(|v| (v - 10.0).powi(2)).sum::<f64>() / tail.len() as f64).sqrt()
            };
            kf_err.push(e(est.v.values()));
            fd_err.push(e(fd.values()));
        }
        kf_err.sort_by(f64::total_cmp);
        fd_err.sort_by(f64::total_cmp);
        let ratio = fd_err[50] / kf_err[50];
        assert!(ratio >= 1.9, "improvement factor {ratio}");
    }

    #[test]
    fn constant_acceleration_tracked() {
        let t = grid(101);
        let x = TimeSeries::from_fn(t.clone(), |t| 3.0 * t + 0.5 * t * t).unwrap();
        let v = TimeSeries::from_fn(t, |t| 3.0 + t).unwrap();
        let est = kf_constant_acc(&x, &v, &KalmanSpec::default()).unwrap();
        for (t, a) in est.a.t().iter().zip(est.a.values()) {
            if *t >= 3.0 {
                assert!((a - 1.0).abs() < 0.05, "a({t}) = {a}");
            }
        }
        assert!(est.covariances.iter().all(is_spd));
    }

    #[test]
    fn constant_speed_gives_zero_acceleration() {
        let t = grid(80);
        let x = TimeSeries::from_fn(t.clone(), |t| 12.0 * t).unwrap();
        let v = TimeSeries::from_fn(t, |_| 12.0).unwrap();
        let est = kf_constant_acc(&x, &v, &KalmanSpec::default()).unwrap();
        assert!(est.a.values()[30..].iter().all(|a| a.abs() < 0.05));
    }

    #[test]
    fn step_acceleration_is_oversmoothed() {
        // a = 0 until 5 s, then 2 m/s^2
        let t = grid(151);
        let vf = |t: f64| 5.0 + 2.0 * (t - 5.0).max(0.0);
        let xf = |t: f64| 5.0 * t + (t - 5.0).max(0.0).powi(2);
        let x = TimeSeries::from_fn(t.clone(), xf).unwrap();
        let v = TimeSeries::from_fn(t.clone(), vf).unwrap();
        let est = kf_constant_acc(&x, &v, &KalmanSpec::default()).unwrap();
        let a_v = trajkit::finite_diff(&v).unwrap();
        let rise = |a: &[f64]| t[a.iter().position(|&a| a >= 1.8).unwrap()];
        let a_k = est.a.values();
        assert!(rise(a_k) > rise(a_v.values()));
        let peak = (50..a_k.len()).max_by(|&i, &j| a_k[i].total_cmp(&a_k[j])).unwrap();
        assert!(a_k[50..=peak].windows(2).all(|w| w[1] >= w[0]), "non-monotone rise");
        assert!(a_k[peak] < 2.01, "overshoot to {}", a_k[peak]);
    }

    #[test]
    fn sigma_estimate() {
        let t = grid(2);
        let a = TimeSeries::new(t.clone(), vec![0.0, 0.0]).unwrap();
        let b = TimeSeries::new(t, vec![3.0, 4.0]).unwrap();
        assert!((estimate_noise_sigma(&a, &b).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(estimate_noise_sigma(&a, &a).unwrap(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let t = grid(2000);
        let ak: Vec<f64> = t.iter().map(|t| (0.3 * t).sin()).collect();
        let av: Vec<f64> = ak.iter().map(|a| a + noise.sample(&mut rng)).collect();
        let s = estimate_noise_sigma(
            &TimeSeries::new(t.clone(), av).unwrap(),
            &TimeSeries::new(t, ak).unwrap(),
        )
        .unwrap();
        assert!((0.45..=0.55).contains(&s));
    }

    #[test]
    fn grid_mismatch_and_nan_rejected() {
        let x = TimeSeries::from_fn(grid(10), |t| t).unwrap();
        let v = TimeSeries::from_fn(grid(11), |_| 1.0).unwrap();
        assert!(kf_constant_acc(&x, &v, &KalmanSpec::default()).is_err());
        let bad = TimeSeries::new(grid(3), vec![0.0, f64::NAN, 1.0]).unwrap();
        assert!(kf_constant_speed(&bad, &KalmanSpec::default()).is_err());
    }
}
