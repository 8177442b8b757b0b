//! Daubechies-6 discrete wavelet transform with half-sample symmetric
//! boundary extension, and soft-threshold denoising on top of it.
//!
//! Coefficient layout and boundary handling follow the conventions of
//! PyWavelets' `symmetric` mode, so results are directly comparable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajkit::TimeSeries;

/// db6 decomposition low-pass filter.
pub const DB6_DEC_LO: [f64; 12] = [
    -0.0010773010853084796,
    0.004777257510945511,
    0.0005538422011614961,
    -0.03158203931748603,
    0.027522865530305727,
    0.09750160558732304,
    -0.12976686756726194,
    -0.22626469396543983,
    0.31525035170919763,
    0.7511339080210954,
    0.49462389039845306,
    0.11154074335010947,
];

const F: usize = DB6_DEC_LO.len();

/// Shortest signal accepted by [`wavelet_denoise`]: two filter lengths.
pub const MIN_LENGTH: usize = 2 * F;

struct Filters {
    dec_lo: [f64; F],
    dec_hi: [f64; F],
    rec_lo: [f64; F],
    rec_hi: [f64; F],
}

fn filters() -> Filters {
    let dec_lo = DB6_DEC_LO;
    let mut rec_lo = dec_lo;
    rec_lo.reverse();
    let mut dec_hi = [0.0; F];
    for (j, h) in dec_hi.iter_mut().enumerate() {
        let sign = if j % 2 == 0 { -1.0 } else { 1.0 };
        *h = sign * rec_lo[j];
    }
    let mut rec_hi = dec_hi;
    rec_hi.reverse();
    Filters {
        dec_lo,
        dec_hi,
        rec_lo,
        rec_hi,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveletSpec {
    pub max_levels: usize,
}

impl Default for WaveletSpec {
    fn default() -> Self {
        Self { max_levels: 4 }
    }
}

impl WaveletSpec {
    pub fn validate(&self) -> Result<()> {
        if self.max_levels == 0 {
            return Err(Error::Config("wavelet.max_levels must be >= 1".into()));
        }
        Ok(())
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        if i < 0 {
            i = -i - 1;
        }
        if i >= n {
            i = 2 * n - i - 1;
        }
    }
    i as usize
}

/// Single-level decomposition; both outputs have `floor((n + 11) / 2)` samples.
pub fn dwt(x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.is_empty() {
        return Err(Error::invalid("dwt of an empty signal"));
    }
    let fl = filters();
    let n = x.len();
    let m = (n + F - 1) / 2;
    let mut a = Vec::with_capacity(m);
    let mut d = Vec::with_capacity(m);
    for k in 0..m {
        let (mut sa, mut sd) = (0.0, 0.0);
        for j in 0..F {
            let xi = x[reflect(2 * k as isize + 1 - j as isize, n)];
            sa += fl.dec_lo[j] * xi;
            sd += fl.dec_hi[j] * xi;
        }
        a.push(sa);
        d.push(sd);
    }
    Ok((a, d))
}

/// Single-level reconstruction; output has `2m - 10` samples for `m` inputs.
pub fn idwt(a: &[f64], d: &[f64]) -> Result<Vec<f64>> {
    if a.len() != d.len() {
        return Err(Error::invalid(format!(
            "idwt coefficient lengths differ: {} vs {}",
            a.len(),
            d.len()
        )));
    }
    let m = a.len();
    if 2 * m + 2 <= F {
        return Err(Error::invalid(format!(
            "idwt needs more than {} coefficients",
            (F - 2) / 2
        )));
    }
    let fl = filters();
    let len = 2 * m + 2 - F;
    let mut out = vec![0.0; len];
    for (o, slot) in out.iter_mut().enumerate() {
        let base = o + F - 2;
        let k_lo = (base + 1).saturating_sub(F).div_ceil(2);
        let k_hi = (base / 2).min(m - 1);
        let mut s = 0.0;
        for k in k_lo..=k_hi {
            let j = base - 2 * k;
            s += a[k] * fl.rec_lo[j] + d[k] * fl.rec_hi[j];
        }
        *slot = s;
    }
    Ok(out)
}

/// Multilevel decomposition `[cA_L, cD_L, ..., cD_1]`.
pub fn wavedec(x: &[f64], levels: usize) -> Result<Vec<Vec<f64>>> {
    let mut details = Vec::with_capacity(levels);
    let mut approx = x.to_vec();
    for _ in 0..levels {
        let (a, d) = dwt(&approx)?;
        details.push(d);
        approx = a;
    }
    let mut out = vec![approx];
    out.extend(details.into_iter().rev());
    Ok(out)
}

/// Inverse of [`wavedec`]; the result is trimmed to `n` samples.
pub fn waverec(coeffs: &[Vec<f64>], n: usize) -> Result<Vec<f64>> {
    let (first, rest) = coeffs
        .split_first()
        .ok_or_else(|| Error::invalid("waverec needs at least one coefficient array"))?;
    let mut a = first.clone();
    for d in rest {
        if a.len() == d.len() + 1 {
            a.pop();
        }
        a = idwt(&a, d)?;
    }
    if a.len() < n {
        return Err(Error::Numerical(format!(
            "reconstruction produced {} samples, expected {n}",
            a.len()
        )));
    }
    a.truncate(n);
    Ok(a)
}

/// Decomposition depth for a signal of length `n`.
pub fn levels_for(n: usize, max_levels: usize) -> usize {
    let natural = (n as f64 / (F as f64 - 1.0)).log2().floor();
    if natural < 1.0 {
        return 1;
    }
    (natural as usize).min(max_levels)
}

pub fn soft_threshold(v: f64, threshold: f64) -> f64 {
    let mag = v.abs() - threshold;
    if mag > 0.0 {
        mag.copysign(v)
    } else {
        0.0
    }
}

/// Soft-threshold denoising with the universal threshold `sigma * sqrt(2 ln n)`
/// applied to every detail level.
pub fn denoise_values(x: &[f64], sigma: f64, spec: &WaveletSpec) -> Result<Vec<f64>> {
    let n = x.len();
    if n < MIN_LENGTH {
        return Err(Error::invalid(format!(
            "wavelet denoising needs at least {MIN_LENGTH} samples, got {n}"
        )));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!(
            "noise sigma must be finite and >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(x.to_vec());
    }
    let levels = levels_for(n, spec.max_levels);
    let mut coeffs = wavedec(x, levels)?;
    let threshold = sigma * (2.0 * (n as f64).ln()).sqrt();
    for detail in coeffs.iter_mut().skip(1) {
        for c in detail.iter_mut() {
            *c = soft_threshold(*c, threshold);
        }
    }
    waverec(&coeffs, n)
}

/// [`denoise_values`] on a uniformly sampled series.
pub fn wavelet_denoise(series: &TimeSeries, sigma: f64, spec: &WaveletSpec) -> Result<TimeSeries> {
    let t = series.t();
    if t.len() >= 2 {
        let dt = t[1] - t[0];
        if t.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-6) {
            return Err(Error::invalid("wavelet denoising requires a uniform grid"));
        }
    }
    let out = denoise_values(series.values(), sigma, spec)?;
    series.with_values(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference_signal() -> Vec<f64> {
        (0..30)
            .map(|i| {
                let f = i as f64;
                (0.37 * f).sin() + 0.1 * f - 0.002 * f * f + if i % 7 == 0 { 0.5 } else { 0.0 }
            })
            .collect()
    }

    #[test]
    fn filter_bank_is_orthonormal() {
        let fl = filters();
        let energy: f64 = fl.dec_lo.iter().map(|h| h * h).sum();
        assert!((energy - 1.0).abs() < 1e-12);
        let dc: f64 = fl.dec_lo.iter().sum();
        assert!((dc - std::f64::consts::SQRT_2).abs() < 1e-12);
        let cross: f64 = fl.dec_lo.iter().zip(&fl.dec_hi).map(|(a, b)| a * b).sum();
        assert!(cross.abs() < 1e-12);
        // six vanishing moments on the high-pass side
        for p in 0..6 {
            let m: f64 = fl.dec_hi.iter().enumerate().map(|(j, h)| h * (j as f64).powi(p)).sum();
            assert!(m.abs() < 1e-6 * 11f64.powi(p), "moment {p} = {m}");
        }
    }

    #[test]
    fn matches_pywavelets_reference() {
        let (a, d) = dwt(&reference_signal()).unwrap();
        assert_eq!(a.len(), 20);
        let expect_a = [(0, 1.752104092162209), (7, 2.12538536176505), (19, 0.5495026189683576)];
        let expect_d = [
            (0, -0.04751436045381594),
            (4, -0.38025974892648323),
            (19, 0.26264354689777153),
        ];
        for (k, v) in expect_a {
            assert!((a[k] - v).abs() < 1e-13, "cA[{k}] = {}", a[k]);
        }
        for (k, v) in expect_d {
            assert!((d[k] - v).abs() < 1e-13, "cD[{k}] = {}", d[k]);
        }
    }

    #[test]
    fn denoise_matches_pywavelets_reference() {
        let y: Vec<f64> = (0..100)
            .map(|i| (0.21 * i as f64).cos() * 2.0 + 0.05 * ((i * 37) % 11) as f64)
            .collect();
        assert_eq!(levels_for(100, 4), 3);
        let lens: Vec<usize> = wavedec(&y, 3).unwrap().iter().map(Vec::len).collect();
        assert_eq!(lens, vec![22, 22, 33, 55]);
        let out = denoise_values(&y, 0.3, &WaveletSpec::default()).unwrap();
        let expect = [
            (0, 2.31145241364387),
            (1, 2.174407011205128),
            (17, -1.7031648815714764),
            (50, -0.7596838374691197),
            (98, 0.10993276352329243),
            (99, -0.15542782352561005),
        ];
        for (i, v) in expect {
            assert!((out[i] - v).abs() < 1e-12, "out[{i}] = {}", out[i]);
        }
    }

    #[test]
    fn zero_sigma_is_identity() {
        let x = reference_signal();
        let mut long = x.clone();
        long.extend(x.iter().map(|v| v * 2.0));
        assert_eq!(denoise_values(&long, 0.0, &WaveletSpec::default()).unwrap(), long);
    }

    #[test]
    fn constant_stays_constant() {
        let x = vec![3.25; 200];
        let out = denoise_values(&x, 0.5, &WaveletSpec::default()).unwrap();
        for v in out {
            assert!((v - 3.25).abs() < 1e-9);
        }
    }

    #[test]
    fn short_series_rejected() {
        assert!(denoise_values(&[1.0; 23], 0.1, &WaveletSpec::default()).is_err());
        assert!(denoise_values(&[1.0; 24], 0.1, &WaveletSpec::default()).is_ok());
    }

    #[test]
    fn level_rule() {
        assert_eq!(levels_for(24, 4), 1);
        assert_eq!(levels_for(43, 4), 1);
        assert_eq!(levels_for(44, 4), 2);
        assert_eq!(levels_for(512, 4), 4);
        assert_eq!(levels_for(512, 2), 2);
    }

    #[test]
    fn nonuniform_grid_rejected() {
        let t: Vec<f64> = (0..30)
            .map(|i| i as f64 * 0.1 + if i == 10 { 0.05 } else { 0.0 })
            .collect();
        let s = TimeSeries::new(t, vec![0.0; 30]).unwrap();
        assert!(wavelet_denoise(&s, 0.1, &WaveletSpec::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn round_trip_reconstructs(n in 24usize..400, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            let levels = levels_for(n, 4);
            let c = wavedec(&x, levels).unwrap();
            let r = waverec(&c, n).unwrap();
            let err = x.iter().zip(&r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(err <= 1e-9, "max error {err}");
        }
    }
}
