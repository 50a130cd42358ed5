//! Quadratic-functional U-statistics
//!
//! `T = 2/(n(n-1)) Σ_{k<j} <K(· - Y_k) - f₀, K(· - Y_j) - f₀>`
//!
//! computed in the Fourier domain, where each inner product is
//! `(1/2π) ∫ g_k(u) conj(g_j(u)) du` with `g_k(u) = e^{iuY_k} Φ^K(u) - Φ₀(u)`.
//! Without `f₀` the same routine estimates `∫ f²`.
//!
//! The fast path uses `Σ_{k≠j} g_k conj(g_j) = |Σ g_k|² - Σ |g_k|²`, which
//! costs `O(n·M)`. The reference path sums the pairwise quadratures directly.
//! A third, independent route ([`quad_stat_xdomain_oracle`]) works in the
//! spatial domain.

use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fourier::{phase_sums, tail_energy, CharFn, QuadratureSpec};
use crate::kernels::KernelCF;
use crate::model::{DensitySpec, Family};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StatPath {
    Fast,
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadStatResult {
    pub value: f64,
    pub h: f64,
    pub n: usize,
    pub path: StatPath,
    /// `(1/2π) ∫_{|u|>1/h} |Φ₀|²`, already included in `value`.
    pub tail: f64,
    /// Relative size of the dropped imaginary part (reference path).
    pub imag_residue: f64,
}

/// Residue above which taking the real part would hide a quadrature problem.
pub const IMAG_TOLERANCE: f64 = 1e-9;

fn check_inputs(sample: &[f64], quad: &QuadratureSpec) -> Result<()> {
    if sample.len() < 2 {
        return Err(Error::param("sample", format!("need n >= 2, got {}", sample.len())));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("sample", "observations must be finite"));
    }
    quad.validate()
}

/// Energy of `f₀` beyond the kernel cutoff. Integrated up to
/// `max(quad.u_max, 2/h)`.
fn f0_tail(f0: Option<&dyn CharFn>, kernel: &KernelCF, quad: &QuadratureSpec) -> Result<f64> {
    match f0 {
        None => Ok(0.0),
        Some(f) => {
            let upper = quad.u_max.max(2.0 * kernel.cutoff);
            Ok(tail_energy(f, kernel.cutoff, &quad.with_u_max(upper))?.value)
        }
    }
}

/// The statistic by the fast path.
///
/// The `u`-grid covers `[-1/h, 1/h]` with `quad.m_points` intervals;
/// `quad.u_max` only bounds the `f₀` tail integral. The sample is sorted
/// first, so the value is bit-for-bit invariant under permutation.
pub fn quad_stat(sample: &[f64], kernel: &KernelCF, f0: Option<&dyn CharFn>, quad: &QuadratureSpec) -> Result<QuadStatResult> {
    check_inputs(sample, quad)?;
    let mut y = sample.to_vec();
    y.sort_by(f64::total_cmp);
    let n = y.len() as f64;
    let c = kernel.cutoff;
    let half = quad.m_points / 2;
    let du = c / half as f64;
    let e = phase_sums(&y, 0.0, du, half + 1);
    let mut acc = 0.0;
    for (j, ej) in e.iter().enumerate() {
        let u = j as f64 * du;
        let k = kernel.value(u);
        let p0 = f0.map_or(Complex64::new(0.0, 0.0), |f| f.cf(u));
        let s = ej * k - p0 * n;
        let diag = n * k * k + n * p0.norm_sqr() - 2.0 * k * (ej * p0.conj()).re;
        let w = if j == 0 || j == half { 0.5 } else { 1.0 };
        acc += w * (s.norm_sqr() - diag);
    }
    // Even integrand: the full-line trapezoid is twice the half-line one.
    let integral = acc * du / PI;
    let tail = f0_tail(f0, kernel, quad)?;
    let value = integral / (n * (n - 1.0)) + tail;
    if !value.is_finite() {
        return Err(Error::Quadrature(format!(
            "statistic overflowed (kernel cutoff {c}, n = {})",
            y.len()
        )));
    }
    Ok(QuadStatResult {
        value,
        h: kernel.h,
        n: y.len(),
        path: StatPath::Fast,
        tail,
        imag_residue: 0.0,
    })
}

/// The statistic by direct summation of every pairwise quadrature on the
/// full grid `[-1/h, 1/h]`. `O(n²·M)`.
pub fn quad_stat_reference(
    sample: &[f64],
    kernel: &KernelCF,
    f0: Option<&dyn CharFn>,
    quad: &QuadratureSpec,
) -> Result<QuadStatResult> {
    check_inputs(sample, quad)?;
    let n = sample.len();
    let c = kernel.cutoff;
    let m = quad.m_points;
    let du = 2.0 * c / m as f64;
    let nodes: Vec<(f64, f64)> = (0..=m)
        .map(|i| {
            let u = -c + i as f64 * du;
            (u, if i == 0 || i == m { 0.5 * du } else { du })
        })
        .collect();
    let g: Vec<Vec<Complex64>> = sample
        .iter()
        .map(|&yk| {
            nodes
                .iter()
                .map(|&(u, _)| {
                    let p0 = f0.map_or(Complex64::new(0.0, 0.0), |f| f.cf(u));
                    Complex64::from_polar(kernel.value(u), u * yk) - p0
                })
                .collect()
        })
        .collect();
    let (mut re_sum, mut im_abs, mut scale) = (0.0, 0.0, 0.0);
    for k in 0..n {
        for j in (k + 1)..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for (i, &(_, w)) in nodes.iter().enumerate() {
                acc += g[k][i] * g[j][i].conj() * w;
            }
            let ikj = acc / (2.0 * PI);
            re_sum += ikj.re;
            im_abs += ikj.im.abs();
            scale += ikj.norm();
        }
    }
    let imag_residue = if scale > 0.0 { im_abs / scale } else { 0.0 };
    if imag_residue > IMAG_TOLERANCE {
        return Err(Error::Quadrature(format!(
            "imaginary residue {imag_residue:e} exceeds {IMAG_TOLERANCE:e}"
        )));
    }
    let tail = f0_tail(f0, kernel, quad)?;
    let nf = n as f64;
    Ok(QuadStatResult {
        value: 2.0 * re_sum / (nf * (nf - 1.0)) + tail,
        h: kernel.h,
        n,
        path: StatPath::Reference,
        tail,
        imag_residue,
    })
}

/// Dispatch on the path.
pub fn quad_stat_with_path(
    sample: &[f64],
    kernel: &KernelCF,
    f0: Option<&dyn CharFn>,
    quad: &QuadratureSpec,
    path: StatPath,
) -> Result<QuadStatResult> {
    match path {
        StatPath::Fast => quad_stat(sample, kernel, f0, quad),
        StatPath::Reference => quad_stat_reference(sample, kernel, f0, quad),
    }
}

/// Spatial grid for [`quad_stat_xdomain_oracle`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct XGrid {
    /// Largest admissible spacing in `x`. The `f₀` terms are not
    /// band-limited; for a Gaussian `f₀` of standard deviation `σ` their
    /// trapezoid error is about `exp(-2π²σ²/dx²)`.
    pub max_step: f64,
    /// Smallest truncation half-width; three doublings follow.
    pub half_width: f64,
    /// Filon panels used to invert the kernel CF on `[0, 1/h]`.
    pub panels: usize,
}

impl Default for XGrid {
    fn default() -> Self {
        XGrid {
            max_step: 0.25,
            half_width: 60.0,
            panels: 256,
        }
    }
}

/// Largest sample the spatial oracle accepts.
pub const XDOMAIN_MAX_N: usize = 20;

/// The same statistic computed in the spatial domain.
///
/// `K(x) = (1/π) ∫_0^{1/h} Φ^K(u) cos(ux) du` is evaluated by Filon
/// quadrature (exact for kernels whose CF is a quadratic, e.g. Laplace noise
/// with σ = 2). The inner products are trapezoid sums in `x` with spacing a
/// divisor of `πh`; the `K` parts are band-limited, so the only error left
/// is the truncation at `±X`. That error is a power series in `1/X` when
/// `X` is a multiple of `πh`, and is removed by Richardson extrapolation
/// over `X, 2X, 4X, 8X`.
pub fn quad_stat_xdomain_oracle(sample: &[f64], kernel: &KernelCF, f0: &DensitySpec, xgrid: &XGrid) -> Result<f64> {
    let n = sample.len();
    if n > XDOMAIN_MAX_N {
        return Err(Error::OracleMisuse(format!(
            "spatial oracle is O(n²) per grid point; n = {n} exceeds {XDOMAIN_MAX_N}"
        )));
    }
    if n < 2 {
        return Err(Error::param("sample", format!("need n >= 2, got {n}")));
    }
    if matches!(f0.family, Family::PointMass) {
        return Err(Error::OracleMisuse("f0 has no density".into()));
    }
    if !(xgrid.max_step > 0.0 && xgrid.half_width > 0.0 && xgrid.panels >= 1) {
        return Err(Error::param("xgrid", "step, width and panel count must be positive"));
    }
    let c = kernel.cutoff;
    let period = PI / c;
    let q = (period / xgrid.max_step.min(period / 2.0)).ceil() as usize;
    let dx = period / q as f64;
    let l0 = (xgrid.half_width / period).ceil() as usize;
    let j_max = 8 * l0 * q;
    let filon = FilonInverse::new(kernel, xgrid.panels);

    // Running sums over |x_j| ≤ X for each level X = l0·2^l·period.
    let level_j: Vec<usize> = (0..4).map(|l| (l0 << l) * q).collect();
    let mut partial = [0.0f64; 4];
    for jj in 0..=j_max {
        for sign in [1.0, -1.0] {
            if jj == 0 && sign < 0.0 {
                continue;
            }
            let x = sign * jj as f64 * dx;
            let fx = f0.pdf(x);
            let (mut s, mut s2) = (0.0, 0.0);
            for &yk in sample {
                let v = filon.eval(x - yk) - fx;
                s += v;
                s2 += v * v;
            }
            let pair = s * s - s2;
            for (l, &jl) in level_j.iter().enumerate() {
                if jj < jl {
                    partial[l] += pair;
                } else if jj == jl {
                    partial[l] += 0.5 * pair;
                }
            }
        }
    }
    let nf = n as f64;
    let mut t: Vec<f64> = partial.iter().map(|p| p * dx / (nf * (nf - 1.0))).collect();
    for order in 1..4 {
        let f = (1u32 << order) as f64;
        t = t.windows(2).map(|w| (f * w[1] - w[0]) / (f - 1.0)).collect();
    }
    Ok(t[0])
}

/// Filon quadrature for `(1/π) ∫_0^c φ(u) cos(zu) du` with piecewise
/// quadratic interpolation of `φ` on equal panels.
struct FilonInverse {
    half_width: f64,
    centers: Vec<f64>,
    coef: Vec<[f64; 3]>,
}

impl FilonInverse {
    fn new(kernel: &KernelCF, panels: usize) -> Self {
        let c = kernel.cutoff;
        let w = c / (2.0 * panels as f64);
        let mut centers = Vec::with_capacity(panels);
        let mut coef = Vec::with_capacity(panels);
        for p in 0..panels {
            let m = (2 * p + 1) as f64 * w;
            // Interior evaluation at the right edge avoids the jump to zero.
            let (fa, fm, fb) = (kernel.value(m - w), kernel.value(m), kernel.value((m + w).min(c)));
            centers.push(m);
            coef.push([fm, (fb - fa) / (2.0 * w), (fa - 2.0 * fm + fb) / (2.0 * w * w)]);
        }
        FilonInverse {
            half_width: w,
            centers,
            coef,
        }
    }

    /// `(∫_{-w}^{w} e^{izt} dt, Im ∫ t e^{izt} dt, ∫ t² e^{izt} dt)`.
    fn moments(&self, z: f64) -> (f64, f64, f64) {
        let w = self.half_width;
        let th = z * w;
        if th.abs() < 0.1 {
            let t2 = th * th;
            let m0 = 2.0 * w * (1.0 - t2 / 6.0 * (1.0 - t2 / 20.0 * (1.0 - t2 / 42.0 * (1.0 - t2 / 72.0))));
            let m1 = 2.0
                * w
                * w
                * th
                * (1.0 / 3.0 - t2 / 30.0 + t2 * t2 / 840.0 - t2 * t2 * t2 / 45360.0 + t2.powi(4) / 3991680.0);
            let m2 = 2.0
                * w
                * w
                * w
                * (1.0 / 3.0 - t2 / 10.0 + t2 * t2 / 168.0 - t2 * t2 * t2 / 6480.0 + t2.powi(4) / 443520.0);
            (m0, m1, m2)
        } else {
            let (s, c) = th.sin_cos();
            (
                2.0 * s / z,
                2.0 * (s - th * c) / (z * z),
                2.0 * ((th * th - 2.0) * s + 2.0 * th * c) / (z * z * z),
            )
        }
    }

    fn eval(&self, z: f64) -> f64 {
        let (m0, m1, m2) = self.moments(z);
        let mut acc = 0.0;
        for (m, a) in self.centers.iter().zip(&self.coef) {
            let (s, c) = (z * m).sin_cos();
            acc += c * (a[0] * m0 + a[2] * m2) - s * a[1] * m1;
        }
        acc / PI
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::kernel_poly;
    use crate::model::{sample_convolution, NoiseSpec};
    use crate::rng::replicate_rng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn laplace_noise() -> NoiseSpec {
        NoiseSpec::polynomial(2.0, 1.0).unwrap()
    }

    #[test]
    fn filon_moments_agree_across_branches() {
        let k = kernel_poly(0.5, &laplace_noise()).unwrap();
        let f = FilonInverse::new(&k, 8);
        let w = f.half_width;
        for th in [0.0999999, 0.1000001] {
            let z = th / w;
            let (a, b, c) = f.moments(z);
            let (s, co) = th.sin_cos();
            assert_relative_eq!(a, 2.0 * s / z, max_relative = 1e-13);
            assert_relative_eq!(b, 2.0 * (s - th * co) / (z * z), max_relative = 1e-11);
            assert_relative_eq!(c, 2.0 * ((th * th - 2.0) * s + 2.0 * th * co) / (z * z * z), max_relative = 1e-9);
        }
    }

    #[test]
    fn filon_kernel_is_exact_for_quadratic_cf() {
        // Φ^K(u) = 1 + u² on [0, c]: K(x) = (1/π)[(1 + c²) sin(cx)/x + 2c cos(cx)/x² - 2 sin(cx)/x³].
        let k = kernel_poly(0.5, &laplace_noise()).unwrap();
        let f = FilonInverse::new(&k, 4);
        let c: f64 = 2.0;
        for x in [0.3f64, 1.7, -5.2, 40.0] {
            let (s, co) = (c * x).sin_cos();
            let exact = ((1.0 + c * c) * s / x + 2.0 * c * co / (x * x) - 2.0 * s / x.powi(3)) / PI;
            assert_relative_eq!(f.eval(x), exact, epsilon = 1e-12, max_relative = 1e-10);
        }
        assert_relative_eq!(f.eval(0.0), (c + c.powi(3) / 3.0) / PI, max_relative = 1e-14);
    }

    #[test]
    fn fast_equals_reference_n5() {
        let mut rng = replicate_rng(21, 0);
        let y: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let k = kernel_poly(0.4, &laplace_noise()).unwrap();
        let f0 = DensitySpec::gaussian(0.0, 1.0).unwrap();
        let q = QuadratureSpec::new(50.0, 2048).unwrap();
        let a = quad_stat(&y, &k, Some(&f0), &q).unwrap();
        let b = quad_stat_reference(&y, &k, Some(&f0), &q).unwrap();
        assert_relative_eq!(a.value, b.value, max_relative = 1e-9);
        assert!(b.imag_residue < IMAG_TOLERANCE);
    }

    #[test]
    fn xdomain_agrees_n5() {
        let mut rng = replicate_rng(22, 0);
        let y: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let k = kernel_poly(0.5, &laplace_noise()).unwrap();
        let f0 = DensitySpec::gaussian(0.0, 1.0).unwrap();
        let fast = quad_stat(&y, &k, Some(&f0), &QuadratureSpec::default()).unwrap().value;
        let oracle = quad_stat_xdomain_oracle(&y, &k, &f0, &XGrid::default()).unwrap();
        assert_relative_eq!(fast, oracle, max_relative = 1e-4);
    }

    #[test]
    fn xdomain_single_repeated_point() {
        let y = [0.7, 0.7];
        let k = kernel_poly(0.6, &laplace_noise()).unwrap();
        let f0 = DensitySpec::gaussian(0.2, 1.3).unwrap();
        let oracle = quad_stat_xdomain_oracle(&y, &k, &f0, &XGrid::default()).unwrap();
        let fast = quad_stat(&y, &k, Some(&f0), &QuadratureSpec::default()).unwrap().value;
        assert!(oracle >= 0.0);
        assert_relative_eq!(fast, oracle, max_relative = 1e-4);
    }

    #[test]
    fn xdomain_refuses_large_samples() {
        let y = vec![0.0; 21];
        let k = kernel_poly(0.5, &laplace_noise()).unwrap();
        let f0 = DensitySpec::gaussian(0.0, 1.0).unwrap();
        assert!(matches!(
            quad_stat_xdomain_oracle(&y, &k, &f0, &XGrid::default()),
            Err(Error::OracleMisuse(_))
        ));
    }

    #[test]
    fn rejects_tiny_samples() {
        let k = kernel_poly(0.5, &laplace_noise()).unwrap();
        assert!(quad_stat(&[1.0], &k, None, &QuadratureSpec::default()).is_err());
    }

    #[test]
    fn null_mean_is_tail_energy() {
        let f0 = DensitySpec::laplace(1.0).unwrap();
        let g = laplace_noise();
        let k = kernel_poly(0.5, &g).unwrap();
        let q = QuadratureSpec::new(50.0, 512).unwrap();
        let reps = 2000;
        let vals: Vec<f64> = (0..reps)
            .map(|i| {
                let s = sample_convolution(&f0, &g, 50, &mut replicate_rng(5, i)).unwrap();
                quad_stat(&s.y, &k, Some(&f0), &q).unwrap().value
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0);
        let se = (var / reps as f64).sqrt();
        let target = tail_energy(&f0, 2.0, &QuadratureSpec::default()).unwrap().value;
        assert!((mean - target).abs() < 3.0 * se, "{mean} vs {target} (se {se})");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn fast_matches_reference(
            y in proptest::collection::vec(-6.0f64..6.0, 2..=8),
            h in 0.2f64..0.9,
            sigma in 1.2f64..3.0,
            with_f0 in any::<bool>(),
        ) {
            let g = NoiseSpec::polynomial(sigma, 1.0).unwrap();
            let k = kernel_poly(h, &g).unwrap();
            let f0 = DensitySpec::gaussian(0.3, 1.1).unwrap();
            let f0: Option<&dyn CharFn> = if with_f0 { Some(&f0) } else { None };
            let q = QuadratureSpec::new(50.0, 512).unwrap();
            let a = quad_stat(&y, &k, f0, &q).unwrap().value;
            let b = quad_stat_reference(&y, &k, f0, &q).unwrap().value;
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(b.abs()), "{} vs {}", a, b);
        }

        #[test]
        fn permutation_invariant_bitwise(
            y in proptest::collection::vec(-20.0f64..20.0, 2..60),
            seed in any::<u64>(),
        ) {
            let k = kernel_poly(0.3, &laplace_noise()).unwrap();
            let f0 = DensitySpec::laplace(1.0).unwrap();
            let q = QuadratureSpec::new(50.0, 256).unwrap();
            let a = quad_stat(&y, &k, Some(&f0), &q).unwrap().value;
            let mut z = y.clone();
            let mut rng = replicate_rng(seed, 0);
            for i in (1..z.len()).rev() {
                let j = rng.random_range(0..=i);
                z.swap(i, j);
            }
            let b = quad_stat(&z, &k, Some(&f0), &q).unwrap().value;
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
