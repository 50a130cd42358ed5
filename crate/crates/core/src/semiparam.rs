//! Plug-in procedures under stable noise of unknown index: the
//! deconvolution density estimator and the estimator of `∫f²`.
//!
//! Each procedure has an `*_with_index` form that takes `s` directly. The
//! plug-in form estimates `ŝ` and then calls it, so on the event `ŝ = s̃`
//! the two agree bit for bit.

use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fourier::{phase_sums, QuadratureSpec};
use crate::kernels::{bandwidth_semiparam, kernel_stable, BandwidthVariant, KernelCF};
use crate::quadstat::{quad_stat, IMAG_TOLERANCE};
use crate::stable_index::{estimate_s, SIndexEstimate, StableIndexParams, StepRecipe};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PluginMode {
    DensityAt { x: f64 },
    QuadraticFunctional,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PluginEstimate {
    pub value: f64,
    /// Index the kernel was built from.
    pub s_hat: f64,
    pub h: f64,
    pub mode: PluginMode,
    /// Present for plug-in estimates, absent when `s` was supplied.
    pub estimate: Option<SIndexEstimate>,
}

/// `(1/2π) ∫_{|u|≤1/h} e^{-iux} Φ^K(u) φ̂(u) du` with `φ̂` the empirical
/// characteristic function, on the trapezoid grid of `quad.m_points`
/// intervals over `[-1/h, 1/h]`. Returns the real part and the relative size
/// of the imaginary part.
pub fn density_at_with_kernel(sample: &[f64], x: f64, kernel: &KernelCF, quad: &QuadratureSpec) -> Result<(f64, f64)> {
    if sample.is_empty() {
        return Err(Error::param("sample", "empty sample"));
    }
    if sample.iter().any(|v| !v.is_finite()) || !x.is_finite() {
        return Err(Error::param("sample", "observations and x must be finite"));
    }
    quad.validate()?;
    let mut shifted: Vec<f64> = sample.iter().map(|&y| y - x).collect();
    shifted.sort_by(f64::total_cmp);
    let c = kernel.cutoff;
    let m = quad.m_points;
    let du = 2.0 * c / m as f64;
    // Σ_j exp(-iu(Y_j - x)) is the conjugate of the phase sum.
    let e = phase_sums(&shifted, -c, du, m + 1);
    let mut acc = Complex64::new(0.0, 0.0);
    for (j, ej) in e.iter().enumerate() {
        let u = -c + j as f64 * du;
        let w = if j == 0 || j == m { 0.5 } else { 1.0 };
        acc += ej.conj() * (w * kernel.value(u));
    }
    let scale = du / (2.0 * PI * sample.len() as f64);
    let (re, im) = (acc.re * scale, acc.im * scale);
    if !re.is_finite() {
        return Err(Error::Quadrature(format!("density estimate overflowed (kernel cutoff {c})")));
    }
    let residue = im.abs() / re.abs().max(f64::MIN_POSITIVE);
    if im.abs() > IMAG_TOLERANCE * re.abs().max(1.0) {
        return Err(Error::Quadrature(format!("imaginary residue {im:e} of the density estimate")));
    }
    Ok((re, residue))
}

fn check_recipe(sip: &StableIndexParams, want: StepRecipe, what: &str) -> Result<f64> {
    if sip.recipe != want {
        return Err(Error::param("recipe", format!("{what} uses the {want:?} step, got {:?}", sip.recipe)));
    }
    sip.validate()?;
    Ok(sip.beta_bar.expect("validated"))
}

/// Density estimate at `x` with the index supplied.
pub fn density_at_with_index(sample: &[f64], x: f64, s: f64, beta_bar: f64, quad: &QuadratureSpec) -> Result<PluginEstimate> {
    if !(beta_bar > 0.5) {
        return Err(Error::param("beta_bar", format!("density estimation needs beta_bar > 1/2, got {beta_bar}")));
    }
    let h = bandwidth_semiparam(sample.len(), s, beta_bar, BandwidthVariant::Estimation)?;
    let kernel = kernel_stable(h, s)?;
    let (value, _) = density_at_with_kernel(sample, x, &kernel, quad)?;
    Ok(PluginEstimate {
        value,
        s_hat: s,
        h,
        mode: PluginMode::DensityAt { x },
        estimate: None,
    })
}

/// Plug-in density estimate `f̂_n(x)`; `sip` must use the Cor1 step.
pub fn estimate_density_at(sample: &[f64], x: f64, sip: &StableIndexParams, quad: &QuadratureSpec) -> Result<PluginEstimate> {
    let beta_bar = check_recipe(sip, StepRecipe::Cor1, "density estimation")?;
    let est = estimate_s(sample, sip)?;
    let mut out = density_at_with_index(sample, x, est.s_hat, beta_bar, quad)?;
    out.estimate = Some(est);
    Ok(out)
}

/// Estimate of `∫f²` with the index supplied.
pub fn quadratic_functional_with_index(sample: &[f64], s: f64, beta_bar: f64, quad: &QuadratureSpec) -> Result<PluginEstimate> {
    let h = bandwidth_semiparam(sample.len(), s, beta_bar, BandwidthVariant::Estimation)?;
    let kernel = kernel_stable(h, s)?;
    let value = quad_stat(sample, &kernel, None, quad)?.value;
    Ok(PluginEstimate {
        value,
        s_hat: s,
        h,
        mode: PluginMode::QuadraticFunctional,
        estimate: None,
    })
}

/// Plug-in estimate of `∫f²`; `sip` must use the Cor2 step.
pub fn estimate_quadratic_functional(sample: &[f64], sip: &StableIndexParams, quad: &QuadratureSpec) -> Result<PluginEstimate> {
    let beta_bar = check_recipe(sip, StepRecipe::Cor2, "the quadratic functional")?;
    let est = estimate_s(sample, sip)?;
    let mut out = quadratic_functional_with_index(sample, est.s_hat, beta_bar, quad)?;
    out.estimate = Some(est);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_convolution, DensitySpec, NoiseSpec};
    use crate::rng::replicate_rng;
    use approx::assert_relative_eq;

    /// `(1/π) ∫_0^c e^{u^s} du` by its power series.
    fn exp_power_integral(c: f64, s: f64) -> f64 {
        let (mut term_fact, mut sum) = (1.0, 0.0);
        for k in 0..200 {
            if k > 0 {
                term_fact /= k as f64;
            }
            let t = term_fact * c.powf(k as f64 * s + 1.0) / (k as f64 * s + 1.0);
            sum += t;
            if t < 1e-17 * sum {
                break;
            }
        }
        sum / PI
    }

    #[test]
    fn single_point_at_origin() {
        for (h, s) in [(0.5, 1.0), (0.3, 1.5), (0.8, 0.7)] {
            let k = kernel_stable(h, s).unwrap();
            let (v, res) = density_at_with_kernel(&[0.0], 0.0, &k, &QuadratureSpec::new(50.0, 1 << 14).unwrap()).unwrap();
            assert_relative_eq!(v, exp_power_integral(1.0 / h, s), max_relative = 1e-6);
            assert!(res < 1e-9);
        }
    }

    #[test]
    fn density_estimate_recovers_laplace() {
        let f = DensitySpec::laplace(1.0).unwrap();
        let g = NoiseSpec::stable(1.0).unwrap();
        let s = sample_convolution(&f, &g, 100_000, &mut replicate_rng(12, 0)).unwrap();
        let q = QuadratureSpec::default();
        let est = density_at_with_index(&s.y, 0.0, 1.0, 1.0, &q).unwrap();
        // True value 0.5; the sinc-kernel bias at this bandwidth is large.
        assert!(est.value > 0.3 && est.value < 0.6, "{}", est.value);
    }

    #[test]
    fn functional_is_permutation_invariant() {
        let f = DensitySpec::laplace(1.0).unwrap();
        let g = NoiseSpec::stable(1.0).unwrap();
        let mut y = sample_convolution(&f, &g, 2_000, &mut replicate_rng(13, 0)).unwrap().y;
        let q = QuadratureSpec::new(50.0, 1024).unwrap();
        let a = quadratic_functional_with_index(&y, 1.0, 1.0, &q).unwrap();
        y.reverse();
        let b = quadratic_functional_with_index(&y, 1.0, 1.0, &q).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
    }

    #[test]
    fn plug_in_matches_supplied_index() {
        let f = DensitySpec::sym_gamma(0.25, 1.0).unwrap();
        let g = NoiseSpec::stable(1.0).unwrap();
        let y = sample_convolution(&f, &g, 100_000, &mut replicate_rng(14, 0)).unwrap().y;
        let q = QuadratureSpec::new(50.0, 1024).unwrap();
        let a = 2f64.powf(-0.25);
        let sip1 = StableIndexParams::for_recipe(StepRecipe::Cor1, 1.0, 2.0, 0.5, a, 1.0).unwrap();
        let d = estimate_density_at(&y, 0.3, &sip1, &q).unwrap();
        let d0 = density_at_with_index(&y, 0.3, d.s_hat, 1.0, &q).unwrap();
        assert_eq!(d.value.to_bits(), d0.value.to_bits());
        let sip2 = StableIndexParams::for_recipe(StepRecipe::Cor2, 1.0, 2.0, 0.5, a, 1.0).unwrap();
        let t = estimate_quadratic_functional(&y, &sip2, &q).unwrap();
        let t0 = quadratic_functional_with_index(&y, t.s_hat, 1.0, &q).unwrap();
        assert_eq!(t.value.to_bits(), t0.value.to_bits());
        assert!(estimate_density_at(&y, 0.3, &sip2, &q).is_err());
    }
}
