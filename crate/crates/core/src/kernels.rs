//! Deconvolution kernels in the Fourier domain, and the closed-form
//! bandwidths, thresholds and testing rates that drive the procedures.
//!
//! Every formula involving `log log n` needs `n ≥ 16` so that the double
//! logarithm is positive. Each formula reports its own floor.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

use crate::error::{check_positive, Error, Result};
use crate::fourier::CharFn;
use crate::model::{check_stable_index, NoiseSpec};

/// Largest `x` with `exp(x)` finite.
const LN_MAX: f64 = 709.782712893384;

/// How a kernel was built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "recipe", rename_all = "snake_case")]
pub enum KernelRecipe {
    /// `1/Φ^g(u)` for polynomial noise.
    Polynomial { sigma: f64, gamma: f64 },
    /// `exp(|u|^s)`, the inverse of stable noise with index `s`.
    Stable { s: f64 },
}

/// Characteristic function of a deconvolution kernel at bandwidth `h`,
/// written at the frequency of the data: it equals the inverse noise
/// characteristic function on `|u| ≤ 1/h` and vanishes outside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelCF {
    pub h: f64,
    pub cutoff: f64,
    pub recipe: KernelRecipe,
}

impl KernelCF {
    /// Real-valued CF (all supported noises are symmetric).
    #[inline]
    pub fn value(&self, u: f64) -> f64 {
        if u.abs() > self.cutoff {
            return 0.0;
        }
        match self.recipe {
            KernelRecipe::Polynomial { sigma, gamma } => (1.0 + gamma * gamma * u * u).powf(sigma / 2.0),
            KernelRecipe::Stable { s } => u.abs().powf(s).exp(),
        }
    }
}

impl CharFn for KernelCF {
    fn cf(&self, u: f64) -> Complex64 {
        Complex64::new(self.value(u), 0.0)
    }
}

/// Kernel for polynomial noise: `1/Φ^g(u)` on `|u| ≤ 1/h`.
pub fn kernel_poly(h: f64, g: &NoiseSpec) -> Result<KernelCF> {
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::param("h", format!("bandwidth must lie in (0, 1), got {h}")));
    }
    let NoiseSpec::Polynomial { sigma, gamma } = *g else {
        return Err(Error::param("g", "kernel_poly needs polynomial noise"));
    };
    g.validate()?;
    let cutoff = 1.0 / h;
    let k = KernelCF {
        h,
        cutoff,
        recipe: KernelRecipe::Polynomial { sigma, gamma },
    };
    if !k.value(cutoff).is_finite() {
        // (1+γ²c²)^{σ/2} ≤ e^{LN_MAX}
        let max_cutoff = ((2.0 * LN_MAX / sigma).exp() - 1.0).sqrt() / gamma;
        return Err(Error::KernelOverflow { cutoff, max_cutoff });
    }
    Ok(k)
}

/// Kernel for stable noise with index `s_hat`: `exp(|u|^ŝ)` on `|u| ≤ 1/h`.
pub fn kernel_stable(h: f64, s_hat: f64) -> Result<KernelCF> {
    check_positive("h", h)?;
    check_stable_index(s_hat)?;
    let cutoff = 1.0 / h;
    let max_cutoff = LN_MAX.powf(1.0 / s_hat);
    if cutoff.powf(s_hat) > LN_MAX {
        return Err(Error::KernelOverflow { cutoff, max_cutoff });
    }
    Ok(KernelCF {
        h,
        cutoff,
        recipe: KernelRecipe::Stable { s: s_hat },
    })
}

/// Smoothness parameters attached to a grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tau {
    pub alpha: f64,
    pub r: f64,
    pub beta: f64,
}

/// One point of an adaptive grid: bandwidth and squared threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub tau: Tau,
    pub h: f64,
    pub t2: f64,
}

/// `log log n`, defined for `n ≥ 16`.
pub(crate) fn log_log(n: usize, what: &'static str) -> Result<f64> {
    if n < 16 {
        return Err(Error::NTooSmall {
            what,
            n: n as f64,
            min_n: Some(16.0),
        });
    }
    Ok((n as f64).ln().ln())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 1.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::param("sigma", format!("must exceed 1, got {sigma}")))
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta >= 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::param("beta", format!("must be nonnegative, got {beta}")))
    }
}

/// Sobolev grid point: with `m = n/√(log log n)`,
/// `h = m^{-2/(4β+4σ+1)}` and `t² = m^{-4β/(4β+4σ+1)} = h^{2β}`.
pub fn bandwidth_threshold_thm1(n: usize, beta: f64, sigma: f64) -> Result<(f64, f64)> {
    check_beta(beta)?;
    check_sigma(sigma)?;
    let lln = log_log(n, "the Sobolev bandwidth")?;
    let ln_m = (n as f64).ln() - 0.5 * lln.ln();
    let d = 4.0 * beta + 4.0 * sigma + 1.0;
    Ok(((-2.0 / d * ln_m).exp(), (-4.0 * beta / d * ln_m).exp()))
}

/// Last point of the Sobolev grid: `h = n^{-2/(4β̄+4σ+1)}`, `t² = n^{-4β̄/(4β̄+4σ+1)}`.
pub fn bandwidth_threshold_thm1_final(n: usize, beta_bar: f64, sigma: f64) -> Result<(f64, f64)> {
    check_beta(beta_bar)?;
    check_sigma(sigma)?;
    log_log(n, "the Sobolev bandwidth")?;
    let ln_n = (n as f64).ln();
    let d = 4.0 * beta_bar + 4.0 * sigma + 1.0;
    Ok(((-2.0 / d * ln_n).exp(), (-4.0 * beta_bar / d * ln_n).exp()))
}

/// Supersmooth grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupersmoothPoint {
    pub h: f64,
    pub t2: f64,
    /// `log log log n < 1` was raised to 1 inside the square root.
    pub clamped: bool,
}

/// Largest admissible constant `c` for the supersmooth bandwidth.
pub fn supersmooth_c_max(alpha_lo: f64, r_lo: f64) -> f64 {
    alpha_lo * (-1.0 / r_lo).exp()
}

/// Default `c = 0.9 α̲ exp(-1/r̲)`.
pub fn supersmooth_c_default(alpha_lo: f64, r_lo: f64) -> f64 {
    0.9 * supersmooth_c_max(alpha_lo, r_lo)
}

/// `h = (log n / 2c)^{-1/r}`, `t² = (log n)^{(4σ+1)/(2r)} √(log log log n) / n`.
///
/// For `n` below about `3.8·10⁶` the triple logarithm is below one; it is
/// then clamped to one and the result flagged.
pub fn bandwidth_threshold_thm2_supersmooth(
    n: usize,
    r: f64,
    sigma: f64,
    c: f64,
    alpha_lo: f64,
    r_lo: f64,
) -> Result<SupersmoothPoint> {
    check_sigma(sigma)?;
    check_positive("alpha_lo", alpha_lo)?;
    check_positive("r_lo", r_lo)?;
    if !(r > 0.0 && r <= 2.0) {
        return Err(Error::param("r", format!("must lie in (0, 2], got {r}")));
    }
    let c_max = supersmooth_c_max(alpha_lo, r_lo);
    if !(c > 0.0 && c < c_max) {
        return Err(Error::param("c", format!("must lie in (0, {c_max}), got {c}")));
    }
    let lln = log_log(n, "the supersmooth bandwidth")?;
    let ln_n = (n as f64).ln();
    let h = (ln_n / (2.0 * c)).powf(-1.0 / r);
    if !(h < 1.0) {
        return Err(Error::NTooSmall {
            what: "the supersmooth bandwidth (h < 1 needs log n > 2c)",
            n: n as f64,
            min_n: Some((2.0 * c).exp().ceil().max(16.0)),
        });
    }
    let lll = lln.ln();
    let clamped = lll < 1.0;
    let t2 = ((4.0 * sigma + 1.0) / (2.0 * r) * ln_n.ln() - ln_n).exp() * lll.max(1.0).sqrt();
    Ok(SupersmoothPoint { h, t2, clamped })
}

/// Which bandwidth the stable-noise plug-in procedures use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthVariant {
    /// Density and quadratic-functional estimation.
    Estimation,
    /// The goodness-of-fit test.
    Test,
}

fn semiparam_bracket(n: f64, s: f64, beta_bar: f64, variant: BandwidthVariant) -> f64 {
    let ln_n = n.ln();
    let coef = match variant {
        BandwidthVariant::Estimation => (beta_bar - s + 0.5) / s,
        BandwidthVariant::Test => 2.0 * beta_bar / s,
    };
    ln_n / 2.0 - coef * ln_n.ln()
}

/// Smallest `n` (≥ 16) with `bracket(m) > 0` for all `m ≥ n`, found by
/// doubling then bisection. Assumes the bracket is eventually increasing.
pub(crate) fn min_admissible_n(bracket: impl Fn(f64) -> f64) -> f64 {
    let mut lo = 16.0f64;
    if bracket(lo) > 0.0 {
        return lo;
    }
    let mut hi = 32.0f64;
    while bracket(hi) <= 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return f64::INFINITY;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if bracket(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-6 * hi {
            break;
        }
    }
    hi.ceil()
}

/// Plug-in bandwidth for stable noise:
/// `h = (log n/2 - (β̄ - ŝ + 1/2)/ŝ · log log n)^{-1/ŝ}` (estimation) or
/// `h = (log n/2 - (2β̄/ŝ) log log n)^{-1/ŝ}` (test).
pub fn bandwidth_semiparam(n: usize, s_hat: f64, beta_bar: f64, variant: BandwidthVariant) -> Result<f64> {
    check_stable_index(s_hat)?;
    check_positive("beta_bar", beta_bar)?;
    log_log(n, "the plug-in bandwidth")?;
    let b = semiparam_bracket(n as f64, s_hat, beta_bar, variant);
    if !(b > 0.0) {
        return Err(Error::NTooSmall {
            what: "the plug-in bandwidth (bracket must be positive)",
            n: n as f64,
            min_n: Some(min_admissible_n(|m| semiparam_bracket(m, s_hat, beta_bar, variant))),
        });
    }
    Ok(b.powf(-1.0 / s_hat))
}

/// Random threshold of the stable-noise test: `t̂² = (log n/2)^{-2β̄/ŝ}`.
pub fn threshold_semiparam(n: usize, s_hat: f64, beta_bar: f64) -> Result<f64> {
    check_stable_index(s_hat)?;
    check_positive("beta_bar", beta_bar)?;
    log_log(n, "the plug-in threshold")?;
    Ok(((n as f64).ln() / 2.0).powf(-2.0 * beta_bar / s_hat))
}

/// Testing-rate regimes, each with the parameters its formula reads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum RateRegime {
    /// `(n/√(log log n))^{-2β/(4β+4σ+1)}`.
    Thm1Sobolev { beta: f64, sigma: f64 },
    /// `n^{-2β̄/(4β̄+4σ+1)}`, whatever the alternative's `(α, r)`.
    Thm1Supersmooth { beta_bar: f64, sigma: f64 },
    /// Same formula as [`RateRegime::Thm1Sobolev`].
    Thm2Sobolev { beta: f64, sigma: f64 },
    /// `(log n)^{(4σ+1)/(4r)} n^{-1/2} (log log log n)^{1/4}`, triple log clamped at 1.
    Thm2Supersmooth { r: f64, sigma: f64 },
    /// `(log n/2)^{-β/s}`.
    Cor3 { beta: f64, s: f64 },
}

impl FromStr for RateRegime {
    type Err = Error;

    /// Parses `name:key=value,key=value`, e.g. `cor3:beta=1,s=1`.
    fn from_str(text: &str) -> Result<Self> {
        let (name, args) = text.split_once(':').unwrap_or((text, ""));
        let mut get = std::collections::HashMap::new();
        for kv in args.split(',').filter(|s| !s.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::param("regime", format!("malformed argument `{kv}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::param("regime", format!("bad number in `{kv}`")))?;
            get.insert(k.trim().to_string(), v);
        }
        let arg = |k: &str| {
            get.get(k)
                .copied()
                .ok_or_else(|| Error::param("regime", format!("`{name}` needs `{k}`")))
        };
        Ok(match name.trim() {
            "thm1_sobolev" => RateRegime::Thm1Sobolev { beta: arg("beta")?, sigma: arg("sigma")? },
            "thm1_supersmooth" => RateRegime::Thm1Supersmooth { beta_bar: arg("beta_bar")?, sigma: arg("sigma")? },
            "thm2_sobolev" => RateRegime::Thm2Sobolev { beta: arg("beta")?, sigma: arg("sigma")? },
            "thm2_supersmooth" => RateRegime::Thm2Supersmooth { r: arg("r")?, sigma: arg("sigma")? },
            "cor3" => RateRegime::Cor3 { beta: arg("beta")?, s: arg("s")? },
            other => return Err(Error::param("regime", format!("unknown regime `{other}`"))),
        })
    }
}

/// Separation rate `ψ_n` for the chosen regime.
pub fn testing_rate(regime: RateRegime, n: usize) -> Result<f64> {
    let lln = log_log(n, "the testing rate")?;
    let ln_n = (n as f64).ln();
    Ok(match regime {
        RateRegime::Thm1Sobolev { beta, sigma } | RateRegime::Thm2Sobolev { beta, sigma } => {
            check_beta(beta)?;
            check_sigma(sigma)?;
            let d = 4.0 * beta + 4.0 * sigma + 1.0;
            (-2.0 * beta / d * (ln_n - 0.5 * lln.ln())).exp()
        }
        RateRegime::Thm1Supersmooth { beta_bar, sigma } => {
            check_beta(beta_bar)?;
            check_sigma(sigma)?;
            let d = 4.0 * beta_bar + 4.0 * sigma + 1.0;
            (-2.0 * beta_bar / d * ln_n).exp()
        }
        RateRegime::Thm2Supersmooth { r, sigma } => {
            check_positive("r", r)?;
            check_sigma(sigma)?;
            let lll = lln.ln().max(1.0);
            ((4.0 * sigma + 1.0) / (4.0 * r) * ln_n.ln() - 0.5 * ln_n).exp() * lll.powf(0.25)
        }
        RateRegime::Cor3 { beta, s } => {
            check_positive("beta", beta)?;
            check_stable_index(s)?;
            (ln_n / 2.0).powf(-beta / s)
        }
    })
}
