//! Degenerate U-statistics of order two: the martingale decomposition,
//! the Berry–Esseen bound and Monte Carlo normality experiments.
//!
//! `U_n = Σ_{i<j} H(Y_i, Y_j)` with `E[H(Y₁, Y₂) | Y₁] = 0`. The increments
//! `Z_i = v_n^{-1} Σ_{j<i} H(Y_i, Y_j)` form a martingale difference
//! sequence with `Σ Z_i = U_n / v_n`.

use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::erf::erfc;
use std::f64::consts::{PI, SQRT_2};

use crate::error::{check_positive, Error, Result};
use crate::fourier::{CharFn, QuadratureSpec};
use crate::kernels::kernel_poly;
use crate::model::{DensitySpec, NoiseSpec};
use crate::quadstat::quad_stat;
use crate::rng::{derive_seed, replicate_rng};

/// Symmetric function of two observations.
pub trait PairFunction: Sync {
    fn eval(&self, x: f64, y: f64) -> f64;
}

impl<F> PairFunction for F
where
    F: Fn(f64, f64) -> f64 + Sync,
{
    fn eval(&self, x: f64, y: f64) -> f64 {
        self(x, y)
    }
}

/// Compensated (Neumaier) running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `Σ_{i<j} H(Y_i, Y_j)` by direct double summation.
pub fn ustat_direct<H: PairFunction + ?Sized>(sample: &[f64], h: &H) -> f64 {
    let mut acc = Neumaier::default();
    for (i, &yi) in sample.iter().enumerate() {
        for &yj in &sample[..i] {
            acc.add(h.eval(yi, yj));
        }
    }
    acc.value()
}

/// Martingale decomposition of one sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decomposition {
    pub u_n: f64,
    /// `Z_2, …, Z_n`.
    pub z: Vec<f64>,
    pub v_n2: f64,
    /// `V_n² = Σ E(Z_i² | F_{i-1})`, conditional expectations by inner Monte Carlo.
    pub cond_var: f64,
    /// `Σ E(|Z_i|^{2+2δ} | F_{i-1})`; unbiased for `Σ E|Z_i|^{2+2δ}`.
    pub moment_sum: f64,
    /// `|V_n² - 1|^{1+δ}` for this sample.
    pub variance_gap: f64,
    /// `moment_sum + variance_gap`, the single-sample plug-in for `L_n`.
    pub l_n: f64,
    pub delta: f64,
    /// `|v_n Σ Z_i - U_n|` relative to the scale of the summands.
    pub identity_residue: f64,
}

/// Relative tolerance of the identity `v_n Σ Z_i = U_n`.
pub const IDENTITY_TOLERANCE: f64 = 1e-12;

/// Decomposes `U_n` into martingale increments.
///
/// `fresh` holds independent draws from the distribution of `Y`; each
/// conditional expectation `E(g(Y_i) | F_{i-1})` is their average.
pub fn ustat_decompose<H: PairFunction + ?Sized>(sample: &[f64], h: &H, v_n: f64, delta: f64, fresh: &[f64]) -> Result<Decomposition> {
    check_positive("v_n", v_n)?;
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::param("delta", format!("must lie in (0, 1], got {delta}")));
    }
    let n = sample.len();
    if n < 2 {
        return Err(Error::param("sample", format!("need n >= 2, got {n}")));
    }
    if fresh.is_empty() {
        return Err(Error::param("fresh", "need at least one inner draw"));
    }
    let mut z = Vec::with_capacity(n - 1);
    let mut total = Neumaier::default();
    let mut scale = 0.0;
    for i in 1..n {
        let mut row = Neumaier::default();
        for j in 0..i {
            let v = h.eval(sample[i], sample[j]);
            row.add(v);
            scale += v.abs();
        }
        let zi = row.value() / v_n;
        z.push(zi);
        total.add(zi);
    }
    let u_n = ustat_direct(sample, h);
    let residue = (v_n * total.value() - u_n).abs() / scale.max(u_n.abs()).max(f64::MIN_POSITIVE);
    if residue > IDENTITY_TOLERANCE {
        return Err(Error::Quadrature(format!("martingale identity violated: relative residue {residue:e}")));
    }
    let p = 2.0 + 2.0 * delta;
    let mut sq = vec![0.0; n - 1];
    let mut pw = vec![0.0; n - 1];
    for &y in fresh {
        let mut prefix = 0.0;
        for i in 1..n {
            prefix += h.eval(y, sample[i - 1]);
            sq[i - 1] += prefix * prefix;
            pw[i - 1] += prefix.abs().powf(p);
        }
    }
    let m = fresh.len() as f64;
    let v_n2 = v_n * v_n;
    let cond_var = sq.iter().sum::<f64>() / (m * v_n2);
    let moment_sum = pw.iter().sum::<f64>() / (m * v_n.powf(p));
    let variance_gap = (cond_var - 1.0).abs().powf(1.0 + delta);
    Ok(Decomposition {
        u_n,
        z,
        v_n2,
        cond_var,
        moment_sum,
        variance_gap,
        l_n: moment_sum + variance_gap,
        delta,
        identity_residue: residue,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BerryEsseenBound {
    /// `16 ε^{1/2} exp(-x²/(4v_n²))`.
    pub gaussian_term: f64,
    /// `C ε^{-(1+δ)} L_n`.
    pub moment_term: f64,
    pub total: f64,
    /// The unspecified constant `C`, 1 unless configured.
    pub c_const: f64,
}

/// `16 ε^{1/2} exp(-x²/(4v_n²)) + C ε^{-(1+δ)} L_n`.
pub fn berry_esseen_bound(l_n: f64, eps: f64, x: f64, v_n: f64, delta: f64, c_const: f64) -> Result<BerryEsseenBound> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::param("eps", format!("must lie in (0, 1/2), got {eps}")));
    }
    check_positive("v_n", v_n)?;
    if !(l_n >= 0.0) || !(delta > 0.0 && delta <= 1.0) || !(c_const > 0.0) {
        return Err(Error::param("l_n/delta/C", "need L_n >= 0, delta in (0, 1], C > 0"));
    }
    let gaussian_term = 16.0 * eps.sqrt() * (-x * x / (4.0 * v_n * v_n)).exp();
    let moment_term = c_const / eps.powf(1.0 + delta) * l_n;
    Ok(BerryEsseenBound {
        gaussian_term,
        moment_term,
        total: gaussian_term + moment_term,
        c_const,
    })
}

/// A data-generating distribution together with a degenerate pair
/// function that may depend on `n`.
pub trait UStatDesign: Sync {
    type Pair: PairFunction;

    fn pair(&self, n: usize) -> Result<Self::Pair>;

    fn draw(&self, rng: &mut dyn RngCore) -> f64;

    /// `U_n` for a sample; direct double summation unless overridden.
    fn ustat(&self, sample: &[f64]) -> Result<f64> {
        Ok(ustat_direct(sample, &self.pair(sample.len())?))
    }

    fn name(&self) -> String;
}

/// `H(x, y) = xy` with standard normal data: a fixed kernel whose
/// normalized U-statistic converges to `(χ²₁ - 1)/√2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProductDesign;

impl UStatDesign for ProductDesign {
    type Pair = fn(f64, f64) -> f64;

    fn pair(&self, _n: usize) -> Result<Self::Pair> {
        Ok(|x, y| x * y)
    }

    fn draw(&self, rng: &mut dyn RngCore) -> f64 {
        use rand_distr::{Distribution, StandardNormal};
        StandardNormal.sample(rng)
    }

    fn ustat(&self, sample: &[f64]) -> Result<f64> {
        let (mut s, mut s2) = (Neumaier::default(), Neumaier::default());
        for &y in sample {
            s.add(y);
            s2.add(y * y);
        }
        Ok((s.value() * s.value() - s2.value()) / 2.0)
    }

    fn name(&self) -> String {
        "product".into()
    }
}

/// `∫_0^c p(u) cos(uz) du` for a polynomial `p` (coefficients low to high).
fn poly_cos_integral(coef: &[f64], c: f64, z: f64) -> f64 {
    if (c * z).abs() < 2.0 {
        // Power series in z; terms decay like (cz)^{2m}/(2m)!.
        let mut sum = 0.0;
        let mut fact = 1.0;
        for m in 0..40 {
            if m > 0 {
                fact *= ((2 * m - 1) * (2 * m)) as f64;
            }
            let zpow = z.powi(2 * m as i32) / fact;
            let inner: f64 = coef
                .iter()
                .enumerate()
                .map(|(k, a)| a * c.powi((k + 2 * m + 1) as i32) / (k + 2 * m + 1) as f64)
                .sum();
            let t = if m % 2 == 0 { zpow * inner } else { -zpow * inner };
            sum += t;
            if t.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        return sum;
    }
    // Repeated integration by parts:
    // F(u) = Σ_k (-1)^k [p^{(2k)} sin(uz)/z^{2k+1} + p^{(2k+1)} cos(uz)/z^{2k+2}].
    let eval = |d: &[f64], u: f64| d.iter().rev().fold(0.0, |acc, a| acc * u + a);
    let deriv = |d: &[f64]| -> Vec<f64> { d.iter().enumerate().skip(1).map(|(k, a)| a * k as f64).collect() };
    let (s, co) = (c * z).sin_cos();
    let mut d = coef.to_vec();
    let mut total = 0.0;
    let mut k = 0;
    while !d.is_empty() {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * eval(&d, c) * s / z.powi(2 * k as i32 + 1);
        d = deriv(&d);
        if d.is_empty() {
            break;
        }
        total += sign * (eval(&d, c) * co - eval(&d, 0.0)) / z.powi(2 * k as i32 + 2);
        d = deriv(&d);
        k += 1;
    }
    total
}

/// Pair function of the deconvolution kernel statistic (see [`KernelDesign`]).
#[derive(Debug, Clone, Copy)]
pub struct KernelPair {
    pub cutoff: f64,
    constant: f64,
}

impl KernelPair {
    fn new(cutoff: f64) -> Self {
        let c = cutoff;
        let constant = (c / (2.0 * (1.0 + c * c)) + c.atan() / 2.0) / PI;
        KernelPair { cutoff, constant }
    }

    fn centered_kernel(&self, x: f64) -> f64 {
        if x == 0.0 {
            self.cutoff / PI
        } else {
            (self.cutoff * x).sin() / (PI * x)
        }
    }
}

impl PairFunction for KernelPair {
    fn eval(&self, x: f64, y: f64) -> f64 {
        let a = poly_cos_integral(&[1.0, 0.0, 2.0, 0.0, 1.0], self.cutoff, x - y) / PI;
        a - self.centered_kernel(x) - self.centered_kernel(y) + self.constant
    }
}

/// The goodness-of-fit statistic's pair function under `H₀`, with
/// `f₀ = Laplace(1)`, Laplace noise (`σ = 2`, `γ = 1`) and the sinc kernel:
/// `H(x, y) = (1/2π) ∫_{|u|≤1/h} (K(u)e^{iux} - Φ₀(u)) conj(K(u)e^{iuy} - Φ₀(u)) du`
/// with `K(u) = 1 + u²`, `Φ₀(u) = 1/(1 + u²)`. It is exactly degenerate.
///
/// The bandwidth shrinks as `h_n = h_ref (n_ref/n)^rate`. The number of
/// effective frequencies grows like `1/h_n`, and with it the closeness of
/// `U_n` to a normal law.
#[derive(Debug, Clone)]
pub struct KernelDesign {
    pub h_ref: f64,
    pub n_ref: f64,
    pub rate: f64,
    /// Largest frequency step of the Fourier-domain evaluation.
    pub max_step: f64,
    f0: DensitySpec,
    noise: NoiseSpec,
}

impl Default for KernelDesign {
    fn default() -> Self {
        KernelDesign {
            h_ref: 0.6,
            n_ref: 200.0,
            rate: 1.5,
            max_step: 0.05,
            f0: DensitySpec::laplace(1.0).expect("valid"),
            noise: NoiseSpec::polynomial(2.0, 1.0).expect("valid"),
        }
    }
}

impl KernelDesign {
    pub fn new(h_ref: f64, n_ref: f64, rate: f64, max_step: f64) -> Result<Self> {
        check_positive("h_ref", h_ref)?;
        check_positive("n_ref", n_ref)?;
        check_positive("rate", rate)?;
        check_positive("max_step", max_step)?;
        Ok(KernelDesign {
            h_ref,
            n_ref,
            rate,
            max_step,
            ..Default::default()
        })
    }

    pub fn bandwidth(&self, n: usize) -> f64 {
        self.h_ref * (self.n_ref / n as f64).powf(self.rate)
    }

    /// Trapezoid grid with step at most `max_step` on `[-1/h_n, 1/h_n]`.
    pub fn quadrature(&self, n: usize) -> QuadratureSpec {
        let c = 1.0 / self.bandwidth(n);
        let half = (c / self.max_step).ceil().max(128.0) as usize;
        QuadratureSpec {
            u_max: 50.0f64.max(2.0 * c),
            m_points: 2 * half,
        }
    }
}

impl UStatDesign for KernelDesign {
    type Pair = KernelPair;

    fn pair(&self, n: usize) -> Result<KernelPair> {
        Ok(KernelPair::new(1.0 / self.bandwidth(n)))
    }

    fn draw(&self, rng: &mut dyn RngCore) -> f64 {
        self.f0.draw(rng) + self.noise.draw(rng)
    }

    /// Through the Fourier-domain statistic: `U_n = (n(n-1)/2)(T - tail)`.
    fn ustat(&self, sample: &[f64]) -> Result<f64> {
        let n = sample.len();
        let k = kernel_poly(self.bandwidth(n), &self.noise)?;
        let r = quad_stat(sample, &k, Some(&self.f0 as &dyn CharFn), &self.quadrature(n))?;
        let nf = n as f64;
        Ok((r.value - r.tail) * nf * (nf - 1.0) / 2.0)
    }

    fn name(&self) -> String {
        format!("kernel(h_n = {} ({}/n)^{})", self.h_ref, self.n_ref, self.rate)
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Kolmogorov–Smirnov distance between the empirical law of `values` and
/// the standard normal.
pub fn ks_to_normal(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = std_normal_cdf(x);
            (f - i as f64 / m).max((i + 1) as f64 / m - f)
        })
        .fold(0.0, f64::max)
}

/// One row of the normality experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsRow {
    pub n: usize,
    pub reps: usize,
    pub ks: f64,
    /// Replicate mean and standard deviation of `U_n`.
    pub mean: f64,
    pub sd: f64,
}

pub const MIN_KS_REPS: usize = 1000;

/// For every `n`, simulates `reps` values of `U_n`, standardizes by the
/// replicate standard deviation and reports the KS distance to `N(0, 1)`.
/// Replicate `r` at size `n` uses stream `r` of `derive_seed(seed, n)`.
pub fn cdf_discrepancy_experiment<D: UStatDesign>(design: &D, n_list: &[usize], reps: usize, seed: u64) -> Result<Vec<KsRow>> {
    if reps < MIN_KS_REPS {
        return Err(Error::param("reps", format!("need at least {MIN_KS_REPS} replications, got {reps}")));
    }
    n_list
        .iter()
        .map(|&n| {
            let values = ustat_replicates(design, n, reps, derive_seed(seed, n as u64))?;
            let mean = values.iter().sum::<f64>() / reps as f64;
            let sd = (values.iter().map(|v| v * v).sum::<f64>() / reps as f64 - mean * mean).max(0.0).sqrt();
            let standardized: Vec<f64> = values.iter().map(|v| v / sd).collect();
            Ok(KsRow {
                n,
                reps,
                ks: ks_to_normal(&standardized),
                mean,
                sd,
            })
        })
        .collect()
}

/// `reps` independent values of `U_n`; replicate `r` uses stream `r` of `seed`.
pub fn ustat_replicates<D: UStatDesign>(design: &D, n: usize, reps: usize, seed: u64) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::param("n", format!("need n >= 2, got {n}")));
    }
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(seed, r as u64);
            let y: Vec<f64> = (0..n).map(|_| design.draw(&mut rng)).collect();
            design.ustat(&y)
        })
        .collect()
}

/// `E H(Y₁, Y₂)²` from `pairs` independent pairs, with its standard error.
pub fn pair_second_moment<D: UStatDesign>(design: &D, n: usize, pairs: usize, seed: u64) -> Result<(f64, f64)> {
    let h = design.pair(n)?;
    let chunk = 4096;
    let chunks = pairs.div_ceil(chunk);
    let parts: Vec<(f64, f64, usize)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = replicate_rng(seed, c as u64);
            let count = chunk.min(pairs - c * chunk);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let (a, b) = (design.draw(&mut rng), design.draw(&mut rng));
                let v = h.eval(a, b);
                s += v * v;
                s2 += v.powi(4);
            }
            (s, s2, count)
        })
        .collect();
    let m = parts.iter().map(|p| p.2).sum::<usize>() as f64;
    let mean = parts.iter().map(|p| p.0).sum::<f64>() / m;
    let var = parts.iter().map(|p| p.1).sum::<f64>() / m - mean * mean;
    Ok((mean, (var.max(0.0) / m).sqrt()))
}
