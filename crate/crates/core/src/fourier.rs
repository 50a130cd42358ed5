//! Empirical characteristic functions and the trapezoid engine behind every
//! Parseval inner product.
//!
//! Conventions: a characteristic function is `Φ(u) = E exp(iuX)`, the inner
//! product of two densities is `(1/2π) ∫ Φ_a(u) conj(Φ_b(u)) du`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{check_positive, Error, Result};

/// Anything with an evaluable characteristic function.
pub trait CharFn: Sync {
    fn cf(&self, u: f64) -> Complex64;

    /// Upper bound on `∫_{|u|>cutoff} |cf(u)|² du`, if a tail envelope is known.
    fn sq_tail_bound(&self, _cutoff: f64) -> Option<f64> {
        None
    }
}

impl<F> CharFn for F
where
    F: Fn(f64) -> Complex64 + Sync,
{
    fn cf(&self, u: f64) -> Complex64 {
        self(u)
    }
}

/// Uniform trapezoid grid on `[-u_max, u_max]` with `m_points` intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub u_max: f64,
    pub m_points: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            u_max: 50.0,
            m_points: 8192,
        }
    }
}

impl QuadratureSpec {
    pub fn new(u_max: f64, m_points: usize) -> Result<Self> {
        let q = QuadratureSpec { u_max, m_points };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("u_max", self.u_max)?;
        if self.m_points < 256 || self.m_points % 2 != 0 {
            return Err(Error::param(
                "m_points",
                format!("must be even and at least 256, got {}", self.m_points),
            ));
        }
        Ok(())
    }

    /// Same resolution, different range.
    pub fn with_u_max(&self, u_max: f64) -> Self {
        QuadratureSpec { u_max, ..*self }
    }

    pub fn step(&self) -> f64 {
        2.0 * self.u_max / self.m_points as f64
    }

    /// Nodes and trapezoid weights (step included).
    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let du = self.step();
        let m = self.m_points;
        (0..=m).map(move |j| {
            let u = -self.u_max + j as f64 * du;
            let w = if j == 0 || j == m { 0.5 * du } else { du };
            (u, w)
        })
    }
}

/// `(1/n) Σ_j exp(-iuY_j)`.
pub fn ecf(sample: &[f64], u: f64) -> Complex64 {
    if sample.is_empty() {
        return Complex64::new(1.0, 0.0);
    }
    let (mut re, mut im) = (0.0, 0.0);
    for &y in sample {
        let (s, c) = (u * y).sin_cos();
        re += c;
        im -= s;
    }
    let n = sample.len() as f64;
    Complex64::new(re / n, im / n)
}

/// `E_j = Σ_k exp(i u_j Y_k)` at `u_j = u0 + j·du`, `j = 0..count`.
///
/// Runs a per-observation complex recurrence, so the cost is one complex
/// multiply per (node, observation). Phases are re-anchored periodically to
/// keep rounding drift negligible.
pub fn phase_sums(y: &[f64], u0: f64, du: f64, count: usize) -> Vec<Complex64> {
    const LANES: usize = 8;
    const REANCHOR: usize = 256;
    let n = y.len();
    let mut zr = vec![0.0; n];
    let mut zi = vec![0.0; n];
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    for (k, &v) in y.iter().enumerate() {
        let (s, c) = (du * v).sin_cos();
        wr[k] = c;
        wi[k] = s;
    }
    let mut out = Vec::with_capacity(count);
    for j in 0..count {
        if j % REANCHOR == 0 {
            let u = u0 + j as f64 * du;
            for (k, &v) in y.iter().enumerate() {
                let (s, c) = (u * v).sin_cos();
                zr[k] = c;
                zi[k] = s;
            }
        }
        let mut acc_r = [0.0; LANES];
        let mut acc_i = [0.0; LANES];
        let split = n - n % LANES;
        for base in (0..split).step_by(LANES) {
            for l in 0..LANES {
                let k = base + l;
                let (a, b) = (zr[k], zi[k]);
                acc_r[l] += a;
                acc_i[l] += b;
                zr[k] = a * wr[k] - b * wi[k];
                zi[k] = a * wi[k] + b * wr[k];
            }
        }
        let (mut sr, mut si) = (0.0, 0.0);
        for k in split..n {
            let (a, b) = (zr[k], zi[k]);
            sr += a;
            si += b;
            zr[k] = a * wr[k] - b * wi[k];
            zi[k] = a * wi[k] + b * wr[k];
        }
        for l in 0..LANES {
            sr += acc_r[l];
            si += acc_i[l];
        }
        out.push(Complex64::new(sr, si));
    }
    out
}

/// `(1/2π) ∫ a(u) conj(b(u)) du` over `[-u_max, u_max]`.
pub fn parseval_inner<A, B>(a: &A, b: &B, quad: &QuadratureSpec) -> Complex64
where
    A: CharFn + ?Sized,
    B: CharFn + ?Sized,
{
    let mut acc = Complex64::new(0.0, 0.0);
    for (u, w) in quad.nodes() {
        acc += a.cf(u) * b.cf(u).conj() * w;
    }
    acc / (2.0 * PI)
}

/// Energy of a characteristic function beyond a cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailEnergy {
    /// `(1/2π) ∫_{cutoff<|u|<u_max} |cf|² du`.
    pub value: f64,
    /// Bound on the part beyond `u_max`, when a tail envelope is known.
    pub remainder_bound: Option<f64>,
}

/// `(1/2π) ∫_{|u|>cutoff} |cf(u)|² du`, truncated at `quad.u_max`.
pub fn tail_energy<C>(cf: &C, cutoff: f64, quad: &QuadratureSpec) -> Result<TailEnergy>
where
    C: CharFn + ?Sized,
{
    if !(cutoff >= 0.0) || !cutoff.is_finite() {
        return Err(Error::param("cutoff", format!("must be finite and >= 0, got {cutoff}")));
    }
    if quad.u_max <= cutoff {
        return Err(Error::param(
            "u_max",
            format!("truncation {} must exceed the cutoff {cutoff}", quad.u_max),
        ));
    }
    let m = quad.m_points;
    let du = (quad.u_max - cutoff) / m as f64;
    let f: Vec<f64> = (0..=m)
        .map(|j| {
            let u = cutoff + j as f64 * du;
            cf.cf(u).norm_sqr() + cf.cf(-u).norm_sqr()
        })
        .collect();
    let mut acc = 0.5 * (f[0] + f[m]) + f[1..m].iter().sum::<f64>();
    // Euler–Maclaurin end correction with one-sided derivative estimates;
    // the cutoff is generally not a point where the integrand flattens out.
    let d_lo = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * du);
    let d_hi = (3.0 * f[m] - 4.0 * f[m - 1] + f[m - 2]) / (2.0 * du);
    acc -= du * (d_hi - d_lo) / 12.0;
    Ok(TailEnergy {
        value: acc * du / (2.0 * PI),
        remainder_bound: cf.sq_tail_bound(quad.u_max).map(|b| b / (2.0 * PI)),
    })
}
