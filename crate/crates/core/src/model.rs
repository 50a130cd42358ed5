//! The convolution model `Y = X + ε`: smoothness classes, the signal and
//! noise catalogs, and samplers.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Cauchy, Distribution, Exp1, Gamma, Normal, StandardUniform};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;
use std::path::Path;

use crate::error::{check_finite, check_positive, Error, Result};
use crate::fourier::{CharFn, QuadratureSpec};

/// Parameters `(α, r, β)` and radius `L` of the class of densities with
/// `(1/2π) ∫ |Φ(u)|² |u|^{2β} exp(2α|u|^r) du ≤ L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessClass {
    pub alpha: f64,
    pub r: f64,
    pub beta: f64,
    pub radius: f64,
}

impl SmoothnessClass {
    /// `α` may be zero only for Sobolev classes (`r = 0`), where the
    /// exponential weight is a constant and `α` plays no role.
    pub fn new(alpha: f64, r: f64, beta: f64, radius: f64) -> Result<Self> {
        check_finite("alpha", alpha)?;
        if !(0.0..=2.0).contains(&r) {
            return Err(Error::param("r", format!("must lie in [0, 2], got {r}")));
        }
        if r > 0.0 && alpha <= 0.0 {
            return Err(Error::param("alpha", format!("must be positive when r > 0, got {alpha}")));
        }
        if alpha < 0.0 {
            return Err(Error::param("alpha", format!("must be nonnegative, got {alpha}")));
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::param("beta", format!("must be nonnegative, got {beta}")));
        }
        if r == 0.0 && beta == 0.0 {
            return Err(Error::param("beta", "r = 0 and beta = 0 describe every L2 density"));
        }
        check_positive("radius", radius)?;
        Ok(SmoothnessClass { alpha, r, beta, radius })
    }

    fn weight_ln(&self, u: f64) -> f64 {
        let a = u.abs();
        let mut w = 2.0 * self.alpha * a.powf(self.r);
        if self.beta > 0.0 {
            w += 2.0 * self.beta * a.ln();
        }
        w
    }
}

/// Noise distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    /// `Φ^g(u) = (1 + γ²u²)^{-σ/2}`, so `|Φ^g(u)| ~ γ^{-σ}|u|^{-σ}`.
    Polynomial { sigma: f64, gamma: f64 },
    /// Symmetric stable, `Φ^g(u) = exp(-|u|^s)`.
    Stable { s: f64 },
}

impl NoiseSpec {
    pub fn polynomial(sigma: f64, gamma: f64) -> Result<Self> {
        let g = NoiseSpec::Polynomial { sigma, gamma };
        g.validate()?;
        Ok(g)
    }

    pub fn stable(s: f64) -> Result<Self> {
        let g = NoiseSpec::Stable { s };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::Polynomial { sigma, gamma } => {
                if !(sigma > 1.0) || !sigma.is_finite() {
                    return Err(Error::param("sigma", format!("must exceed 1, got {sigma}")));
                }
                check_positive("gamma", gamma)?;
            }
            NoiseSpec::Stable { s } => check_stable_index(s)?,
        }
        Ok(())
    }

    /// Tail constant `c_g` of `|Φ^g(u)| ~ c_g |u|^{-σ}` (polynomial noise only).
    pub fn c_g(&self) -> Option<f64> {
        match *self {
            NoiseSpec::Polynomial { sigma, gamma } => Some(gamma.powf(-sigma)),
            NoiseSpec::Stable { .. } => None,
        }
    }

    pub fn sigma(&self) -> Option<f64> {
        match *self {
            NoiseSpec::Polynomial { sigma, .. } => Some(sigma),
            NoiseSpec::Stable { .. } => None,
        }
    }

    pub fn cf_real(&self, u: f64) -> f64 {
        match *self {
            NoiseSpec::Polynomial { sigma, gamma } => (1.0 + gamma * gamma * u * u).powf(-sigma / 2.0),
            NoiseSpec::Stable { s } => (-u.abs().powf(s)).exp(),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseSpec::Polynomial { sigma, gamma } => {
                let g = Gamma::new(sigma / 2.0, gamma).expect("validated gamma parameters");
                g.sample(rng) - g.sample(rng)
            }
            NoiseSpec::Stable { s } => draw_stable(s, rng),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            NoiseSpec::Polynomial { sigma, gamma } => format!("polynomial(sigma={sigma}, gamma={gamma})"),
            NoiseSpec::Stable { s } => format!("stable(s={s})"),
        }
    }
}

impl CharFn for NoiseSpec {
    fn cf(&self, u: f64) -> Complex64 {
        Complex64::new(self.cf_real(u), 0.0)
    }
}

pub(crate) fn check_stable_index(s: f64) -> Result<()> {
    if s > 0.0 && s <= 2.0 {
        Ok(())
    } else {
        Err(Error::param("s", format!("stable index must lie in (0, 2], got {s}")))
    }
}

/// One draw from the symmetric stable law with CF `exp(-|u|^s)`
/// (Chambers–Mallows–Stuck).
fn draw_stable<R: Rng + ?Sized>(s: f64, rng: &mut R) -> f64 {
    let v = loop {
        let t: f64 = rng.sample(StandardUniform);
        if t > 0.0 {
            break PI * (t - 0.5);
        }
    };
    if s == 1.0 {
        return v.tan();
    }
    let w: f64 = rng.sample(Exp1);
    let cv = v.cos();
    (s * v).sin() / cv.powf(1.0 / s) * (((1.0 - s) * v).cos() / w).powf((1.0 - s) / s)
}

/// Signal density families with closed-form characteristic functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// Degenerate at zero; makes `Y` pure noise.
    PointMass,
    Gaussian { mean: f64, sd: f64 },
    Cauchy { scale: f64 },
    Laplace { scale: f64 },
    /// Difference of two iid Gamma(shape, scale): `Φ(u) = (1 + θ²u²)^{-k}`.
    SymGamma { shape: f64, scale: f64 },
    Mixture { components: Vec<Component> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub density: Family,
}

/// Lower envelope `|Φ(u)| ≥ A |u|^{-β'}` for `|u| ≥ cutoff`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipeBound {
    pub a: f64,
    pub beta_prime: f64,
    pub cutoff: f64,
}

/// A catalog density: closed-form pdf and characteristic function, plus the
/// smoothness class and lower envelope it provably satisfies, when known.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensitySpec {
    pub name: String,
    pub family: Family,
    pub class: Option<SmoothnessClass>,
    pub pipe: Option<PipeBound>,
}

impl DensitySpec {
    pub fn from_family(family: Family) -> Result<Self> {
        validate_family(&family)?;
        let (class, pipe) = family_guarantees(&family);
        Ok(DensitySpec {
            name: family_name(&family),
            family,
            class,
            pipe,
        })
    }

    pub fn point_mass() -> Self {
        Self::from_family(Family::PointMass).expect("valid")
    }

    pub fn gaussian(mean: f64, sd: f64) -> Result<Self> {
        Self::from_family(Family::Gaussian { mean, sd })
    }

    pub fn cauchy(scale: f64) -> Result<Self> {
        Self::from_family(Family::Cauchy { scale })
    }

    pub fn laplace(scale: f64) -> Result<Self> {
        Self::from_family(Family::Laplace { scale })
    }

    pub fn sym_gamma(shape: f64, scale: f64) -> Result<Self> {
        Self::from_family(Family::SymGamma { shape, scale })
    }

    /// Weighted mixture of catalog densities; weights must sum to one.
    pub fn mixture(parts: Vec<(f64, DensitySpec)>) -> Result<Self> {
        Self::from_family(Family::Mixture {
            components: parts
                .into_iter()
                .map(|(weight, d)| Component { weight, density: d.family })
                .collect(),
        })
    }

    pub fn pdf(&self, x: f64) -> f64 {
        family_pdf(&self.family, x)
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        family_draw(&self.family, rng)
    }

    /// `∫ f²`, by quadrature of `|Φ|²` when no closed form is wired in.
    pub fn l2_norm_sq(&self) -> f64 {
        match self.family {
            Family::Gaussian { sd, .. } => 1.0 / (2.0 * sd * PI.sqrt()),
            Family::Cauchy { scale } => 1.0 / (2.0 * PI * scale),
            Family::Laplace { scale } => 1.0 / (4.0 * scale),
            Family::PointMass => f64::INFINITY,
            _ => {
                let q = QuadratureSpec::new(400.0, 1 << 16).expect("valid");
                let body = crate::fourier::tail_energy(self, 0.0, &q).expect("valid").value;
                body + self.sq_tail_bound(400.0).unwrap_or(0.0) / (2.0 * PI)
            }
        }
    }
}

impl CharFn for DensitySpec {
    fn cf(&self, u: f64) -> Complex64 {
        family_cf(&self.family, u)
    }

    fn sq_tail_bound(&self, cutoff: f64) -> Option<f64> {
        family_sq_tail(&self.family, cutoff)
    }
}

fn validate_family(f: &Family) -> Result<()> {
    match f {
        Family::PointMass => Ok(()),
        Family::Gaussian { mean, sd } => {
            check_finite("mean", *mean)?;
            check_positive("sd", *sd).map(|_| ())
        }
        Family::Cauchy { scale } | Family::Laplace { scale } => check_positive("scale", *scale).map(|_| ()),
        Family::SymGamma { shape, scale } => {
            check_positive("shape", *shape)?;
            check_positive("scale", *scale).map(|_| ())
        }
        Family::Mixture { components } => {
            if components.is_empty() {
                return Err(Error::param("components", "mixture needs at least one component"));
            }
            let mut total = 0.0;
            for c in components {
                check_positive("weight", c.weight)?;
                total += c.weight;
                validate_family(&c.density)?;
            }
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::param("weight", format!("mixture weights sum to {total}, not 1")));
            }
            Ok(())
        }
    }
}

fn family_name(f: &Family) -> String {
    match f {
        Family::PointMass => "point_mass".into(),
        Family::Gaussian { mean, sd } => format!("gaussian({mean},{sd})"),
        Family::Cauchy { scale } => format!("cauchy({scale})"),
        Family::Laplace { scale } => format!("laplace({scale})"),
        Family::SymGamma { shape, scale } => format!("sym_gamma({shape},{scale})"),
        Family::Mixture { components } => {
            let parts: Vec<String> = components
                .iter()
                .map(|c| format!("{}*{}", c.weight, family_name(&c.density)))
                .collect();
            format!("mixture[{}]", parts.join("+"))
        }
    }
}

fn family_guarantees(f: &Family) -> (Option<SmoothnessClass>, Option<PipeBound>) {
    match *f {
        Family::Gaussian { sd, .. } => {
            let class = SmoothnessClass::new(sd * sd / 4.0, 2.0, 0.0, 1.0 / (sd * (2.0 * PI).sqrt())).ok();
            (class, None)
        }
        Family::Cauchy { scale } => (SmoothnessClass::new(scale / 2.0, 1.0, 0.0, 1.0 / (PI * scale)).ok(), None),
        Family::Laplace { scale } => {
            let class = SmoothnessClass::new(0.0, 0.0, 1.0, 1.0 / (4.0 * scale.powi(3))).ok();
            let pipe = PipeBound {
                a: 1.0 / (2.0 * scale * scale),
                beta_prime: 2.0,
                cutoff: 1.0 / scale,
            };
            (class, Some(pipe))
        }
        Family::SymGamma { shape, scale } => {
            // Sobolev smoothness strictly below 2k - 1/2; take the midpoint.
            let class = if shape > 0.25 {
                let beta = shape - 0.25;
                // (1/π) ∫_0^∞ u^{2β} (1+θ²u²)^{-2k} du via the Beta function.
                let ln_b = ln_gamma(beta + 0.5) + ln_gamma(2.0 * shape - beta - 0.5) - ln_gamma(2.0 * shape);
                let radius = (ln_b.exp() / 2.0) * scale.powf(-2.0 * beta - 1.0) / PI;
                SmoothnessClass::new(0.0, 0.0, beta, radius).ok()
            } else {
                None
            };
            let pipe = PipeBound {
                a: (2.0 * scale * scale).powf(-shape),
                beta_prime: 2.0 * shape,
                cutoff: 1.0 / scale,
            };
            (class, Some(pipe))
        }
        Family::PointMass | Family::Mixture { .. } => (None, None),
    }
}

fn family_cf(f: &Family, u: f64) -> Complex64 {
    match f {
        Family::PointMass => Complex64::new(1.0, 0.0),
        Family::Gaussian { mean, sd } => Complex64::from_polar((-0.5 * sd * sd * u * u).exp(), mean * u),
        Family::Cauchy { scale } => Complex64::new((-scale * u.abs()).exp(), 0.0),
        Family::Laplace { scale } => Complex64::new(1.0 / (1.0 + scale * scale * u * u), 0.0),
        Family::SymGamma { shape, scale } => Complex64::new((1.0 + scale * scale * u * u).powf(-shape), 0.0),
        Family::Mixture { components } => components
            .iter()
            .map(|c| family_cf(&c.density, u) * c.weight)
            .sum(),
    }
}

fn family_sq_tail(f: &Family, cutoff: f64) -> Option<f64> {
    let u = cutoff.abs();
    match *f {
        Family::PointMass => None,
        Family::Gaussian { sd, .. } => Some(PI.sqrt() / sd * erfc(sd * u)),
        Family::Cauchy { scale } => Some((-2.0 * scale * u).exp() / scale),
        Family::Laplace { scale } if u > 0.0 => Some(2.0 / (3.0 * scale.powi(4) * u.powi(3))),
        Family::SymGamma { shape, scale } if shape > 0.25 && u > 0.0 => {
            Some(2.0 * scale.powf(-4.0 * shape) * u.powf(1.0 - 4.0 * shape) / (4.0 * shape - 1.0))
        }
        Family::Mixture { ref components } => components
            .iter()
            .map(|c| family_sq_tail(&c.density, u).map(|b| c.weight * b))
            .sum(),
        _ => None,
    }
}

fn family_pdf(f: &Family, x: f64) -> f64 {
    match f {
        Family::PointMass => {
            if x == 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        }
        Family::Gaussian { mean, sd } => {
            let z = (x - mean) / sd;
            (-0.5 * z * z).exp() / (sd * (2.0 * PI).sqrt())
        }
        Family::Cauchy { scale } => scale / (PI * (scale * scale + x * x)),
        Family::Laplace { scale } => (-x.abs() / scale).exp() / (2.0 * scale),
        Family::SymGamma { shape, scale } => sym_gamma_pdf(*shape, *scale, x),
        Family::Mixture { components } => components.iter().map(|c| c.weight * family_pdf(&c.density, x)).sum(),
    }
}

/// `|x|^{k-1/2} K_{k-1/2}(|x|/θ) / (√π Γ(k) 2^{k-1/2} θ^{k+1/2})`.
fn sym_gamma_pdf(k: f64, theta: f64, x: f64) -> f64 {
    let nu = k - 0.5;
    let ax = x.abs();
    let ln_norm = 0.5 * PI.ln() + ln_gamma(k) + nu * 2f64.ln() + (k + 0.5) * theta.ln();
    if ax == 0.0 {
        if nu > 0.0 {
            // K_ν(z) ~ Γ(ν) 2^{ν-1} z^{-ν} as z → 0.
            return (ln_gamma(nu) + (nu - 1.0) * 2f64.ln() + nu * theta.ln() - ln_norm).exp();
        }
        return f64::INFINITY;
    }
    let z = ax / theta;
    (nu * ax.ln() + bessel_k_scaled_ln(nu, z) - ln_norm).exp()
}

/// `ln K_ν(z)` from `K_ν(z) = ∫_0^∞ exp(-z cosh t) cosh(νt) dt`, trapezoid in
/// `t`, which converges geometrically for this doubly-exponential integrand.
fn bessel_k_scaled_ln(nu: f64, z: f64) -> f64 {
    let h = 0.02;
    let mut acc = 0.5; // t = 0 term, scaled by exp(z)
    let mut j = 1;
    loop {
        let t = j as f64 * h;
        let term = (-z * (t.cosh() - 1.0)).exp() * (nu * t).cosh();
        acc += term;
        if term < 1e-18 * acc {
            break;
        }
        j += 1;
    }
    (acc * h).ln() - z
}

fn family_draw<R: Rng + ?Sized>(f: &Family, rng: &mut R) -> f64 {
    match f {
        Family::PointMass => 0.0,
        Family::Gaussian { mean, sd } => Normal::new(*mean, *sd).expect("validated").sample(rng),
        Family::Cauchy { scale } => Cauchy::new(0.0, *scale).expect("validated").sample(rng),
        Family::Laplace { scale } => {
            let e1: f64 = rng.sample(Exp1);
            let e2: f64 = rng.sample(Exp1);
            scale * (e1 - e2)
        }
        Family::SymGamma { shape, scale } => {
            let g = Gamma::new(*shape, *scale).expect("validated");
            g.sample(rng) - g.sample(rng)
        }
        Family::Mixture { components } => {
            let t: f64 = rng.sample(StandardUniform);
            let mut cum = 0.0;
            for c in components {
                cum += c.weight;
                if t < cum {
                    return family_draw(&c.density, rng);
                }
            }
            family_draw(&components[components.len() - 1].density, rng)
        }
    }
}

/// Where a sample came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SampleMeta {
    pub seed: Option<u64>,
    pub n: usize,
    pub f: String,
    pub noise: Option<NoiseSpec>,
}

/// Observations `Y_1..Y_n` plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub y: Vec<f64>,
    pub meta: SampleMeta,
}

impl Sample {
    pub fn from_values(y: Vec<f64>) -> Self {
        let meta = SampleMeta {
            n: y.len(),
            ..SampleMeta::default()
        };
        Sample { y, meta }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Sidecar metadata path: `data.txt` → `data.txt.meta.toml`.
    pub fn meta_path(path: &Path) -> std::path::PathBuf {
        let mut p = path.as_os_str().to_owned();
        p.push(".meta.toml");
        p.into()
    }

    /// One observation per line (shortest round-trip decimal) plus a TOML sidecar.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = String::with_capacity(self.y.len() * 20);
        for v in &self.y {
            text.push_str(&format!("{v}\n"));
        }
        std::fs::write(path, text)?;
        let meta = toml::to_string(&self.meta).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(Self::meta_path(path), meta)?;
        Ok(())
    }

    /// Reads a sample; the sidecar is optional.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut y = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v: f64 = line
                .parse()
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
            y.push(v);
        }
        let meta_path = Self::meta_path(path);
        let meta = if meta_path.exists() {
            let text = std::fs::read_to_string(&meta_path)?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", meta_path.display())))?
        } else {
            SampleMeta::default()
        };
        let meta = SampleMeta { n: y.len(), ..meta };
        Ok(Sample { y, meta })
    }
}

/// `n` iid draws with CF `exp(-|u|^s)`.
pub fn sample_stable<R: Rng + ?Sized>(s: f64, n: usize, rng: &mut R) -> Result<Sample> {
    check_stable_index(s)?;
    let y = (0..n).map(|_| draw_stable(s, rng)).collect();
    Ok(Sample {
        y,
        meta: SampleMeta {
            seed: None,
            n,
            f: "point_mass".into(),
            noise: Some(NoiseSpec::Stable { s }),
        },
    })
}

/// `Y_j = X_j + ε_j` with `X ~ f`, `ε ~ g`.
pub fn sample_convolution<R: Rng + ?Sized>(f: &DensitySpec, g: &NoiseSpec, n: usize, rng: &mut R) -> Result<Sample> {
    g.validate()?;
    let y = (0..n).map(|_| f.draw(rng) + g.draw(rng)).collect();
    Ok(Sample {
        y,
        meta: SampleMeta {
            seed: None,
            n,
            f: f.name.clone(),
            noise: Some(*g),
        },
    })
}

/// Truncated class integral plus an extrapolated tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MembershipIntegral {
    /// `(1/2π) ∫_{|u|≤u_max} |Φ|² |u|^{2β} exp(2α|u|^r) du`.
    pub value: f64,
    /// Power-law estimate of the part beyond `u_max`.
    pub tail_estimate: f64,
}

/// The left side of the class inequality, for comparison against `L`.
///
/// The tail beyond `u_max` is extrapolated from the local decay exponent
/// between `u_max/2` and `u_max`; an exponent of `-1` or slower is reported
/// as divergence.
pub fn class_membership_integral<C>(f: &C, c: &SmoothnessClass, quad: &QuadratureSpec) -> Result<MembershipIntegral>
where
    C: CharFn + ?Sized,
{
    quad.validate()?;
    let integrand = |u: f64| -> f64 {
        if u == 0.0 {
            return if c.beta > 0.0 { 0.0 } else { f.cf(0.0).norm_sqr() };
        }
        let m = f.cf(u).norm_sqr();
        if m == 0.0 {
            return 0.0;
        }
        (m.ln() + c.weight_ln(u)).exp()
    };
    let mut acc = 0.0;
    for (u, w) in quad.nodes() {
        acc += w * integrand(u);
    }
    let value = acc / (2.0 * PI);
    let um = quad.u_max;
    let edge = integrand(um) + integrand(-um);
    let half = integrand(um / 2.0) + integrand(-um / 2.0);
    let tail_estimate = if edge == 0.0 {
        0.0
    } else {
        let exponent = if half > 0.0 { (edge / half).ln() / 2f64.ln() } else { f64::INFINITY };
        if !(exponent < -1.0) {
            return Err(Error::Divergent { u_max: um, exponent });
        }
        edge * um / (-exponent - 1.0) / (2.0 * PI)
    };
    Ok(MembershipIntegral { value, tail_estimate })
}
