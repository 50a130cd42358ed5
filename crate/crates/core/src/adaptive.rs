//! Adaptive goodness-of-fit tests: the bandwidth/threshold grids, Monte
//! Carlo calibration of the critical constant `C*`, and the decision rules.
//!
//! The test rejects `H₀: f = f₀` when `max_i |T_i| / t_i² > C*`, where `T_i`
//! is the quadratic statistic at bandwidth `h_i`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_positive, Error, Result};
use crate::fourier::{CharFn, QuadratureSpec};
use crate::kernels::{
    bandwidth_semiparam, bandwidth_threshold_thm1, bandwidth_threshold_thm1_final,
    bandwidth_threshold_thm2_supersmooth, kernel_poly, kernel_stable, log_log, supersmooth_c_default,
    threshold_semiparam, BandwidthVariant, GridPoint, KernelCF, Tau,
};
use crate::model::{sample_convolution, DensitySpec, NoiseSpec};
use crate::quadstat::quad_stat;
use crate::rng::replicate_rng;
use crate::stable_index::{estimate_s, SIndexEstimate, StableIndexParams, StepRecipe};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridRegime {
    /// `f₀` in a Sobolev class.
    Thm1,
    /// `f₀` supersmooth.
    Thm2,
}

/// Ranges of the smoothness parameters the test adapts over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridBounds {
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub r_lo: f64,
    pub r_hi: f64,
    pub beta_lo: f64,
    pub beta_hi: f64,
}

impl GridBounds {
    fn validate(&self, regime: GridRegime) -> Result<()> {
        let ordered = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi;
        if !ordered(self.alpha_lo, self.alpha_hi) {
            return Err(Error::param("alpha", format!("need 0 <= alpha_lo <= alpha_hi, got [{}, {}]", self.alpha_lo, self.alpha_hi)));
        }
        if !ordered(self.r_lo, self.r_hi) || self.r_hi > 2.0 {
            return Err(Error::param("r", format!("need 0 <= r_lo <= r_hi <= 2, got [{}, {}]", self.r_lo, self.r_hi)));
        }
        if !ordered(self.beta_lo, self.beta_hi) {
            return Err(Error::param("beta", format!("need 0 <= beta_lo <= beta_hi, got [{}, {}]", self.beta_lo, self.beta_hi)));
        }
        if regime == GridRegime::Thm2 {
            check_positive("r_lo", self.r_lo)?;
            check_positive("alpha_lo", self.alpha_lo)?;
            if self.r_hi == self.r_lo {
                return Err(Error::param("r", "the supersmooth grid needs r_hi > r_lo"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptiveGrid {
    pub regime: GridRegime,
    pub n: usize,
    pub sigma: f64,
    /// Number of Sobolev points `N` (or `N₁`).
    pub n_beta: usize,
    /// Number of supersmooth points: 1 for the Sobolev regime, `N₂` otherwise.
    pub n_super: usize,
    pub points: Vec<GridPoint>,
    /// Supersmooth thresholds whose triple logarithm was clamped to one.
    pub clamped: bool,
}

fn equispaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 || lo == hi {
        return vec![lo];
    }
    let step = (hi - lo) / (count - 1) as f64;
    let mut v: Vec<f64> = (0..count).map(|i| lo + i as f64 * step).collect();
    v[count - 1] = hi;
    v
}

/// Builds the Sobolev grid (`⌈log n⌉` β-points and a final point) or the
/// supersmooth grid (`⌈log n⌉` β-points and `⌈log log n/(r̄-r̲)⌉` r-points).
///
/// `c` is the supersmooth bandwidth constant; `None` picks
/// `0.9 α̲ exp(-1/r̲)`. It is ignored for the Sobolev grid.
pub fn build_grid(regime: GridRegime, n: usize, bounds: &GridBounds, sigma: f64, c: Option<f64>) -> Result<AdaptiveGrid> {
    bounds.validate(regime)?;
    let lln = log_log(n, "the adaptive grid")?;
    let n_beta_nominal = (n as f64).ln().ceil() as usize;
    let betas = equispaced(bounds.beta_lo, bounds.beta_hi, n_beta_nominal);
    let mut points = Vec::with_capacity(betas.len() + 4);
    for &beta in &betas {
        let (h, t2) = bandwidth_threshold_thm1(n, beta, sigma)?;
        points.push(GridPoint {
            tau: Tau { alpha: 0.0, r: 0.0, beta },
            h,
            t2,
        });
    }
    let n_beta = points.len();
    let mut clamped = false;
    match regime {
        GridRegime::Thm1 => {
            let (h, t2) = bandwidth_threshold_thm1_final(n, bounds.beta_hi, sigma)?;
            points.push(GridPoint {
                tau: Tau {
                    alpha: bounds.alpha_lo,
                    r: bounds.r_hi,
                    beta: 0.0,
                },
                h,
                t2,
            });
        }
        GridRegime::Thm2 => {
            let c = c.unwrap_or_else(|| supersmooth_c_default(bounds.alpha_lo, bounds.r_lo));
            let n2 = (lln / (bounds.r_hi - bounds.r_lo)).ceil().max(1.0) as usize;
            for r in equispaced(bounds.r_lo, bounds.r_hi, n2) {
                let p = bandwidth_threshold_thm2_supersmooth(n, r, sigma, c, bounds.alpha_lo, bounds.r_lo)?;
                clamped |= p.clamped;
                // β₀ does not enter the formulas; recorded as β̄.
                points.push(GridPoint {
                    tau: Tau {
                        alpha: bounds.alpha_hi,
                        r,
                        beta: bounds.beta_hi,
                    },
                    h: p.h,
                    t2: p.t2,
                });
            }
        }
    }
    let n_super = points.len() - n_beta;
    Ok(AdaptiveGrid {
        regime,
        n,
        sigma,
        n_beta,
        n_super,
        points,
        clamped,
    })
}

/// Statistic and threshold at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointStat {
    pub tau: Tau,
    pub h: f64,
    pub t2: f64,
    pub t: f64,
}

impl PointStat {
    pub fn ratio(&self) -> f64 {
        self.t.abs() / self.t2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestOutcome {
    pub reject: bool,
    /// `max_i |T_i| / t_i²`.
    pub max_ratio: f64,
    /// Grid point attaining the maximum, when the test rejects.
    pub trigger_index: Option<usize>,
    pub per_point: Vec<PointStat>,
    pub c_star: f64,
}

/// Applies the threshold rule to already computed statistics.
pub fn decide(per_point: Vec<PointStat>, c_star: f64) -> Result<TestOutcome> {
    if !(c_star >= 0.0) || !c_star.is_finite() {
        return Err(Error::param("c_star", format!("must be finite and >= 0, got {c_star}")));
    }
    if per_point.is_empty() {
        return Err(Error::param("grid", "no grid points"));
    }
    let (mut arg, mut max_ratio) = (0, f64::NEG_INFINITY);
    for (i, p) in per_point.iter().enumerate() {
        if p.ratio() > max_ratio {
            max_ratio = p.ratio();
            arg = i;
        }
    }
    let reject = max_ratio > c_star;
    Ok(TestOutcome {
        reject,
        max_ratio,
        trigger_index: reject.then_some(arg),
        per_point,
        c_star,
    })
}

fn check_noise(grid: &AdaptiveGrid, g: &NoiseSpec) -> Result<()> {
    match g.sigma() {
        Some(s) if s == grid.sigma => Ok(()),
        Some(s) => Err(Error::param("noise", format!("grid built for sigma = {}, noise has {s}", grid.sigma))),
        None => Err(Error::param("noise", "the adaptive test needs polynomially smooth noise")),
    }
}

fn grid_kernels(grid: &AdaptiveGrid, g: &NoiseSpec) -> Result<Vec<KernelCF>> {
    check_noise(grid, g)?;
    grid.points.iter().map(|p| kernel_poly(p.h, g)).collect()
}

fn grid_stats(sample: &[f64], grid: &AdaptiveGrid, kernels: &[KernelCF], f0: &DensitySpec, quad: &QuadratureSpec) -> Result<Vec<PointStat>> {
    if sample.len() != grid.n {
        return Err(Error::param("sample", format!("grid built for n = {}, sample has {}", grid.n, sample.len())));
    }
    grid.points
        .iter()
        .zip(kernels)
        .map(|(p, k)| {
            let t = quad_stat(sample, k, Some(f0 as &dyn CharFn), quad)?.value;
            Ok(PointStat {
                tau: p.tau,
                h: p.h,
                t2: p.t2,
                t,
            })
        })
        .collect()
}

/// The adaptive test under polynomially smooth noise.
pub fn run_test_poly(
    sample: &[f64],
    grid: &AdaptiveGrid,
    c_star: f64,
    f0: &DensitySpec,
    g: &NoiseSpec,
    quad: &QuadratureSpec,
) -> Result<TestOutcome> {
    let kernels = grid_kernels(grid, g)?;
    decide(grid_stats(sample, grid, &kernels, f0, quad)?, c_star)
}

/// Candidate values for `C*`: 64 geometric points from 0.1 to 100.
pub fn cstar_ladder() -> Vec<f64> {
    let (lo, hi) = (0.1f64, 100.0f64);
    let step = (hi / lo).ln() / 63.0;
    let mut v: Vec<f64> = (0..64).map(|i| lo * (i as f64 * step).exp()).collect();
    v[63] = hi;
    v
}

/// Replications at or above this count use the exact empirical quantile.
pub const QUANTILE_SHORTCUT_REPS: usize = 2000;
pub const MIN_CALIBRATION_REPS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub c_star: f64,
    pub eps: f64,
    pub reps: usize,
    /// Share of null replications with `max_ratio > c_star`.
    pub exceed_rate: f64,
    /// `true` when `c_star` is the exact `(1-ε/2)` empirical quantile,
    /// `false` when it was read off the ladder.
    pub quantile: bool,
    /// Null `max_ratio` per replication, in replication order.
    pub max_ratios: Vec<f64>,
}

fn check_calibration_input(eps: f64, reps: usize) -> Result<usize> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::param("eps", format!("must lie in (0, 1), got {eps}")));
    }
    if reps < MIN_CALIBRATION_REPS {
        return Err(Error::param("reps", format!("need at least {MIN_CALIBRATION_REPS} replications, got {reps}")));
    }
    let allowed = (eps / 2.0 * reps as f64).floor() as usize;
    if allowed == 0 {
        return Err(Error::param("reps", format!("{reps} replications cannot resolve the {} quantile", 1.0 - eps / 2.0)));
    }
    Ok(allowed)
}

/// Smallest `C*` whose exceedance frequency over `max_ratios` is at most `ε/2`.
pub fn cstar_from_ratios(max_ratios: Vec<f64>, eps: f64) -> Result<Calibration> {
    let reps = max_ratios.len();
    let allowed = check_calibration_input(eps, reps)?;
    if max_ratios.iter().any(|r| !r.is_finite()) {
        return Err(Error::Calibration("non-finite null statistic".into()));
    }
    let exceed = |c: f64| max_ratios.iter().filter(|&&r| r > c).count();
    let (c_star, quantile) = if reps >= QUANTILE_SHORTCUT_REPS {
        let mut sorted = max_ratios.clone();
        sorted.sort_by(f64::total_cmp);
        (sorted[reps - 1 - allowed].max(0.0), true)
    } else {
        let c = cstar_ladder()
            .into_iter()
            .find(|&c| exceed(c) <= allowed)
            .ok_or_else(|| Error::Calibration(format!("null statistics exceed the largest candidate C* = 100 too often (eps = {eps})")))?;
        (c, false)
    };
    let exceed_rate = exceed(c_star) as f64 / reps as f64;
    Ok(Calibration {
        c_star,
        eps,
        reps,
        exceed_rate,
        quantile,
        max_ratios,
    })
}

/// Calibrates `C*` for [`run_test_poly`] by simulating `reps` samples from
/// `f₀ * g`. Replication `i` uses stream `i` of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_cstar(
    f0: &DensitySpec,
    g: &NoiseSpec,
    grid: &AdaptiveGrid,
    eps: f64,
    reps: usize,
    seed: u64,
    quad: &QuadratureSpec,
) -> Result<Calibration> {
    check_calibration_input(eps, reps)?;
    let kernels = grid_kernels(grid, g)?;
    let ratios = (0..reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i as u64);
            let s = sample_convolution(f0, g, grid.n, &mut rng)?;
            let stats = grid_stats(&s.y, grid, &kernels, f0, quad)?;
            Ok(stats.iter().map(PointStat::ratio).fold(f64::NEG_INFINITY, f64::max))
        })
        .collect::<Result<Vec<f64>>>()?;
    cstar_from_ratios(ratios, eps)
}

/// Outcome of the stable-noise test together with the index estimate it used.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StableTestOutcome {
    pub outcome: TestOutcome,
    pub s_used: f64,
    pub estimate: Option<SIndexEstimate>,
}

fn check_cor3(sip: &StableIndexParams) -> Result<f64> {
    if sip.recipe != StepRecipe::Cor3 {
        return Err(Error::param("recipe", format!("the stable-noise test uses the cor3 step, got {:?}", sip.recipe)));
    }
    sip.validate()?;
    Ok(sip.beta_bar.expect("validated"))
}

/// Stable-noise test with the index `s` supplied: bandwidth
/// `(log n/2 - (2β̄/s) log log n)^{-1/s}`, threshold `(log n/2)^{-2β̄/s}`.
pub fn run_test_stable_known(
    sample: &[f64],
    f0: &DensitySpec,
    s: f64,
    beta_bar: f64,
    c_star: f64,
    quad: &QuadratureSpec,
) -> Result<TestOutcome> {
    let n = sample.len();
    let h = bandwidth_semiparam(n, s, beta_bar, BandwidthVariant::Test)?;
    let t2 = threshold_semiparam(n, s, beta_bar)?;
    let kernel = kernel_stable(h, s)?;
    let t = quad_stat(sample, &kernel, Some(f0 as &dyn CharFn), quad)?.value;
    decide(
        vec![PointStat {
            tau: Tau {
                alpha: 0.0,
                r: 0.0,
                beta: beta_bar,
            },
            h,
            t2,
            t,
        }],
        c_star,
    )
}

/// Stable-noise test with `s` estimated from the same sample.
pub fn run_test_stable(
    sample: &[f64],
    f0: &DensitySpec,
    sip: &StableIndexParams,
    c_star: f64,
    quad: &QuadratureSpec,
) -> Result<StableTestOutcome> {
    let beta_bar = check_cor3(sip)?;
    let est = estimate_s(sample, sip)?;
    let outcome = run_test_stable_known(sample, f0, est.s_hat, beta_bar, c_star, quad)?;
    Ok(StableTestOutcome {
        outcome,
        s_used: est.s_hat,
        estimate: Some(est),
    })
}

/// Calibrates `C*` for [`run_test_stable`] under `f₀ * stable(s)`.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_cstar_stable(
    f0: &DensitySpec,
    s: f64,
    n: usize,
    sip: &StableIndexParams,
    eps: f64,
    reps: usize,
    seed: u64,
    quad: &QuadratureSpec,
) -> Result<Calibration> {
    check_calibration_input(eps, reps)?;
    check_cor3(sip)?;
    let g = NoiseSpec::stable(s)?;
    let ratios = (0..reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i as u64);
            let y = sample_convolution(f0, &g, n, &mut rng)?;
            Ok(run_test_stable(&y.y, f0, sip, 0.0, quad)?.outcome.max_ratio)
        })
        .collect::<Result<Vec<f64>>>()?;
    cstar_from_ratios(ratios, eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bounds() -> GridBounds {
        GridBounds {
            alpha_lo: 0.5,
            alpha_hi: 1.0,
            r_lo: 0.5,
            r_hi: 1.5,
            beta_lo: 0.5,
            beta_hi: 2.0,
        }
    }

    #[test]
    fn sobolev_grid_size() {
        let g = build_grid(GridRegime::Thm1, 10_000, &bounds(), 2.0, None).unwrap();
        assert_eq!((g.n_beta, g.n_super, g.points.len()), (10, 1, 11));
        assert_eq!(g.points[0].tau.beta, 0.5);
        assert_eq!(g.points[9].tau.beta, 2.0);
        assert_eq!(g.points[10].tau.r, 1.5);
        let (h, t2) = bandwidth_threshold_thm1_final(10_000, 2.0, 2.0).unwrap();
        assert_eq!((g.points[10].h, g.points[10].t2), (h, t2));
    }

    #[test]
    fn degenerate_and_invalid_grids() {
        let b = GridBounds {
            beta_lo: 1.0,
            beta_hi: 1.0,
            ..bounds()
        };
        let g = build_grid(GridRegime::Thm1, 10_000, &b, 2.0, None).unwrap();
        assert_eq!(g.n_beta, 1);
        let flat_r = GridBounds { r_hi: 0.5, ..bounds() };
        assert!(build_grid(GridRegime::Thm2, 10_000, &flat_r, 2.0, None).is_err());
        assert!(matches!(
            build_grid(GridRegime::Thm1, 15, &bounds(), 2.0, None),
            Err(Error::NTooSmall { .. })
        ));
    }

    #[test]
    fn supersmooth_grid_size() {
        let g = build_grid(GridRegime::Thm2, 1_000_000, &bounds(), 2.0, None).unwrap();
        // ⌈log log 1e6 / 1⌉ = ⌈2.626⌉ = 3.
        assert_eq!((g.n_beta, g.n_super), (14, 3));
        assert_eq!(g.points[14].tau.r, 0.5);
        assert_eq!(g.points[16].tau.r, 1.5);
        assert!(g.clamped);
    }

    fn stat(t: f64, t2: f64) -> PointStat {
        PointStat {
            tau: Tau { alpha: 0.0, r: 0.0, beta: 1.0 },
            h: 0.5,
            t2,
            t,
        }
    }

    #[test]
    fn decision_rule() {
        let zero = decide(vec![stat(0.0, 1.0), stat(0.0, 0.1)], 0.5).unwrap();
        assert!(!zero.reject);
        let any = decide(vec![stat(0.0, 1.0), stat(-1e-9, 0.1)], 0.0).unwrap();
        assert!(any.reject);
        assert_eq!(any.trigger_index, Some(1));
        assert!(decide(vec![stat(1.0, 1.0)], -1.0).is_err());
    }

    #[test]
    fn ladder_shape() {
        let l = cstar_ladder();
        assert_eq!(l.len(), 64);
        assert!((l[0] - 0.1).abs() < 1e-15 && l[63] == 100.0);
        assert!(l.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn quantile_calibration() {
        let ratios: Vec<f64> = (0..2000).map(|i| i as f64 / 100.0).collect();
        let c = cstar_from_ratios(ratios, 0.1).unwrap();
        // 100 of 2000 may exceed: the 1900th smallest value.
        assert_eq!(c.c_star, 18.99);
        assert_eq!(c.exceed_rate, 0.05);
        assert!(c.quantile);
        let small: Vec<f64> = (0..600).map(|i| i as f64 / 600.0).collect();
        let c = cstar_from_ratios(small, 0.1).unwrap();
        assert!(!c.quantile && c.exceed_rate <= 0.05);
        assert!(cstar_from_ratios(vec![1.0; 499], 0.1).is_err());
        assert!(cstar_from_ratios(vec![1.0; 600], 1.0).is_err());
        assert!(cstar_from_ratios(vec![1.0; 600], 0.002).is_err());
    }

    #[test]
    fn calibration_is_deterministic_and_controls_level() {
        let f0 = DensitySpec::laplace(1.0).unwrap();
        let g = NoiseSpec::polynomial(2.0, 1.0).unwrap();
        let grid = build_grid(GridRegime::Thm1, 200, &bounds(), 2.0, None).unwrap();
        let quad = QuadratureSpec::new(50.0, 256).unwrap();
        let a = calibrate_cstar(&f0, &g, &grid, 0.1, 500, 3, &quad).unwrap();
        let b = calibrate_cstar(&f0, &g, &grid, 0.1, 500, 3, &quad).unwrap();
        assert_eq!(a, b);
        assert!(a.exceed_rate <= 0.05);
        let mut rng = replicate_rng(99, 0);
        let s = sample_convolution(&f0, &g, 200, &mut rng).unwrap();
        let o = run_test_poly(&s.y, &grid, a.c_star, &f0, &g, &quad).unwrap();
        assert_eq!(o.reject, o.max_ratio > a.c_star);
        assert_eq!(o, run_test_poly(&s.y, &grid, a.c_star, &f0, &g, &quad).unwrap());
    }

    #[test]
    fn stable_test_matches_known_index() {
        let f0 = DensitySpec::sym_gamma(0.25, 1.0).unwrap();
        let g = NoiseSpec::stable(1.0).unwrap();
        let sip = StableIndexParams::for_recipe(StepRecipe::Cor3, 0.5, 2.0, 0.5, 2f64.powf(-0.25), 0.5).unwrap();
        let quad = QuadratureSpec::new(50.0, 512).unwrap();
        let s = sample_convolution(&f0, &g, 20_000, &mut replicate_rng(4, 0)).unwrap();
        let plug = run_test_stable(&s.y, &f0, &sip, 1.0, &quad).unwrap();
        let known = run_test_stable_known(&s.y, &f0, plug.s_used, 0.5, 1.0, &quad).unwrap();
        assert_eq!(plug.outcome, known);
        let cor1 = StableIndexParams::for_recipe(StepRecipe::Cor1, 0.5, 2.0, 2.0, 0.5, 1.0).unwrap();
        assert!(run_test_stable(&s.y, &f0, &cor1, 1.0, &quad).is_err());
    }

    proptest! {
        #[test]
        fn reject_monotone_in_cstar(ts in proptest::collection::vec(-5.0f64..5.0, 1..6), c1 in 0.0f64..10.0, c2 in 0.0f64..10.0) {
            let pts: Vec<PointStat> = ts.iter().map(|&t| stat(t, 0.7)).collect();
            let (lo, hi) = if c1 < c2 { (c1, c2) } else { (c2, c1) };
            let a = decide(pts.clone(), hi).unwrap();
            let b = decide(pts, lo).unwrap();
            prop_assert_eq!(a.reject, a.max_ratio > hi);
            if a.reject {
                prop_assert!(b.reject);
            }
        }
    }
}
