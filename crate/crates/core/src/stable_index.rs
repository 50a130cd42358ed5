//! Estimating the index `s` of symmetric stable noise `exp(-|u|^s)`.
//!
//! The estimator looks at the modulus of the empirical characteristic
//! function at a single frequency `u_n` and picks the grid point `s_k` whose
//! pipe `[A u^{-β'} e^{-u^{s_k}}, e^{-u^{s_k}}]` is closest, by comparing
//! against the midpoints between consecutive pipes.

use serde::{Deserialize, Serialize};

use crate::error::{check_positive, Error, Result};
use crate::fourier::ecf;
use crate::kernels::{log_log, min_admissible_n};

/// Which step-size rule builds the `s` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRecipe {
    /// `d = s̄ / (log n · log log n)`, standalone estimation.
    Prop1,
    /// `min{(log n)^{-(β̄-1/2)/s̲}, ·}`, for density estimation.
    Cor1,
    /// `min{(log n)^{-2β̄/s̲}, ·}`, for the quadratic functional.
    Cor2,
    /// `min{(log n)^{-β̄/s̲}, ·}`, for the goodness-of-fit test.
    Cor3,
}

/// Everything the estimator needs besides the sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableIndexParams {
    pub s_lo: f64,
    pub s_hi: f64,
    /// Decay exponent `β'` of the lower envelope `A|u|^{-β'}` of `|Φ_f|`.
    pub beta_prime: f64,
    /// Constant `A` of that envelope.
    pub big_a: f64,
    /// Exponent `a > 1` in the choice of `u_n`.
    pub a: f64,
    pub recipe: StepRecipe,
    /// Upper smoothness bound, read by the plug-in step recipes.
    pub beta_bar: Option<f64>,
}

impl StableIndexParams {
    pub fn new(
        s_lo: f64,
        s_hi: f64,
        beta_prime: f64,
        big_a: f64,
        a: f64,
        recipe: StepRecipe,
        beta_bar: Option<f64>,
    ) -> Result<Self> {
        let p = StableIndexParams {
            s_lo,
            s_hi,
            beta_prime,
            big_a,
            a,
            recipe,
            beta_bar,
        };
        p.validate()?;
        Ok(p)
    }

    /// Standalone estimation: Prop1 steps and `a = 1.5`.
    pub fn standalone(s_lo: f64, s_hi: f64, beta_prime: f64, big_a: f64) -> Result<Self> {
        Self::new(s_lo, s_hi, beta_prime, big_a, 1.5, StepRecipe::Prop1, None)
    }

    /// Parameters for one of the plug-in procedures. `a` defaults to
    /// `s̄/s̲ + 0.5` for Cor1/Cor2 and `1.5` otherwise.
    pub fn for_recipe(
        recipe: StepRecipe,
        s_lo: f64,
        s_hi: f64,
        beta_prime: f64,
        big_a: f64,
        beta_bar: f64,
    ) -> Result<Self> {
        let a = match recipe {
            StepRecipe::Cor1 | StepRecipe::Cor2 => s_hi / s_lo + 0.5,
            StepRecipe::Prop1 | StepRecipe::Cor3 => 1.5,
        };
        Self::new(s_lo, s_hi, beta_prime, big_a, a, recipe, Some(beta_bar))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s_lo > 0.0 && self.s_lo < self.s_hi && self.s_hi <= 2.0) {
            return Err(Error::param(
                "s_lo/s_hi",
                format!("need 0 < s_lo < s_hi <= 2, got [{}, {}]", self.s_lo, self.s_hi),
            ));
        }
        check_positive("A", self.big_a)?;
        if !(self.beta_prime >= 0.0) || !self.beta_prime.is_finite() {
            return Err(Error::param("beta_prime", format!("must be nonnegative, got {}", self.beta_prime)));
        }
        if !(self.a > 1.0) || !self.a.is_finite() {
            return Err(Error::param("a", format!("must exceed 1, got {}", self.a)));
        }
        match self.recipe {
            StepRecipe::Prop1 => {}
            StepRecipe::Cor1 | StepRecipe::Cor2 | StepRecipe::Cor3 => {
                let bb = self
                    .beta_bar
                    .ok_or_else(|| Error::param("beta_bar", format!("{:?} step needs beta_bar", self.recipe)))?;
                check_positive("beta_bar", bb)?;
                if self.recipe == StepRecipe::Cor1 && bb <= 0.5 {
                    return Err(Error::param("beta_bar", format!("density estimation needs beta_bar > 1/2, got {bb}")));
                }
                if self.recipe != StepRecipe::Cor3 && self.a <= self.s_hi / self.s_lo {
                    return Err(Error::param(
                        "a",
                        format!("{:?} needs a > s_hi/s_lo = {}, got {}", self.recipe, self.s_hi / self.s_lo, self.a),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn frequency_bracket(n: f64, sip: &StableIndexParams) -> f64 {
    let ln_n = n.ln();
    ln_n / 2.0 - (2.0 * sip.beta_prime + sip.a * sip.s_hi) / (2.0 * sip.s_hi) * ln_n.ln()
}

/// `u_n = (log n/2 - ((2β' + a s̄)/(2s̄)) log log n)^{1/s̄}`.
pub fn frequency_u_n(n: usize, sip: &StableIndexParams) -> Result<f64> {
    sip.validate()?;
    log_log(n, "the index frequency")?;
    let b = frequency_bracket(n as f64, sip);
    if !(b > 0.0) {
        return Err(Error::NTooSmall {
            what: "the index frequency (bracket must be positive)",
            n: n as f64,
            min_n: Some(min_admissible_n(|m| frequency_bracket(m, sip))),
        });
    }
    Ok(b.powf(1.0 / sip.s_hi))
}

/// Nominal grid step and which branch of the recipe produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepSize {
    pub step: f64,
    /// `"log_rate"` when the `s̄/(log n log log n)` branch binds, otherwise `"smoothness"`.
    pub binding: &'static str,
}

pub fn step_size(n: usize, sip: &StableIndexParams) -> Result<StepSize> {
    sip.validate()?;
    let lln = log_log(n, "the index grid")?;
    let ln_n = (n as f64).ln();
    let base = sip.s_hi / (ln_n * lln);
    let other = match (sip.recipe, sip.beta_bar) {
        (StepRecipe::Prop1, _) => None,
        (StepRecipe::Cor1, Some(b)) => Some(ln_n.powf(-(b - 0.5) / sip.s_lo)),
        (StepRecipe::Cor2, Some(b)) => Some(ln_n.powf(-2.0 * b / sip.s_lo)),
        (StepRecipe::Cor3, Some(b)) => Some(ln_n.powf(-b / sip.s_lo)),
        _ => unreachable!("validated"),
    };
    Ok(match other {
        Some(o) if o < base => StepSize {
            step: o,
            binding: "smoothness",
        },
        _ => StepSize {
            step: base,
            binding: "log_rate",
        },
    })
}

/// Equidistant grid from `s̲` to `s̄`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SGrid {
    pub points: Vec<f64>,
    /// Actual spacing, never larger than the nominal one.
    pub step: f64,
    pub nominal: StepSize,
}

/// Grid with `N - 1 = ⌈(s̄ - s̲)/d⌉` intervals; the step is shrunk so both
/// endpoints are hit exactly.
pub fn build_s_grid(n: usize, sip: &StableIndexParams) -> Result<SGrid> {
    let nominal = step_size(n, sip)?;
    let span = sip.s_hi - sip.s_lo;
    let intervals = ((span / nominal.step) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let step = span / intervals as f64;
    let mut points: Vec<f64> = (0..=intervals).map(|k| sip.s_lo + k as f64 * step).collect();
    points[0] = sip.s_lo;
    points[intervals] = sip.s_hi;
    Ok(SGrid { points, step, nominal })
}

/// Index of the grid point `s_k ≤ s < s_{k+1}` (the last point for `s = s̄`).
pub fn grid_oracle(grid: &[f64], s: f64) -> Result<usize> {
    let (lo, hi) = (grid[0], grid[grid.len() - 1]);
    if !(s >= lo && s <= hi) {
        return Err(Error::param("s", format!("{s} outside the grid range [{lo}, {hi}]")));
    }
    Ok(grid.partition_point(|&p| p <= s) - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PipeBranch {
    Top,
    Interior,
    Bottom,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipeDecision {
    pub index: usize,
    pub branch: PipeBranch,
    /// `m_k = ½(q e^{-u^{s_k}} + e^{-u^{s_{k+1}}})`, `k = 0..N-1`.
    pub midpoints: Vec<f64>,
    /// Every pipe lies strictly above the next one: `q ≤ 1` and
    /// `q e^{-u^{s_k}} ≥ e^{-u^{s_{k+1}}}` for all `k`.
    pub pipes_disjoint: bool,
}

/// Three-branch midpoint rule. Returns a 0-based grid index.
///
/// Fails with [`Error::Ordering`] when the midpoints are not strictly
/// decreasing at `u`, in which case the rule does not define a unique index.
pub fn classify_pipe(ecf_mod: f64, u: f64, grid: &[f64], beta_prime: f64, big_a: f64) -> Result<PipeDecision> {
    check_positive("u", u)?;
    if !(0.0..=1.0 + 1e-12).contains(&ecf_mod) {
        return Err(Error::param("ecf_mod", format!("must lie in [0, 1], got {ecf_mod}")));
    }
    if grid.len() < 2 {
        return Err(Error::param("grid", "needs at least two points"));
    }
    let q = big_a * u.powf(-beta_prime);
    let phi: Vec<f64> = grid.iter().map(|&s| (-u.powf(s)).exp()).collect();
    let midpoints: Vec<f64> = phi.windows(2).map(|w| 0.5 * (q * w[0] + w[1])).collect();
    for k in 1..midpoints.len() {
        if !(midpoints[k] < midpoints[k - 1]) {
            return Err(Error::Ordering {
                u,
                index: k,
                value: midpoints[k],
            });
        }
    }
    let pipes_disjoint = q <= 1.0 && phi.windows(2).all(|w| q * w[0] >= w[1]);
    let last = midpoints.len() - 1;
    let (index, branch) = if ecf_mod >= midpoints[0] {
        (0, PipeBranch::Top)
    } else if ecf_mod < midpoints[last] {
        (grid.len() - 1, PipeBranch::Bottom)
    } else {
        // First k ≥ 1 with m_k ≤ x; then x < m_{k-1} by the previous test.
        let k = midpoints.partition_point(|&m| m > ecf_mod);
        (k, PipeBranch::Interior)
    };
    Ok(PipeDecision {
        index,
        branch,
        midpoints,
        pipes_disjoint,
    })
}

/// Every intermediate quantity of one estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SIndexDiagnostics {
    pub n: usize,
    pub recipe: StepRecipe,
    pub u_n: f64,
    pub grid: SGrid,
    /// `d · u^{s̄} · log u`, required to be at most one.
    pub consistency: f64,
    pub ecf_mod: f64,
    pub decision: PipeDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SIndexEstimate {
    pub s_hat: f64,
    pub index: usize,
    pub diagnostics: SIndexDiagnostics,
}

/// The estimator with the characteristic-function modulus supplied by the
/// caller; `modulus(u)` is evaluated once, at `u_n`.
pub fn estimate_s_from_modulus(modulus: impl Fn(f64) -> f64, n: usize, sip: &StableIndexParams) -> Result<SIndexEstimate> {
    let u_n = frequency_u_n(n, sip)?;
    let grid = build_s_grid(n, sip)?;
    let consistency = grid.step * u_n.powf(sip.s_hi) * u_n.ln();
    if consistency > 1.0 {
        return Err(Error::Consistency {
            value: consistency,
            step: grid.step,
            u: u_n,
        });
    }
    let ecf_mod = modulus(u_n).min(1.0);
    let decision = classify_pipe(ecf_mod, u_n, &grid.points, sip.beta_prime, sip.big_a)?;
    Ok(SIndexEstimate {
        s_hat: grid.points[decision.index],
        index: decision.index,
        diagnostics: SIndexDiagnostics {
            n,
            recipe: sip.recipe,
            u_n,
            grid,
            consistency,
            ecf_mod,
            decision,
        },
    })
}

/// `ŝ_n` from a sample: the pipe rule applied to `|ecf(u_n)|`.
pub fn estimate_s(sample: &[f64], sip: &StableIndexParams) -> Result<SIndexEstimate> {
    if sample.is_empty() {
        return Err(Error::param("sample", "empty sample"));
    }
    estimate_s_from_modulus(|u| ecf(sample, u).norm(), sample.len(), sip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_convolution, DensitySpec, NoiseSpec};
    use crate::rng::replicate_rng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn sip() -> StableIndexParams {
        StableIndexParams::standalone(0.5, 2.0, 2.0, 0.5).unwrap()
    }

    #[test]
    fn u_n_reference_value() {
        let u = frequency_u_n(1_000_000, &sip()).unwrap();
        assert!((u - 1.5207).abs() < 1e-4, "{u}");
        match frequency_u_n(16, &sip()) {
            Err(Error::NTooSmall { min_n: Some(m), .. }) => {
                assert!(frequency_bracket(m, &sip()) > 0.0);
                assert!(frequency_bracket(m - 1.0, &sip()) <= 0.0);
            }
            other => panic!("{other:?}"),
        }
        let us: Vec<f64> = [1e3, 1e4, 1e5, 1e6].iter().map(|&n| frequency_u_n(n as usize, &sip()).unwrap()).collect();
        assert!(us.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn prop1_grid_reference() {
        let g = build_s_grid(10_000, &sip()).unwrap();
        assert!((g.nominal.step - 0.0978).abs() < 1e-4);
        assert_eq!(g.points.len(), 17);
        assert_eq!(g.points[0], 0.5);
        assert_eq!(*g.points.last().unwrap(), 2.0);
        assert!(g.step <= g.nominal.step);
    }

    #[test]
    fn cor1_binding_branch() {
        let p = StableIndexParams::for_recipe(StepRecipe::Cor1, 0.5, 2.0, 2.0, 0.5, 1.0).unwrap();
        let d = step_size(10_000, &p).unwrap();
        // (log n)^{-1} = 0.1086 exceeds the 0.0978 log-rate branch.
        assert_eq!(d.binding, "log_rate");
        assert_relative_eq!(d.step, 2.0 / (1e4f64.ln() * 1e4f64.ln().ln()), max_relative = 1e-14);
        assert_eq!(p.a, 4.5);
        let p2 = StableIndexParams::for_recipe(StepRecipe::Cor2, 0.5, 2.0, 2.0, 0.5, 1.0).unwrap();
        assert_eq!(step_size(10_000, &p2).unwrap().binding, "smoothness");
    }

    #[test]
    fn recipe_validation() {
        assert!(StableIndexParams::new(0.5, 2.0, 2.0, 0.5, 2.0, StepRecipe::Cor1, Some(1.0)).is_err());
        assert!(StableIndexParams::new(0.5, 2.0, 2.0, 0.5, 1.5, StepRecipe::Cor3, None).is_err());
        assert!(StableIndexParams::new(1.0, 1.0, 2.0, 0.5, 1.5, StepRecipe::Prop1, None).is_err());
        assert!(StableIndexParams::new(0.5, 2.0, 2.0, 0.5, 1.0, StepRecipe::Prop1, None).is_err());
    }

    #[test]
    fn grid_oracle_picks_floor() {
        let g = [0.5, 1.0, 1.5, 2.0];
        assert_eq!(grid_oracle(&g, 0.5).unwrap(), 0);
        assert_eq!(grid_oracle(&g, 1.2).unwrap(), 1);
        assert_eq!(grid_oracle(&g, 1.5).unwrap(), 2);
        assert_eq!(grid_oracle(&g, 2.0).unwrap(), 3);
        assert!(grid_oracle(&g, 2.1).is_err());
    }

    #[test]
    fn classify_extremes() {
        let g = [0.5, 1.0, 1.5, 2.0];
        let u = 3.0;
        assert_eq!(classify_pipe(1.0, u, &g, 2.0, 0.5).unwrap().index, 0);
        let bottom = classify_pipe(0.0, u, &g, 2.0, 0.5).unwrap();
        assert_eq!((bottom.index, bottom.branch), (3, PipeBranch::Bottom));
    }

    #[test]
    fn classify_exact_interior() {
        // Wide grid and large u: pipes are disjoint, and a modulus inside a
        // pipe is classified to that pipe.
        let g = [0.5, 1.0, 1.5, 2.0];
        let (u, bp, a) = (4.0f64, 0.0, 0.5);
        let q = a * u.powf(-bp);
        for (k, &s) in g.iter().enumerate() {
            let phi = (-u.powf(s)).exp();
            let d = classify_pipe(q * phi * 1.5, u, &g, bp, a).unwrap();
            assert!(d.pipes_disjoint);
            assert_eq!(d.index, k, "s = {s}");
        }
    }

    #[test]
    fn ordering_violation_detected() {
        let g: Vec<f64> = (0..=15).map(|k| 0.5 + 0.1 * k as f64).collect();
        assert!(matches!(classify_pipe(0.5, 0.8, &g, 2.0, 0.5), Err(Error::Ordering { .. })));
    }

    #[test]
    fn estimate_is_reproducible() {
        let f = DensitySpec::laplace(1.0).unwrap();
        let g = NoiseSpec::stable(1.5).unwrap();
        let s1 = sample_convolution(&f, &g, 100_000, &mut replicate_rng(8, 0)).unwrap();
        let s2 = sample_convolution(&f, &g, 100_000, &mut replicate_rng(8, 0)).unwrap();
        let a = estimate_s(&s1.y, &sip()).unwrap();
        let b = estimate_s(&s2.y, &sip()).unwrap();
        assert_eq!(a, b);
        assert!(a.diagnostics.consistency <= 1.0);
        assert!(a.diagnostics.grid.points.contains(&a.s_hat));
    }

    proptest! {
        #[test]
        fn classify_monotone(x1 in 0.0f64..1.0, x2 in 0.0f64..1.0, u in 1.5f64..4.0) {
            let g: Vec<f64> = (0..=6).map(|k| 0.5 + 0.25 * k as f64).collect();
            if let (Ok(a), Ok(b)) = (classify_pipe(x1, u, &g, 2.0, 0.5), classify_pipe(x2, u, &g, 2.0, 0.5)) {
                if x1 <= x2 {
                    prop_assert!(a.index >= b.index);
                } else {
                    prop_assert!(a.index <= b.index);
                }
            }
        }

        #[test]
        fn grid_within_bounds(n in 16usize..1_000_000_000, lo in 0.1f64..1.0, width in 0.1f64..1.0) {
            let hi = (lo + width).min(2.0);
            let p = StableIndexParams::standalone(lo, hi, 2.0, 0.5).unwrap();
            let g = build_s_grid(n, &p).unwrap();
            prop_assert_eq!(g.points[0], lo);
            prop_assert_eq!(*g.points.last().unwrap(), hi);
            prop_assert!(g.points.windows(2).all(|w| w[1] > w[0]));
            prop_assert!(g.step <= g.nominal.step * (1.0 + 1e-12));
        }
    }
}
