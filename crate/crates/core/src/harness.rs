//! Reproducible Monte Carlo experiments driven by a TOML configuration.
//!
//! Replicate `r` of phase `p` at sample size `n` always draws from stream
//! `r` of a seed derived from `(seed, n, p)`, so results do not depend on
//! the number of threads.

use serde::{Deserialize, Serialize};
use std::path::Path;

use rayon::prelude::*;

use crate::adaptive::{build_grid, calibrate_cstar, run_test_poly, AdaptiveGrid, GridBounds, GridRegime};
use crate::error::{Error, Result};
use crate::fourier::QuadratureSpec;
use crate::kernels::{bandwidth_semiparam, BandwidthVariant};
use crate::model::{sample_convolution, DensitySpec, Family, NoiseSpec};
use crate::rng::{derive_seed, replicate_rng};
use crate::semiparam::{estimate_density_at, estimate_quadratic_functional};
use crate::stable_index::{build_s_grid, estimate_s, frequency_u_n, grid_oracle, StableIndexParams, StepRecipe};
use crate::ustat::{ustat_replicates, KernelDesign, ProductDesign, UStatDesign, MIN_KS_REPS};

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.575_829_303_548_901;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Rejection rate of the adaptive test under `f₀`.
    Level,
    /// Rejection rate under an alternative `f`.
    Power,
    /// Squared error of the plug-in density estimate at `x`.
    RiskDensity,
    /// Squared error of the plug-in estimate of `∫f²`.
    RiskFunctional,
    /// Agreement of `ŝ_n` with the grid point below the true index.
    SIndex,
    /// Kolmogorov–Smirnov distance of a normalized U-statistic to `N(0, 1)`.
    Clt,
}

impl Scenario {
    pub fn label(self) -> &'static str {
        match self {
            Scenario::Level => "level",
            Scenario::Power => "power",
            Scenario::RiskDensity => "risk_density",
            Scenario::RiskFunctional => "risk_functional",
            Scenario::SIndex => "s_index",
            Scenario::Clt => "clt",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadConfig {
    pub u_max: Option<f64>,
    pub m_points: Option<usize>,
}

impl QuadConfig {
    pub fn resolve(&self) -> Result<QuadratureSpec> {
        let d = QuadratureSpec::default();
        QuadratureSpec::new(self.u_max.unwrap_or(d.u_max), self.m_points.unwrap_or(d.m_points))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub regime: GridRegime,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub r_lo: f64,
    pub r_hi: f64,
    pub beta_lo: f64,
    pub beta_hi: f64,
    pub c: Option<f64>,
}

impl GridConfig {
    pub fn bounds(&self) -> GridBounds {
        GridBounds {
            alpha_lo: self.alpha_lo,
            alpha_hi: self.alpha_hi,
            r_lo: self.r_lo,
            r_hi: self.r_hi,
            beta_lo: self.beta_lo,
            beta_hi: self.beta_hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub reps: Option<usize>,
    /// Skip calibration and use this value.
    pub c_star: Option<f64>,
}

/// Index-estimation settings; `beta_prime` and `big_a` default to the
/// lower envelope of `f` when the catalog knows one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StableConfig {
    pub s_lo: f64,
    pub s_hi: f64,
    pub beta_prime: Option<f64>,
    pub big_a: Option<f64>,
    pub a: Option<f64>,
    pub recipe: Option<StepRecipe>,
    pub beta_bar: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CltDesign {
    Kernel,
    Product,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CltConfig {
    pub design: CltDesign,
    pub h_ref: Option<f64>,
    pub n_ref: Option<f64>,
    pub rate: Option<f64>,
    pub max_step: Option<f64>,
}

fn default_eps() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub seed: u64,
    pub reps: usize,
    pub n_list: Vec<usize>,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Data density (alternative for `power`, truth for the risk scenarios).
    pub f: Option<Family>,
    /// Null density of the tests.
    pub f0: Option<Family>,
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub quad: QuadConfig,
    pub grid: Option<GridConfig>,
    pub calibration: Option<CalibrationConfig>,
    pub stable: Option<StableConfig>,
    /// Evaluation point of `risk_density`.
    pub x: Option<f64>,
    pub clt: Option<CltConfig>,
}

fn cfg_err(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {msg}"))
}

fn need<'a, T>(v: &'a Option<T>, field: &str, scenario: Scenario) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| cfg_err(field, format!("required by the {} scenario", scenario.label())))
}

fn density(v: &Option<Family>, field: &str, scenario: Scenario) -> Result<DensitySpec> {
    DensitySpec::from_family(need(v, field, scenario)?.clone()).map_err(|e| cfg_err(field, e))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let sc = self.scenario;
        if self.reps == 0 {
            return Err(cfg_err("reps", "must be at least 1"));
        }
        if self.n_list.is_empty() {
            return Err(cfg_err("n_list", "must not be empty"));
        }
        if !self.n_list.windows(2).all(|w| w[0] < w[1]) {
            return Err(cfg_err("n_list", "must be sorted ascending without repeats"));
        }
        self.quad.resolve().map_err(|e| cfg_err("quad", e))?;
        match sc {
            Scenario::Level | Scenario::Power => {
                density(&self.f0, "f0", sc)?;
                if sc == Scenario::Power {
                    density(&self.f, "f", sc)?;
                }
                let g = need(&self.noise, "noise", sc)?;
                g.validate().map_err(|e| cfg_err("noise", e))?;
                if g.sigma().is_none() {
                    return Err(cfg_err("noise", "the adaptive test needs polynomially smooth noise"));
                }
                need(&self.grid, "grid", sc)?;
                if !(self.eps > 0.0 && self.eps < 1.0) {
                    return Err(cfg_err("eps", format!("must lie in (0, 1), got {}", self.eps)));
                }
            }
            Scenario::RiskDensity | Scenario::RiskFunctional | Scenario::SIndex => {
                density(&self.f, "f", sc)?;
                self.stable_noise()?;
                need(&self.stable, "stable", sc)?;
                if sc == Scenario::RiskDensity {
                    need(&self.x, "x", sc)?;
                }
                for &n in &self.n_list {
                    self.index_params(n)?;
                }
            }
            Scenario::Clt => {
                need(&self.clt, "clt", sc)?;
                if self.reps < MIN_KS_REPS {
                    return Err(cfg_err("reps", format!("the clt scenario needs at least {MIN_KS_REPS}")));
                }
            }
        }
        Ok(())
    }

    fn stable_noise(&self) -> Result<f64> {
        match need(&self.noise, "noise", self.scenario)? {
            NoiseSpec::Stable { s } => {
                NoiseSpec::stable(*s).map_err(|e| cfg_err("noise", e))?;
                Ok(*s)
            }
            _ => Err(cfg_err("noise", format!("the {} scenario needs stable noise", self.scenario.label()))),
        }
    }

    /// Index-estimation parameters for this scenario.
    pub fn index_params(&self, _n: usize) -> Result<StableIndexParams> {
        let st = need(&self.stable, "stable", self.scenario)?;
        let f = density(&self.f, "f", self.scenario)?;
        let pipe = f.pipe;
        let beta_prime = st
            .beta_prime
            .or(pipe.map(|p| p.beta_prime))
            .ok_or_else(|| cfg_err("stable.beta_prime", "no catalog envelope for f; give it explicitly"))?;
        let big_a = st
            .big_a
            .or(pipe.map(|p| p.a))
            .ok_or_else(|| cfg_err("stable.big_a", "no catalog envelope for f; give it explicitly"))?;
        let recipe = st.recipe.unwrap_or(match self.scenario {
            Scenario::RiskDensity => StepRecipe::Cor1,
            Scenario::RiskFunctional => StepRecipe::Cor2,
            _ => StepRecipe::Prop1,
        });
        let sip = match (st.a, st.beta_bar) {
            (Some(a), bb) => StableIndexParams::new(st.s_lo, st.s_hi, beta_prime, big_a, a, recipe, bb),
            (None, Some(bb)) => StableIndexParams::for_recipe(recipe, st.s_lo, st.s_hi, beta_prime, big_a, bb),
            (None, None) => StableIndexParams::standalone(st.s_lo, st.s_hi, beta_prime, big_a).and_then(|p| {
                if p.recipe == recipe {
                    Ok(p)
                } else {
                    Err(Error::param("beta_bar", format!("{recipe:?} step needs beta_bar")))
                }
            }),
        };
        sip.map_err(|e| cfg_err("stable", e))
    }
}

/// One CSV row. Columns that do not apply to a phase are left empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub scenario: &'static str,
    pub n: usize,
    pub replicate: usize,
    /// `calibration`, `test`, `estimate`, `s_index` or `ustat`.
    pub phase: &'static str,
    pub value: Option<f64>,
    pub decision: Option<bool>,
    pub s_hat: Option<f64>,
    pub s_oracle: Option<f64>,
    pub truth: Option<f64>,
    /// Failure of this replicate, if any.
    pub error: Option<String>,
}

impl ResultRow {
    fn new(scenario: Scenario, n: usize, replicate: usize, phase: &'static str) -> Self {
        ResultRow {
            scenario: scenario.label(),
            n,
            replicate,
            phase,
            value: None,
            decision: None,
            s_hat: None,
            s_oracle: None,
            truth: None,
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

/// Wilson score interval for `k` successes out of `m` at 99%.
pub fn wilson99(k: usize, m: usize) -> Interval {
    let (p, m) = (k as f64 / m as f64, m as f64);
    let z2 = Z99 * Z99;
    let centre = (p + z2 / (2.0 * m)) / (1.0 + z2 / m);
    let half = Z99 / (1.0 + z2 / m) * (p * (1.0 - p) / m + z2 / (4.0 * m * m)).sqrt();
    Interval {
        lo: (centre - half).max(0.0),
        hi: (centre + half).min(1.0),
    }
}

/// Mean with a 99% normal interval.
pub fn mean_ci99(values: &[f64]) -> (f64, Interval) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    let half = Z99 * (var / m).sqrt();
    (mean, Interval { lo: mean - half, hi: mean + half })
}

/// Per-`n` result of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NSummary {
    pub n: usize,
    /// `rejection_rate`, `mse`, `agreement_rate` or `ks_distance`.
    pub metric: &'static str,
    pub value: f64,
    pub ci99: Option<Interval>,
    pub successes: usize,
    pub failures: usize,
    /// Deterministic constants the replicates used (`C*`, grids, `u_n`, `d_n`, `h`).
    pub derived: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub scenario: Scenario,
    pub seed: u64,
    pub reps: usize,
    pub eps: f64,
    pub results: Vec<NSummary>,
    pub config: ExperimentConfig,
}

pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub summary: ExperimentSummary,
}

const PHASE_CALIBRATION: u64 = 1;
const PHASE_MAIN: u64 = 2;

/// Seed of the stream family used at size `n` in a given phase.
pub fn phase_seed(seed: u64, n: usize, phase: u64) -> u64 {
    derive_seed(derive_seed(seed, n as u64), phase)
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable")
}

/// Runs an experiment in memory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for &n in &cfg.n_list {
        let (r, s) = match cfg.scenario {
            Scenario::Level | Scenario::Power => run_test_scenario(cfg, n)?,
            Scenario::RiskDensity | Scenario::RiskFunctional => run_risk(cfg, n)?,
            Scenario::SIndex => run_s_index(cfg, n)?,
            Scenario::Clt => run_clt(cfg, n)?,
        };
        rows.extend(r);
        results.push(s);
    }
    Ok(ExperimentOutput {
        rows,
        summary: ExperimentSummary {
            scenario: cfg.scenario,
            seed: cfg.seed,
            reps: cfg.reps,
            eps: cfg.eps,
            results,
            config: cfg.clone(),
        },
    })
}

/// Runs an experiment and writes `results.csv` and `summary.json` to `out`.
pub fn run_experiment_to(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentSummary> {
    let output = run_experiment(cfg)?;
    std::fs::create_dir_all(out)?;
    write_rows(&output.rows, &out.join("results.csv"))?;
    let json = serde_json::to_string_pretty(&output.summary).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(out.join("summary.json"), json + "\n")?;
    Ok(output.summary)
}

pub fn write_rows(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

fn run_test_scenario(cfg: &ExperimentConfig, n: usize) -> Result<(Vec<ResultRow>, NSummary)> {
    let sc = cfg.scenario;
    let f0 = density(&cfg.f0, "f0", sc)?;
    let truth = if sc == Scenario::Power { density(&cfg.f, "f", sc)? } else { f0.clone() };
    let g = *need(&cfg.noise, "noise", sc)?;
    let gc = need(&cfg.grid, "grid", sc)?;
    let quad = cfg.quad.resolve()?;
    let sigma = g.sigma().expect("validated");
    let grid: AdaptiveGrid = build_grid(gc.regime, n, &gc.bounds(), sigma, gc.c)?;
    let mut rows = Vec::new();
    let cal = cfg.calibration.clone().unwrap_or(CalibrationConfig { reps: None, c_star: None });
    let (c_star, cal_reps) = match cal.c_star {
        Some(c) => (c, 0),
        None => {
            let reps = cal.reps.unwrap_or(2000);
            let c = calibrate_cstar(&f0, &g, &grid, cfg.eps, reps, phase_seed(cfg.seed, n, PHASE_CALIBRATION), &quad)?;
            for (i, r) in c.max_ratios.iter().enumerate() {
                let mut row = ResultRow::new(sc, n, i, "calibration");
                row.value = Some(*r);
                rows.push(row);
            }
            (c.c_star, reps)
        }
    };
    let seed = phase_seed(cfg.seed, n, PHASE_MAIN);
    let outcomes = (0..cfg.reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i as u64);
            let s = sample_convolution(&truth, &g, n, &mut rng)?;
            run_test_poly(&s.y, &grid, c_star, &f0, &g, &quad)
        })
        .collect::<Result<Vec<_>>>()?;
    let rejections = outcomes.iter().filter(|o| o.reject).count();
    for (i, o) in outcomes.iter().enumerate() {
        let mut row = ResultRow::new(sc, n, i, "test");
        row.value = Some(o.max_ratio);
        row.decision = Some(o.reject);
        rows.push(row);
    }
    let summary = NSummary {
        n,
        metric: "rejection_rate",
        value: rejections as f64 / cfg.reps as f64,
        ci99: Some(wilson99(rejections, cfg.reps)),
        successes: cfg.reps,
        failures: 0,
        derived: serde_json::json!({
            "c_star": c_star,
            "calibration_reps": cal_reps,
            "grid": to_json(&grid),
        }),
    };
    Ok((rows, summary))
}

fn index_constants(sip: &StableIndexParams, n: usize, s: f64) -> Result<(serde_json::Value, f64)> {
    let grid = build_s_grid(n, sip)?;
    let s_oracle = grid.points[grid_oracle(&grid.points, s)?];
    let u_n = frequency_u_n(n, sip).ok();
    Ok((
        serde_json::json!({
            "u_n": u_n,
            "d_n": grid.step,
            "d_n_nominal": grid.nominal.step,
            "grid_points": grid.points.len(),
            "s_oracle": s_oracle,
            "recipe": sip.recipe,
            "a": sip.a,
        }),
        s_oracle,
    ))
}

fn run_risk(cfg: &ExperimentConfig, n: usize) -> Result<(Vec<ResultRow>, NSummary)> {
    let sc = cfg.scenario;
    let f = density(&cfg.f, "f", sc)?;
    let s = cfg.stable_noise()?;
    let g = NoiseSpec::stable(s)?;
    let sip = cfg.index_params(n)?;
    let quad = cfg.quad.resolve()?;
    let (mut derived, s_oracle) = index_constants(&sip, n, s)?;
    let beta_bar = sip.beta_bar.expect("validated");
    derived["h_at_s_oracle"] = to_json(&bandwidth_semiparam(n, s_oracle, beta_bar, BandwidthVariant::Estimation).ok());
    let truth = match sc {
        Scenario::RiskDensity => f.pdf(*need(&cfg.x, "x", sc)?),
        _ => f.l2_norm_sq(),
    };
    derived["truth"] = to_json(&truth);
    let seed = phase_seed(cfg.seed, n, PHASE_MAIN);
    let rows: Vec<ResultRow> = (0..cfg.reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i as u64);
            let mut row = ResultRow::new(sc, n, i, "estimate");
            row.truth = Some(truth);
            row.s_oracle = Some(s_oracle);
            let res = sample_convolution(&f, &g, n, &mut rng).and_then(|y| match sc {
                Scenario::RiskDensity => estimate_density_at(&y.y, cfg.x.expect("validated"), &sip, &quad),
                _ => estimate_quadratic_functional(&y.y, &sip, &quad),
            });
            match res {
                Ok(e) => {
                    row.value = Some(e.value);
                    row.s_hat = Some(e.s_hat);
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            row
        })
        .collect();
    let sq: Vec<f64> = rows.iter().filter_map(|r| r.value.map(|v| (v - truth).powi(2))).collect();
    let failures = rows.len() - sq.len();
    let (value, ci) = if sq.is_empty() { (f64::NAN, None) } else {
        let (m, ci) = mean_ci99(&sq);
        (m, Some(ci))
    };
    let summary = NSummary {
        n,
        metric: "mse",
        value,
        ci99: ci,
        successes: sq.len(),
        failures,
        derived,
    };
    Ok((rows, summary))
}

fn run_s_index(cfg: &ExperimentConfig, n: usize) -> Result<(Vec<ResultRow>, NSummary)> {
    let sc = cfg.scenario;
    let f = density(&cfg.f, "f", sc)?;
    let s = cfg.stable_noise()?;
    let g = NoiseSpec::stable(s)?;
    let sip = cfg.index_params(n)?;
    let (derived, s_oracle) = index_constants(&sip, n, s)?;
    let seed = phase_seed(cfg.seed, n, PHASE_MAIN);
    let rows: Vec<ResultRow> = (0..cfg.reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i as u64);
            let mut row = ResultRow::new(sc, n, i, "s_index");
            row.s_oracle = Some(s_oracle);
            row.truth = Some(s);
            match sample_convolution(&f, &g, n, &mut rng).and_then(|y| estimate_s(&y.y, &sip)) {
                Ok(e) => {
                    row.value = Some(e.s_hat);
                    row.s_hat = Some(e.s_hat);
                    row.decision = Some(e.s_hat == s_oracle);
                }
                Err(e) => {
                    row.decision = Some(false);
                    row.error = Some(e.to_string());
                }
            }
            row
        })
        .collect();
    let agree = rows.iter().filter(|r| r.decision == Some(true)).count();
    let failures = rows.iter().filter(|r| r.error.is_some()).count();
    let summary = NSummary {
        n,
        metric: "agreement_rate",
        value: agree as f64 / cfg.reps as f64,
        ci99: Some(wilson99(agree, cfg.reps)),
        successes: cfg.reps - failures,
        failures,
        derived,
    };
    Ok((rows, summary))
}

fn clt_design(c: &CltConfig) -> Result<KernelDesign> {
    let d = KernelDesign::default();
    KernelDesign::new(
        c.h_ref.unwrap_or(d.h_ref),
        c.n_ref.unwrap_or(d.n_ref),
        c.rate.unwrap_or(d.rate),
        c.max_step.unwrap_or(d.max_step),
    )
    .map_err(|e| cfg_err("clt", e))
}

fn run_clt(cfg: &ExperimentConfig, n: usize) -> Result<(Vec<ResultRow>, NSummary)> {
    let c = need(&cfg.clt, "clt", cfg.scenario)?;
    let seed = phase_seed(cfg.seed, n, PHASE_MAIN);
    let (values, derived) = match c.design {
        CltDesign::Kernel => {
            let d = clt_design(c)?;
            let v = ustat_replicates(&d, n, cfg.reps, seed)?;
            (v, serde_json::json!({ "design": d.name(), "h_n": d.bandwidth(n), "m_points": d.quadrature(n).m_points }))
        }
        CltDesign::Product => (
            ustat_replicates(&ProductDesign, n, cfg.reps, seed)?,
            serde_json::json!({ "design": ProductDesign.name() }),
        ),
    };
    let m = values.len() as f64;
    let sd = (values.iter().map(|v| v * v).sum::<f64>() / m - (values.iter().sum::<f64>() / m).powi(2))
        .max(0.0)
        .sqrt();
    let standardized: Vec<f64> = values.iter().map(|v| v / sd).collect();
    let ks = crate::ustat::ks_to_normal(&standardized);
    let rows = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut row = ResultRow::new(cfg.scenario, n, i, "ustat");
            row.value = Some(v);
            row
        })
        .collect();
    let mut derived = derived;
    derived["sd"] = to_json(&sd);
    Ok((
        rows,
        NSummary {
            n,
            metric: "ks_distance",
            value: ks,
            ci99: None,
            successes: values.len(),
            failures: 0,
            derived,
        },
    ))
}

fn parse_kv(text: &str) -> Result<(String, Vec<(String, f64)>)> {
    let (name, rest) = match text.split_once(':') {
        Some((a, b)) => (a.trim(), b.trim()),
        None => (text.trim(), ""),
    };
    let mut kv = Vec::new();
    for part in rest.split(',').filter(|p| !p.trim().is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("`{part}` in `{text}` is not key=value")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|e| Error::Config(format!("`{k}` in `{text}`: {e}")))?;
        kv.push((k.trim().to_string(), v));
    }
    Ok((name.to_string(), kv))
}

fn take(kv: &[(String, f64)], key: &str, default: Option<f64>, text: &str) -> Result<f64> {
    kv.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| *v)
        .or(default)
        .ok_or_else(|| Error::Config(format!("`{text}` needs {key}=")))
}

fn check_keys(kv: &[(String, f64)], allowed: &[&str], text: &str) -> Result<()> {
    match kv.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
        Some((k, _)) => Err(Error::Config(format!("`{text}`: unknown key `{k}` (expected {allowed:?})"))),
        None => Ok(()),
    }
}

/// Parses `laplace:scale=1`, `gaussian:mean=0,sd=1`, `cauchy:scale=1`,
/// `sym_gamma:shape=0.4,scale=1` or `point_mass`.
pub fn parse_density(text: &str) -> Result<DensitySpec> {
    let (name, kv) = parse_kv(text)?;
    let family = match name.as_str() {
        "point_mass" => {
            check_keys(&kv, &[], text)?;
            Family::PointMass
        }
        "gaussian" => {
            check_keys(&kv, &["mean", "sd"], text)?;
            Family::Gaussian {
                mean: take(&kv, "mean", Some(0.0), text)?,
                sd: take(&kv, "sd", Some(1.0), text)?,
            }
        }
        "cauchy" => {
            check_keys(&kv, &["scale"], text)?;
            Family::Cauchy {
                scale: take(&kv, "scale", Some(1.0), text)?,
            }
        }
        "laplace" => {
            check_keys(&kv, &["scale"], text)?;
            Family::Laplace {
                scale: take(&kv, "scale", Some(1.0), text)?,
            }
        }
        "sym_gamma" => {
            check_keys(&kv, &["shape", "scale"], text)?;
            Family::SymGamma {
                shape: take(&kv, "shape", None, text)?,
                scale: take(&kv, "scale", Some(1.0), text)?,
            }
        }
        other => return Err(Error::Config(format!("unknown density `{other}`"))),
    };
    DensitySpec::from_family(family)
}

/// Parses `poly:sigma=2,gamma=1` or `stable:s=1.5`.
pub fn parse_noise(text: &str) -> Result<NoiseSpec> {
    let (name, kv) = parse_kv(text)?;
    match name.as_str() {
        "poly" | "polynomial" => {
            check_keys(&kv, &["sigma", "gamma"], text)?;
            NoiseSpec::polynomial(take(&kv, "sigma", None, text)?, take(&kv, "gamma", Some(1.0), text)?)
        }
        "stable" => {
            check_keys(&kv, &["s"], text)?;
            NoiseSpec::stable(take(&kv, "s", None, text)?)
        }
        other => Err(Error::Config(format!("unknown noise `{other}`"))),
    }
}
