//! Synthetic data generation and the model-comparison harness.
//!
//! Replicate data sets are drawn from the full generative hierarchy and
//! fitted by the joint model, a death-only model and the homogeneous
//! survey baseline `N_it = mu_t * P_it`. Each fit is scored against the
//! truth by interval coverage, RMSE and relative median absolute error.

use std::collections::{BTreeSet, HashMap};

use nalgebra::{DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::execution::Execution;
use crate::graph::{build_grid_adjacency, AdjacencyGraph};
use crate::likelihood::{survey_loglik, survey_time_coefficient};
use crate::model::{
    inv_logit, statewide_mean, year_of, DesignMatrix, Observation, Outcome, OutcomeKind,
    SurveillancePanel, SurveyEstimates, SurveyRow,
};
use crate::sampler::{run_chains, SamplerConfig, SliceConfig};
use crate::summary::{summarize, PosteriorSummary};

/// Scenario for one simulation study. Parsed from `key = value` text.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub rows: usize,
    pub cols: usize,
    pub n_years: usize,
    pub n_outcomes: usize,
    pub replicates: usize,
    pub seed: u64,
    pub survey_years: Vec<i64>,
    pub survey_se: f64,
    pub pop_min: u64,
    pub pop_max: u64,
    pub beta0_mu: f64,
    pub beta1_mu: f64,
    /// Risk coefficients on iid standard-normal covariates.
    pub gamma: Vec<f64>,
    pub tau2_u: f64,
    pub phi_u: f64,
    pub sigma2_v: f64,
    /// Per outcome, `mu_t = intercept + slope * t`.
    pub mu_det_intercept: Vec<f64>,
    pub mu_det_slope: Vec<f64>,
    /// Per outcome coefficient on one standard-normal covariate.
    pub beta_det: Vec<f64>,
    pub tau2_f: Vec<f64>,
    pub phi_f: Vec<f64>,
    pub sigma2_eps: Vec<f64>,
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
    pub chains: usize,
    pub max_stepout: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            rows: 6,
            cols: 6,
            n_years: 5,
            n_outcomes: 2,
            replicates: 20,
            seed: 2024,
            survey_years: (1..=5).collect(),
            survey_se: 0.0025,
            pop_min: 5_000,
            pop_max: 50_000,
            beta0_mu: 0.05,
            beta1_mu: -0.001,
            gamma: vec![0.15, -0.1],
            tau2_u: 0.25,
            phi_u: 0.7,
            sigma2_v: 0.05,
            mu_det_intercept: vec![-2.45, -5.5],
            mu_det_slope: vec![0.05, 0.1],
            beta_det: vec![0.2, 0.3],
            tau2_f: vec![0.1, 0.1],
            phi_f: vec![0.5, 0.5],
            sigma2_eps: vec![0.05, 0.05],
            iterations: 6_000,
            burnin: 3_000,
            thin: 3,
            chains: 2,
            max_stepout: 10,
        }
    }
}

/// Survey years at the same relative positions as years 2, 5 and 8 of a
/// ten-year panel.
pub fn sparse_survey_years(n_years: usize) -> Vec<i64> {
    let set: BTreeSet<i64> = [0.2, 0.5, 0.8]
        .iter()
        .map(|f| ((f * n_years as f64).ceil() as i64).max(1))
        .collect();
    set.into_iter().collect()
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Invalid(format!("{key}: cannot parse {s:?}")))
        })
        .collect()
}

fn parse_one<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Invalid(format!("{key}: cannot parse {value:?}")))
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl ScenarioConfig {
    /// Applies `key = value` lines on top of the defaults. `survey_years`
    /// also accepts `all` and `sparse`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut survey_spec = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("expected key = value, got {line:?}"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value, &mut survey_spec).map_err(|e| match e {
                Error::Invalid(message) => Error::Parse {
                    line: lineno + 1,
                    message,
                },
                other => other,
            })?;
        }
        if let Some(spec) = survey_spec {
            cfg.survey_years = match spec.as_str() {
                "all" => (1..=cfg.n_years as i64).collect(),
                "sparse" => sparse_survey_years(cfg.n_years),
                other => parse_list("survey_years", other)?,
            };
        } else {
            cfg.survey_years = (1..=cfg.n_years as i64).collect();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str, survey_spec: &mut Option<String>) -> Result<()> {
        match key {
            "rows" => self.rows = parse_one(key, value)?,
            "cols" => self.cols = parse_one(key, value)?,
            "years" => self.n_years = parse_one(key, value)?,
            "outcomes" => self.n_outcomes = parse_one(key, value)?,
            "replicates" => self.replicates = parse_one(key, value)?,
            "seed" => self.seed = parse_one(key, value)?,
            "survey_years" => *survey_spec = Some(value.to_string()),
            "survey_se" => self.survey_se = parse_one(key, value)?,
            "pop_min" => self.pop_min = parse_one(key, value)?,
            "pop_max" => self.pop_max = parse_one(key, value)?,
            "beta0_mu" => self.beta0_mu = parse_one(key, value)?,
            "beta1_mu" => self.beta1_mu = parse_one(key, value)?,
            "gamma" => self.gamma = parse_list(key, value)?,
            "tau2_u" => self.tau2_u = parse_one(key, value)?,
            "phi_u" => self.phi_u = parse_one(key, value)?,
            "sigma2_v" => self.sigma2_v = parse_one(key, value)?,
            "mu_det_intercept" => self.mu_det_intercept = parse_list(key, value)?,
            "mu_det_slope" => self.mu_det_slope = parse_list(key, value)?,
            "beta_det" => self.beta_det = parse_list(key, value)?,
            "tau2_f" => self.tau2_f = parse_list(key, value)?,
            "phi_f" => self.phi_f = parse_list(key, value)?,
            "sigma2_eps" => self.sigma2_eps = parse_list(key, value)?,
            "iterations" => self.iterations = parse_one(key, value)?,
            "burnin" => self.burnin = parse_one(key, value)?,
            "thin" => self.thin = parse_one(key, value)?,
            "chains" => self.chains = parse_one(key, value)?,
            "max_stepout" => self.max_stepout = parse_one(key, value)?,
            _ => return Err(Error::Invalid(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Canonical `key = value` rendering; `parse(to_text())` round-trips.
    pub fn to_text(&self) -> String {
        let lines = [
            ("rows", self.rows.to_string()),
            ("cols", self.cols.to_string()),
            ("years", self.n_years.to_string()),
            ("outcomes", self.n_outcomes.to_string()),
            ("replicates", self.replicates.to_string()),
            ("seed", self.seed.to_string()),
            ("survey_years", join(&self.survey_years)),
            ("survey_se", self.survey_se.to_string()),
            ("pop_min", self.pop_min.to_string()),
            ("pop_max", self.pop_max.to_string()),
            ("beta0_mu", self.beta0_mu.to_string()),
            ("beta1_mu", self.beta1_mu.to_string()),
            ("gamma", join(&self.gamma)),
            ("tau2_u", self.tau2_u.to_string()),
            ("phi_u", self.phi_u.to_string()),
            ("sigma2_v", self.sigma2_v.to_string()),
            ("mu_det_intercept", join(&self.mu_det_intercept)),
            ("mu_det_slope", join(&self.mu_det_slope)),
            ("beta_det", join(&self.beta_det)),
            ("tau2_f", join(&self.tau2_f)),
            ("phi_f", join(&self.phi_f)),
            ("sigma2_eps", join(&self.sigma2_eps)),
            ("iterations", self.iterations.to_string()),
            ("burnin", self.burnin.to_string()),
            ("thin", self.thin.to_string()),
            ("chains", self.chains.to_string()),
            ("max_stepout", self.max_stepout.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.rows * self.cols < 2 {
            return bad(format!(
                "grid {}x{} needs at least two regions",
                self.rows, self.cols
            ));
        }
        if self.n_years == 0 || self.n_outcomes == 0 || self.replicates == 0 {
            return bad("years, outcomes and replicates must be positive".into());
        }
        let distinct: BTreeSet<i64> = self.survey_years.iter().copied().collect();
        if distinct.len() < 2 {
            return Err(Error::UnidentifiedTrend(distinct.len()));
        }
        if !(self.survey_se > 0.0) {
            return bad("survey_se must be positive".into());
        }
        if self.pop_min == 0 || self.pop_min > self.pop_max {
            return bad(format!(
                "population range {}..{} invalid",
                self.pop_min, self.pop_max
            ));
        }
        let k = self.n_outcomes;
        for (name, len) in [
            ("mu_det_intercept", self.mu_det_intercept.len()),
            ("mu_det_slope", self.mu_det_slope.len()),
            ("beta_det", self.beta_det.len()),
            ("tau2_f", self.tau2_f.len()),
            ("phi_f", self.phi_f.len()),
            ("sigma2_eps", self.sigma2_eps.len()),
        ] {
            if len != k {
                return bad(format!("{name} has {len} entries for {k} outcomes"));
            }
        }
        let variances = [self.tau2_u, self.sigma2_v]
            .into_iter()
            .chain(self.tau2_f.iter().copied())
            .chain(self.sigma2_eps.iter().copied());
        for v in variances {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("variance {v} must be non-negative"));
            }
        }
        for phi in std::iter::once(self.phi_u).chain(self.phi_f.iter().copied()) {
            if !(0.0..1.0).contains(&phi) {
                return bad(format!("phi {phi} outside [0, 1)"));
            }
        }
        for t in 0..self.n_years {
            let mu = statewide_mean(self.beta0_mu, self.beta1_mu, year_of(t));
            if !(mu > 0.0 && mu < 1.0) {
                return bad(format!(
                    "statewide mean {mu} in year {} outside (0, 1)",
                    year_of(t)
                ));
            }
        }
        self.sampler_config(0).validate()
    }

    /// All years surveyed, or a sparse subset.
    pub fn scenario_label(&self) -> &'static str {
        let all: BTreeSet<i64> = (1..=self.n_years as i64).collect();
        let have: BTreeSet<i64> = self.survey_years.iter().copied().collect();
        if all.is_subset(&have) {
            "yearly"
        } else {
            "sparse"
        }
    }

    pub fn sampler_config(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            n_iterations: self.iterations,
            n_burnin: self.burnin,
            thin: self.thin,
            n_chains: self.chains,
            seed,
            slice: SliceConfig {
                max_stepout: self.max_stepout,
                initial_widths: None,
            },
            ..SamplerConfig::default()
        }
    }

    pub fn grid(&self) -> Result<AdjacencyGraph> {
        build_grid_adjacency(self.rows, self.cols)
    }

    fn outcome_kind(&self, k: usize) -> OutcomeKind {
        if k + 1 == self.n_outcomes {
            OutcomeKind::Death
        } else if k == 0 {
            OutcomeKind::Treatment
        } else {
            OutcomeKind::Other
        }
    }

    fn outcome_name(&self, k: usize) -> String {
        match self.outcome_kind(k) {
            OutcomeKind::Death => "death".into(),
            OutcomeKind::Treatment => "treatment".into(),
            OutcomeKind::Other => format!("outcome{}", k + 1),
        }
    }
}

/// Stream-splitting seed derivation (SplitMix64 finaliser).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generating values of one simulated data set.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub n: Vec<u64>,
    pub lambda: Vec<f64>,
    /// `[k][cell]`
    pub p: Vec<Vec<f64>>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub f: Vec<Vec<f64>>,
    pub eps: Vec<Vec<f64>>,
    /// Statewide mean per surveillance year.
    pub mu: Vec<f64>,
    pub beta0_mu: f64,
    pub beta1_mu: f64,
    /// `[k][t]`
    pub mu_detect: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    pub panel: SurveillancePanel,
    pub survey: SurveyEstimates,
    pub graph: AdjacencyGraph,
    pub truth: Truth,
}

/// Draws sum-to-zero ICAR innovations with precision `(H - A) / tau2`.
struct IcarSampler {
    /// Columns scaled by `1 / sqrt(eigenvalue)` for the non-null directions.
    basis: Vec<DVector<f64>>,
}

impl IcarSampler {
    fn new(graph: &AdjacencyGraph) -> Self {
        let eig = SymmetricEigen::new(graph.precision_matrix());
        let basis = eig
            .eigenvalues
            .iter()
            .enumerate()
            .filter(|(_, &l)| l > 1e-9)
            .map(|(j, &l)| eig.eigenvectors.column(j) / l.sqrt())
            .collect();
        Self { basis }
    }

    fn draw<R: Rng>(&self, tau2: f64, rng: &mut R) -> DVector<f64> {
        let n = self.basis.first().map_or(0, |b| b.len());
        let mut x = DVector::zeros(n);
        for b in &self.basis {
            let z: f64 = StandardNormal.sample(rng);
            x += b * z;
        }
        let mean = x.mean();
        x.add_scalar_mut(-mean);
        x * tau2.sqrt()
    }
}

/// ICAR x AR(1) field on `n x T` cells: `x_1 = d_1`, `x_t = phi x_{t-1} + d_t`.
fn draw_field<R: Rng>(
    icar: &IcarSampler,
    n: usize,
    n_years: usize,
    phi: f64,
    tau2: f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut field = vec![0.0; n * n_years];
    for t in 0..n_years {
        let d = icar.draw(tau2, rng);
        for i in 0..n {
            let lag = if t > 0 {
                field[i * n_years + t - 1]
            } else {
                0.0
            };
            field[i * n_years + t] = phi * lag + d[i];
        }
    }
    field
}

fn normals<R: Rng>(len: usize, var: f64, rng: &mut R) -> Vec<f64> {
    let sd = var.sqrt();
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sd * z
        })
        .collect()
}

const SLICE_RETRIES: usize = 100;

/// Forward simulation through the generative hierarchy. No cells are
/// censored.
pub fn simulate_dataset(config: &ScenarioConfig, seed: u64) -> Result<SimulatedDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graph = config.grid()?;
    let n = graph.n_regions();
    let n_years = config.n_years;
    let cells = n * n_years;
    let icar = IcarSampler::new(&graph);

    let (lo, hi) = ((config.pop_min as f64).ln(), (config.pop_max as f64).ln());
    let populations: Vec<u64> = (0..n)
        .flat_map(|_| {
            let p = (lo + (hi - lo) * rng.random::<f64>()).exp().round() as u64;
            std::iter::repeat_n(p, n_years)
        })
        .collect();

    let risk_columns: Vec<(String, Vec<f64>)> = config
        .gamma
        .iter()
        .enumerate()
        .map(|(c, _)| (format!("z{}", c + 1), normals(cells, 1.0, &mut rng)))
        .collect();
    let risk_design = DesignMatrix::from_columns(n, n_years, risk_columns)?;
    let cov_effect: Vec<f64> = (0..cells)
        .map(|c| risk_design.dot(c / n_years, c % n_years, &config.gamma))
        .collect();

    let mu: Vec<f64> = (0..n_years)
        .map(|t| statewide_mean(config.beta0_mu, config.beta1_mu, year_of(t)))
        .collect();

    // risk field, one year at a time so an infeasible slice can be redrawn
    let mut u = vec![0.0; cells];
    let mut v = vec![0.0; cells];
    let mut lambda = vec![0.0; cells];
    for t in 0..n_years {
        let mut ok = false;
        for _ in 0..SLICE_RETRIES {
            let d = icar.draw(config.tau2_u, &mut rng);
            let vt = normals(n, config.sigma2_v, &mut rng);
            for i in 0..n {
                let c = i * n_years + t;
                let lag = if t > 0 { u[c - 1] } else { 0.0 };
                u[c] = config.phi_u * lag + d[i];
                v[c] = vt[i];
                lambda[c] = (cov_effect[c] + u[c] + v[c]).exp();
            }
            if (0..n).all(|i| {
                let r = mu[t] * lambda[i * n_years + t];
                r > 0.0 && r < 1.0
            }) {
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::Simulation(format!(
                "mu * lambda left (0, 1) in year {} after {SLICE_RETRIES} redraws",
                year_of(t)
            )));
        }
    }

    let mut truth_n = vec![0u64; cells];
    for c in 0..cells {
        let rate = mu[c % n_years] * lambda[c];
        truth_n[c] = Binomial::new(populations[c], rate)
            .map_err(|e| Error::Simulation(e.to_string()))?
            .sample(&mut rng);
    }

    let mut outcomes = Vec::with_capacity(config.n_outcomes);
    let mut f_all = Vec::new();
    let mut eps_all = Vec::new();
    let mut p_all = Vec::new();
    let mut mu_detect = Vec::new();
    for k in 0..config.n_outcomes {
        let x = normals(cells, 1.0, &mut rng);
        let design = DesignMatrix::from_columns(n, n_years, vec![(format!("x{}", k + 1), x)])?;
        let f = draw_field(
            &icar,
            n,
            n_years,
            config.phi_f[k],
            config.tau2_f[k],
            &mut rng,
        );
        let eps = normals(cells, config.sigma2_eps[k], &mut rng);
        let md: Vec<f64> = (0..n_years)
            .map(|t| config.mu_det_intercept[k] + config.mu_det_slope[k] * year_of(t) as f64)
            .collect();
        let mut p = vec![0.0; cells];
        let mut obs = Vec::with_capacity(cells);
        for c in 0..cells {
            let (i, t) = (c / n_years, c % n_years);
            let eta = md[t] + design.dot(i, t, &config.beta_det[k..=k]) + f[c] + eps[c];
            p[c] = inv_logit(eta);
            let y = Binomial::new(truth_n[c], p[c])
                .map_err(|e| Error::Simulation(e.to_string()))?
                .sample(&mut rng);
            obs.push(Observation::Exact(y));
        }
        outcomes.push(Outcome {
            name: config.outcome_name(k),
            kind: config.outcome_kind(k),
            observations: obs,
            design,
        });
        f_all.push(f);
        eps_all.push(eps);
        p_all.push(p);
        mu_detect.push(md);
    }

    let years: BTreeSet<i64> = config.survey_years.iter().copied().collect();
    let mut rows = Vec::with_capacity(years.len());
    for year in years {
        let m = statewide_mean(config.beta0_mu, config.beta1_mu, year);
        let mut est = None;
        for _ in 0..10_000 {
            let z: f64 = StandardNormal.sample(&mut rng);
            let s = m + config.survey_se * z;
            if s > 0.0 && s < 1.0 {
                est = Some(s);
                break;
            }
        }
        let estimate = est.ok_or_else(|| {
            Error::Simulation(format!("survey draw for year {year} never fell in (0, 1)"))
        })?;
        rows.push(SurveyRow {
            a: year,
            b: year,
            estimate,
            se: config.survey_se,
        });
    }

    let panel = SurveillancePanel {
        n_regions: n,
        n_years,
        populations,
        outcomes,
        risk_design,
        acs: Vec::new(),
    };
    panel.validate()?;
    Ok(SimulatedDataset {
        panel,
        survey: SurveyEstimates::new(rows)?,
        graph,
        truth: Truth {
            n: truth_n,
            lambda,
            p: p_all,
            u,
            v,
            f: f_all,
            eps: eps_all,
            mu,
            beta0_mu: config.beta0_mu,
            beta1_mu: config.beta1_mu,
            mu_detect,
        },
    })
}

/// Survey-only trend fit and the homogeneous count estimate it implies.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineEstimate {
    pub beta0_mu: f64,
    pub beta1_mu: f64,
    /// Statewide mean per surveillance year.
    pub mu: Vec<f64>,
    /// `mu_t * P_it` per cell.
    pub n_hat: Vec<f64>,
}

const BASELINE_STEP0: f64 = 1e-4;
const BASELINE_STEP1: f64 = 1e-5;
const BASELINE_HALF_WIDTH: i64 = 50;

/// Maximises the survey likelihood over a grid with spacing 1e-4 in the
/// intercept and 1e-5 in the slope. The grid is centred on the weighted
/// least-squares line and re-centred while the optimum sits on its edge.
pub fn baseline_estimate(
    survey: &SurveyEstimates,
    populations: &[u64],
    n_years: usize,
) -> Result<BaselineEstimate> {
    let rows = survey.rows();
    if rows.len() < 2 {
        return Err(Error::UnidentifiedTrend(rows.len()));
    }
    // weighted least squares for the centre
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for r in rows {
        let w = 1.0 / (r.se * r.se);
        let x = survey_time_coefficient(r.a, r.b);
        sw += w;
        sx += w * x;
        sy += w * r.estimate;
        sxx += w * x * x;
        sxy += w * x * r.estimate;
    }
    let det = sw * sxx - sx * sx;
    if !(det.abs() > 0.0) {
        return Err(Error::UnidentifiedTrend(rows.len()));
    }
    let mut c1 = (sw * sxy - sx * sy) / det;
    let mut c0 = (sy - c1 * sx) / sw;

    let mut best = (f64::NEG_INFINITY, c0, c1);
    for _ in 0..100 {
        let mut arg = (0i64, 0i64);
        best = (f64::NEG_INFINITY, c0, c1);
        for a in -BASELINE_HALF_WIDTH..=BASELINE_HALF_WIDTH {
            for b in -BASELINE_HALF_WIDTH..=BASELINE_HALF_WIDTH {
                let b0 = c0 + a as f64 * BASELINE_STEP0;
                let b1 = c1 + b as f64 * BASELINE_STEP1;
                let ll = survey_loglik(survey, b0, b1)?;
                if ll > best.0 {
                    best = (ll, b0, b1);
                    arg = (a, b);
                }
            }
        }
        if arg.0.abs() < BASELINE_HALF_WIDTH && arg.1.abs() < BASELINE_HALF_WIDTH {
            break;
        }
        c0 = best.1;
        c1 = best.2;
    }
    let (_, beta0, beta1) = best;
    let mu: Vec<f64> = (0..n_years)
        .map(|t| statewide_mean(beta0, beta1, year_of(t)))
        .collect();
    let n_hat = populations
        .iter()
        .enumerate()
        .map(|(c, &p)| mu[c % n_years] * p as f64)
        .collect();
    Ok(BaselineEstimate {
        beta0_mu: beta0,
        beta1_mu: beta1,
        mu,
        n_hat,
    })
}

/// Posterior summaries of the joint model fitted to the death outcome only.
pub fn fit_single_outcome(
    panel: &SurveillancePanel,
    survey: &SurveyEstimates,
    graph: &AdjacencyGraph,
    config: &SamplerConfig,
    execution: Execution,
) -> Result<Vec<crate::sampler::ChainOutput>> {
    let death = panel
        .outcomes
        .iter()
        .position(|o| o.kind == OutcomeKind::Death)
        .ok_or_else(|| Error::Invalid("panel has no death outcome".into()))?;
    run_chains(
        &panel.with_outcomes(&[death]),
        survey,
        graph,
        config,
        execution,
    )
}

/// Point and interval estimates of one model, cell-indexed.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEstimates {
    pub n_mean: Vec<f64>,
    /// 95% equal-tail interval per cell, absent for point-only models.
    pub n_interval: Option<Vec<(f64, f64)>>,
    pub lambda_mean: Vec<f64>,
}

impl ModelEstimates {
    pub fn from_baseline(b: &BaselineEstimate) -> Self {
        Self {
            lambda_mean: vec![1.0; b.n_hat.len()],
            n_mean: b.n_hat.clone(),
            n_interval: None,
        }
    }

    /// Uses the leading `N` and `lambda` blocks of the monitored quantities.
    pub fn from_summaries(summaries: &[PosteriorSummary], n_cells: usize) -> Self {
        let n = &summaries[..n_cells];
        let l = &summaries[n_cells..2 * n_cells];
        Self {
            n_mean: n.iter().map(|s| s.mean).collect(),
            n_interval: Some(n.iter().map(|s| (s.lower, s.upper)).collect()),
            lambda_mean: l.iter().map(|s| s.mean).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    /// Fraction of cells whose true `N` lies in the 95% interval.
    pub coverage: Option<f64>,
    pub rmse_n: f64,
    pub rmse_lambda: f64,
    /// Median over cells of `|N_hat - N| / max(N, 1)`.
    pub rel_mae_n: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len();
    if m == 0 {
        return f64::NAN;
    }
    if m % 2 == 1 {
        values[m / 2]
    } else {
        (values[m / 2 - 1] + values[m / 2]) / 2.0
    }
}

pub fn score(truth_n: &[u64], truth_lambda: &[f64], est: &ModelEstimates) -> Scores {
    let m = truth_n.len() as f64;
    let rmse_n = (truth_n
        .iter()
        .zip(&est.n_mean)
        .map(|(&n, &h)| (h - n as f64).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();
    let rmse_lambda = (truth_lambda
        .iter()
        .zip(&est.lambda_mean)
        .map(|(&l, &h)| (h - l).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();
    let mut rel: Vec<f64> = truth_n
        .iter()
        .zip(&est.n_mean)
        .map(|(&n, &h)| (h - n as f64).abs() / (n.max(1) as f64))
        .collect();
    let coverage = est.n_interval.as_ref().map(|iv| {
        truth_n
            .iter()
            .zip(iv)
            .filter(|(&n, &(lo, hi))| lo <= n as f64 && n as f64 <= hi)
            .count() as f64
            / m
    });
    Scores {
        coverage,
        rmse_n,
        rmse_lambda,
        rel_mae_n: median(&mut rel),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    Joint,
    SingleOutcome,
    Baseline,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [
        ModelKind::Joint,
        ModelKind::SingleOutcome,
        ModelKind::Baseline,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Joint => "joint",
            ModelKind::SingleOutcome => "single",
            ModelKind::Baseline => "baseline",
        }
    }
}

/// Fraction of intercept values inside their 95% intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct InterceptCoverage {
    pub parameter: String,
    pub covered: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub scores: Vec<(ModelKind, Scores)>,
    /// Intercept coverage of the fitted models.
    pub intercepts: Vec<(ModelKind, InterceptCoverage)>,
}

impl ReplicateResult {
    pub fn scores_of(&self, model: ModelKind) -> Option<Scores> {
        self.scores
            .iter()
            .find(|(m, _)| *m == model)
            .map(|(_, s)| *s)
    }
}

/// Whether `a` is strictly better than `b` on RMSE(N), RMSE(lambda) and
/// relative MAE(N) together.
pub fn beats(a: &Scores, b: &Scores) -> bool {
    a.rmse_n < b.rmse_n && a.rmse_lambda < b.rmse_lambda && a.rel_mae_n < b.rel_mae_n
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub scenario: String,
    pub replicates: Vec<ReplicateResult>,
}

/// Per-model averages across replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub model: ModelKind,
    pub mean_cp: Option<f64>,
    pub median_cp: Option<f64>,
    pub rmse_n: f64,
    pub rmse_lambda: f64,
    pub rel_mae_n: f64,
    /// Replicates where this model beats the baseline on all three errors.
    pub wins_vs_baseline: usize,
    /// Replicates where this model has lower RMSE(N) than the other fitted
    /// model.
    pub wins_rmse_n_vs_other: usize,
}

impl EvaluationReport {
    /// Long-format rows `(replicate, model, metric, value)`.
    pub fn long_rows(&self) -> Vec<(usize, &'static str, &'static str, Option<f64>)> {
        let mut out = Vec::new();
        for r in &self.replicates {
            for (model, s) in &r.scores {
                let m = model.label();
                out.push((r.replicate, m, "cp", s.coverage));
                out.push((r.replicate, m, "rmse_n", Some(s.rmse_n)));
                out.push((r.replicate, m, "rmse_lambda", Some(s.rmse_lambda)));
                out.push((r.replicate, m, "rel_mae_n", Some(s.rel_mae_n)));
            }
        }
        out
    }

    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let m = self.replicates.len() as f64;
        let models: Vec<ModelKind> = ModelKind::ALL
            .into_iter()
            .filter(|k| self.replicates.iter().all(|r| r.scores_of(*k).is_some()))
            .collect();
        models
            .iter()
            .map(|&model| {
                let all: Vec<Scores> = self
                    .replicates
                    .iter()
                    .filter_map(|r| r.scores_of(model))
                    .collect();
                let mut cps: Vec<f64> = all.iter().filter_map(|s| s.coverage).collect();
                let (mean_cp, median_cp) = if cps.is_empty() {
                    (None, None)
                } else {
                    let mean = cps.iter().sum::<f64>() / cps.len() as f64;
                    (Some(mean), Some(median(&mut cps)))
                };
                let other = match model {
                    ModelKind::Joint => Some(ModelKind::SingleOutcome),
                    ModelKind::SingleOutcome => Some(ModelKind::Joint),
                    ModelKind::Baseline => None,
                };
                let wins_vs_baseline = self
                    .replicates
                    .iter()
                    .filter(
                        |r| match (r.scores_of(model), r.scores_of(ModelKind::Baseline)) {
                            (Some(a), Some(b)) if model != ModelKind::Baseline => beats(&a, &b),
                            _ => false,
                        },
                    )
                    .count();
                let wins_rmse_n_vs_other = other.map_or(0, |o| {
                    self.replicates
                        .iter()
                        .filter(|r| match (r.scores_of(model), r.scores_of(o)) {
                            (Some(a), Some(b)) => a.rmse_n < b.rmse_n,
                            _ => false,
                        })
                        .count()
                });
                AggregateRow {
                    model,
                    mean_cp,
                    median_cp,
                    rmse_n: all.iter().map(|s| s.rmse_n).sum::<f64>() / m,
                    rmse_lambda: all.iter().map(|s| s.rmse_lambda).sum::<f64>() / m,
                    rel_mae_n: all.iter().map(|s| s.rel_mae_n).sum::<f64>() / m,
                    wins_vs_baseline,
                    wins_rmse_n_vs_other,
                }
            })
            .collect()
    }

    /// Pooled intercept coverage per model and parameter.
    pub fn intercept_coverage(&self) -> Vec<(ModelKind, InterceptCoverage)> {
        let mut acc: HashMap<(ModelKind, String), (usize, usize)> = HashMap::new();
        for r in &self.replicates {
            for (model, c) in &r.intercepts {
                let e = acc.entry((*model, c.parameter.clone())).or_default();
                e.0 += c.covered;
                e.1 += c.total;
            }
        }
        let mut out: Vec<(ModelKind, InterceptCoverage)> = acc
            .into_iter()
            .map(|((model, parameter), (covered, total))| {
                (
                    model,
                    InterceptCoverage {
                        parameter,
                        covered,
                        total,
                    },
                )
            })
            .collect();
        out.sort_by(|a, b| (a.0, &a.1.parameter).cmp(&(b.0, &b.1.parameter)));
        out
    }
}

fn intercept_coverage(
    summaries: &[PosteriorSummary],
    truth: &Truth,
    outcome_map: &[usize],
) -> Vec<InterceptCoverage> {
    let by_name: HashMap<String, &PosteriorSummary> = summaries
        .iter()
        .map(|s| (s.quantity.to_string(), s))
        .collect();
    let covers = |name: &str, x: f64| by_name.get(name).is_some_and(|s| s.contains(x));
    let mut out = vec![
        InterceptCoverage {
            parameter: "beta0_mu".into(),
            covered: covers("beta0_mu", truth.beta0_mu) as usize,
            total: 1,
        },
        InterceptCoverage {
            parameter: "beta1_mu".into(),
            covered: covers("beta1_mu", truth.beta1_mu) as usize,
            total: 1,
        },
    ];
    for (fitted, &original) in outcome_map.iter().enumerate() {
        let years = truth.mu_detect[original].len();
        let covered = (0..years)
            .filter(|&t| {
                covers(
                    &format!("mu_det{}[{}]", fitted + 1, year_of(t)),
                    truth.mu_detect[original][t],
                )
            })
            .count();
        out.push(InterceptCoverage {
            parameter: format!("mu_det{}", original + 1),
            covered,
            total: years,
        });
    }
    out
}

/// Simulates, fits and scores one replicate.
pub fn evaluate_replicate(
    config: &ScenarioConfig,
    replicate: usize,
    execution: Execution,
) -> Result<ReplicateResult> {
    let data_seed = derive_seed(config.seed, 2 * replicate as u64);
    let fit_seed = derive_seed(config.seed, 2 * replicate as u64 + 1);
    let data = simulate_dataset(config, data_seed)?;
    let cells = data.panel.n_cells();
    let truth = &data.truth;

    let sampler = config.sampler_config(fit_seed);
    let joint = summarize(&run_chains(
        &data.panel,
        &data.survey,
        &data.graph,
        &sampler,
        execution,
    )?)?;
    let death = data
        .panel
        .outcomes
        .iter()
        .position(|o| o.kind == OutcomeKind::Death)
        .unwrap_or(config.n_outcomes - 1);
    let single = summarize(&fit_single_outcome(
        &data.panel,
        &data.survey,
        &data.graph,
        &config.sampler_config(derive_seed(fit_seed, 1)),
        execution,
    )?)?;
    let baseline = baseline_estimate(&data.survey, &data.panel.populations, config.n_years)?;

    let scores = vec![
        (
            ModelKind::Joint,
            score(
                &truth.n,
                &truth.lambda,
                &ModelEstimates::from_summaries(&joint, cells),
            ),
        ),
        (
            ModelKind::SingleOutcome,
            score(
                &truth.n,
                &truth.lambda,
                &ModelEstimates::from_summaries(&single, cells),
            ),
        ),
        (
            ModelKind::Baseline,
            score(
                &truth.n,
                &truth.lambda,
                &ModelEstimates::from_baseline(&baseline),
            ),
        ),
    ];
    let all_outcomes: Vec<usize> = (0..config.n_outcomes).collect();
    let mut intercepts: Vec<(ModelKind, InterceptCoverage)> =
        intercept_coverage(&joint, truth, &all_outcomes)
            .into_iter()
            .map(|c| (ModelKind::Joint, c))
            .collect();
    intercepts.extend(
        intercept_coverage(&single, truth, &[death])
            .into_iter()
            .map(|c| (ModelKind::SingleOutcome, c)),
    );
    Ok(ReplicateResult {
        replicate,
        scores,
        intercepts,
    })
}

/// Runs every replicate of the scenario. Replicates are scheduled by
/// `execution`; chains within a replicate run sequentially.
pub fn evaluate(config: &ScenarioConfig, execution: Execution) -> Result<EvaluationReport> {
    config.validate()?;
    let replicates = execution
        .map(config.replicates, |r| {
            evaluate_replicate(config, r, Execution::Sequential)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport {
        scenario: config.scenario_label().to_string(),
        replicates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ScenarioConfig {
        ScenarioConfig {
            rows: 2,
            cols: 2,
            n_years: 3,
            survey_years: vec![1, 2, 3],
            replicates: 1,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn config_round_trips() {
        let cfg =
            ScenarioConfig::parse("rows = 3\ncols=4 # c\nsurvey_years = sparse\nyears = 10\n")
                .unwrap();
        assert_eq!((cfg.rows, cfg.cols), (3, 4));
        assert_eq!(cfg.survey_years, vec![2, 5, 8]);
        assert_eq!(cfg.scenario_label(), "sparse");
        assert_eq!(ScenarioConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(
            ScenarioConfig::parse("").unwrap().scenario_label(),
            "yearly"
        );
    }

    #[test]
    fn config_rejects_bad_input() {
        assert!(matches!(
            ScenarioConfig::parse("bogus = 1"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(ScenarioConfig::parse("survey_years = 3").is_err());
        assert!(ScenarioConfig::parse("outcomes = 3").is_err());
        assert!(ScenarioConfig::parse("burnin = 99999").is_err());
    }

    #[test]
    fn sparse_years_scale_with_panel() {
        assert_eq!(sparse_survey_years(10), vec![2, 5, 8]);
        assert_eq!(sparse_survey_years(5), vec![1, 3, 4]);
    }

    #[test]
    fn degenerate_generator_has_unit_risk() {
        let cfg = ScenarioConfig {
            gamma: vec![0.0, 0.0],
            tau2_u: 0.0,
            sigma2_v: 0.0,
            tau2_f: vec![0.0, 0.0],
            sigma2_eps: vec![0.0, 0.0],
            ..tiny()
        };
        let d = simulate_dataset(&cfg, 1).unwrap();
        assert!(d.truth.lambda.iter().all(|&l| l == 1.0));
    }

    #[test]
    fn counts_never_exceed_truth_and_fields_are_centred() {
        let cfg = ScenarioConfig::default();
        let d = simulate_dataset(&cfg, 9).unwrap();
        for o in &d.panel.outcomes {
            for (obs, &n) in o.observations.iter().zip(&d.truth.n) {
                assert!(obs.lower_bound() <= n);
            }
        }
        let n = d.panel.n_regions;
        for t in 0..cfg.n_years {
            let s: f64 = (0..n).map(|i| d.truth.u[i * cfg.n_years + t]).sum();
            assert!(s.abs() < 1e-10);
        }
        assert_eq!(d.survey.len(), cfg.n_years);
    }

    #[test]
    fn perfect_detection_reveals_counts() {
        let cfg = ScenarioConfig {
            mu_det_intercept: vec![-2.0, 60.0],
            mu_det_slope: vec![0.0, 0.0],
            ..tiny()
        };
        let d = simulate_dataset(&cfg, 4).unwrap();
        for (obs, &n) in d.panel.outcomes[1].observations.iter().zip(&d.truth.n) {
            assert_eq!(*obs, Observation::Exact(n));
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let cfg = tiny();
        assert_eq!(
            simulate_dataset(&cfg, 3).unwrap(),
            simulate_dataset(&cfg, 3).unwrap()
        );
        assert_ne!(
            simulate_dataset(&cfg, 3).unwrap().truth.n,
            simulate_dataset(&cfg, 4).unwrap().truth.n
        );
    }

    #[test]
    fn baseline_two_point_line() {
        let survey = SurveyEstimates::new(vec![
            SurveyRow {
                a: 1,
                b: 1,
                estimate: 0.05,
                se: 0.001,
            },
            SurveyRow {
                a: 3,
                b: 3,
                estimate: 0.07,
                se: 0.001,
            },
        ])
        .unwrap();
        let b = baseline_estimate(&survey, &[1000, 1000, 1000], 3).unwrap();
        assert!((b.mu[1] - 0.06).abs() < 1e-9, "{:?}", b.mu);
        assert!((b.n_hat[1] - 60.0).abs() < 1e-6);
    }

    #[test]
    fn baseline_constant_rate() {
        let survey = SurveyEstimates::new(vec![
            SurveyRow {
                a: 1,
                b: 1,
                estimate: 0.04,
                se: 0.002,
            },
            SurveyRow {
                a: 2,
                b: 4,
                estimate: 0.04,
                se: 0.002,
            },
        ])
        .unwrap();
        let b = baseline_estimate(&survey, &[100, 200, 300, 400], 2).unwrap();
        for (h, p) in b.n_hat.iter().zip([100.0, 200.0, 300.0, 400.0]) {
            assert!((h - 0.04 * p).abs() < 1e-6);
        }
    }

    /// Survey rows spanning 2003-2019 with 2007 as year 1.
    #[test]
    fn baseline_mixed_span_rows_decline() {
        let rows = [
            (2003, 2006, 0.05, 0.0025),
            (2007, 2010, 0.055, 0.0026),
            (2011, 2014, 0.052, 0.0024),
            (2015, 2016, 0.047, 0.0041),
            (2016, 2017, 0.051, 0.0037),
            (2017, 2018, 0.041, 0.0033),
            (2018, 2019, 0.043, 0.0043),
        ]
        .iter()
        .map(|&(a, b, estimate, se)| SurveyRow {
            a: a - 2006,
            b: b - 2006,
            estimate,
            se,
        })
        .collect();
        let survey = SurveyEstimates::new(rows).unwrap();
        let b = baseline_estimate(&survey, &[1; 13], 13).unwrap();
        assert!(b.beta1_mu < 0.0);
        assert!(b.mu.windows(2).all(|w| w[1] < w[0]));
        // the grid optimum is at least as good as its neighbours
        let at = |b0, b1| survey_loglik(&survey, b0, b1).unwrap();
        let best = at(b.beta0_mu, b.beta1_mu);
        for (d0, d1) in [(1e-4, 0.0), (-1e-4, 0.0), (0.0, 1e-5), (0.0, -1e-5)] {
            assert!(best >= at(b.beta0_mu + d0, b.beta1_mu + d1));
        }
    }

    #[test]
    fn perfect_estimates_score_zero() {
        let n = vec![3u64, 0, 10];
        let l = vec![1.0, 0.5, 2.0];
        let est = ModelEstimates {
            n_mean: vec![3.0, 0.0, 10.0],
            n_interval: Some(vec![(3.0, 3.0), (0.0, 1.0), (9.0, 9.5)]),
            lambda_mean: l.clone(),
        };
        let s = score(&n, &l, &est);
        assert_eq!((s.rmse_n, s.rmse_lambda, s.rel_mae_n), (0.0, 0.0, 0.0));
        assert!((s.coverage.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn score_is_permutation_invariant() {
        let n = vec![5u64, 8, 1, 0];
        let l = vec![1.0, 1.2, 0.8, 0.9];
        let est = ModelEstimates {
            n_mean: vec![4.0, 9.0, 2.0, 1.0],
            n_interval: Some(vec![(3.0, 6.0), (5.0, 7.0), (0.0, 3.0), (0.0, 0.5)]),
            lambda_mean: vec![1.1, 1.0, 0.7, 1.0],
        };
        let perm = [2, 0, 3, 1];
        let pe = ModelEstimates {
            n_mean: perm.iter().map(|&j| est.n_mean[j]).collect(),
            n_interval: Some(
                perm.iter()
                    .map(|&j| est.n_interval.as_ref().unwrap()[j])
                    .collect(),
            ),
            lambda_mean: perm.iter().map(|&j| est.lambda_mean[j]).collect(),
        };
        let a = score(&n, &l, &est);
        let b = score(
            &perm.iter().map(|&j| n[j]).collect::<Vec<_>>(),
            &perm.iter().map(|&j| l[j]).collect::<Vec<_>>(),
            &pe,
        );
        assert_eq!(a, b);
    }

    #[test]
    fn derived_seeds_differ() {
        let s: BTreeSet<u64> = (0..100).map(|k| derive_seed(7, k)).collect();
        assert_eq!(s.len(), 100);
    }
}
