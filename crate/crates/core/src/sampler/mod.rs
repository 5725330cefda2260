//! Adaptive Metropolis-within-Gibbs sampler for the full model.
//!
//! One sweep updates, in order: each region's latent count trajectory
//! (factor slice), the risk field `u` (sum-to-zero random walk), `v`, the
//! risk coefficients, the statewide trend, then per outcome the detection
//! field `f` (re-centred into the yearly intercepts), `eps`, intercepts and
//! coefficients, then the temporal correlations, the conjugate variances
//! and finally the latent covariate layer.
//!
//! Every per-cell likelihood term is cached and refreshed whenever an input
//! to it changes; the tracked log posterior sums those caches with the
//! cheap global terms recomputed each iteration.

mod adapt;
pub mod slice;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::execution::Execution;
use crate::graph::AdjacencyGraph;
use crate::likelihood::{
    acs_process_loglik, acs_row_loglik, binomial_log_interval, icar_ar1_loglik, icar_ar1_quadratic,
    icar_full_conditional, inverse_gamma_logpdf, ln_choose, log_posterior, normal_logpdf,
    prior_logdensity, survey_loglik, VARIANCE_PRIOR_SCALE, VARIANCE_PRIOR_SHAPE,
};
use crate::model::{
    inv_logit, logit, risk_covariate_effect, year_of, ModelState, Observation, SurveillancePanel,
    SurveyEstimates,
};
use adapt::{BlockRw, RwScale};
use slice::{to_lattice, FactorSlice};
use statrs::function::gamma::ln_gamma;

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationConfig {
    /// Iterations between adaptation steps during burn-in.
    pub interval: usize,
    pub target_scalar: f64,
    pub target_block: f64,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            interval: 50,
            target_scalar: 0.44,
            target_block: 0.234,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceConfig {
    pub max_stepout: usize,
    /// Initial width per year; derived from the starting counts when `None`.
    pub initial_widths: Option<Vec<f64>>,
}

impl Default for SliceConfig {
    fn default() -> Self {
        Self {
            max_stepout: 10,
            initial_widths: None,
        }
    }
}

/// Switches for each update block. Disabled blocks stay at their initial
/// values, which is how sub-models with fixed parameters are run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdatePlan {
    pub latent_counts: bool,
    pub risk_field: bool,
    pub risk_iid: bool,
    pub risk_coefficients: bool,
    pub statewide_trend: bool,
    pub detection_field: bool,
    pub detection_iid: bool,
    pub detection_intercepts: bool,
    pub detection_coefficients: bool,
    pub temporal_correlation: bool,
    pub tau2_u: bool,
    pub sigma2_v: bool,
    pub tau2_f: bool,
    pub sigma2_eps: bool,
    pub covariates: bool,
    /// Joint moves along the count/detection ridge.
    pub ridge_moves: bool,
}

impl UpdatePlan {
    pub fn all() -> Self {
        Self {
            latent_counts: true,
            risk_field: true,
            risk_iid: true,
            risk_coefficients: true,
            statewide_trend: true,
            detection_field: true,
            detection_iid: true,
            detection_intercepts: true,
            detection_coefficients: true,
            temporal_correlation: true,
            tau2_u: true,
            sigma2_v: true,
            tau2_f: true,
            sigma2_eps: true,
            covariates: true,
            ridge_moves: true,
        }
    }

    pub fn none() -> Self {
        Self {
            latent_counts: false,
            risk_field: false,
            risk_iid: false,
            risk_coefficients: false,
            statewide_trend: false,
            detection_field: false,
            detection_iid: false,
            detection_intercepts: false,
            detection_coefficients: false,
            temporal_correlation: false,
            tau2_u: false,
            sigma2_v: false,
            tau2_f: false,
            sigma2_eps: false,
            covariates: false,
            ridge_moves: false,
        }
    }
}

impl Default for UpdatePlan {
    fn default() -> Self {
        Self::all()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub n_iterations: usize,
    pub n_burnin: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub seed: u64,
    pub adaptation: AdaptationConfig,
    pub slice: SliceConfig,
    pub updates: UpdatePlan,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_iterations: 10_000,
            n_burnin: 5_000,
            thin: 5,
            n_chains: 2,
            seed: 1,
            adaptation: AdaptationConfig::default(),
            slice: SliceConfig::default(),
            updates: UpdatePlan::all(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iterations == 0 || self.thin == 0 || self.n_chains == 0 {
            return Err(Error::Invalid(
                "iterations, thin and chains must be positive".into(),
            ));
        }
        if self.n_burnin >= self.n_iterations {
            return Err(Error::Invalid(format!(
                "burn-in {} must be below iterations {}",
                self.n_burnin, self.n_iterations
            )));
        }
        if self.adaptation.interval == 0 {
            return Err(Error::Invalid(
                "adaptation interval must be positive".into(),
            ));
        }
        if !(self.adaptation.target_scalar > 0.0 && self.adaptation.target_scalar < 1.0)
            || !(self.adaptation.target_block > 0.0 && self.adaptation.target_block < 1.0)
        {
            return Err(Error::Invalid(
                "acceptance targets must lie in (0, 1)".into(),
            ));
        }
        if self.slice.max_stepout == 0 {
            return Err(Error::Invalid("max_stepout must be positive".into()));
        }
        if let Some(w) = &self.slice.initial_widths {
            if w.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::Invalid("slice widths must be positive".into()));
            }
        }
        Ok(())
    }

    /// Number of retained draws per chain.
    pub fn n_retained(&self) -> usize {
        (self.n_iterations - self.n_burnin) / self.thin
    }

    /// Seed of chain `index`.
    pub fn chain_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add(index as u64)
    }
}

/// Name of a monitored quantity. Region-year quantities carry both
/// indices; yearly quantities carry only the year.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Quantity {
    pub name: String,
    pub region: Option<String>,
    pub year: Option<i64>,
}

impl Quantity {
    pub fn scalar(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            region: None,
            year: None,
        }
    }

    pub fn yearly(name: impl Into<String>, year: i64) -> Self {
        Self {
            name: name.into(),
            region: None,
            year: Some(year),
        }
    }

    pub fn cell(name: impl Into<String>, region: impl Into<String>, year: i64) -> Self {
        Self {
            name: name.into(),
            region: Some(region.into()),
            year: Some(year),
        }
    }

    /// Inverse of `Display`.
    pub fn parse(s: &str) -> Result<Self> {
        let Some(open) = s.find('[') else {
            return Ok(Self::scalar(s));
        };
        if !s.ends_with(']') {
            return Err(Error::Invalid(format!("malformed quantity name {s:?}")));
        }
        let name = &s[..open];
        let inner = &s[open + 1..s.len() - 1];
        let bad = || Error::Invalid(format!("malformed quantity name {s:?}"));
        match inner.rsplit_once(',') {
            Some((region, year)) => Ok(Self::cell(name, region, year.parse().map_err(|_| bad())?)),
            None => match inner.parse() {
                Ok(year) => Ok(Self::yearly(name, year)),
                // coefficient labels such as gamma[poverty]
                Err(_) => Ok(Self::scalar(s)),
            },
        }
    }
}

impl std::fmt::Display for Quantity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (&self.region, self.year) {
            (Some(r), Some(y)) => write!(f, "{}[{},{}]", self.name, r, y),
            (None, Some(y)) => write!(f, "{}[{}]", self.name, y),
            _ => write!(f, "{}", self.name),
        }
    }
}

/// Names of the per-draw columns, in recording order.
pub fn monitored_quantities(panel: &SurveillancePanel, graph: &AdjacencyGraph) -> Vec<Quantity> {
    let labels = graph.labels();
    let mut q = Vec::new();
    for name in std::iter::once("N".to_string())
        .chain(std::iter::once("lambda".to_string()))
        .chain((1..=panel.outcomes.len()).map(|k| format!("p{k}")))
    {
        for label in labels.iter().take(panel.n_regions) {
            for t in 0..panel.n_years {
                q.push(Quantity::cell(name.clone(), label.clone(), year_of(t)));
            }
        }
    }
    for t in 0..panel.n_years {
        q.push(Quantity::yearly("mu", year_of(t)));
    }
    q.push(Quantity::scalar("beta0_mu"));
    q.push(Quantity::scalar("beta1_mu"));
    for name in panel.risk_design.names() {
        q.push(Quantity::scalar(format!("gamma[{name}]")));
    }
    for (k, o) in panel.outcomes.iter().enumerate() {
        let k1 = k + 1;
        for t in 0..panel.n_years {
            q.push(Quantity::yearly(format!("mu_det{k1}"), year_of(t)));
        }
        for name in o.design.names() {
            q.push(Quantity::scalar(format!("beta{k1}[{name}]")));
        }
        q.push(Quantity::scalar(format!("sigma2_eps{k1}")));
        q.push(Quantity::scalar(format!("tau2_f{k1}")));
        q.push(Quantity::scalar(format!("phi_f{k1}")));
    }
    q.push(Quantity::scalar("tau2_u"));
    q.push(Quantity::scalar("sigma2_v"));
    q.push(Quantity::scalar("phi_u"));
    q
}

/// Draws and diagnostics from one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub quantities: Vec<Quantity>,
    /// One row per retained iteration, aligned with `quantities`.
    pub draws: Vec<Vec<f64>>,
    /// Post-burn-in acceptance rate per update group.
    pub acceptance: Vec<(String, f64)>,
    /// Tracked log posterior at the end of every iteration.
    pub log_posterior: Vec<f64>,
    pub final_state: ModelState,
    pub seed: u64,
}

impl ChainOutput {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.quantities.iter().position(|q| q.to_string() == name)?;
        Some(self.draws.iter().map(|row| row[idx]).collect())
    }
}

/// Data-scaled starting point: counts at the pooled survey prevalence
/// (clamped to their bounds), zero effects, unit variances, `phi = 0.5`
/// and detection intercepts matching the observed totals.
pub fn initial_state(panel: &SurveillancePanel, survey: &SurveyEstimates) -> Result<ModelState> {
    panel.validate()?;
    let mut s = ModelState::neutral(panel);
    let pooled = survey.pooled_estimate().clamp(1e-6, 1.0 - 1e-6);
    for i in 0..panel.n_regions {
        for t in 0..panel.n_years {
            let c = panel.cell(i, t);
            let lb = panel.latent_lower_bound(i, t);
            let pop = panel.populations[c];
            if lb > pop {
                return Err(Error::Infeasible {
                    region: i,
                    year: t,
                    reason: format!("lower bound {lb} exceeds population {pop}"),
                });
            }
            let guess = (pop as f64 * pooled).round() as u64;
            s.n[c] = guess.clamp(lb, pop);
        }
    }
    s.beta0_mu = pooled;
    s.beta1_mu = 0.0;
    let total_n: f64 = s.n.iter().map(|&x| x as f64).sum::<f64>().max(1.0);
    for (k, o) in panel.outcomes.iter().enumerate() {
        let observed: f64 = o
            .observations
            .iter()
            .map(|obs| {
                let (lo, hi) = obs.admissible();
                (lo + hi) as f64 / 2.0
            })
            .sum();
        let rate = (observed / total_n).clamp(0.5 / total_n, 1.0 - 0.5 / total_n);
        let mu = logit(rate)?;
        s.mu_detect[k].iter_mut().for_each(|m| *m = mu);
    }
    for (var, latent) in panel.acs.iter().zip(s.acs.iter_mut()) {
        let ly = var.n_latent_years(panel.n_years);
        let overall = if var.rows.is_empty() {
            50.0
        } else {
            var.rows.iter().map(|r| r.estimate).sum::<f64>() / var.rows.len() as f64
        };
        for i in 0..panel.n_regions {
            let own: Vec<f64> = var
                .rows
                .iter()
                .filter(|r| r.region == i)
                .map(|r| r.estimate)
                .collect();
            let level = if own.is_empty() {
                overall
            } else {
                own.iter().sum::<f64>() / own.len() as f64
            };
            let level = level.clamp(0.5, 99.5);
            latent.omega[i * ly..(i + 1) * ly].fill(level);
        }
        for o in 0..ly {
            latent.statewide[o] = (0..panel.n_regions)
                .map(|i| latent.omega[i * ly + o])
                .sum::<f64>()
                / panel.n_regions as f64;
        }
        latent.tau2.fill(1.0);
    }
    Ok(s)
}

/// Checks the ModelState invariants against the panel.
pub fn check_state(panel: &SurveillancePanel, state: &ModelState, tol: f64) -> Result<()> {
    let n_years = panel.n_years;
    for i in 0..panel.n_regions {
        for t in 0..n_years {
            let c = panel.cell(i, t);
            let lb = panel.latent_lower_bound(i, t);
            if state.n[c] < lb || state.n[c] > panel.populations[c] {
                return Err(Error::Infeasible {
                    region: i,
                    year: t,
                    reason: format!(
                        "N = {} outside [{lb}, {}]",
                        state.n[c], panel.populations[c]
                    ),
                });
            }
            let rate = state.mu(t) * crate::model::relative_risk(panel, state, i, t);
            if !(rate > 0.0 && rate < 1.0) {
                return Err(Error::Infeasible {
                    region: i,
                    year: t,
                    reason: format!("mu * lambda = {rate}"),
                });
            }
        }
    }
    let centred = |field: &[f64], what: &str| -> Result<()> {
        for t in 0..n_years {
            let s: f64 = (0..panel.n_regions).map(|i| field[i * n_years + t]).sum();
            if s.abs() > tol {
                return Err(Error::Invalid(format!(
                    "{what} slice {} sums to {s}",
                    year_of(t)
                )));
            }
        }
        Ok(())
    };
    centred(&state.u, "u")?;
    for (k, f) in state.f.iter().enumerate() {
        centred(f, &format!("f{}", k + 1))?;
    }
    let positive = std::iter::once(state.tau2_u)
        .chain(std::iter::once(state.sigma2_v))
        .chain(state.tau2_f.iter().copied())
        .chain(state.sigma2_eps.iter().copied())
        .chain(state.acs.iter().flat_map(|a| a.tau2.iter().copied()));
    for v in positive {
        if !(v > 0.0) {
            return Err(Error::Invalid(format!("non-positive variance {v}")));
        }
    }
    for phi in std::iter::once(state.phi_u).chain(state.phi_f.iter().copied()) {
        if !(phi > 0.0 && phi < 1.0) {
            return Err(Error::Invalid(format!("phi {phi} outside (0, 1)")));
        }
    }
    Ok(())
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn accept<R: Rng>(rng: &mut R, log_ratio: f64) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

/// Exact-cell outcome term given the cached `ln C(N, y)`.
#[inline]
fn exact_term(ln_coef: f64, y: u64, n: u64, eta: f64) -> f64 {
    if y > n {
        return f64::NEG_INFINITY;
    }
    let mut lp = ln_coef;
    if y > 0 {
        lp -= y as f64 * softplus(-eta);
    }
    if n > y {
        lp -= (n - y) as f64 * softplus(eta);
    }
    lp
}

/// Outcome term computed from scratch.
#[inline]
fn outcome_term(obs: Observation, n: u64, eta: f64) -> f64 {
    match obs {
        Observation::Exact(y) if y > n => f64::NEG_INFINITY,
        Observation::Exact(y) => exact_term(ln_choose(n, y), y, n, eta),
        _ => {
            let (lo, hi) = obs.admissible();
            binomial_log_interval(lo, hi, n, inv_logit(eta))
        }
    }
}

/// Latent-count term given the cached `ln C(P, N)`.
#[inline]
fn latent_term(ln_coef: f64, n: u64, pop: u64, log_rate: f64) -> f64 {
    if !(log_rate < 0.0) {
        return f64::NEG_INFINITY;
    }
    let mut lp = ln_coef;
    if n > 0 {
        lp += n as f64 * log_rate;
    }
    if pop > n {
        // ln(1 - r) for r = exp(log_rate) < 1
        let l1m = if log_rate > -std::f64::consts::LN_2 {
            (-log_rate.exp_m1()).ln()
        } else {
            (-log_rate.exp()).ln_1p()
        };
        lp += (pop - n) as f64 * l1m;
    }
    lp
}

const COUNT_MEMO: usize = 64;

enum OutcomeKernel {
    Exact {
        y: u64,
        lg_y1: f64,
        log_p: f64,
        log_q: f64,
    },
    Interval {
        obs: Observation,
        eta: f64,
    },
}

/// Terms of one cell with everything but the count fixed.
struct CellKernel {
    pop: u64,
    lg_pop1: f64,
    log_rate: f64,
    log_1m_rate: f64,
    outcomes: Vec<OutcomeKernel>,
}

impl CellKernel {
    fn eval(&self, n: u64) -> f64 {
        let lg_n1 = ln_gamma(n as f64 + 1.0);
        let nf = n as f64;
        let rest = (self.pop - n) as f64;
        let mut lp = self.lg_pop1 - lg_n1 - ln_gamma(rest + 1.0);
        if n > 0 {
            lp += nf * self.log_rate;
        }
        if rest > 0.0 {
            lp += rest * self.log_1m_rate;
        }
        for o in &self.outcomes {
            lp += match *o {
                OutcomeKernel::Exact {
                    y,
                    lg_y1,
                    log_p,
                    log_q,
                } => {
                    if y > n {
                        return f64::NEG_INFINITY;
                    }
                    let miss = (n - y) as f64;
                    let mut t = lg_n1 - lg_y1 - ln_gamma(miss + 1.0);
                    if y > 0 {
                        t += y as f64 * log_p;
                    }
                    if miss > 0.0 {
                        t += miss * log_q;
                    }
                    t
                }
                OutcomeKernel::Interval { obs, eta } => outcome_term(obs, n, eta),
            };
        }
        lp
    }
}

struct AcsIndex {
    ly: usize,
    /// Rows touching latent site `i * ly + o`.
    rows_by_site: Vec<Vec<usize>>,
}

struct Chain<'a> {
    panel: &'a SurveillancePanel,
    survey: &'a SurveyEstimates,
    graph: &'a AdjacencyGraph,
    cfg: &'a SamplerConfig,
    s: ModelState,
    rng: ChaCha8Rng,
    n_regions: usize,
    n_years: usize,
    // latent count embedding and bounds
    x: Vec<f64>,
    lower: Vec<u64>,
    // cached predictors
    risk_cov: Vec<f64>,
    det_cov: Vec<Vec<f64>>,
    // cached terms
    latent_coef: Vec<f64>,
    latent_ll: Vec<f64>,
    obs_coef: Vec<Vec<f64>>,
    obs_ll: Vec<Vec<f64>>,
    // proposals
    sc_u: Vec<RwScale>,
    sc_v: Vec<RwScale>,
    sc_f: Vec<Vec<RwScale>>,
    sc_eps: Vec<Vec<RwScale>>,
    sc_mu_det: Vec<Vec<RwScale>>,
    sc_beta_det: Vec<Vec<RwScale>>,
    sc_gamma: Vec<RwScale>,
    trend: BlockRw,
    sc_phi_u: RwScale,
    sc_phi_f: Vec<RwScale>,
    sc_omega: Vec<Vec<RwScale>>,
    sc_omega_state: Vec<Vec<RwScale>>,
    sc_tau2_acs: Vec<Vec<RwScale>>,
    sc_ridge: Vec<RwScale>,
    sc_swap_u: Vec<RwScale>,
    sc_swap_f: Vec<Vec<RwScale>>,
    level: BlockRw,
    acs_index: Vec<AcsIndex>,
    slices: Vec<FactorSlice>,
    adapting: bool,
    batch: usize,
}

impl<'a> Chain<'a> {
    fn new(
        panel: &'a SurveillancePanel,
        survey: &'a SurveyEstimates,
        graph: &'a AdjacencyGraph,
        cfg: &'a SamplerConfig,
        state: ModelState,
        seed: u64,
    ) -> Result<Self> {
        if graph.n_regions() != panel.n_regions {
            return Err(Error::Invalid(format!(
                "graph has {} regions but panel has {}",
                graph.n_regions(),
                panel.n_regions
            )));
        }
        let n_years = panel.n_years;
        let cells = panel.n_cells();
        let k = panel.outcomes.len();
        let lower: Vec<u64> = (0..cells)
            .map(|c| panel.latent_lower_bound(c / n_years, c % n_years))
            .collect();
        let widths = match &cfg.slice.initial_widths {
            Some(w) if w.len() == n_years => Some(w.clone()),
            Some(w) => {
                return Err(Error::Invalid(format!(
                    "expected {n_years} slice widths, got {}",
                    w.len()
                )))
            }
            None => None,
        };
        let slices = (0..panel.n_regions)
            .map(|i| {
                let w = widths.clone().unwrap_or_else(|| {
                    (0..n_years)
                        .map(|t| (state.n[i * n_years + t] as f64).sqrt().max(1.0))
                        .collect()
                });
                FactorSlice::new(w)
            })
            .collect();
        let acs_index = panel
            .acs
            .iter()
            .map(|var| {
                let ly = var.n_latent_years(n_years);
                let mut rows_by_site = vec![Vec::new(); panel.n_regions * ly];
                for (r_idx, r) in var.rows.iter().enumerate() {
                    let end = var.latent_offset(r.year);
                    for o in end + 1 - r.window as usize..=end {
                        rows_by_site[r.region * ly + o].push(r_idx);
                    }
                }
                AcsIndex { ly, rows_by_site }
            })
            .collect::<Vec<_>>();
        let mut chain = Self {
            panel,
            survey,
            graph,
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            n_regions: panel.n_regions,
            n_years,
            x: state.n.iter().map(|&n| n as f64).collect(),
            lower,
            risk_cov: vec![0.0; cells],
            det_cov: vec![vec![0.0; cells]; k],
            latent_coef: vec![0.0; cells],
            latent_ll: vec![0.0; cells],
            obs_coef: vec![vec![0.0; cells]; k],
            obs_ll: vec![vec![0.0; cells]; k],
            sc_u: vec![RwScale::new(0.1); cells],
            sc_v: vec![RwScale::new(0.1); cells],
            sc_f: vec![vec![RwScale::new(0.1); cells]; k],
            sc_eps: vec![vec![RwScale::new(0.1); cells]; k],
            sc_mu_det: vec![vec![RwScale::new(0.05); n_years]; k],
            sc_beta_det: panel
                .outcomes
                .iter()
                .map(|o| vec![RwScale::new(0.05); o.design.n_columns()])
                .collect(),
            sc_gamma: vec![RwScale::new(0.02); panel.risk_design.n_columns()],
            trend: BlockRw::new(0.001, 0.0001),
            sc_phi_u: RwScale::new(0.5),
            sc_phi_f: vec![RwScale::new(0.5); k],
            sc_omega: acs_index
                .iter()
                .map(|ix| vec![RwScale::new(1.0); panel.n_regions * ix.ly])
                .collect(),
            sc_omega_state: acs_index
                .iter()
                .map(|ix| vec![RwScale::new(1.0); ix.ly])
                .collect(),
            sc_tau2_acs: acs_index
                .iter()
                .map(|_| vec![RwScale::new(0.5); panel.n_regions])
                .collect(),
            sc_ridge: vec![RwScale::new(0.05); cells],
            sc_swap_u: vec![RwScale::new(0.1); cells],
            sc_swap_f: vec![vec![RwScale::new(0.1); cells]; k],
            level: BlockRw::new(0.001, 0.0001),
            acs_index,
            slices,
            adapting: true,
            batch: 0,
            s: state,
        };
        chain.refresh_all();
        for c in 0..cells {
            if !chain.latent_ll[c].is_finite() || chain.obs_ll.iter().any(|o| !o[c].is_finite()) {
                return Err(Error::Infeasible {
                    region: c / n_years,
                    year: c % n_years,
                    reason: "initial state has zero likelihood".into(),
                });
            }
        }
        Ok(chain)
    }

    #[inline]
    fn log_lambda(&self, c: usize) -> f64 {
        self.risk_cov[c] + self.s.u[c] + self.s.v[c]
    }

    #[inline]
    fn log_mu(&self, t: usize) -> f64 {
        let m = self.s.mu(t);
        if m > 0.0 {
            m.ln()
        } else {
            f64::NAN
        }
    }

    #[inline]
    fn eta(&self, k: usize, c: usize) -> f64 {
        self.s.mu_detect[k][c % self.n_years]
            + self.det_cov[k][c]
            + self.s.f[k][c]
            + self.s.eps[k][c]
    }

    #[inline]
    fn obs_at(&self, k: usize, c: usize) -> Observation {
        self.panel.outcomes[k].observations[c]
    }

    /// Outcome term with the cached coefficient for exact cells.
    #[inline]
    fn obs_term_cached(&self, k: usize, c: usize, eta: f64) -> f64 {
        let n = self.s.n[c];
        match self.obs_at(k, c) {
            Observation::Exact(y) => exact_term(self.obs_coef[k][c], y, n, eta),
            obs => outcome_term(obs, n, eta),
        }
    }

    #[inline]
    fn latent_at(&self, c: usize, log_rate: f64) -> f64 {
        if log_rate.is_nan() {
            return f64::NEG_INFINITY;
        }
        latent_term(
            self.latent_coef[c],
            self.s.n[c],
            self.panel.populations[c],
            log_rate,
        )
    }

    fn refresh_all(&mut self) {
        let cells = self.panel.n_cells();
        for c in 0..cells {
            let (i, t) = (c / self.n_years, c % self.n_years);
            self.risk_cov[c] = risk_covariate_effect(self.panel, &self.s, i, t);
            for k in 0..self.panel.outcomes.len() {
                self.det_cov[k][c] =
                    self.panel.outcomes[k]
                        .design
                        .dot(i, t, &self.s.beta_detect[k]);
            }
            self.refresh_count_terms(c);
        }
    }

    /// Recomputes every cached term of cell `c` after `N` or any predictor
    /// changed.
    fn refresh_count_terms(&mut self, c: usize) {
        let n = self.s.n[c];
        let pop = self.panel.populations[c];
        self.latent_coef[c] = ln_choose(pop, n);
        let lr = self.log_mu(c % self.n_years) + self.log_lambda(c);
        self.latent_ll[c] = self.latent_at(c, lr);
        for k in 0..self.panel.outcomes.len() {
            self.obs_coef[k][c] = match self.obs_at(k, c) {
                Observation::Exact(y) if y <= n => ln_choose(n, y),
                _ => 0.0,
            };
            let eta = self.eta(k, c);
            self.obs_ll[k][c] = self.obs_term_cached(k, c, eta);
        }
    }

    fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    fn retain_stats(&self) -> bool {
        !self.adapting
    }

    // ---- latent counts -------------------------------------------------

    fn update_latent_counts(&mut self) {
        for i in 0..self.n_regions {
            self.update_county(i);
        }
    }

    /// Count-independent pieces of cell `c`'s terms for the current
    /// rates, so a slice evaluation costs a few log-gamma calls.
    fn cell_kernel(&self, c: usize) -> CellKernel {
        let lr = self.log_mu(c % self.n_years) + self.log_lambda(c);
        let l1m = if !(lr < 0.0) {
            f64::NAN
        } else if lr > -std::f64::consts::LN_2 {
            (-lr.exp_m1()).ln()
        } else {
            (-lr.exp()).ln_1p()
        };
        let outcomes = (0..self.panel.outcomes.len())
            .map(|k| {
                let eta = self.eta(k, c);
                match self.obs_at(k, c) {
                    Observation::Exact(y) => OutcomeKernel::Exact {
                        y,
                        lg_y1: ln_gamma(y as f64 + 1.0),
                        log_p: -softplus(-eta),
                        log_q: -softplus(eta),
                    },
                    obs => OutcomeKernel::Interval { obs, eta },
                }
            })
            .collect();
        let pop = self.panel.populations[c];
        CellKernel {
            pop,
            lg_pop1: ln_gamma(pop as f64 + 1.0),
            log_rate: lr,
            log_1m_rate: l1m,
            outcomes,
        }
    }

    fn update_county(&mut self, i: usize) {
        let n_years = self.n_years;
        let range = i * n_years..(i + 1) * n_years;
        let mut x = self.x[range.clone()].to_vec();
        let current: f64 = range
            .clone()
            .map(|c| self.latent_ll[c] + self.obs_ll.iter().map(|o| o[c]).sum::<f64>())
            .sum();
        let kernels: Vec<CellKernel> = range.clone().map(|c| self.cell_kernel(c)).collect();
        if kernels.iter().any(|k| k.log_1m_rate.is_nan()) {
            return;
        }
        // direct-mapped memo of per-cell terms; slice evaluations revisit the
        // same lattice points many times within a sweep
        let mut memo = vec![(i64::MIN, 0.0f64); n_years * COUNT_MEMO];
        let mut slice = std::mem::replace(&mut self.slices[i], FactorSlice::new(Vec::new()));
        let mut rng = std::mem::replace(&mut self.rng, ChaCha8Rng::seed_from_u64(0));
        {
            let this = &*self;
            let target = |pt: &[f64]| -> f64 {
                let mut total = 0.0;
                for (t, &xt) in pt.iter().enumerate() {
                    let c = range.start + t;
                    let n = to_lattice(xt);
                    if n < this.lower[c] as i64 || n > this.panel.populations[c] as i64 {
                        return f64::NEG_INFINITY;
                    }
                    let slot = &mut memo[t * COUNT_MEMO + (n as usize % COUNT_MEMO)];
                    if slot.0 != n {
                        *slot = (n, kernels[t].eval(n as u64));
                    }
                    total += slot.1;
                    if total == f64::NEG_INFINITY {
                        return total;
                    }
                }
                total
            };
            slice.sweep(
                &mut x,
                current,
                this.cfg.slice.max_stepout,
                target,
                &mut rng,
            );
        }
        self.rng = rng;
        if self.adapting {
            slice.observe(&x);
        }
        self.slices[i] = slice;
        for (t, &xt) in x.iter().enumerate() {
            let c = range.start + t;
            self.x[c] = xt;
            let n = to_lattice(xt) as u64;
            if n != self.s.n[c] {
                self.s.n[c] = n;
                self.refresh_count_terms(c);
            }
        }
    }

    // ---- ridge moves ---------------------------------------------------
    //
    // Counts and detection probabilities are only weakly separated by the
    // data: the outcomes pin down N * p, the survey pins down the statewide
    // level. These moves act on the continuous count embedding `x`, whose
    // density is the count pmf on each unit cell, so a smooth bijection of
    // `x` with its Jacobian is a valid Metropolis-Hastings proposal.

    /// Fresh latent and outcome terms of cell `c` at count `n`.
    fn cell_terms(&self, c: usize, n: u64, log_rate: f64, eta_shift: f64) -> f64 {
        let pop = self.panel.populations[c];
        if log_rate.is_nan() {
            return f64::NEG_INFINITY;
        }
        let mut lp = latent_term(ln_choose(pop, n), n, pop, log_rate);
        for k in 0..self.panel.outcomes.len() {
            if lp == f64::NEG_INFINITY {
                break;
            }
            lp += outcome_term(self.obs_at(k, c), n, self.eta(k, c) + eta_shift);
        }
        lp
    }

    #[inline]
    fn lattice_in_bounds(&self, c: usize, x: f64) -> Option<u64> {
        let n = to_lattice(x);
        (n >= self.lower[c] as i64 && n <= self.panel.populations[c] as i64).then_some(n as u64)
    }

    /// Per cell: `x -> x e^d`, `v -> v + d`, `eps_k -> eps_k - d`, which
    /// keeps the expected detected counts roughly fixed.
    fn update_ridge_cells(&mut self) {
        let k_out = self.panel.outcomes.len();
        for c in 0..self.panel.n_cells() {
            let d = self.normal() * self.sc_ridge[c].scale();
            let x_new = self.x[c] * d.exp();
            let log_ratio = match self.lattice_in_bounds(c, x_new) {
                None => f64::NEG_INFINITY,
                Some(n_new) => {
                    let lr = self.log_mu(c % self.n_years) + self.log_lambda(c) + d;
                    let new = self.cell_terms(c, n_new, lr, -d);
                    let old =
                        self.latent_ll[c] + (0..k_out).map(|k| self.obs_ll[k][c]).sum::<f64>();
                    let v = self.s.v[c];
                    let mut prior = (v * v - (v + d) * (v + d)) / (2.0 * self.s.sigma2_v);
                    for k in 0..k_out {
                        let e = self.s.eps[k][c];
                        prior += (e * e - (e - d) * (e - d)) / (2.0 * self.s.sigma2_eps[k]);
                    }
                    new - old + prior + d
                }
            };
            let ok = accept(&mut self.rng, log_ratio);
            let retain = self.retain_stats();
            self.sc_ridge[c].record(ok, retain);
            if ok {
                self.x[c] = x_new;
                self.s.n[c] = to_lattice(x_new) as u64;
                self.s.v[c] += d;
                for k in 0..k_out {
                    self.s.eps[k][c] -= d;
                }
                self.refresh_count_terms(c);
            }
        }
    }

    /// Trend move carrying the counts along: proposes new trend
    /// coefficients, scales each year's `x` by `s_t = mu'_t / mu_t` and
    /// lowers that year's detection intercepts by `ln s_t`. The Jacobian is
    /// `prod_t s_t^n`.
    fn update_level(&mut self) {
        let cells = self.panel.n_cells();
        let z = Vector2::new(self.normal(), self.normal());
        let step = self.level.step(z);
        let (b0, b1) = (self.s.beta0_mu + step[0], self.s.beta1_mu + step[1]);
        let log_s: Vec<f64> = (0..self.n_years)
            .map(|t| {
                let new = crate::model::statewide_mean(b0, b1, year_of(t));
                if new > 0.0 {
                    (new / self.s.mu(t)).ln()
                } else {
                    f64::NAN
                }
            })
            .collect();
        let mut log_ratio = if log_s.iter().any(|l| l.is_nan()) {
            f64::NEG_INFINITY
        } else {
            survey_loglik(self.survey, b0, b1).unwrap_or(f64::NEG_INFINITY)
                - survey_loglik(self.survey, self.s.beta0_mu, self.s.beta1_mu)
                    .unwrap_or(f64::NEG_INFINITY)
                + self.n_regions as f64 * log_s.iter().sum::<f64>()
        };
        let mut new_n = vec![0u64; cells];
        for c in 0..cells {
            if log_ratio == f64::NEG_INFINITY {
                break;
            }
            let ls = log_s[c % self.n_years];
            let Some(n_new) = self.lattice_in_bounds(c, self.x[c] * ls.exp()) else {
                log_ratio = f64::NEG_INFINITY;
                break;
            };
            new_n[c] = n_new;
            let lr = self.log_mu(c % self.n_years) + ls + self.log_lambda(c);
            log_ratio += self.cell_terms(c, n_new, lr, -ls)
                - self.latent_ll[c]
                - self.obs_ll.iter().map(|o| o[c]).sum::<f64>();
        }
        let ok = accept(&mut self.rng, log_ratio);
        let retain = self.retain_stats();
        self.level.scale.record(ok, retain);
        if ok {
            self.s.beta0_mu = b0;
            self.s.beta1_mu = b1;
            for md in self.s.mu_detect.iter_mut() {
                for (m, ls) in md.iter_mut().zip(&log_s) {
                    *m -= ls;
                }
            }
            for c in 0..cells {
                self.x[c] *= log_s[c % self.n_years].exp();
                self.s.n[c] = new_n[c];
                self.refresh_count_terms(c);
            }
        }
        if self.adapting {
            self.level
                .observe(Vector2::new(self.s.beta0_mu, self.s.beta1_mu));
        }
    }

    // ---- risk effects --------------------------------------------------

    fn update_risk_field(&mut self) {
        let n = self.n_regions;
        if n < 2 {
            return;
        }
        let nf = n as f64;
        let mut new_ll = vec![0.0; n];
        for t in 0..self.n_years {
            let log_mu = self.log_mu(t);
            for i in 0..n {
                let c = i * self.n_years + t;
                let delta = self.normal() * self.sc_u[c].scale();
                let (m, var) = icar_full_conditional(
                    i,
                    t,
                    &self.s.u,
                    self.n_years,
                    self.s.phi_u,
                    self.s.tau2_u,
                    self.graph,
                );
                let cur = self.s.u[c];
                let mut log_ratio = normal_logpdf(cur + delta, m, var) - normal_logpdf(cur, m, var);
                for j in 0..n {
                    let cj = j * self.n_years + t;
                    let shift = if j == i {
                        delta - delta / nf
                    } else {
                        -delta / nf
                    };
                    new_ll[j] = self.latent_at(cj, log_mu + self.log_lambda(cj) + shift);
                    log_ratio += new_ll[j] - self.latent_ll[cj];
                }
                let ok = accept(&mut self.rng, log_ratio);
                let retain = self.retain_stats();
                self.sc_u[c].record(ok, retain);
                if ok {
                    for j in 0..n {
                        let cj = j * self.n_years + t;
                        self.s.u[cj] -= delta / nf;
                        self.latent_ll[cj] = new_ll[j];
                    }
                    self.s.u[c] += delta;
                }
            }
            // remove floating-point drift from the constraint
            let mean = (0..n).map(|i| self.s.u[i * self.n_years + t]).sum::<f64>() / nf;
            if mean != 0.0 {
                for i in 0..n {
                    let c = i * self.n_years + t;
                    self.s.u[c] -= mean;
                    let lr = log_mu + self.log_lambda(c);
                    self.latent_ll[c] = self.latent_at(c, lr);
                }
            }
        }
    }

    /// Current value of risk column `col` at cell `c` as it enters the
    /// predictor.
    fn risk_column_value(&self, c: usize, col: usize) -> f64 {
        let (i, t) = (c / self.n_years, c % self.n_years);
        let design = &self.panel.risk_design;
        if !design.is_active(t, col) {
            return 0.0;
        }
        for (var, latent) in self.panel.acs.iter().zip(&self.s.acs) {
            if var.risk_column == col {
                let ly = var.n_latent_years(self.n_years);
                return var
                    .transform
                    .apply(latent.omega[i * ly + var.latent_offset(year_of(t))]);
            }
        }
        design.value(i, t, col)
    }

    /// Moves that trade structured and unstructured risk effects while
    /// leaving every `lambda` unchanged, so only prior terms enter.
    fn update_risk_swaps(&mut self) {
        let plan = self.cfg.updates;
        let cells = self.panel.n_cells();
        let s2 = self.s.sigma2_v;
        if plan.risk_coefficients && plan.risk_iid {
            // exact draw along gamma_col + d, v - d * X_col
            for col in 0..self.s.gamma.len() {
                let x: Vec<f64> = (0..cells).map(|c| self.risk_column_value(c, col)).collect();
                let sxx: f64 = x.iter().map(|a| a * a).sum();
                if !(sxx > 0.0) {
                    continue;
                }
                let sxv: f64 = x.iter().zip(&self.s.v).map(|(a, v)| a * v).sum();
                let d = sxv / sxx + (s2 / sxx).sqrt() * self.normal();
                self.s.gamma[col] += d;
                for c in 0..cells {
                    self.s.v[c] -= d * x[c];
                    self.risk_cov[c] += d * x[c];
                }
            }
        }
        if plan.risk_field && plan.risk_iid && self.n_regions > 1 {
            let n = self.n_regions;
            let nf = n as f64;
            for t in 0..self.n_years {
                for i in 0..n {
                    let c = i * self.n_years + t;
                    let d = self.normal() * self.sc_swap_u[c].scale();
                    let (m, var) = icar_full_conditional(
                        i,
                        t,
                        &self.s.u,
                        self.n_years,
                        self.s.phi_u,
                        self.s.tau2_u,
                        self.graph,
                    );
                    let cur = self.s.u[c];
                    let mut log_ratio = normal_logpdf(cur + d, m, var) - normal_logpdf(cur, m, var);
                    for j in 0..n {
                        let vj = self.s.v[j * self.n_years + t];
                        let shift = if j == i { -d + d / nf } else { d / nf };
                        log_ratio += (vj * vj - (vj + shift) * (vj + shift)) / (2.0 * s2);
                    }
                    let ok = accept(&mut self.rng, log_ratio);
                    let retain = self.retain_stats();
                    self.sc_swap_u[c].record(ok, retain);
                    if ok {
                        for j in 0..n {
                            let cj = j * self.n_years + t;
                            self.s.u[cj] -= d / nf;
                            self.s.v[cj] += d / nf;
                        }
                        self.s.u[c] += d;
                        self.s.v[c] -= d;
                    }
                }
            }
        }
    }

    fn update_risk_iid(&mut self) {
        let s2 = self.s.sigma2_v;
        for c in 0..self.panel.n_cells() {
            let delta = self.normal() * self.sc_v[c].scale();
            let cur = self.s.v[c];
            let prop = cur + delta;
            let lr = self.log_mu(c % self.n_years) + self.log_lambda(c) + delta;
            let new_ll = self.latent_at(c, lr);
            let log_ratio = (cur * cur - prop * prop) / (2.0 * s2) + new_ll - self.latent_ll[c];
            let ok = accept(&mut self.rng, log_ratio);
            let retain = self.retain_stats();
            self.sc_v[c].record(ok, retain);
            if ok {
                self.s.v[c] = prop;
                self.latent_ll[c] = new_ll;
            }
        }
    }

    fn update_risk_coefficients(&mut self) {
        let cells = self.panel.n_cells();
        let mut new_cov = vec![0.0; cells];
        let mut new_ll = vec![0.0; cells];
        for col in 0..self.s.gamma.len() {
            let delta = self.normal() * self.sc_gamma[col].scale();
            let old = self.s.gamma[col];
            self.s.gamma[col] = old + delta;
            let mut log_ratio = 0.0;
            for c in 0..cells {
                new_cov[c] =
                    risk_covariate_effect(self.panel, &self.s, c / self.n_years, c % self.n_years);
                let lr = self.log_mu(c % self.n_years) + new_cov[c] + self.s.u[c] + self.s.v[c];
                new_ll[c] = self.latent_at(c, lr);
                log_ratio += new_ll[c] - self.latent_ll[c];
            }
            let ok = accept(&mut self.rng, log_ratio);
            let retain = self.retain_stats();
            self.sc_gamma[col].record(ok, retain);
            if ok {
                self.risk_cov.copy_from_slice(&new_cov);
                self.latent_ll.copy_from_slice(&new_ll);
            } else {
                self.s.gamma[col] = old;
            }
        }
    }

    fn update_statewide_trend(&mut self) {
        let z = Vector2::new(self.normal(), self.normal());
        let step = self.trend.step(z);
        let (b0, b1) = (self.s.beta0_mu + step[0], self.s.beta1_mu + step[1]);
        let cur_survey = survey_loglik(self.survey, self.s.beta0_mu, self.s.beta1_mu)
            .unwrap_or(f64::NEG_INFINITY);
        let new_survey = survey_loglik(self.survey, b0, b1).unwrap_or(f64::NEG_INFINITY);
        let mut log_ratio = new_survey - cur_survey;
        let cells = self.panel.n_cells();
        let mut new_ll = vec![0.0; cells];
        if log_ratio > f64::NEG_INFINITY {
            for c in 0..cells {
                let t = c % self.n_years;
                let mu = crate::model::statewide_mean(b0, b1, year_of(t));
                let lr = if mu > 0.0 {
                    mu.ln() + self.log_lambda(c)
                } else {
                    f64::NAN
                };
                new_ll[c] = self.latent_at(c, lr);
                log_ratio += new_ll[c] - self.latent_ll[c];
                if log_ratio == f64::NEG_INFINITY {
                    break;
                }
            }
        }
        let ok = accept(&mut self.rng, log_ratio);
        let retain = self.retain_stats();
        self.trend.scale.record(ok, retain);
        if ok {
            self.s.beta0_mu = b0;
            self.s.beta1_mu = b1;
            self.latent_ll.copy_from_slice(&new_ll);
        }
        if self.adapting {
            self.trend
                .observe(Vector2::new(self.s.beta0_mu, self.s.beta1_mu));
        }
    }

    // ---- detection effects ----------------------------------------------

    fn update_detection_field(&mut self, k: usize) {
        let n = self.n_regions;
        if n < 2 {
            return;
        }
        for t in 0..self.n_years {
            for i in 0..n {
                let c = i * self.n_years + t;
                let delta = self.normal() * self.sc_f[k][c].scale();
                let (m, var) = icar_full_conditional(
                    i,
                    t,
                    &self.s.f[k],
                    self.n_years,
                    self.s.phi_f[k],
                    self.s.tau2_f[k],
                    self.graph,
                );
                let cur = self.s.f[k][c];
                let eta = self.eta(k, c) + delta;
                let new_ll = self.obs_term_cached(k, c, eta);
                let log_ratio = normal_logpdf(cur + delta, m, var) - normal_logpdf(cur, m, var)
                    + new_ll
                    - self.obs_ll[k][c];
                let ok = accept(&mut self.rng, log_ratio);
                let retain = self.retain_stats();
                self.sc_f[k][c].record(ok, retain);
                if ok {
                    self.s.f[k][c] += delta;
                    self.obs_ll[k][c] = new_ll;
                }
            }
            // centre the slice and move its mean into the yearly intercept;
            // every detection logit is unchanged
            let mean = (0..n)
                .map(|i| self.s.f[k][i * self.n_years + t])
                .sum::<f64>()
                / n as f64;
            for i in 0..n {
                self.s.f[k][i * self.n_years + t] -= mean;
            }
            self.s.mu_detect[k][t] += mean;
        }
    }

    /// Trades `f` against `eps` at each site with every detection logit
    /// unchanged, then re-centres each slice into the yearly intercepts.
    fn update_detection_swaps(&mut self, k: usize) {
        let n = self.n_regions;
        if n < 2 {
            return;
        }
        let s2 = self.s.sigma2_eps[k];
        for t in 0..self.n_years {
            for i in 0..n {
                let c = i * self.n_years + t;
                let d = self.normal() * self.sc_swap_f[k][c].scale();
                let (m, var) = icar_full_conditional(
                    i,
                    t,
                    &self.s.f[k],
                    self.n_years,
                    self.s.phi_f[k],
                    self.s.tau2_f[k],
                    self.graph,
                );
                let cur = self.s.f[k][c];
                let e = self.s.eps[k][c];
                let log_ratio = normal_logpdf(cur + d, m, var) - normal_logpdf(cur, m, var)
                    + (e * e - (e - d) * (e - d)) / (2.0 * s2);
                let ok = accept(&mut self.rng, log_ratio);
                let retain = self.retain_stats();
                self.sc_swap_f[k][c].record(ok, retain);
                if ok {
                    self.s.f[k][c] += d;
                    self.s.eps[k][c] -= d;
                }
            }
            let mean = (0..n)
                .map(|i| self.s.f[k][i * self.n_years + t])
                .sum::<f64>()
                / n as f64;
            for i in 0..n {
                self.s.f[k][i * self.n_years + t] -= mean;
            }
            self.s.mu_detect[k][t] += mean;
        }
    }

    fn update_detection_iid(&mut self, k: usize) {
        let s2 = self.s.sigma2_eps[k];
        for c in 0..self.panel.n_cells() {
            let delta = self.normal() * self.sc_eps[k][c].scale();
            let cur = self.s.eps[k][c];
            let prop = cur + delta;
            let new_ll = self.obs_term_cached(k, c, self.eta(k, c) + delta);
            let log_ratio = (cur * cur - prop * prop) / (2.0 * s2) + new_ll - self.obs_ll[k][c];
            let ok = accept(&mut self.rng, log_ratio);
            let retain = self.retain_stats();
            self.sc_eps[k][c].record(ok, retain);
            if ok {
                self.s.eps[k][c] = prop;
                self.obs_ll[k][c] = new_ll;
            }
        }
    }

    fn update_detection_intercepts(&mut self, k: usize) {
        let mut new_ll = vec![0.0; self.n_regions];
        for t in 0..self.n_years {
            let delta = self.normal() * self.sc_mu_det[k][t].scale();
            let mut log_ratio = 0.0;
            for i in 0..self.n_regions {
                let c = i * self.n_years + t;
                new_ll[i] = self.obs_term_cached(k, c, self.eta(k, c) + delta);
                log_ratio += new_ll[i] - self.obs_ll[k][c];
            }
            let ok = accept(&mut self.rng, log_ratio);
            let retain = self.retain_stats();
            self.sc_mu_det[k][t].record(ok, retain);
            if ok {
                self.s.mu_detect[k][t] += delta;
                for i in 0..self.n_regions {
                    self.obs_ll[k][i * self.n_years + t] = new_ll[i];
                }
            }
        }
    }

    fn update_detection_coefficients(&mut self, k: usize) {
        let cells = self.panel.n_cells();
        let design = &self.panel.outcomes[k].design;
        let mut new_ll = vec![0.0; cells];
        for col in 0..design.n_columns() {
            let delta = self.normal() * self.sc_beta_det[k][col].scale();
            let mut log_ratio = 0.0;
            for c in 0..cells {
                let (i, t) = (c / self.n_years, c % self.n_years);
                let shift = if design.is_active(t, col) {
                    delta * design.value(i, t, col)
                } else {
                    0.0
                };
                new_ll[c] = self.obs_term_cached(k, c, self.eta(k, c) + shift);
                log_ratio += new_ll[c] - self.obs_ll[k][c];
            }
            let ok = accept(&mut self.rng, log_ratio);
            let retain = self.retain_stats();
            self.sc_beta_det[k][col].record(ok, retain);
            if ok {
                self.s.beta_detect[k][col] += delta;
                for c in 0..cells {
                    let (i, t) = (c / self.n_years, c % self.n_years);
                    self.det_cov[k][c] = design.dot(i, t, &self.s.beta_detect[k]);
                }
                self.obs_ll[k].copy_from_slice(&new_ll);
            }
        }
    }

    // ---- hyperparameters -------------------------------------------------

    /// Random walk on logit(phi) against the field's joint kernel.
    fn update_phi(&mut self, field: Option<usize>) {
        if self.n_regions < 2 || self.n_years < 2 {
            return;
        }
        let (values, phi, tau2) = match field {
            None => (&self.s.u, self.s.phi_u, self.s.tau2_u),
            Some(k) => (&self.s.f[k], self.s.phi_f[k], self.s.tau2_f[k]),
        };
        let scale = match field {
            None => self.sc_phi_u.scale(),
            Some(k) => self.sc_phi_f[k].scale(),
        };
        let z = logit(phi).unwrap_or(0.0);
        let step: f64 = StandardNormal.sample(&mut self.rng);
        let z_new = z + scale * step;
        let phi_new = inv_logit(z_new);
        let log_ratio = if phi_new > 0.0 && phi_new < 1.0 {
            icar_ar1_loglik(values, self.n_years, phi_new, tau2, self.graph)
                - icar_ar1_loglik(values, self.n_years, phi, tau2, self.graph)
                + (phi_new * (1.0 - phi_new)).ln()
                - (phi * (1.0 - phi)).ln()
        } else {
            f64::NEG_INFINITY
        };
        let ok = accept(&mut self.rng, log_ratio);
        let retain = self.retain_stats();
        match field {
            None => {
                self.sc_phi_u.record(ok, retain);
                if ok {
                    self.s.phi_u = phi_new;
                }
            }
            Some(k) => {
                self.sc_phi_f[k].record(ok, retain);
                if ok {
                    self.s.phi_f[k] = phi_new;
                }
            }
        }
    }

    fn draw_inverse_gamma(&mut self, shape: f64, scale: f64) -> f64 {
        let g = Gamma::new(shape, 1.0 / scale).expect("positive gamma parameters");
        1.0 / g.sample(&mut self.rng)
    }

    fn update_variances(&mut self) {
        let plan = self.cfg.updates;
        let n = self.n_regions as f64;
        let nt = self.panel.n_cells() as f64;
        let t = self.n_years as f64;
        if plan.tau2_u && self.n_regions > 1 {
            let q = icar_ar1_quadratic(&self.s.u, self.n_years, self.s.phi_u, self.graph);
            self.s.tau2_u = self.draw_inverse_gamma(
                VARIANCE_PRIOR_SHAPE + t * (n - 1.0) / 2.0,
                VARIANCE_PRIOR_SCALE + q / 2.0,
            );
        }
        if plan.sigma2_v {
            let ss: f64 = self.s.v.iter().map(|x| x * x).sum();
            self.s.sigma2_v = self.draw_inverse_gamma(
                VARIANCE_PRIOR_SHAPE + nt / 2.0,
                VARIANCE_PRIOR_SCALE + ss / 2.0,
            );
        }
        for k in 0..self.panel.outcomes.len() {
            if plan.tau2_f && self.n_regions > 1 {
                let q = icar_ar1_quadratic(&self.s.f[k], self.n_years, self.s.phi_f[k], self.graph);
                self.s.tau2_f[k] = self.draw_inverse_gamma(
                    VARIANCE_PRIOR_SHAPE + t * (n - 1.0) / 2.0,
                    VARIANCE_PRIOR_SCALE + q / 2.0,
                );
            }
            if plan.sigma2_eps {
                let ss: f64 = self.s.eps[k].iter().map(|x| x * x).sum();
                self.s.sigma2_eps[k] = self.draw_inverse_gamma(
                    VARIANCE_PRIOR_SHAPE + nt / 2.0,
                    VARIANCE_PRIOR_SCALE + ss / 2.0,
                );
            }
        }
    }

    // ---- latent covariates -------------------------------------------------

    fn acs_site_terms(&self, a: usize, i: usize, o: usize) -> f64 {
        let var = &self.panel.acs[a];
        let latent = &self.s.acs[a];
        let ix = &self.acs_index[a];
        let mut total = acs_process_loglik(latent, ix.ly, i, o);
        for &r in &ix.rows_by_site[i * ix.ly + o] {
            total += acs_row_loglik(var, latent, ix.ly, &var.rows[r]).unwrap_or(f64::NEG_INFINITY);
        }
        total
    }

    fn update_covariates(&mut self) {
        for a in 0..self.panel.acs.len() {
            let ly = self.acs_index[a].ly;
            let first = self.panel.acs[a].first_latent_year;
            let col = self.panel.acs[a].risk_column;
            for i in 0..self.n_regions {
                for o in 0..ly {
                    let site = i * ly + o;
                    let delta = self.normal() * self.sc_omega[a][site].scale();
                    let old = self.s.acs[a].omega[site];
                    let before = self.acs_site_terms(a, i, o);
                    self.s.acs[a].omega[site] = old + delta;
                    let mut log_ratio = self.acs_site_terms(a, i, o) - before;
                    // surveillance years also move the risk predictor
                    let year = first + o as i64;
                    let mut cell_update = None;
                    if year >= 1 && log_ratio > f64::NEG_INFINITY {
                        let t = (year - 1) as usize;
                        if self.panel.risk_design.is_active(t, col) {
                            let c = i * self.n_years + t;
                            let cov = risk_covariate_effect(self.panel, &self.s, i, t);
                            let lr = self.log_mu(t) + cov + self.s.u[c] + self.s.v[c];
                            let ll = self.latent_at(c, lr);
                            log_ratio += ll - self.latent_ll[c];
                            cell_update = Some((c, cov, ll));
                        }
                    }
                    let ok = accept(&mut self.rng, log_ratio);
                    let retain = self.retain_stats();
                    self.sc_omega[a][site].record(ok, retain);
                    if ok {
                        if let Some((c, cov, ll)) = cell_update {
                            self.risk_cov[c] = cov;
                            self.latent_ll[c] = ll;
                        }
                    } else {
                        self.s.acs[a].omega[site] = old;
                    }
                }
            }
            for o in 0..ly {
                let delta = self.normal() * self.sc_omega_state[a][o].scale();
                let old = self.s.acs[a].statewide[o];
                let prop = old + delta;
                let log_ratio = if prop > 0.0 && prop < 100.0 {
                    let before: f64 = (0..self.n_regions)
                        .map(|i| acs_process_loglik(&self.s.acs[a], ly, i, o))
                        .sum();
                    self.s.acs[a].statewide[o] = prop;
                    let after: f64 = (0..self.n_regions)
                        .map(|i| acs_process_loglik(&self.s.acs[a], ly, i, o))
                        .sum();
                    after - before
                } else {
                    f64::NEG_INFINITY
                };
                let ok = accept(&mut self.rng, log_ratio);
                let retain = self.retain_stats();
                self.sc_omega_state[a][o].record(ok, retain);
                if !ok {
                    self.s.acs[a].statewide[o] = old;
                }
            }
            for i in 0..self.n_regions {
                let old = self.s.acs[a].tau2[i];
                let prop = old * (self.sc_tau2_acs[a][i].scale() * self.normal()).exp();
                let terms = |s: &ModelState| -> f64 {
                    (0..ly)
                        .map(|o| acs_process_loglik(&s.acs[a], ly, i, o))
                        .sum::<f64>()
                        + inverse_gamma_logpdf(
                            s.acs[a].tau2[i],
                            VARIANCE_PRIOR_SHAPE,
                            VARIANCE_PRIOR_SCALE,
                        )
                };
                let before = terms(&self.s);
                self.s.acs[a].tau2[i] = prop;
                // log-scale walk: Jacobian ln(prop / old)
                let log_ratio = terms(&self.s) - before + (prop / old).ln();
                let ok = accept(&mut self.rng, log_ratio);
                let retain = self.retain_stats();
                self.sc_tau2_acs[a][i].record(ok, retain);
                if !ok {
                    self.s.acs[a].tau2[i] = old;
                }
            }
        }
    }

    // ---- driver -------------------------------------------------------------

    fn sweep(&mut self) {
        let plan = self.cfg.updates;
        if plan.latent_counts {
            self.update_latent_counts();
        }
        if plan.ridge_moves {
            self.update_ridge_cells();
            self.update_level();
        }
        if plan.risk_field {
            self.update_risk_field();
        }
        if plan.risk_iid {
            self.update_risk_iid();
        }
        if plan.risk_coefficients {
            self.update_risk_coefficients();
        }
        self.update_risk_swaps();
        if plan.statewide_trend {
            self.update_statewide_trend();
        }
        for k in 0..self.panel.outcomes.len() {
            if plan.detection_field {
                self.update_detection_field(k);
            }
            if plan.detection_field && plan.detection_iid {
                self.update_detection_swaps(k);
            }
            if plan.detection_iid {
                self.update_detection_iid(k);
            }
            if plan.detection_intercepts {
                self.update_detection_intercepts(k);
            }
            if plan.detection_coefficients {
                self.update_detection_coefficients(k);
            }
        }
        if plan.temporal_correlation {
            self.update_phi(None);
            for k in 0..self.panel.outcomes.len() {
                self.update_phi(Some(k));
            }
        }
        self.update_variances();
        if plan.covariates {
            self.update_covariates();
        }
    }

    fn adapt(&mut self) {
        self.batch += 1;
        let b = self.batch;
        let target = self.cfg.adaptation.target_scalar;
        let all_scalars = self
            .sc_u
            .iter_mut()
            .chain(self.sc_v.iter_mut())
            .chain(self.sc_f.iter_mut().flatten())
            .chain(self.sc_eps.iter_mut().flatten())
            .chain(self.sc_mu_det.iter_mut().flatten())
            .chain(self.sc_beta_det.iter_mut().flatten())
            .chain(self.sc_gamma.iter_mut())
            .chain(std::iter::once(&mut self.sc_phi_u))
            .chain(self.sc_phi_f.iter_mut())
            .chain(self.sc_omega.iter_mut().flatten())
            .chain(self.sc_omega_state.iter_mut().flatten())
            .chain(self.sc_tau2_acs.iter_mut().flatten())
            .chain(self.sc_ridge.iter_mut())
            .chain(self.sc_swap_u.iter_mut())
            .chain(self.sc_swap_f.iter_mut().flatten());
        for sc in all_scalars {
            sc.adapt(target, b);
        }
        self.trend.adapt(self.cfg.adaptation.target_block, b);
        self.level.adapt(self.cfg.adaptation.target_block, b);
        for s in &mut self.slices {
            s.adapt();
        }
    }

    /// Cached per-cell terms plus freshly computed global terms.
    fn tracked_log_posterior(&self) -> f64 {
        let mut lp: f64 = self.latent_ll.iter().sum();
        for o in &self.obs_ll {
            lp += o.iter().sum::<f64>();
        }
        lp += survey_loglik(self.survey, self.s.beta0_mu, self.s.beta1_mu)
            .unwrap_or(f64::NEG_INFINITY);
        if self.n_regions > 1 {
            lp += icar_ar1_loglik(
                &self.s.u,
                self.n_years,
                self.s.phi_u,
                self.s.tau2_u,
                self.graph,
            );
            for k in 0..self.s.f.len() {
                lp += icar_ar1_loglik(
                    &self.s.f[k],
                    self.n_years,
                    self.s.phi_f[k],
                    self.s.tau2_f[k],
                    self.graph,
                );
            }
        }
        for (var, latent) in self.panel.acs.iter().zip(&self.s.acs) {
            lp += crate::likelihood::acs_loglik(var, latent, self.n_regions, self.n_years)
                .unwrap_or(f64::NEG_INFINITY);
        }
        lp + prior_logdensity(&self.s)
    }

    fn record(&self, row: &mut Vec<f64>) {
        row.clear();
        let cells = self.panel.n_cells();
        row.extend(self.s.n.iter().map(|&n| n as f64));
        for c in 0..cells {
            row.push(self.log_lambda(c).exp());
        }
        for k in 0..self.panel.outcomes.len() {
            for c in 0..cells {
                row.push(inv_logit(self.eta(k, c)));
            }
        }
        for t in 0..self.n_years {
            row.push(self.s.mu(t));
        }
        row.push(self.s.beta0_mu);
        row.push(self.s.beta1_mu);
        row.extend_from_slice(&self.s.gamma);
        for k in 0..self.panel.outcomes.len() {
            row.extend_from_slice(&self.s.mu_detect[k]);
            row.extend_from_slice(&self.s.beta_detect[k]);
            row.push(self.s.sigma2_eps[k]);
            row.push(self.s.tau2_f[k]);
            row.push(self.s.phi_f[k]);
        }
        row.push(self.s.tau2_u);
        row.push(self.s.sigma2_v);
        row.push(self.s.phi_u);
    }

    fn acceptance_summary(&self) -> Vec<(String, f64)> {
        let rate = |it: &mut dyn Iterator<Item = &RwScale>| -> Option<f64> {
            let (a, p) = it.fold((0u64, 0u64), |(a, p), s| (a + s.accepted, p + s.proposed));
            (p > 0).then(|| a as f64 / p as f64)
        };
        let mut out = Vec::new();
        let mut push = |name: String, r: Option<f64>| {
            if let Some(r) = r {
                out.push((name, r));
            }
        };
        push("u".into(), rate(&mut self.sc_u.iter()));
        push("v".into(), rate(&mut self.sc_v.iter()));
        push("gamma".into(), rate(&mut self.sc_gamma.iter()));
        push(
            "trend".into(),
            rate(&mut std::iter::once(&self.trend.scale)),
        );
        push("phi_u".into(), rate(&mut std::iter::once(&self.sc_phi_u)));
        push("ridge".into(), rate(&mut self.sc_ridge.iter()));
        push("swap_u".into(), rate(&mut self.sc_swap_u.iter()));
        push(
            "level".into(),
            rate(&mut std::iter::once(&self.level.scale)),
        );
        for k in 0..self.panel.outcomes.len() {
            let k1 = k + 1;
            push(format!("f{k1}"), rate(&mut self.sc_f[k].iter()));
            push(format!("eps{k1}"), rate(&mut self.sc_eps[k].iter()));
            push(format!("mu_det{k1}"), rate(&mut self.sc_mu_det[k].iter()));
            push(format!("beta{k1}"), rate(&mut self.sc_beta_det[k].iter()));
            push(
                format!("phi_f{k1}"),
                rate(&mut std::iter::once(&self.sc_phi_f[k])),
            );
            push(format!("swap_f{k1}"), rate(&mut self.sc_swap_f[k].iter()));
        }
        for (a, var) in self.panel.acs.iter().enumerate() {
            push(
                format!("omega[{}]", var.name),
                rate(&mut self.sc_omega[a].iter()),
            );
            push(
                format!("omega_state[{}]", var.name),
                rate(&mut self.sc_omega_state[a].iter()),
            );
            push(
                format!("tau2_acs[{}]", var.name),
                rate(&mut self.sc_tau2_acs[a].iter()),
            );
        }
        out
    }
}

/// Runs one chain from the default initial state.
pub fn run_chain(
    panel: &SurveillancePanel,
    survey: &SurveyEstimates,
    graph: &AdjacencyGraph,
    config: &SamplerConfig,
    chain_index: usize,
) -> Result<ChainOutput> {
    let init = initial_state(panel, survey)?;
    run_chain_from(panel, survey, graph, config, chain_index, init)
}

/// Runs one chain from a caller-supplied state.
pub fn run_chain_from(
    panel: &SurveillancePanel,
    survey: &SurveyEstimates,
    graph: &AdjacencyGraph,
    config: &SamplerConfig,
    chain_index: usize,
    init: ModelState,
) -> Result<ChainOutput> {
    config.validate()?;
    panel.validate()?;
    let seed = config.chain_seed(chain_index);
    let mut chain = Chain::new(panel, survey, graph, config, init, seed)?;
    let quantities = monitored_quantities(panel, graph);
    let mut draws = Vec::with_capacity(config.n_retained());
    let mut trace = Vec::with_capacity(config.n_iterations);
    let mut row = Vec::with_capacity(quantities.len());
    for iter in 0..config.n_iterations {
        chain.adapting = iter < config.n_burnin;
        chain.sweep();
        if chain.adapting && (iter + 1) % config.adaptation.interval == 0 {
            chain.adapt();
        }
        trace.push(chain.tracked_log_posterior());
        if iter >= config.n_burnin && (iter - config.n_burnin + 1).is_multiple_of(config.thin) {
            chain.record(&mut row);
            draws.push(row.clone());
        }
    }
    Ok(ChainOutput {
        quantities,
        draws,
        acceptance: chain.acceptance_summary(),
        log_posterior: trace,
        final_state: chain.s,
        seed,
    })
}

/// Runs `config.n_chains` independent chains.
pub fn run_chains(
    panel: &SurveillancePanel,
    survey: &SurveyEstimates,
    graph: &AdjacencyGraph,
    config: &SamplerConfig,
    execution: Execution,
) -> Result<Vec<ChainOutput>> {
    let init = initial_state(panel, survey)?;
    execution
        .map(config.n_chains, |k| {
            run_chain_from(panel, survey, graph, config, k, init.clone())
        })
        .into_iter()
        .collect()
}

/// Log posterior of `state` recomputed from scratch.
pub fn recompute_log_posterior(
    panel: &SurveillancePanel,
    survey: &SurveyEstimates,
    graph: &AdjacencyGraph,
    state: &ModelState,
) -> Result<f64> {
    log_posterior(panel, survey, graph, state)
}
