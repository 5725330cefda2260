//! Data, parameter and latent-state types shared by the likelihood and
//! sampler layers, together with the link functions and linear predictors.
//!
//! Arrays over regions and years are stored region-major: cell `(i, t)`
//! lives at `i * n_years + t`. Internally `t` is 0-based; the year index
//! used by the statewide trend is `t + 1`, so the first surveillance year
//! is year 1 and survey rows may refer to years `<= 0`.

use crate::error::{Error, Result};

pub fn logit(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("logit undefined at {p}")));
    }
    Ok((p / (1.0 - p)).ln())
}

pub fn inv_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `mu_t = beta0 + beta1 * t`. May leave (0, 1); callers check.
pub fn statewide_mean(beta0: f64, beta1: f64, year: i64) -> f64 {
    beta0 + beta1 * year as f64
}

/// Year index of 0-based column `t`.
#[inline]
pub fn year_of(t: usize) -> i64 {
    t as i64 + 1
}

/// One treatment-type cell, possibly suppressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observation {
    /// `c = 0`: total observed.
    Exact(u64),
    /// `c = 1`: adult count observed, adolescent count suppressed, so the
    /// total lies in `adult+1 ..= adult+9`.
    AdultOnly { adult: u64 },
    /// `c = 2`: both components suppressed, total in `2 ..= 18`.
    Suppressed,
}

impl Observation {
    pub const SUPPRESSED_LO: u64 = 2;
    pub const SUPPRESSED_HI: u64 = 18;

    pub fn censor_code(&self) -> u8 {
        match self {
            Observation::Exact(_) => 0,
            Observation::AdultOnly { .. } => 1,
            Observation::Suppressed => 2,
        }
    }

    /// Inclusive range of admissible totals.
    pub fn admissible(&self) -> (u64, u64) {
        match *self {
            Observation::Exact(y) => (y, y),
            Observation::AdultOnly { adult } => (adult + 1, adult + 9),
            Observation::Suppressed => (Self::SUPPRESSED_LO, Self::SUPPRESSED_HI),
        }
    }

    /// Smallest total consistent with the observation.
    pub fn lower_bound(&self) -> u64 {
        self.admissible().0
    }

    pub fn is_censored(&self) -> bool {
        !matches!(self, Observation::Exact(_))
    }
}

/// Centering/scaling applied to a covariate at ingestion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnTransform {
    pub center: f64,
    pub scale: f64,
}

impl ColumnTransform {
    pub const IDENTITY: ColumnTransform = ColumnTransform {
        center: 0.0,
        scale: 1.0,
    };

    pub fn apply(&self, raw: f64) -> f64 {
        (raw - self.center) / self.scale
    }
}

/// Region-by-year design with a per-year activity mask for each column.
/// Inactive entries contribute nothing to the linear predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    n_regions: usize,
    n_years: usize,
    names: Vec<String>,
    transforms: Vec<ColumnTransform>,
    /// `[(i * n_years + t) * p + c]`
    values: Vec<f64>,
    /// `[t * p + c]`
    active: Vec<bool>,
}

impl DesignMatrix {
    pub fn empty(n_regions: usize, n_years: usize) -> Self {
        Self {
            n_regions,
            n_years,
            names: Vec::new(),
            transforms: Vec::new(),
            values: Vec::new(),
            active: Vec::new(),
        }
    }

    /// Builds from per-column `n_regions * n_years` value arrays, all active.
    pub fn from_columns(
        n_regions: usize,
        n_years: usize,
        columns: Vec<(String, Vec<f64>)>,
    ) -> Result<Self> {
        let mut m = Self::empty(n_regions, n_years);
        for (name, vals) in columns {
            let active = vec![true; n_years];
            m.push_column(name, ColumnTransform::IDENTITY, vals, active)?;
        }
        Ok(m)
    }

    pub fn push_column(
        &mut self,
        name: String,
        transform: ColumnTransform,
        values: Vec<f64>,
        active: Vec<bool>,
    ) -> Result<()> {
        let cells = self.n_regions * self.n_years;
        if values.len() != cells || active.len() != self.n_years {
            return Err(Error::Invalid(format!(
                "column {name}: expected {cells} values and {} activity flags",
                self.n_years
            )));
        }
        if let Some((idx, _)) = values
            .iter()
            .enumerate()
            .find(|(idx, v)| active[idx % self.n_years] && !v.is_finite())
        {
            return Err(Error::Invalid(format!(
                "column {name}: missing value for region {}, year {} while column is active",
                idx / self.n_years,
                year_of(idx % self.n_years)
            )));
        }
        let p_old = self.names.len();
        let p_new = p_old + 1;
        let mut merged = Vec::with_capacity(cells * p_new);
        for cell in 0..cells {
            merged.extend_from_slice(&self.values[cell * p_old..(cell + 1) * p_old]);
            merged.push(values[cell]);
        }
        let mut act = Vec::with_capacity(self.n_years * p_new);
        for t in 0..self.n_years {
            act.extend_from_slice(&self.active[t * p_old..(t + 1) * p_old]);
            act.push(active[t]);
        }
        self.values = merged;
        self.active = act;
        self.names.push(name);
        self.transforms.push(transform);
        Ok(())
    }

    pub fn n_columns(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn transforms(&self) -> &[ColumnTransform] {
        &self.transforms
    }

    pub fn value(&self, i: usize, t: usize, c: usize) -> f64 {
        self.values[(i * self.n_years + t) * self.names.len() + c]
    }

    pub fn is_active(&self, t: usize, c: usize) -> bool {
        self.active[t * self.names.len() + c]
    }

    /// `x_it . coef` over active columns.
    pub fn dot(&self, i: usize, t: usize, coef: &[f64]) -> f64 {
        let p = self.names.len();
        if p == 0 {
            return 0.0;
        }
        let row = &self.values[(i * self.n_years + t) * p..(i * self.n_years + t + 1) * p];
        let act = &self.active[t * p..(t + 1) * p];
        row.iter()
            .zip(act)
            .zip(coef)
            .filter(|((_, &a), _)| a)
            .map(|((x, _), b)| x * b)
            .sum()
    }
}

/// Which kind of surveillance outcome a series represents. Only treatment
/// series may carry suppressed cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeKind {
    Treatment,
    Death,
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub name: String,
    pub kind: OutcomeKind,
    /// Cell-indexed observations.
    pub observations: Vec<Observation>,
    pub design: DesignMatrix,
}

/// A 1-year or 5-year estimate for one latent covariate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcsRow {
    pub region: usize,
    /// Final year of the window.
    pub year: i64,
    pub window: u8,
    pub estimate: f64,
    pub se: f64,
}

/// A percentage covariate observed only through noisy survey estimates.
/// Latent yearly values run from `first_latent_year` to the last
/// surveillance year and feed risk-design column `risk_column` through
/// `transform`.
#[derive(Debug, Clone, PartialEq)]
pub struct AcsVariable {
    pub name: String,
    pub risk_column: usize,
    pub transform: ColumnTransform,
    pub first_latent_year: i64,
    pub rows: Vec<AcsRow>,
}

impl AcsVariable {
    pub fn n_latent_years(&self, n_years: usize) -> usize {
        (year_of(n_years - 1) - self.first_latent_year + 1) as usize
    }

    /// Offset of `year` in the latent-year axis.
    pub fn latent_offset(&self, year: i64) -> usize {
        (year - self.first_latent_year) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurveillancePanel {
    pub n_regions: usize,
    pub n_years: usize,
    pub populations: Vec<u64>,
    pub outcomes: Vec<Outcome>,
    pub risk_design: DesignMatrix,
    pub acs: Vec<AcsVariable>,
}

impl SurveillancePanel {
    #[inline]
    pub fn cell(&self, i: usize, t: usize) -> usize {
        i * self.n_years + t
    }

    pub fn n_cells(&self) -> usize {
        self.n_regions * self.n_years
    }

    pub fn population(&self, i: usize, t: usize) -> u64 {
        self.populations[self.cell(i, t)]
    }

    /// Smallest latent count that makes every observed or censored outcome
    /// possible at `(i, t)`.
    pub fn latent_lower_bound(&self, i: usize, t: usize) -> u64 {
        let c = self.cell(i, t);
        self.outcomes
            .iter()
            .map(|o| o.observations[c].lower_bound())
            .max()
            .unwrap_or(0)
    }

    /// Same panel restricted to a subset of outcomes.
    pub fn with_outcomes(&self, keep: &[usize]) -> Self {
        Self {
            outcomes: keep.iter().map(|&k| self.outcomes[k].clone()).collect(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cells = self.n_cells();
        if self.n_regions == 0 || self.n_years == 0 {
            return Err(Error::Invalid("panel has no cells".into()));
        }
        if self.populations.len() != cells {
            return Err(Error::Invalid("population array has wrong length".into()));
        }
        if let Some(c) = self.populations.iter().position(|&p| p == 0) {
            return Err(Error::Invalid(format!(
                "population must be positive at region {}, year {}",
                c / self.n_years,
                year_of(c % self.n_years)
            )));
        }
        if self.outcomes.is_empty() {
            return Err(Error::Invalid("panel has no outcomes".into()));
        }
        for o in &self.outcomes {
            if o.observations.len() != cells {
                return Err(Error::Invalid(format!(
                    "outcome {} has {} cells, expected {cells}",
                    o.name,
                    o.observations.len()
                )));
            }
            if o.design.n_regions != self.n_regions || o.design.n_years != self.n_years {
                return Err(Error::Invalid(format!("outcome {} design shape", o.name)));
            }
            for (c, obs) in o.observations.iter().enumerate() {
                if obs.is_censored() && o.kind != OutcomeKind::Treatment {
                    return Err(Error::Invalid(format!(
                        "outcome {} is not a treatment series but has a censored cell",
                        o.name
                    )));
                }
                if obs.lower_bound() > self.populations[c] {
                    return Err(Error::Invalid(format!(
                        "outcome {}: count exceeds population at region {}, year {}",
                        o.name,
                        c / self.n_years,
                        year_of(c % self.n_years)
                    )));
                }
            }
        }
        if self.risk_design.n_regions != self.n_regions || self.risk_design.n_years != self.n_years
        {
            return Err(Error::Invalid("risk design shape".into()));
        }
        for v in &self.acs {
            if v.risk_column >= self.risk_design.n_columns() {
                return Err(Error::Invalid(format!(
                    "latent covariate {} maps to missing risk column",
                    v.name
                )));
            }
            if v.first_latent_year > 1 {
                return Err(Error::Invalid(format!(
                    "latent covariate {} must be modelled from year 1",
                    v.name
                )));
            }
            for r in &v.rows {
                if r.se <= 0.0 || !r.se.is_finite() {
                    return Err(Error::Invalid(format!(
                        "latent covariate {}: non-positive standard error",
                        v.name
                    )));
                }
                let first = r.year - (r.window as i64 - 1);
                if first < v.first_latent_year || r.year > year_of(self.n_years - 1) {
                    return Err(Error::Invalid(format!(
                        "latent covariate {}: row for year {} outside latent range",
                        v.name, r.year
                    )));
                }
                if r.region >= self.n_regions || !(r.window == 1 || r.window == 5) {
                    return Err(Error::Invalid(format!(
                        "latent covariate {}: bad region or window",
                        v.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One statewide multi-year prevalence estimate covering years `a..=b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurveyRow {
    pub a: i64,
    pub b: i64,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurveyEstimates {
    rows: Vec<SurveyRow>,
}

impl SurveyEstimates {
    pub fn new(rows: Vec<SurveyRow>) -> Result<Self> {
        for r in &rows {
            if r.a > r.b {
                return Err(Error::Invalid(format!(
                    "survey span {}..{} reversed",
                    r.a, r.b
                )));
            }
            if !(r.estimate > 0.0 && r.estimate < 1.0) {
                return Err(Error::Invalid(format!(
                    "survey estimate {} not a proportion",
                    r.estimate
                )));
            }
            if !(r.se > 0.0 && r.se.is_finite()) {
                return Err(Error::Invalid(format!(
                    "survey se {} must be positive",
                    r.se
                )));
            }
        }
        let mut spans: Vec<(i64, i64)> = rows.iter().map(|r| (r.a, r.b)).collect();
        spans.sort_unstable();
        spans.dedup();
        // Two distinct spans can still share a midpoint and leave the slope
        // unidentified; require distinct mean times.
        let mut centers: Vec<i64> = rows.iter().map(|r| r.a + r.b).collect();
        centers.sort_unstable();
        centers.dedup();
        if spans.len() < 2 || centers.len() < 2 {
            return Err(Error::UnidentifiedTrend(rows.len()));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[SurveyRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Precision-weighted mean of the estimates.
    pub fn pooled_estimate(&self) -> f64 {
        let (num, den) = self.rows.iter().fold((0.0, 0.0), |(n, d), r| {
            let w = 1.0 / (r.se * r.se);
            (n + w * r.estimate, d + w)
        });
        num / den
    }
}

/// Latent values, statewide means and variances for one latent covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct AcsLatent {
    /// `[i * n_latent_years + offset]`
    pub omega: Vec<f64>,
    /// Statewide mean per latent year.
    pub statewide: Vec<f64>,
    /// Per-region process variance.
    pub tau2: Vec<f64>,
}

/// A full sampler state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub n: Vec<u64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// Per-outcome ICAR detection effects.
    pub f: Vec<Vec<f64>>,
    /// Per-outcome iid detection effects.
    pub eps: Vec<Vec<f64>>,
    pub beta0_mu: f64,
    pub beta1_mu: f64,
    pub gamma: Vec<f64>,
    /// `[k][t]`
    pub mu_detect: Vec<Vec<f64>>,
    pub beta_detect: Vec<Vec<f64>>,
    pub sigma2_eps: Vec<f64>,
    pub tau2_f: Vec<f64>,
    pub phi_f: Vec<f64>,
    pub tau2_u: f64,
    pub sigma2_v: f64,
    pub phi_u: f64,
    pub acs: Vec<AcsLatent>,
}

impl ModelState {
    /// Zero effects, unit variances, `phi = 0.5`; counts and intercepts are
    /// left for the caller.
    pub fn neutral(panel: &SurveillancePanel) -> Self {
        let cells = panel.n_cells();
        let k = panel.outcomes.len();
        Self {
            n: vec![0; cells],
            u: vec![0.0; cells],
            v: vec![0.0; cells],
            f: vec![vec![0.0; cells]; k],
            eps: vec![vec![0.0; cells]; k],
            beta0_mu: 0.0,
            beta1_mu: 0.0,
            gamma: vec![0.0; panel.risk_design.n_columns()],
            mu_detect: vec![vec![0.0; panel.n_years]; k],
            beta_detect: panel
                .outcomes
                .iter()
                .map(|o| vec![0.0; o.design.n_columns()])
                .collect(),
            sigma2_eps: vec![1.0; k],
            tau2_f: vec![1.0; k],
            phi_f: vec![0.5; k],
            tau2_u: 1.0,
            sigma2_v: 1.0,
            phi_u: 0.5,
            acs: panel
                .acs
                .iter()
                .map(|var| {
                    let ly = var.n_latent_years(panel.n_years);
                    AcsLatent {
                        omega: vec![50.0; panel.n_regions * ly],
                        statewide: vec![50.0; ly],
                        tau2: vec![1.0; panel.n_regions],
                    }
                })
                .collect(),
        }
    }

    pub fn mu(&self, t: usize) -> f64 {
        statewide_mean(self.beta0_mu, self.beta1_mu, year_of(t))
    }
}

/// Linear predictor of the detection logit for outcome `k` at `(i, t)`.
pub fn detection_logit(
    panel: &SurveillancePanel,
    state: &ModelState,
    i: usize,
    t: usize,
    k: usize,
) -> f64 {
    let c = panel.cell(i, t);
    state.mu_detect[k][t]
        + panel.outcomes[k].design.dot(i, t, &state.beta_detect[k])
        + state.f[k][c]
        + state.eps[k][c]
}

pub fn detection_prob(
    panel: &SurveillancePanel,
    state: &ModelState,
    i: usize,
    t: usize,
    k: usize,
) -> f64 {
    inv_logit(detection_logit(panel, state, i, t, k))
}

/// `W_it . gamma`, with latent-covariate columns read from the state.
pub fn risk_covariate_effect(
    panel: &SurveillancePanel,
    state: &ModelState,
    i: usize,
    t: usize,
) -> f64 {
    let mut eta = panel.risk_design.dot(i, t, &state.gamma);
    for (var, latent) in panel.acs.iter().zip(&state.acs) {
        let c = var.risk_column;
        if !panel.risk_design.is_active(t, c) {
            continue;
        }
        let ly = var.n_latent_years(panel.n_years);
        let omega = latent.omega[i * ly + var.latent_offset(year_of(t))];
        // the design holds the ingestion-time value; swap in the latent one
        eta += state.gamma[c] * (var.transform.apply(omega) - panel.risk_design.value(i, t, c));
    }
    eta
}

pub fn log_relative_risk(panel: &SurveillancePanel, state: &ModelState, i: usize, t: usize) -> f64 {
    let c = panel.cell(i, t);
    risk_covariate_effect(panel, state, i, t) + state.u[c] + state.v[c]
}

pub fn relative_risk(panel: &SurveillancePanel, state: &ModelState, i: usize, t: usize) -> f64 {
    log_relative_risk(panel, state, i, t).exp()
}
