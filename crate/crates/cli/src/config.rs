//! `key = value` run configuration for `fit`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use spatial_abundance::sampler::SamplerConfig;

use crate::args::Common;
use crate::error::{CliError, CliResult};

/// Splits `key = value` lines, dropping blanks and `#` comments.
pub fn key_values(text: &str) -> CliResult<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Validation(format!(
                "line {}: expected key = value",
                idx + 1
            )));
        };
        out.push((idx + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Inputs and sampler settings for one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub counts: PathBuf,
    pub survey: PathBuf,
    pub population: PathBuf,
    pub adjacency: PathBuf,
    pub risk_covariates: Option<PathBuf>,
    /// `(outcome id, path)`
    pub detection_covariates: Vec<(String, PathBuf)>,
    pub out: Option<PathBuf>,
    pub sampler: SamplerConfig,
}

impl FitConfig {
    /// Parses a config; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> CliResult<Self> {
        let mut sampler = SamplerConfig::default();
        let (mut counts, mut survey, mut population, mut adjacency) = (None, None, None, None);
        let mut risk_covariates = None;
        let mut detection_covariates = Vec::new();
        let mut out = None;
        for (line, key, value) in key_values(text)? {
            let bad = |what: &str| {
                CliError::Validation(format!("line {line}: {key} expects {what}, got {value:?}"))
            };
            let int = || {
                value
                    .parse::<usize>()
                    .map_err(|_| bad("a non-negative integer"))
            };
            let path = || base.join(&value);
            match key.as_str() {
                "counts" => counts = Some(path()),
                "survey" => survey = Some(path()),
                "population" => population = Some(path()),
                "adjacency" => adjacency = Some(path()),
                "risk_covariates" => risk_covariates = Some(path()),
                "out" => out = Some(path()),
                "iterations" => sampler.n_iterations = int()?,
                "burnin" => sampler.n_burnin = int()?,
                "thin" => sampler.thin = int()?,
                "chains" => sampler.n_chains = int()?,
                "seed" => sampler.seed = value.parse().map_err(|_| bad("an unsigned integer"))?,
                "max_stepout" => sampler.slice.max_stepout = int()?,
                "adaptation_interval" => sampler.adaptation.interval = int()?,
                k => match k.strip_prefix("detection_covariates.") {
                    Some(outcome) if !outcome.is_empty() => {
                        detection_covariates.push((outcome.to_string(), path()))
                    }
                    _ => {
                        return Err(CliError::Validation(format!(
                            "line {line}: unknown key {key:?}"
                        )))
                    }
                },
            }
        }
        let need = |p: Option<PathBuf>, key: &str| {
            p.ok_or_else(|| CliError::Validation(format!("config is missing required key {key:?}")))
        };
        Ok(Self {
            counts: need(counts, "counts")?,
            survey: need(survey, "survey")?,
            population: need(population, "population")?,
            adjacency: need(adjacency, "adjacency")?,
            risk_covariates,
            detection_covariates,
            out,
            sampler,
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn apply(&mut self, flags: &Common) {
        apply_sampler_flags(&mut self.sampler, flags);
        if let Some(out) = &flags.out {
            self.out = Some(out.clone());
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line("counts", self.counts.display().to_string());
        line("survey", self.survey.display().to_string());
        line("population", self.population.display().to_string());
        line("adjacency", self.adjacency.display().to_string());
        if let Some(p) = &self.risk_covariates {
            line("risk_covariates", p.display().to_string());
        }
        for (k, p) in &self.detection_covariates {
            line(
                &format!("detection_covariates.{k}"),
                p.display().to_string(),
            );
        }
        let c = &self.sampler;
        line("iterations", c.n_iterations.to_string());
        line("burnin", c.n_burnin.to_string());
        line("thin", c.thin.to_string());
        line("chains", c.n_chains.to_string());
        line("seed", c.seed.to_string());
        line("max_stepout", c.slice.max_stepout.to_string());
        line("adaptation_interval", c.adaptation.interval.to_string());
        s
    }
}

pub fn apply_sampler_flags(c: &mut SamplerConfig, flags: &Common) {
    if let Some(v) = flags.seed {
        c.seed = v;
    }
    if let Some(v) = flags.chains {
        c.n_chains = v;
    }
    if let Some(v) = flags.iters {
        c.n_iterations = v;
    }
    if let Some(v) = flags.burnin {
        c.n_burnin = v;
    }
    if let Some(v) = flags.thin {
        c.thin = v;
    }
}
