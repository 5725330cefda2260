//! CSV writers and readers for draws, summaries, diagnostics and reports.
//!
//! Floats are written in Rust's shortest round-trip form, so reading a file
//! back reproduces the in-memory values exactly.

use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, Writer};
use spatial_abundance::sampler::{ChainOutput, Quantity};
use spatial_abundance::simulation::{BaselineEstimate, EvaluationReport};
use spatial_abundance::summary::PosteriorSummary;

use crate::error::{CliError, CliResult};
use crate::ingest::FitInputs;

pub const DRAWS_DIR: &str = "draws";
pub const POSTERIOR_FILE: &str = "posterior.csv";
pub const SUMMARIES_FILE: &str = "summaries.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const PLOT_FILE: &str = "plot.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const INTERCEPTS_FILE: &str = "intercepts.csv";

pub fn fmt(x: f64) -> String {
    format!("{x}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

/// A CSV writer that reports failures against its path.
pub struct CsvOut {
    path: PathBuf,
    inner: Writer<File>,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[&str]) -> CliResult<Self> {
        let inner = Writer::from_path(path).map_err(|e| CliError::write(path, e))?;
        let mut w = Self {
            path: path.to_path_buf(),
            inner,
        };
        w.row(header)?;
        Ok(w)
    }

    pub fn row<I, S>(&mut self, fields: I) -> CliResult<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner
            .write_record(fields)
            .map_err(|e| CliError::write(&self.path, e))
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.inner
            .flush()
            .map_err(|e| CliError::write(&self.path, e))
    }
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))
}

/// `draws/chain_<k>.csv`, one per chain, numbered from 1.
pub fn write_draws(dir: &Path, chains: &[ChainOutput]) -> CliResult<()> {
    let d = dir.join(DRAWS_DIR);
    create_dir(&d)?;
    for (k, c) in chains.iter().enumerate() {
        let names: Vec<String> = c.quantities.iter().map(|q| q.to_string()).collect();
        let header: Vec<&str> = names.iter().map(String::as_str).collect();
        let mut w = CsvOut::create(&d.join(format!("chain_{}.csv", k + 1)), &header)?;
        for row in &c.draws {
            w.row(row.iter().map(|&x| fmt(x)))?;
        }
        w.finish()?;
    }
    Ok(())
}

/// Draws of one persisted chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws {
    pub file: PathBuf,
    pub quantities: Vec<Quantity>,
    pub draws: Vec<Vec<f64>>,
}

/// Reads `chain_*.csv` from `dir/draws`, or from `dir` itself when it has no
/// `draws` subdirectory, in chain order.
pub fn read_draws(dir: &Path) -> CliResult<Vec<ChainDraws>> {
    let sub = dir.join(DRAWS_DIR);
    let d = if sub.is_dir() { sub } else { dir.to_path_buf() };
    let entries = std::fs::read_dir(&d).map_err(|e| CliError::read(&d, e))?;
    let mut files: Vec<(usize, PathBuf)> = Vec::new();
    for e in entries {
        let path = e.map_err(|e| CliError::read(&d, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(k) = name
            .strip_prefix("chain_")
            .and_then(|s| s.strip_suffix(".csv"))
            .and_then(|s| s.parse().ok())
        {
            files.push((k, path));
        }
    }
    if files.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: no chain_*.csv draw files",
            d.display()
        )));
    }
    files.sort();
    let chains: Vec<ChainDraws> = files
        .into_iter()
        .map(|(_, f)| read_chain(&f))
        .collect::<CliResult<_>>()?;
    if let Some(c) = chains.iter().find(|c| c.quantities != chains[0].quantities) {
        return Err(CliError::Validation(format!(
            "{}: columns differ from {}",
            c.file.display(),
            chains[0].file.display()
        )));
    }
    Ok(chains)
}

fn read_chain(path: &Path) -> CliResult<ChainDraws> {
    let bad =
        |line: u64, msg: String| CliError::Validation(format!("{}:{line}: {msg}", path.display()));
    let mut r = ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| CliError::read(path, e))?;
    let header = r.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    let quantities = header
        .iter()
        .map(Quantity::parse)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| bad(1, e.to_string()))?;
    if quantities.is_empty() {
        return Err(bad(1, "no columns".into()));
    }
    let mut draws = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad(line, "non-numeric draw".into()))?;
        draws.push(row);
    }
    Ok(ChainDraws {
        file: path.to_path_buf(),
        quantities,
        draws,
    })
}

const POSTERIOR_HEADER: [&str; 7] = ["quantity", "mean", "sd", "lower", "upper", "ess", "rhat"];

pub fn write_posterior(path: &Path, summaries: &[PosteriorSummary]) -> CliResult<()> {
    let mut w = CsvOut::create(path, &POSTERIOR_HEADER)?;
    for s in summaries {
        w.row([
            s.quantity.to_string(),
            fmt(s.mean),
            fmt(s.sd),
            fmt(s.lower),
            fmt(s.upper),
            fmt(s.ess),
            fmt(s.rhat),
        ])?;
    }
    w.finish()
}

pub fn read_posterior(path: &Path) -> CliResult<Vec<PosteriorSummary>> {
    let mut r = ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| CliError::read(path, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::read(path, e))?;
        let num = |j: usize| {
            rec.get(j)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| {
                    CliError::read(path, format!("bad value in column {}", POSTERIOR_HEADER[j]))
                })
        };
        out.push(PosteriorSummary {
            quantity: Quantity::parse(rec.get(0).unwrap_or(""))
                .map_err(|e| CliError::read(path, e))?,
            mean: num(1)?,
            sd: num(2)?,
            lower: num(3)?,
            upper: num(4)?,
            ess: num(5)?,
            rhat: num(6)?,
        });
    }
    Ok(out)
}

/// Long rows `(quantity, chain, statistic, value)`: acceptance rates per
/// chain and update group, then split R-hat and ESS per quantity.
pub fn write_diagnostics(
    path: &Path,
    acceptance: &[Vec<(String, f64)>],
    summaries: &[PosteriorSummary],
) -> CliResult<()> {
    let mut w = CsvOut::create(path, &["quantity", "chain", "statistic", "value"])?;
    for (k, rates) in acceptance.iter().enumerate() {
        for (name, rate) in rates {
            w.row([
                name.clone(),
                (k + 1).to_string(),
                "acceptance".into(),
                fmt(*rate),
            ])?;
        }
    }
    for s in summaries {
        let q = s.quantity.to_string();
        w.row([q.clone(), String::new(), "rhat".into(), fmt(s.rhat)])?;
        w.row([q, String::new(), "ess".into(), fmt(s.ess)])?;
    }
    w.finish()
}

/// Plot-ready rows for every region-year and yearly quantity, with model
/// years translated to calendar years.
pub fn write_plot(path: &Path, summaries: &[PosteriorSummary], first_year: i64) -> CliResult<()> {
    let mut w = CsvOut::create(
        path,
        &["region", "year", "quantity", "mean", "lower", "upper"],
    )?;
    for s in summaries {
        let Some(year) = s.quantity.year else {
            continue;
        };
        w.row([
            s.quantity.region.clone().unwrap_or_default(),
            (first_year + year - 1).to_string(),
            s.quantity.name.clone(),
            fmt(s.mean),
            fmt(s.lower),
            fmt(s.upper),
        ])?;
    }
    w.finish()
}

/// One row per region and year: counts, prevalence, relative risk and
/// detection rates, plus flags for prevalence intervals lying entirely
/// above or below the survey-only baseline rate.
pub fn write_cell_summaries(
    path: &Path,
    inputs: &FitInputs,
    summaries: &[PosteriorSummary],
    baseline: &BaselineEstimate,
) -> CliResult<()> {
    let by_name: HashMap<String, &PosteriorSummary> = summaries
        .iter()
        .map(|s| (s.quantity.to_string(), s))
        .collect();
    let mut header: Vec<String> = ["region_id", "year", "population", "baseline_n"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let stats = ["mean", "sd", "lower", "upper"];
    let mut blocks = vec![
        "n".to_string(),
        "prevalence".to_string(),
        "lambda".to_string(),
    ];
    blocks.extend(inputs.outcome_ids.iter().map(|o| format!("p_{o}")));
    for b in &blocks {
        header.extend(stats.iter().map(|s| format!("{b}_{s}")));
    }
    header.push("above_baseline".into());
    header.push("below_baseline".into());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = CsvOut::create(path, &header_refs)?;

    let panel = &inputs.panel;
    let get = |name: String| -> CliResult<&PosteriorSummary> {
        by_name
            .get(&name)
            .copied()
            .ok_or_else(|| CliError::Runtime(format!("no summary for {name}")))
    };
    for (i, label) in inputs.graph.labels().iter().enumerate() {
        for t in 0..panel.n_years {
            let year = t as i64 + 1;
            let pop = panel.population(i, t) as f64;
            let n = get(format!("N[{label},{year}]"))?;
            let lambda = get(format!("lambda[{label},{year}]"))?;
            let mut row = vec![
                label.clone(),
                (inputs.first_year + t as i64).to_string(),
                panel.population(i, t).to_string(),
                fmt(baseline.n_hat[panel.cell(i, t)]),
            ];
            let push = |row: &mut Vec<String>, s: &PosteriorSummary, scale: f64| {
                row.extend([s.mean, s.sd, s.lower, s.upper].map(|x| fmt(x / scale)));
            };
            push(&mut row, n, 1.0);
            push(&mut row, n, pop);
            push(&mut row, lambda, 1.0);
            for k in 0..panel.outcomes.len() {
                push(&mut row, get(format!("p{}[{label},{year}]", k + 1))?, 1.0);
            }
            let base_rate = baseline.mu[t];
            row.push(u8::from(n.lower / pop > base_rate).to_string());
            row.push(u8::from(n.upper / pop < base_rate).to_string());
            w.row(row)?;
        }
    }
    w.finish()
}

pub fn write_report(dir: &Path, report: &EvaluationReport) -> CliResult<()> {
    let mut w = CsvOut::create(
        &dir.join(REPORT_FILE),
        &["scenario", "replicate", "model", "metric", "value"],
    )?;
    for (r, model, metric, value) in report.long_rows() {
        w.row([
            report.scenario.clone(),
            (r + 1).to_string(),
            model.to_string(),
            metric.to_string(),
            fmt_opt(value),
        ])?;
    }
    w.finish()?;

    let mut w = CsvOut::create(
        &dir.join(AGGREGATE_FILE),
        &[
            "scenario",
            "model",
            "replicates",
            "mean_cp",
            "median_cp",
            "rmse_n",
            "rmse_lambda",
            "rel_mae_n",
            "wins_vs_baseline",
            "wins_rmse_n_vs_other",
        ],
    )?;
    for a in report.aggregate() {
        w.row([
            report.scenario.clone(),
            a.model.label().to_string(),
            report.replicates.len().to_string(),
            fmt_opt(a.mean_cp),
            fmt_opt(a.median_cp),
            fmt(a.rmse_n),
            fmt(a.rmse_lambda),
            fmt(a.rel_mae_n),
            a.wins_vs_baseline.to_string(),
            a.wins_rmse_n_vs_other.to_string(),
        ])?;
    }
    w.finish()?;

    let mut w = CsvOut::create(
        &dir.join(INTERCEPTS_FILE),
        &["scenario", "model", "parameter", "covered", "total", "rate"],
    )?;
    for (model, c) in report.intercept_coverage() {
        w.row([
            report.scenario.clone(),
            model.label().to_string(),
            c.parameter.clone(),
            c.covered.to_string(),
            c.total.to_string(),
            fmt(c.covered as f64 / c.total as f64),
        ])?;
    }
    w.finish()
}

/// `(scenario, replicate, model, metric, value)` rows of a report file.
pub type ReportRow = (String, usize, String, String, Option<f64>);

pub fn read_report(path: &Path) -> CliResult<Vec<ReportRow>> {
    let mut r = ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| CliError::read(path, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::read(path, e))?;
        let bad = || CliError::read(path, "malformed report row");
        let value = match rec.get(4).ok_or_else(bad)? {
            "" => None,
            v => Some(v.parse().map_err(|_| bad())?),
        };
        out.push((
            rec.get(0).ok_or_else(bad)?.to_string(),
            rec.get(1).ok_or_else(bad)?.parse().map_err(|_| bad())?,
            rec.get(2).ok_or_else(bad)?.to_string(),
            rec.get(3).ok_or_else(bad)?.to_string(),
            value,
        ));
    }
    Ok(out)
}
