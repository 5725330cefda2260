//! CSV and edge-list readers that assemble a validated panel.
//!
//! Every reader works on the bytes that were digested for the manifest, and
//! every rejection names the file and line of the offending row. Nothing
//! partially built escapes on error.

use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, Trim};
use sha2::{Digest, Sha256};
use spatial_abundance::graph::{load_adjacency, AdjacencyGraph};
use spatial_abundance::model::{
    AcsRow, AcsVariable, ColumnTransform, DesignMatrix, Observation, Outcome, OutcomeKind,
    SurveillancePanel, SurveyEstimates, SurveyRow,
};

use crate::config::FitConfig;
use crate::error::{CliError, CliResult};

pub const COUNTS_COLUMNS: [&str; 6] = [
    "region_id",
    "year",
    "outcome_id",
    "count",
    "censor_code",
    "adult_count",
];
pub const POPULATION_COLUMNS: [&str; 3] = ["region_id", "year", "population"];
pub const SURVEY_COLUMNS: [&str; 4] = ["start_year", "end_year", "estimate", "se"];
pub const COVARIATE_COLUMNS: [&str; 6] = ["region_id", "year", "variable", "value", "se", "window"];

/// A file read once, with its SHA-256 digest.
#[derive(Debug, Clone)]
pub struct InputFile {
    pub label: String,
    pub path: PathBuf,
    pub digest: String,
    pub bytes: Vec<u8>,
}

impl InputFile {
    pub fn read(label: impl Into<String>, path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::read(path, e))?;
        Ok(Self {
            label: label.into(),
            path: path.to_path_buf(),
            digest: sha256_hex(&bytes),
            bytes,
        })
    }

    fn err(&self, line: u64, msg: impl std::fmt::Display) -> CliError {
        CliError::Validation(format!("{}:{line}: {msg}", self.path.display()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Rows of a CSV projected onto `columns`, with their line numbers.
fn table(file: &InputFile, columns: &[&str]) -> CliResult<Vec<(u64, Vec<String>)>> {
    let mut reader = ReaderBuilder::new()
        .trim(Trim::All)
        .from_reader(file.bytes.as_slice());
    let headers = reader.headers().map_err(|e| file.err(1, e))?.clone();
    let idx: Vec<usize> = columns
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h == *c)
                .ok_or_else(|| file.err(1, format!("missing column {c:?}")))
        })
        .collect::<CliResult<_>>()?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            file.err(line, e)
        })?;
        let line = record.position().map_or(0, |p| p.line());
        rows.push((line, idx.iter().map(|&j| record[j].to_string()).collect()));
    }
    Ok(rows)
}

fn parse<T: std::str::FromStr>(file: &InputFile, line: u64, name: &str, v: &str) -> CliResult<T> {
    v.parse()
        .map_err(|_| file.err(line, format!("{name} {v:?} is not a valid number")))
}

fn parse_opt<T: std::str::FromStr>(
    file: &InputFile,
    line: u64,
    name: &str,
    v: &str,
) -> CliResult<Option<T>> {
    if v.is_empty() {
        Ok(None)
    } else {
        parse(file, line, name, v).map(Some)
    }
}

fn region(file: &InputFile, line: u64, graph: &AdjacencyGraph, id: &str) -> CliResult<usize> {
    graph
        .index_of(id)
        .ok_or_else(|| file.err(line, format!("unknown region id {id:?}")))
}

pub fn read_adjacency(file: &InputFile) -> CliResult<AdjacencyGraph> {
    let graph = load_adjacency(file.bytes.as_slice())
        .map_err(|e| CliError::Validation(format!("{}: {e}", file.path.display())))?;
    if let Some(bad) = graph
        .labels()
        .iter()
        .find(|l| l.contains([',', '[', ']', '"']))
    {
        return Err(CliError::Validation(format!(
            "{}: region id {bad:?} may not contain commas, brackets or quotes",
            file.path.display()
        )));
    }
    Ok(graph)
}

fn outcome_kind(id: &str) -> OutcomeKind {
    match id.to_ascii_lowercase().as_str() {
        "treatment" => OutcomeKind::Treatment,
        "death" => OutcomeKind::Death,
        _ => OutcomeKind::Other,
    }
}

/// Counts with outcomes in order of first appearance.
#[derive(Debug)]
pub struct Counts {
    pub first_year: i64,
    pub n_years: usize,
    pub outcome_ids: Vec<String>,
    /// `[k][cell]` with the source line of each cell.
    pub cells: Vec<Vec<(Observation, u64)>>,
}

pub fn read_counts(file: &InputFile, graph: &AdjacencyGraph) -> CliResult<Counts> {
    let rows = table(file, &COUNTS_COLUMNS)?;
    if rows.is_empty() {
        return Err(file.err(1, "no count rows"));
    }
    let mut parsed = Vec::with_capacity(rows.len());
    let mut outcome_ids: Vec<String> = Vec::new();
    for (line, r) in &rows {
        let line = *line;
        let i = region(file, line, graph, &r[0])?;
        let year: i64 = parse(file, line, "year", &r[1])?;
        if r[2].is_empty() {
            return Err(file.err(line, "outcome_id is blank"));
        }
        let k = match outcome_ids.iter().position(|o| *o == r[2]) {
            Some(k) => k,
            None => {
                outcome_ids.push(r[2].clone());
                outcome_ids.len() - 1
            }
        };
        let count: Option<u64> = parse_opt(file, line, "count", &r[3])?;
        let code: u8 = if r[4].is_empty() {
            0
        } else {
            parse(file, line, "censor_code", &r[4])?
        };
        let adult: Option<u64> = parse_opt(file, line, "adult_count", &r[5])?;
        let obs = match (code, count, adult) {
            (0, Some(y), None) => Observation::Exact(y),
            (0, None, _) => return Err(file.err(line, "uncensored cell has no count")),
            (0, _, Some(_)) => {
                return Err(file.err(line, "adult_count given for an uncensored cell"))
            }
            (1, None, Some(a)) => Observation::AdultOnly { adult: a },
            (1, _, None) => return Err(file.err(line, "censor_code 1 requires adult_count")),
            (2, None, None) => Observation::Suppressed,
            (1 | 2, Some(_), _) => {
                return Err(file.err(line, "censored cell must leave count blank"))
            }
            (2, None, Some(_)) => {
                return Err(file.err(line, "censor_code 2 must leave adult_count blank"))
            }
            (c, ..) => return Err(file.err(line, format!("censor_code {c} not in {{0, 1, 2}}"))),
        };
        if obs.is_censored() && outcome_kind(&r[2]) != OutcomeKind::Treatment {
            return Err(file.err(
                line,
                format!(
                    "outcome {:?} is not a treatment series and cannot be censored",
                    r[2]
                ),
            ));
        }
        parsed.push((line, i, year, k, obs));
    }
    let first_year = parsed.iter().map(|p| p.2).min().unwrap();
    let last_year = parsed.iter().map(|p| p.2).max().unwrap();
    let n_years = (last_year - first_year + 1) as usize;
    let n = graph.n_regions();
    let mut cells: Vec<Vec<Option<(Observation, u64)>>> =
        vec![vec![None; n * n_years]; outcome_ids.len()];
    for (line, i, year, k, obs) in parsed {
        let c = i * n_years + (year - first_year) as usize;
        if let Some((_, prev)) = cells[k][c] {
            return Err(file.err(line, format!("duplicate cell, first given on line {prev}")));
        }
        cells[k][c] = Some((obs, line));
    }
    let mut complete = Vec::with_capacity(outcome_ids.len());
    for (k, col) in cells.into_iter().enumerate() {
        let mut out = Vec::with_capacity(col.len());
        for (c, cell) in col.into_iter().enumerate() {
            match cell {
                Some(x) => out.push(x),
                None => {
                    return Err(CliError::Validation(format!(
                        "{}: no {} count for region {:?}, year {}",
                        file.path.display(),
                        outcome_ids[k],
                        graph.labels()[c / n_years],
                        first_year + (c % n_years) as i64
                    )))
                }
            }
        }
        complete.push(out);
    }
    Ok(Counts {
        first_year,
        n_years,
        outcome_ids,
        cells: complete,
    })
}

/// Populations per cell; rows for years outside the count range are skipped.
pub fn read_population(
    file: &InputFile,
    graph: &AdjacencyGraph,
    first_year: i64,
    n_years: usize,
) -> CliResult<Vec<u64>> {
    let n = graph.n_regions();
    let mut pop: Vec<Option<u64>> = vec![None; n * n_years];
    for (line, r) in table(file, &POPULATION_COLUMNS)? {
        let i = region(file, line, graph, &r[0])?;
        let year: i64 = parse(file, line, "year", &r[1])?;
        let p: u64 = parse(file, line, "population", &r[2])?;
        if p == 0 {
            return Err(file.err(line, "population must be positive"));
        }
        let t = year - first_year;
        if t < 0 || t >= n_years as i64 {
            continue;
        }
        let c = i * n_years + t as usize;
        if pop[c].is_some() {
            return Err(file.err(line, "duplicate population row"));
        }
        pop[c] = Some(p);
    }
    pop.iter()
        .enumerate()
        .map(|(c, p)| {
            p.ok_or_else(|| {
                CliError::Validation(format!(
                    "{}: no population for region {:?}, year {}",
                    file.path.display(),
                    graph.labels()[c / n_years],
                    first_year + (c % n_years) as i64
                ))
            })
        })
        .collect()
}

/// Survey rows with calendar years mapped to model years (first count year
/// is year 1).
pub fn read_survey(file: &InputFile, first_year: i64) -> CliResult<SurveyEstimates> {
    let mut rows = Vec::new();
    for (line, r) in table(file, &SURVEY_COLUMNS)? {
        let start: i64 = parse(file, line, "start_year", &r[0])?;
        let end: i64 = parse(file, line, "end_year", &r[1])?;
        let estimate: f64 = parse(file, line, "estimate", &r[2])?;
        let se: f64 = parse(file, line, "se", &r[3])?;
        if end < start {
            return Err(file.err(line, "end_year precedes start_year"));
        }
        if !(estimate > 0.0 && estimate < 1.0) {
            return Err(file.err(line, format!("estimate {estimate} not in (0, 1)")));
        }
        if !(se > 0.0 && se.is_finite()) {
            return Err(file.err(line, format!("se {se} must be positive")));
        }
        rows.push(SurveyRow {
            a: start - first_year + 1,
            b: end - first_year + 1,
            estimate,
            se,
        });
    }
    SurveyEstimates::new(rows)
        .map_err(|e| CliError::Validation(format!("{}: {e}", file.path.display())))
}

struct CovariateRow {
    line: u64,
    region: usize,
    year: i64,
    value: f64,
    se: Option<f64>,
    window: u8,
}

/// Fixed design columns and latent covariates read from one file.
pub struct Covariates {
    pub design: DesignMatrix,
    pub latent: Vec<AcsVariable>,
}

/// Reads covariates in order of first appearance. Variables without
/// standard errors become fixed columns, centred over their active cells;
/// a year is active when every region has a value and inactive when none
/// does. Variables with standard errors are latent percentages
/// (`allow_latent` only), standardised by the mean and sd of their
/// estimates.
pub fn read_covariates(
    file: &InputFile,
    graph: &AdjacencyGraph,
    first_year: i64,
    n_years: usize,
    allow_latent: bool,
) -> CliResult<Covariates> {
    let n = graph.n_regions();
    let mut names: Vec<String> = Vec::new();
    let mut groups: Vec<Vec<CovariateRow>> = Vec::new();
    for (line, r) in table(file, &COVARIATE_COLUMNS)? {
        let region = region(file, line, graph, &r[0])?;
        let year: i64 = parse(file, line, "year", &r[1])?;
        if r[2].is_empty() || r[2].contains([',', '[', ']', '"']) {
            return Err(file.err(
                line,
                format!(
                    "variable name {:?} is blank or has commas, brackets or quotes",
                    r[2]
                ),
            ));
        }
        let value: f64 = parse(file, line, "value", &r[3])?;
        if !value.is_finite() {
            return Err(file.err(line, "value must be finite"));
        }
        let se: Option<f64> = parse_opt(file, line, "se", &r[4])?;
        let window: u8 = if r[5].is_empty() {
            1
        } else {
            parse(file, line, "window", &r[5])?
        };
        if window != 1 && window != 5 {
            return Err(file.err(line, format!("window {window} must be 1 or 5")));
        }
        let row = CovariateRow {
            line,
            region,
            year: year - first_year + 1,
            value,
            se,
            window,
        };
        match names.iter().position(|x| *x == r[2]) {
            Some(j) => groups[j].push(row),
            None => {
                names.push(r[2].clone());
                groups.push(vec![row]);
            }
        }
    }
    let mut design = DesignMatrix::empty(n, n_years);
    let mut latent = Vec::new();
    for (name, rows) in names.into_iter().zip(groups) {
        let with_se = rows.iter().filter(|r| r.se.is_some()).count();
        if with_se == 0 {
            let (values, active, center) = fixed_column(file, &name, &rows, n, n_years)?;
            design
                .push_column(name, ColumnTransform { center, scale: 1.0 }, values, active)
                .map_err(|e| CliError::Validation(format!("{}: {e}", file.path.display())))?;
        } else if with_se < rows.len() {
            let r = rows.iter().find(|r| r.se.is_none()).unwrap();
            return Err(file.err(
                r.line,
                format!("variable {name:?} mixes rows with and without se"),
            ));
        } else if !allow_latent {
            return Err(file.err(
                rows[0].line,
                format!(
                    "variable {name:?} has standard errors; only risk covariates may be latent"
                ),
            ));
        } else {
            let var = latent_variable(file, &name, &rows, design.n_columns(), n_years)?;
            design
                .push_column(
                    name,
                    var.transform,
                    vec![0.0; n * n_years],
                    vec![true; n_years],
                )
                .map_err(|e| CliError::Validation(format!("{}: {e}", file.path.display())))?;
            latent.push(var);
        }
    }
    Ok(Covariates { design, latent })
}

fn fixed_column(
    file: &InputFile,
    name: &str,
    rows: &[CovariateRow],
    n: usize,
    n_years: usize,
) -> CliResult<(Vec<f64>, Vec<bool>, f64)> {
    let mut values: Vec<Option<f64>> = vec![None; n * n_years];
    for r in rows {
        if r.window != 1 {
            return Err(file.err(r.line, "fixed covariates take window 1"));
        }
        if r.year < 1 || r.year > n_years as i64 {
            return Err(file.err(r.line, "year outside the count years"));
        }
        let c = r.region * n_years + (r.year - 1) as usize;
        if values[c].replace(r.value).is_some() {
            return Err(file.err(r.line, format!("duplicate value for {name:?}")));
        }
    }
    let mut active = vec![false; n_years];
    for (t, act) in active.iter_mut().enumerate() {
        let present = (0..n)
            .filter(|&i| values[i * n_years + t].is_some())
            .count();
        if present == n {
            *act = true;
        } else if present > 0 {
            return Err(CliError::Validation(format!(
                "{}: variable {name:?} covers {present} of {n} regions in model year {}",
                file.path.display(),
                t + 1
            )));
        }
    }
    let used: Vec<f64> = values.iter().filter_map(|v| *v).collect();
    let center = used.iter().sum::<f64>() / used.len() as f64;
    let column = values
        .iter()
        .map(|v| v.map_or(0.0, |x| x - center))
        .collect();
    Ok((column, active, center))
}

fn latent_variable(
    file: &InputFile,
    name: &str,
    rows: &[CovariateRow],
    risk_column: usize,
    n_years: usize,
) -> CliResult<AcsVariable> {
    let mut acs_rows = Vec::with_capacity(rows.len());
    for r in rows {
        if !(r.value > 0.0 && r.value < 100.0) {
            return Err(file.err(r.line, format!("percentage {} not in (0, 100)", r.value)));
        }
        let se = r.se.unwrap();
        if !(se > 0.0 && se.is_finite()) {
            return Err(file.err(r.line, format!("se {se} must be positive")));
        }
        if r.year > n_years as i64 {
            return Err(file.err(r.line, "year after the last count year"));
        }
        acs_rows.push(AcsRow {
            region: r.region,
            year: r.year,
            window: r.window,
            estimate: r.value,
            se,
        });
    }
    let first_latent_year = acs_rows
        .iter()
        .map(|r| r.year - (r.window as i64 - 1))
        .min()
        .unwrap()
        .min(1);
    let m = acs_rows.len() as f64;
    let center = acs_rows.iter().map(|r| r.estimate).sum::<f64>() / m;
    let sd = (acs_rows
        .iter()
        .map(|r| (r.estimate - center).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();
    Ok(AcsVariable {
        name: name.to_string(),
        risk_column,
        transform: ColumnTransform {
            center,
            scale: if sd > 1e-12 { sd } else { 1.0 },
        },
        first_latent_year,
        rows: acs_rows,
    })
}

/// A validated panel with everything needed to fit and report it.
pub struct FitInputs {
    pub panel: SurveillancePanel,
    pub survey: SurveyEstimates,
    pub graph: AdjacencyGraph,
    pub first_year: i64,
    pub outcome_ids: Vec<String>,
    pub files: Vec<InputFile>,
}

pub fn load_inputs(cfg: &FitConfig) -> CliResult<FitInputs> {
    let adjacency = InputFile::read("adjacency", &cfg.adjacency)?;
    let counts_file = InputFile::read("counts", &cfg.counts)?;
    let population_file = InputFile::read("population", &cfg.population)?;
    let survey_file = InputFile::read("survey", &cfg.survey)?;

    let graph = read_adjacency(&adjacency)?;
    let counts = read_counts(&counts_file, &graph)?;
    let (first_year, n_years) = (counts.first_year, counts.n_years);
    let n = graph.n_regions();
    let populations = read_population(&population_file, &graph, first_year, n_years)?;
    for cells in &counts.cells {
        for (c, (obs, line)) in cells.iter().enumerate() {
            if obs.lower_bound() > populations[c] {
                return Err(counts_file.err(
                    *line,
                    format!(
                        "count {} exceeds population {}",
                        obs.lower_bound(),
                        populations[c]
                    ),
                ));
            }
        }
    }
    let survey = read_survey(&survey_file, first_year)?;

    let mut files = vec![adjacency, counts_file, population_file, survey_file];
    let (risk_design, acs) = match &cfg.risk_covariates {
        Some(path) => {
            let f = InputFile::read("risk_covariates", path)?;
            let cov = read_covariates(&f, &graph, first_year, n_years, true)?;
            files.push(f);
            (cov.design, cov.latent)
        }
        None => (DesignMatrix::empty(n, n_years), Vec::new()),
    };
    let mut designs: Vec<DesignMatrix> =
        vec![DesignMatrix::empty(n, n_years); counts.outcome_ids.len()];
    for (id, path) in &cfg.detection_covariates {
        let k = counts
            .outcome_ids
            .iter()
            .position(|o| o == id)
            .ok_or_else(|| {
                CliError::Validation(format!(
                    "detection covariates given for unknown outcome {id:?}"
                ))
            })?;
        let f = InputFile::read(format!("detection_covariates.{id}"), path)?;
        designs[k] = read_covariates(&f, &graph, first_year, n_years, false)?.design;
        files.push(f);
    }

    let outcomes = counts
        .outcome_ids
        .iter()
        .zip(counts.cells)
        .zip(designs)
        .map(|((id, cells), design)| Outcome {
            name: id.clone(),
            kind: outcome_kind(id),
            observations: cells.into_iter().map(|(o, _)| o).collect(),
            design,
        })
        .collect();
    let panel = SurveillancePanel {
        n_regions: n,
        n_years,
        populations,
        outcomes,
        risk_design,
        acs,
    };
    panel.validate()?;
    Ok(FitInputs {
        panel,
        survey,
        graph,
        first_year,
        outcome_ids: counts.outcome_ids,
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(text: &str) -> InputFile {
        InputFile {
            label: "t".into(),
            path: "t.csv".into(),
            digest: sha256_hex(text.as_bytes()),
            bytes: text.as_bytes().to_vec(),
        }
    }

    fn graph() -> AdjacencyGraph {
        read_adjacency(&file("a b\nb c\n")).unwrap()
    }

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn mixed_span_survey_rows() {
        let text =
            "start_year,end_year,estimate,se\n2003,2006,0.05,0.0025\n2007,2010,0.055,0.0026\n\
                    2011,2014,0.052,0.0024\n2015,2016,0.047,0.0041\n2016,2017,0.051,0.0037\n\
                    2017,2018,0.041,0.0033\n2018,2019,0.043,0.0043\n";
        let s = read_survey(&file(text), 2007).unwrap();
        assert_eq!(s.len(), 7);
        assert_eq!((s.rows()[0].a, s.rows()[0].b), (-3, 0));
        assert_eq!((s.rows()[6].a, s.rows()[6].b), (12, 13));
    }

    fn counts_text(rows: &[&str]) -> String {
        let mut s = COUNTS_COLUMNS.join(",");
        s.push('\n');
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn censored_cells_become_intervals() {
        let text = counts_text(&[
            "a,2010,treatment,,2,",
            "b,2010,treatment,,1,4",
            "c,2010,treatment,7,0,",
            "a,2010,death,1,0,",
            "b,2010,death,0,,",
            "c,2010,death,2,0,",
        ]);
        let c = read_counts(&file(&text), &graph()).unwrap();
        assert_eq!(c.outcome_ids, vec!["treatment", "death"]);
        assert_eq!(c.cells[0][0].0.admissible(), (2, 18));
        assert_eq!(c.cells[0][1].0, Observation::AdultOnly { adult: 4 });
        assert_eq!(c.cells[0][2].0, Observation::Exact(7));
        assert_eq!(c.cells[1][1].0, Observation::Exact(0));
    }

    #[test]
    fn row_level_rejections() {
        let cases = [
            ("z,2010,death,1,0,", "unknown region"),
            ("a,2010,death,1,3,", "censor_code 3"),
            ("a,2010,death,,2,", "not a treatment"),
            ("a,2010,treatment,5,2,", "count blank"),
            ("a,2010,treatment,,1,", "requires adult_count"),
            ("a,20x0,death,1,0,", "not a valid number"),
        ];
        for (row, needle) in cases {
            let e = read_counts(&file(&counts_text(&[row])), &graph()).unwrap_err();
            let msg = e.to_string();
            assert!(
                msg.contains("t.csv:2") && msg.contains(needle),
                "{row}: {msg}"
            );
            assert_eq!(e.exit_code(), 1);
        }
    }

    #[test]
    fn missing_and_duplicate_cells() {
        let text = counts_text(&["a,2010,death,1,0,", "b,2010,death,1,0,"]);
        assert!(read_counts(&file(&text), &graph())
            .unwrap_err()
            .to_string()
            .contains("\"c\""));
        let text = counts_text(&[
            "a,2010,death,1,0,",
            "b,2010,death,1,0,",
            "c,2010,death,1,0,",
            "a,2010,death,2,0,",
        ]);
        assert!(read_counts(&file(&text), &graph())
            .unwrap_err()
            .to_string()
            .contains("duplicate"));
    }

    #[test]
    fn fixed_covariates_are_centred_with_activity() {
        let text = "region_id,year,variable,value,se,window\n\
                    a,1,x,1,,1\nb,1,x,2,,1\nc,1,x,3,,1\n";
        let cov = read_covariates(&file(text), &graph(), 1, 2, false).unwrap();
        let d = &cov.design;
        assert_eq!(d.names(), &["x".to_string()]);
        assert!(d.is_active(0, 0) && !d.is_active(1, 0));
        assert_eq!((d.value(0, 0, 0), d.value(2, 0, 0)), (-1.0, 1.0));
        let partial = "region_id,year,variable,value,se,window\na,1,x,1,,1\n";
        assert!(read_covariates(&file(partial), &graph(), 1, 2, false).is_err());
    }

    #[test]
    fn latent_covariates_need_risk_role() {
        let text = "region_id,year,variable,value,se,window\n\
                    a,2,pov,12,1.5,5\nb,2,pov,20,2,1\nc,1,pov,16,1,1\n";
        let cov = read_covariates(&file(text), &graph(), 1, 2, true).unwrap();
        let v = &cov.latent[0];
        assert_eq!(v.first_latent_year, -2);
        assert!((v.transform.center - 16.0).abs() < 1e-12);
        assert!(read_covariates(&file(text), &graph(), 1, 2, false).is_err());
    }
}
