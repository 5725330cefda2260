use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use spatial_abundance::model::DesignMatrix;
use spatial_abundance::simulation::{derive_seed, simulate_dataset, ScenarioConfig};
use spatial_abundance_cli::args::{Common, SummarizeArgs};
use spatial_abundance_cli::commands::{
    cmd_evaluate, cmd_fit, cmd_simulate, cmd_summarize, FIT_CONFIG_FILE,
};
use spatial_abundance_cli::config::FitConfig;
use spatial_abundance_cli::ingest::load_inputs;
use spatial_abundance_cli::manifest::manifest_value;
use spatial_abundance_cli::output::{read_posterior, read_report, POSTERIOR_FILE, REPORT_FILE};

const TINY: &str = "rows = 3\ncols = 3\nyears = 4\nreplicates = 2\nseed = 7\n\
                    iterations = 400\nburnin = 200\nthin = 2\nchains = 2\n";

fn write_scenario(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("scenario.conf");
    std::fs::write(&path, text).unwrap();
    path
}

fn flags(config: &Path, out: &Path) -> Common {
    Common {
        config: Some(config.to_path_buf()),
        out: Some(out.to_path_buf()),
        quiet: true,
        ..Common::default()
    }
}

fn simulated(dir: &Path, text: &str) -> PathBuf {
    let out = dir.join("sim");
    cmd_simulate(&flags(&write_scenario(dir, text), &out)).unwrap();
    out
}

fn csv_rows(path: &Path) -> Vec<HashMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().clone();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            header
                .iter()
                .zip(rec.iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect()
        })
        .collect()
}

fn bin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_spatial-abundance"))
        .args(args)
        .output()
        .unwrap()
}

/// Covariate value on its original scale.
fn raw(d: &DesignMatrix, i: usize, t: usize, c: usize) -> f64 {
    let tr = d.transforms()[c];
    d.value(i, t, c) * tr.scale + tr.center
}

#[test]
fn simulated_files_ingest_to_the_simulated_panel() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulated(dir.path(), TINY);
    let scenario = ScenarioConfig::parse(TINY).unwrap();
    let data = simulate_dataset(&scenario, derive_seed(scenario.seed, 0)).unwrap();
    let inputs = load_inputs(&FitConfig::load(&sim.join(FIT_CONFIG_FILE)).unwrap()).unwrap();

    assert_eq!(inputs.first_year, 1);
    assert_eq!(inputs.survey.rows(), data.survey.rows());
    assert_eq!(inputs.outcome_ids, vec!["treatment", "death"]);
    let (a, b) = (&inputs.panel, &data.panel);
    assert_eq!((a.n_regions, a.n_years), (b.n_regions, b.n_years));
    for (i, label) in data.graph.labels().iter().enumerate() {
        let j = inputs.graph.index_of(label).unwrap();
        let mut nb_a: Vec<&String> = inputs
            .graph
            .neighbors(j)
            .iter()
            .map(|&x| &inputs.graph.labels()[x])
            .collect();
        let mut nb_b: Vec<&String> = data
            .graph
            .neighbors(i)
            .iter()
            .map(|&x| &data.graph.labels()[x])
            .collect();
        nb_a.sort();
        nb_b.sort();
        assert_eq!(nb_a, nb_b);
        for t in 0..b.n_years {
            assert_eq!(a.population(j, t), b.population(i, t));
            for k in 0..b.outcomes.len() {
                assert_eq!(
                    a.outcomes[k].observations[a.cell(j, t)],
                    b.outcomes[k].observations[b.cell(i, t)]
                );
                for c in 0..b.outcomes[k].design.n_columns() {
                    let (x, y) = (
                        raw(&a.outcomes[k].design, j, t, c),
                        raw(&b.outcomes[k].design, i, t, c),
                    );
                    assert!((x - y).abs() < 1e-12, "design {k} {c}: {x} vs {y}");
                }
            }
            for c in 0..b.risk_design.n_columns() {
                let (x, y) = (raw(&a.risk_design, j, t, c), raw(&b.risk_design, i, t, c));
                assert!((x - y).abs() < 1e-12, "risk design {c}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn fit_then_summarize_reproduces_posterior() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulated(dir.path(), TINY);
    let fit = dir.path().join("fit");
    cmd_fit(&flags(&sim.join(FIT_CONFIG_FILE), &fit)).unwrap();
    for f in [
        "posterior.csv",
        "summaries.csv",
        "diagnostics.csv",
        "plot.csv",
        "manifest.txt",
        "draws/chain_1.csv",
        "draws/chain_2.csv",
    ] {
        assert!(fit.join(f).is_file(), "missing {f}");
    }
    assert_eq!(manifest_value(&fit, "draws_per_chain").unwrap(), "100");
    assert!(manifest_value(&fit, "sha256.counts").is_some_and(|d| d.len() == 64));

    let args = |thin: Option<usize>, out: &str| SummarizeArgs {
        draws: fit.clone(),
        common: Common {
            thin,
            out: Some(dir.path().join(out)),
            quiet: true,
            ..Common::default()
        },
    };
    cmd_summarize(&args(None, "s1")).unwrap();
    let original = read_posterior(&fit.join(POSTERIOR_FILE)).unwrap();
    let again = read_posterior(&dir.path().join("s1").join(POSTERIOR_FILE)).unwrap();
    assert_eq!(original.len(), again.len());
    for (a, b) in original.iter().zip(&again) {
        assert_eq!(a.quantity, b.quantity);
        for (x, y) in [
            (a.mean, b.mean),
            (a.sd, b.sd),
            (a.lower, b.lower),
            (a.upper, b.upper),
            (a.ess, b.ess),
            (a.rhat, b.rhat),
        ] {
            assert!((x - y).abs() <= 1e-12 || (x.is_nan() && y.is_nan()));
        }
    }

    cmd_summarize(&args(Some(2), "s2")).unwrap();
    let s2 = dir.path().join("s2");
    assert_eq!(manifest_value(&s2, "draws_per_chain").unwrap(), "50");
    assert_eq!(manifest_value(&s2, "thin").unwrap(), "2");
}

#[test]
fn fit_intervals_cover_simulated_counts() {
    let dir = tempfile::tempdir().unwrap();
    let text = "rows = 3\ncols = 3\nyears = 4\nseed = 11\niterations = 3000\nburnin = 1500\n";
    let sim = simulated(dir.path(), text);
    let fit = dir.path().join("fit");
    cmd_fit(&flags(&sim.join(FIT_CONFIG_FILE), &fit)).unwrap();

    let truth: HashMap<(String, String), f64> = csv_rows(&sim.join("truth.csv"))
        .into_iter()
        .map(|r| {
            (
                (r["region_id"].clone(), r["year"].clone()),
                r["n"].parse().unwrap(),
            )
        })
        .collect();
    let rows = csv_rows(&fit.join("summaries.csv"));
    assert_eq!(rows.len(), truth.len());
    let covered = rows
        .iter()
        .filter(|r| {
            let n = truth[&(r["region_id"].clone(), r["year"].clone())];
            let lo: f64 = r["n_lower"].parse().unwrap();
            let hi: f64 = r["n_upper"].parse().unwrap();
            lo <= n && n <= hi
        })
        .count();
    let cp = covered as f64 / rows.len() as f64;
    assert!(cp >= 0.8, "coverage {cp}");
}

#[test]
fn evaluate_writes_one_row_per_replicate_model_and_metric() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_scenario(dir.path(), &format!("{TINY}survey_years = sparse\n"));
    let out = dir.path().join("eval");
    cmd_evaluate(&flags(&config, &out)).unwrap();
    let rows = read_report(&out.join(REPORT_FILE)).unwrap();
    for metric in ["cp", "rmse_n", "rmse_lambda", "rel_mae_n"] {
        let n = rows.iter().filter(|r| r.3 == metric).count();
        assert_eq!(n, 2 * 3, "{metric}");
    }
    assert!(rows.iter().all(|r| r.0 == "sparse"));
    assert!(rows.iter().all(|r| r.1 == 1 || r.1 == 2));
    assert!(rows
        .iter()
        .filter(|r| r.2 == "baseline" && r.3 == "cp")
        .all(|r| r.4.is_none()));
    let agg = csv_rows(&out.join("aggregate.csv"));
    assert_eq!(agg.len(), 3);
    let intercepts = csv_rows(&out.join("intercepts.csv"));
    assert!(intercepts
        .iter()
        .any(|r| r["model"] == "joint" && r["parameter"] == "beta0_mu" && r["total"] == "2"));
}

#[test]
fn exit_codes_separate_validation_from_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();

    assert_eq!(bin(&["--help"]).status.code(), Some(0));
    assert_eq!(bin(&["fit", "--bogus"]).status.code(), Some(1));

    let missing = bin(&["fit", "--config", &format!("{d}/nope.conf")]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.conf"));

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let e = bin(&["summarize", empty.to_str().unwrap()]);
    assert_eq!(e.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&e.stderr).contains("chain_"));

    let bad = write_scenario(dir.path(), "rows = 0\n");
    let out = format!("{d}/o");
    assert_eq!(
        bin(&["simulate", "--config", bad.to_str().unwrap(), "--out", &out])
            .status
            .code(),
        Some(1)
    );

    let good = write_scenario(dir.path(), TINY);
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let under_file = format!("{}/sub", blocker.display());
    let r = bin(&[
        "simulate",
        "--config",
        good.to_str().unwrap(),
        "--out",
        &under_file,
        "--quiet",
    ]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn corrupt_counts_row_is_reported_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulated(dir.path(), TINY);
    let counts = sim.join("counts.csv");
    let mut text = std::fs::read_to_string(&counts).unwrap();
    text = text.replacen("treatment,", "treatment,-", 1);
    std::fs::write(&counts, text).unwrap();
    let r = bin(&[
        "fit",
        "--config",
        sim.join(FIT_CONFIG_FILE).to_str().unwrap(),
        "--out",
        dir.path().join("fit").to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(1));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("counts.csv:2"), "{err}");
}
