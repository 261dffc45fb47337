//! Generate, sweep, report and plot on a tiny corpus.

use std::fs;
use std::process::Command;

use focal_lab::datagen::GenSpec;
use focal_lab::evaluator::{self, Histogram, Partition};
use focal_lab::expcli::{self, ExperimentConfig};
use focal_lab::trainer::ModelConfig;

fn tiny(root: &std::path::Path, gammas: Vec<f64>, seeds: Vec<u64>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.experiment.output_dir = root.to_path_buf();
    cfg.experiment.gamma_grid = gammas;
    cfg.experiment.injection_grid = vec![0];
    cfg.experiment.seeds = seeds;
    cfg.experiment.workers = 2;
    cfg.gen = GenSpec {
        n_train: 1500,
        n_val: 200,
        n_test: 300,
        n_challenge_per_cell: 10,
        n_pool_per_cell: 10,
        ..GenSpec::default()
    };
    cfg.model = expcli::ModelSection { hidden_dim: 8 };
    cfg.train.max_epochs = 2;
    cfg
}

fn lines_with(text: &str, prefix: &str) -> usize {
    text.lines().filter(|l| l.starts_with(prefix)).count()
}

#[test]
fn sweep_before_generate_names_the_missing_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), vec![0.0], vec![0]);
    let err = expcli::cmd_sweep(&cfg).unwrap_err().to_string();
    assert!(err.contains("manifest.toml"), "{err}");
}

#[test]
fn cli_exits_2_with_error_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_focal-lab"))
        .args(["report", "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error["));
}

#[test]
fn tables_have_one_row_per_run_and_per_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let gammas = vec![0.0, 0.5, 1.0, 2.0, 5.0, 10.0];
    let cfg = tiny(dir.path(), gammas, (0..5).collect());
    expcli::cmd_generate(&cfg).unwrap();
    let summary = expcli::cmd_sweep(&cfg).unwrap();
    assert_eq!((summary.completed, summary.failed), (30, 0));

    let t1 = fs::read_to_string(cfg.root().join("table1.csv")).unwrap();
    assert_eq!(t1.lines().next().unwrap(), expcli::TABLE_COLUMNS);
    assert_eq!(lines_with(&t1, "run,"), 30);
    assert_eq!(lines_with(&t1, "aggregate,"), 18);
    let t2 = fs::read_to_string(cfg.root().join("table2.csv")).unwrap();
    assert_eq!(t1, t2, "with only n_inject = 0, both tables coincide");
    let t4 = fs::read_to_string(cfg.root().join("table4.csv")).unwrap();
    assert_eq!(t4.lines().count(), 1 + 6 * 6);

    // Plots: every histogram SVG totals the same count as its CSV.
    let written = expcli::cmd_plot(&cfg).unwrap();
    assert_eq!(written.len(), 1 + 30 * 3);
    for svg_path in written.iter().skip(1) {
        let svg = fs::read_to_string(svg_path).unwrap();
        let h = Histogram::from_csv(&fs::read_to_string(svg_path.with_extension("csv")).unwrap()).unwrap();
        assert_eq!(h.total(), 300);
        assert!(svg.contains(&format!(r#"data-total="{}""#, h.total())));
        for p in Partition::ALL {
            assert!(svg.contains(&format!("({})", h.partition_total(p))));
        }
    }
}

#[test]
fn single_completed_run_leaves_std_empty() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), vec![2.0], vec![7]);
    expcli::cmd_generate(&cfg).unwrap();
    expcli::cmd_sweep(&cfg).unwrap();
    let t1 = fs::read_to_string(cfg.root().join("table1.csv")).unwrap();
    for row in t1.lines().filter(|l| l.starts_with("aggregate,")) {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[11], "", "{row}");
        assert_eq!(f[12], "1", "{row}");
    }
}

#[test]
fn rerun_and_regeneration_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), vec![1.0], vec![0, 1]);
    expcli::cmd_generate(&cfg).unwrap();
    let corpus_a = fs::read(cfg.corpus_dir().join("train.csv")).unwrap();
    let key = expcli::RunKey {
        gamma: 1.0,
        n_inject: 0,
        seed: 1,
    };
    expcli::cmd_run(&cfg, key).unwrap();
    let read = |f: &str| fs::read(cfg.run_dir(&key).join(f)).unwrap();
    let first: Vec<Vec<u8>> = ["history.csv", "eval.csv", "checkpoint.bin"]
        .iter()
        .map(|f| read(f))
        .collect();

    expcli::cmd_generate(&cfg).unwrap();
    assert_eq!(corpus_a, fs::read(cfg.corpus_dir().join("train.csv")).unwrap());
    expcli::cmd_run(&cfg, key).unwrap();
    let second: Vec<Vec<u8>> = ["history.csv", "eval.csv", "checkpoint.bin"]
        .iter()
        .map(|f| read(f))
        .collect();
    assert_eq!(first, second);
}

#[test]
fn genuine_features_alone_solve_the_challenge_split() {
    // A bias rate this small plants no aligned shortcuts at these sizes.
    let spec = GenSpec {
        n_train: 6000,
        n_val: 500,
        n_test: 1000,
        n_challenge_per_cell: 50,
        n_pool_per_cell: 10,
        bias_rate: 1e-9,
        counterexample_rate: 0.0,
        ..GenSpec::default()
    };
    let bundle = focal_lab::datagen::generate_corpus(&spec).unwrap();
    let (params, _) = focal_lab::trainer::train_run(
        &bundle,
        &ModelConfig { hidden_dim: 32 },
        &focal_lab::trainer::TrainSpec::default(),
    )
    .unwrap();
    let chal = evaluator::challenge_breakdown(&params, &bundle.challenge)
        .unwrap()
        .overall;
    assert!(chal > 0.8, "challenge accuracy {chal}");
}
