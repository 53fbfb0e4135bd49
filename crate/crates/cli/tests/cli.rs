mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mcbench_cli::report;

fn mcbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcbench"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn mcbench")
}

fn ok_stdout(args: &[&str]) -> String {
    let out = mcbench(args);
    assert!(
        out.status.success(),
        "mcbench {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SWEEP: &str = r#"
arch = "mnist-cnn"
data_dir = "mnist"
epochs = 2
finetune_epochs = 3
batch_size = 50
seed = 5
sparsities = [0.0, 0.9]
precisions = [32, 8]
"#;

fn csv_cell<'a>(csv: &'a str, sparsity: &str, bits: &str, column: &str) -> &'a str {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == column).unwrap();
    lines
        .map(|l| l.split(',').collect::<Vec<_>>())
        .find(|row| row[0] == sparsity && row[1] == bits)
        .map(|row| row[col])
        .unwrap_or_else(|| panic!("no row {sparsity}/{bits}"))
}

#[test]
fn staged_commands_reproduce_a_sweep_cell() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("mnist");
    common::write_synthetic_mnist(&data, 1500, 500);
    fs::write(root.join("sweep.toml"), SWEEP).unwrap();

    let out_dir = root.join("sweep");
    ok_stdout(&[
        "sweep",
        "--config",
        s(&root.join("sweep.toml")),
        "--out-dir",
        s(&out_dir),
    ]);
    let csv = fs::read_to_string(out_dir.join("results.csv")).unwrap();

    let base = root.join("base.mcmp.gz");
    let pruned = root.join("pruned.mcmp.gz");
    let quant = root.join("q8.mcmp.gz");
    ok_stdout(&[
        "train",
        "--dataset",
        "mnist",
        "--arch",
        "mnist-cnn",
        "--data-dir",
        s(&data),
        "--epochs",
        "2",
        "--batch-size",
        "50",
        "--val-split",
        "0.3",
        "--seed",
        "5",
        "--out",
        s(&base),
    ]);
    ok_stdout(&[
        "prune",
        "--model",
        s(&base),
        "--target-sparsity",
        "0.9",
        "--epochs",
        "3",
        "--data-dir",
        s(&data),
        "--batch-size",
        "50",
        "--seed",
        "5",
        "--out",
        s(&pruned),
    ]);
    ok_stdout(&[
        "quantize",
        "--model",
        s(&pruned),
        "--bits",
        "8",
        "--mode",
        "asymmetric",
        "--out",
        s(&quant),
    ]);
    let acc = ok_stdout(&[
        "evaluate",
        "--model",
        s(&quant),
        "--dataset",
        "mnist",
        "--split",
        "test",
        "--data-dir",
        s(&data),
    ]);
    let size = ok_stdout(&["size", "--model", s(&quant)]);

    assert_eq!(acc.trim(), csv_cell(&csv, "0.9", "8", "accuracy_pct"));
    assert_eq!(size.trim(), csv_cell(&csv, "0.9", "8", "size_bytes"));
    assert_eq!(
        fs::read(&quant).unwrap(),
        fs::read(out_dir.join("mnist-cnn_mnist_s0.9_p8.mcmp.gz")).unwrap()
    );
    assert_eq!(
        fs::read(&base).unwrap(),
        fs::read(out_dir.join("mnist-cnn_mnist_s0_p32.mcmp.gz")).unwrap()
    );

    // The markdown report carries the same cells as the CSV.
    let md = ok_stdout(&[
        "report",
        "--in",
        s(&out_dir.join("results.csv")),
        "--format",
        "markdown",
    ]);
    let (sizes, quality) = report::parse_markdown(&md).unwrap();
    assert_eq!(sizes.len(), 4);
    assert_eq!(quality.len(), 4);
    let records = report::read_csv(&csv).unwrap();
    for (row, rec) in sizes.iter().zip(&records) {
        let cells = report::record_cells(rec);
        assert_eq!(row[0], cells[0]);
        assert_eq!(row[1], cells[1]);
    }
    let rendered_csv = ok_stdout(&[
        "report",
        "--in",
        s(&out_dir.join("results.csv")),
        "--format",
        "csv",
    ]);
    assert_eq!(rendered_csv.lines().count(), 5);
}

#[test]
fn untrained_model_scores_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("mnist");
    common::write_synthetic_mnist(&data, 10, 2000);
    let model = dir.path().join("init.mcmp.gz");
    ok_stdout(&[
        "init",
        "--arch",
        "mnist-cnn",
        "--seed",
        "3",
        "--out",
        s(&model),
    ]);
    let acc: f64 = ok_stdout(&[
        "evaluate",
        "--model",
        s(&model),
        "--dataset",
        "mnist",
        "--data-dir",
        s(&data),
    ])
    .trim()
    .parse()
    .unwrap();
    assert!((acc - 10.0).abs() <= 3.0, "accuracy {acc}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let missing = root.join("missing.mcmp.gz");
    let code = |args: &[&str]| mcbench(args).status.code();

    assert_eq!(code(&["size", "--model", s(&missing)]), Some(2));
    assert_eq!(code(&["frobnicate"]), Some(2));
    assert_eq!(
        code(&[
            "quantize",
            "--model",
            s(&missing),
            "--bits",
            "4",
            "--out",
            "x"
        ]),
        Some(2)
    );

    let model = root.join("init.mcmp.gz");
    assert_eq!(
        code(&["init", "--arch", "mnist-cnn", "--out", s(&model)]),
        Some(0)
    );
    assert_eq!(code(&["size", "--model", s(&model)]), Some(0));
    assert_eq!(
        code(&[
            "evaluate",
            "--model",
            s(&model),
            "--dataset",
            "mnist",
            "--data-dir",
            s(&root.join("nope"))
        ]),
        Some(2)
    );

    let config = root.join("bad.toml");
    fs::write(&config, "epochs = 2\nlearnign_rate = 0.1\n").unwrap();
    assert_eq!(
        code(&["sweep", "--config", s(&config), "--out-dir", s(root)]),
        Some(2)
    );

    let corrupt = root.join("corrupt.mcmp.gz");
    fs::write(&corrupt, b"not an archive").unwrap();
    assert_eq!(code(&["size", "--model", s(&corrupt)]), Some(1));

    let csv = root.join("results.csv");
    fs::write(&csv, "sparsity,precision_bits\n0.5,eight\n").unwrap();
    assert_eq!(code(&["report", "--in", s(&csv)]), Some(1));
}
