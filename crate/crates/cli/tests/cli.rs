//! End-to-end tests of the `ring` binary: generate -> train -> eval -> bench
//! on tiny desk-scale settings, plus exit-code contracts.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn ring() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ring"))
}

fn run(args: &[&str]) -> Output {
    ring().args(args).output().expect("spawn ring")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        stdout_of(out),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn generate_small(path: &Path, seed: &str) -> Output {
    run(&[
        "generate",
        "--seed",
        seed,
        "--count",
        "6",
        "--timesteps",
        "60",
        "--rates",
        "100",
        "--flags",
        "none",
        "--out",
        path.to_str().unwrap(),
    ])
}

#[test]
fn generate_is_byte_deterministic() {
    let dir = tempdir().unwrap();
    let a = dir.path().join("a.ringds");
    let b = dir.path().join("b.ringds");
    assert_code(&generate_small(&a, "7"), 0);
    assert_code(&generate_small(&b, "7"), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let c = dir.path().join("c.ringds");
    assert_code(&generate_small(&c, "8"), 0);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn generate_prints_rate_histogram_with_nine_rates() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("d.ringds");
    let out = run(&[
        "generate",
        "--seed",
        "1",
        "--count",
        "24",
        "--timesteps",
        "40",
        "--rates",
        "40..200:20",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let text = stdout_of(&out);
    // Nine rates are in play; with 24 draws most of them appear.
    assert!(text.contains("rate histogram"));
    assert!(text.contains("Hz"));
}

#[test]
fn train_zero_steps_writes_initialized_weights_deterministically() {
    let dir = tempdir().unwrap();
    let data = dir.path().join("data.ringds");
    assert_code(&generate_small(&data, "3"), 0);
    let w1 = dir.path().join("w1.ringwt");
    let w2 = dir.path().join("w2.ringwt");
    for w in [&w1, &w2] {
        let out = run(&[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--H",
            "8",
            "--M",
            "4",
            "--steps",
            "0",
            "--seed",
            "5",
            "--val-split",
            "2",
            "--out-weights",
            w.to_str().unwrap(),
        ]);
        assert_code(&out, 0);
    }
    assert_eq!(std::fs::read(&w1).unwrap(), std::fs::read(&w2).unwrap());
}

#[test]
fn full_pipeline_generate_train_eval_bench() {
    let dir = tempdir().unwrap();
    let data = dir.path().join("data.ringds");
    assert_code(&generate_small(&data, "11"), 0);

    let weights = dir.path().join("w.ringwt");
    let log = dir.path().join("train.log");
    let out = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--H",
        "8",
        "--M",
        "4",
        "--steps",
        "2",
        "--batch",
        "2",
        "--val-split",
        "2",
        "--val-every",
        "1",
        "--warmup",
        "10",
        "--out-weights",
        weights.to_str().unwrap(),
        "--log",
        log.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let log_text = std::fs::read_to_string(&log).unwrap();
    assert_eq!(log_text.lines().count(), 2);
    assert!(log_text.contains("step=0 loss="));
    assert!(log_text.contains("val_mae_deg="));

    let plot = dir.path().join("sweep.csv");
    let out = run(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--weights",
        weights.to_str().unwrap(),
        "--exclude",
        "0.1",
        "--sweep-rates",
        "40,100",
        "--plot-out",
        plot.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let text = stdout_of(&out);
    assert!(text.contains("mae_deg"), "missing table header:\n{text}");
    assert!(text.contains("per-body mean MAE"));
    let csv = std::fs::read_to_string(&plot).unwrap();
    assert!(csv.starts_with("rate_hz,mae_deg,std_deg"));
    assert_eq!(csv.lines().count(), 3);

    let out = run(&[
        "bench",
        "--weights",
        weights.to_str().unwrap(),
        "--N",
        "3",
        "--iterations",
        "50",
        "--warmup",
        "5",
    ]);
    assert_code(&out, 0);
    let text = stdout_of(&out);
    assert!(text.contains("median"));
    assert!(text.contains("real-time") || text.contains("too slow"));
}

#[test]
fn bench_single_iteration_produces_a_report() {
    let out = run(&[
        "bench", "--H", "8", "--M", "4", "--N", "3", "--iterations", "1", "--warmup", "0",
    ]);
    assert_code(&out, 0);
    assert!(stdout_of(&out).contains("max sustainable rate"));
}

#[test]
fn eval_exit_codes_distinguish_failure_classes() {
    let dir = tempdir().unwrap();
    let data = dir.path().join("data.ringds");
    assert_code(&generate_small(&data, "2"), 0);
    let weights = dir.path().join("w.ringwt");
    let out = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--H",
        "8",
        "--M",
        "4",
        "--steps",
        "0",
        "--val-split",
        "2",
        "--out-weights",
        weights.to_str().unwrap(),
    ]);
    assert_code(&out, 0);

    // Usage error: nonsense rate spec.
    let out = run(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--weights",
        weights.to_str().unwrap(),
        "--exclude",
        "0.1",
        "--sweep-rates",
        "bogus",
    ]);
    assert_code(&out, 2);

    // I/O error: missing dataset.
    let out = run(&["eval", "--data", "/nonexistent.ringds", "--weights", weights.to_str().unwrap()]);
    assert_code(&out, 3);

    // Incompatibility: wrong requested widths.
    let out = run(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--weights",
        weights.to_str().unwrap(),
        "--exclude",
        "0.1",
        "--H",
        "16",
        "--M",
        "4",
    ]);
    assert_code(&out, 5);

    // Corrupted dataset: I/O class.
    let mut bytes = std::fs::read(&data).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x08;
    let corrupt = dir.path().join("corrupt.ringds");
    std::fs::write(&corrupt, &bytes).unwrap();
    let out = run(&[
        "eval",
        "--data",
        corrupt.to_str().unwrap(),
        "--weights",
        weights.to_str().unwrap(),
        "--exclude",
        "0.1",
    ]);
    assert_code(&out, 3);
}

#[test]
fn usage_errors_exit_with_two() {
    let out = run(&["generate", "--count", "0", "--out", "/tmp/never.ringds"]);
    assert_code(&out, 2);
    let out = run(&["no-such-subcommand"]);
    assert_code(&out, 2);
}

#[test]
fn ranges_file_is_honored() {
    let dir = tempdir().unwrap();
    let ranges = dir.path().join("ranges.toml");
    std::fs::write(&ranges, "segment_length_min_m = 0.3\nsegment_length_max_m = 0.31\n").unwrap();
    let a = dir.path().join("a.ringds");
    let out = run(&[
        "generate", "--seed", "1", "--count", "2", "--timesteps", "30", "--rates", "100",
        "--ranges", ranges.to_str().unwrap(), "--out", a.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    // Same seed without the ranges file differs.
    let b = dir.path().join("b.ringds");
    let out = run(&[
        "generate", "--seed", "1", "--count", "2", "--timesteps", "30", "--rates", "100",
        "--out", b.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    // Unknown keys are rejected as an I/O-class error.
    std::fs::write(&ranges, "bogus_key = 1\n").unwrap();
    let out = run(&[
        "generate", "--seed", "1", "--count", "2", "--timesteps", "30", "--rates", "100",
        "--ranges", ranges.to_str().unwrap(), "--out", a.to_str().unwrap(),
    ]);
    assert_code(&out, 3);
}
