//! End-to-end checks of the command-line surface: flows, flag handling and
//! exit codes (0 ok, 2 usage, 3 data, 4 model format).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use moseq::corpus::render_conll;
use moseq::synth::{generate, SynthConfig};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moseq"))
        .args(args)
        .env("MOSEQ_LOG", "warn")
        .output()
        .expect("running moseq binary")
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("no exit code")
}

struct Fixture {
    _dir: tempfile::TempDir,
    train: PathBuf,
    test: PathBuf,
    bundle: PathBuf,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { num_types: 3, ..SynthConfig::default() };
        let write = |name: &str, n: usize, seed: u64| -> PathBuf {
            let path = dir.path().join(name);
            std::fs::write(&path, render_conll(&generate(&cfg, n, seed).unwrap())).unwrap();
            path
        };
        let train = write("train.conll", 120, 1);
        let dev = write("dev.conll", 30, 2);
        let test = write("test.conll", 40, 3);
        let bundle = dir.path().join("model.moseq");
        let output = run(&[
            "train",
            "--train",
            train.to_str().unwrap(),
            "--dev",
            dev.to_str().unwrap(),
            "--orders",
            "1,2",
            "--epochs",
            "3",
            "--d-emb",
            "10",
            "--d-hidden",
            "12",
            "--dropout",
            "0.1",
            "--seed",
            "5",
            "--out",
            bundle.to_str().unwrap(),
        ]);
        assert!(
            output.status.success(),
            "fixture training failed: {}",
            String::from_utf8_lossy(&output.stderr)
        );
        Fixture { _dir: dir, train, test, bundle }
    })
}

fn decode_to(input: &Path, out_name: &str, extra: &[&str]) -> PathBuf {
    let fx = fixture();
    let out = fx.bundle.parent().unwrap().join(out_name);
    let mut args = vec![
        "decode",
        "--bundle",
        fx.bundle.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let output = run(&args);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    out
}

#[test]
fn train_decode_eval_round_trip() {
    let fx = fixture();
    let pred = decode_to(&fx.test, "pred.conll", &[]);
    // decode appends exactly one column to every non-blank line
    let input_lines = std::fs::read_to_string(&fx.test).unwrap();
    let output_lines = std::fs::read_to_string(&pred).unwrap();
    for (i, o) in input_lines.lines().zip(output_lines.lines()) {
        if i.trim().is_empty() {
            assert!(o.trim().is_empty());
        } else {
            assert_eq!(o.split_whitespace().count(), i.split_whitespace().count() + 1);
            assert!(o.starts_with(i));
        }
    }
    let output = run(&[
        "eval",
        "--gold",
        fx.test.to_str().unwrap(),
        "--pred",
        pred.to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 0);
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("precision:"), "{stdout}");
    assert!(stdout.contains("f1:"), "{stdout}");
}

#[test]
fn eval_of_gold_against_itself_is_100() {
    let fx = fixture();
    // gold file as a prediction: its tag column is also its last column
    let output = run(&[
        "eval",
        "--gold",
        fx.test.to_str().unwrap(),
        "--pred",
        fx.test.to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 0);
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("f1: 100.00"), "{stdout}");
}

#[test]
fn prune_off_and_full_width_agree() {
    let fx = fixture();
    let off = decode_to(&fx.test, "pred_off.conll", &["--prune", "off"]);
    // 7 unigram tags for 3 types; width 7 covers the whole tag set
    let full = decode_to(&fx.test, "pred_full.conll", &["--prune-width", "7"]);
    assert_eq!(std::fs::read(&off).unwrap(), std::fs::read(&full).unwrap());
}

#[test]
fn decode_empty_input_gives_empty_output() {
    let fx = fixture();
    let empty = fx.bundle.parent().unwrap().join("empty.conll");
    std::fs::write(&empty, "").unwrap();
    let out = decode_to(&empty, "pred_empty.conll", &[]);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "");
}

#[test]
fn chart_dump_writes_a_trace() {
    let fx = fixture();
    let small = fx.bundle.parent().unwrap().join("one.conll");
    std::fs::write(&small, "a O\nb O\n").unwrap();
    let chart = fx.bundle.parent().unwrap().join("chart.txt");
    decode_to(&small, "pred_chart.conll", &["--dump-chart", chart.to_str().unwrap()]);
    let trace = std::fs::read_to_string(&chart).unwrap();
    assert!(trace.contains("# sentence 0"), "{trace}");
    assert!(trace.contains("t=0 state="), "{trace}");
}

#[test]
fn missing_input_file_is_a_data_error() {
    let fx = fixture();
    let output = run(&[
        "decode",
        "--bundle",
        fx.bundle.to_str().unwrap(),
        "--input",
        "/nonexistent/input.conll",
    ]);
    assert_eq!(code(&output), 3, "{}", String::from_utf8_lossy(&output.stderr));
}

#[test]
fn corrupt_bundle_is_a_model_error() {
    let fx = fixture();
    let corrupt = fx.bundle.parent().unwrap().join("corrupt.moseq");
    let mut bytes = std::fs::read(&fx.bundle).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    std::fs::write(&corrupt, bytes).unwrap();
    let output = run(&[
        "decode",
        "--bundle",
        corrupt.to_str().unwrap(),
        "--input",
        fx.test.to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 4, "{}", String::from_utf8_lossy(&output.stderr));
    assert!(String::from_utf8_lossy(&output.stderr).contains("corrupt"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let output = run(&["decode", "--no-such-flag"]);
    assert_eq!(code(&output), 2);
}

#[test]
fn bad_config_file_is_a_usage_error() {
    let fx = fixture();
    let cfg = fx.bundle.parent().unwrap().join("bad.cfg");
    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let output = run(&[
        "decode",
        "--config",
        cfg.to_str().unwrap(),
        "--bundle",
        fx.bundle.to_str().unwrap(),
        "--input",
        fx.test.to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 2, "{}", String::from_utf8_lossy(&output.stderr));
}

#[test]
fn invalid_orders_are_a_usage_error() {
    let fx = fixture();
    let output = run(&[
        "train",
        "--train",
        fx.train.to_str().unwrap(),
        "--orders",
        "2,1",
        "--epochs",
        "1",
        "--out",
        "/tmp/never-written.moseq",
    ]);
    assert_eq!(code(&output), 2, "{}", String::from_utf8_lossy(&output.stderr));
}

#[test]
fn misaligned_eval_files_name_the_sentence() {
    let fx = fixture();
    let dir = fx.bundle.parent().unwrap();
    let gold = dir.join("align_gold.conll");
    let pred = dir.join("align_pred.conll");
    std::fs::write(&gold, "a O\nb O\n\nc O\nd O\n").unwrap();
    std::fs::write(&pred, "a O\nb O\n\nc O\n").unwrap();
    let output = run(&[
        "eval",
        "--gold",
        gold.to_str().unwrap(),
        "--pred",
        pred.to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 3);
    assert!(
        String::from_utf8_lossy(&output.stderr).contains("sentence 1"),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn analyze_reports_hand_computed_counts() {
    let fx = fixture();
    let dir = fx.bundle.parent().unwrap();
    let gold = dir.join("an_gold.conll");
    let pred = dir.join("an_pred.conll");
    // gold: (0,2,A), (4,4,B); pred: (0,0,A) boundary-1, (4,4,A) type
    std::fs::write(&gold, "a B-A\nb I-A\nc I-A\nd O\ne B-B\n").unwrap();
    std::fs::write(&pred, "a X B-A\nb X O\nc X O\nd X O\ne X B-A\n").unwrap();
    let csv = dir.join("an.csv");
    let output = run(&[
        "analyze",
        "--gold",
        gold.to_str().unwrap(),
        "--pred",
        pred.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 0, "{}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("boundary-1: 1"), "{stdout}");
    assert!(stdout.contains("type: 1"), "{stdout}");
    assert!(stdout.contains("no-common-words: 0"), "{stdout}");
    let csv_text = std::fs::read_to_string(&csv).unwrap();
    assert!(csv_text.starts_with("metric,value"), "{csv_text}");
}

#[test]
fn bench_prints_unpruned_row_plus_width_rows() {
    let fx = fixture();
    let csv = fx.bundle.parent().unwrap().join("bench.csv");
    let output = run(&[
        "bench",
        "--bundle",
        fx.bundle.to_str().unwrap(),
        "--input",
        fx.test.to_str().unwrap(),
        "--widths",
        "1,5",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 0, "{}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("off:"), "{stdout}");
    assert!(stdout.contains("width-1:"), "{stdout}");
    assert!(stdout.contains("width-5:"), "{stdout}");
    let csv_text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(csv_text.lines().count(), 4, "{csv_text}");
    assert!(csv_text.starts_with("variant,seconds,f1"));
}

#[test]
fn config_file_supplies_paths_and_flags_override() {
    let fx = fixture();
    let dir = fx.bundle.parent().unwrap();
    let cfg = dir.join("run.cfg");
    std::fs::write(
        &cfg,
        format!(
            "train = {}\ndev = {}\norders = 1\nepochs = 1\nd_emb = 6\nd_hidden = 8\nseed = 3\n",
            fx.train.display(),
            dir.join("dev.conll").display()
        ),
    )
    .unwrap();
    let out_a = dir.join("cfg_a.moseq");
    let out_b = dir.join("cfg_b.moseq");
    for (out, extra) in [(&out_a, None), (&out_b, Some(("--seed", "4")))] {
        let mut args = vec![
            "train".to_string(),
            "--config".into(),
            cfg.display().to_string(),
            "--out".into(),
            out.display().to_string(),
        ];
        if let Some((k, v)) = extra {
            args.push(k.to_string());
            args.push(v.to_string());
        }
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let output = run(&refs);
        assert_eq!(code(&output), 0, "{}", String::from_utf8_lossy(&output.stderr));
    }
    // the --seed override must change the trained parameters
    assert_ne!(std::fs::read(&out_a).unwrap(), std::fs::read(&out_b).unwrap());
}
