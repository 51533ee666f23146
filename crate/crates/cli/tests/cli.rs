use std::path::PathBuf;
use std::process::{Command, Output};

fn ppa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppa"))
        .args(args)
        .current_dir(root())
        .output()
        .expect("binary runs")
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn count_matches_popcount() {
    let o = ppa(&["count", "--random", "4", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.contains(" ok ")).count(), 4, "{out}");
}

#[test]
fn cost_report_two_layer() {
    let o = ppa(&["cost-report", "--net", "TWO_LAYER"]);
    assert!(o.status.success());
    let out = stdout(&o);
    for row in ["Digit Duplication", "Convolutional Layer/s", "ReLU", "Max Pooling", "Fully Connected Layer", "Total"] {
        assert!(out.contains(row), "{out}");
    }
    assert!(!out.contains("Load"));
}

#[test]
fn cost_report_rejects_mismatched_weights() {
    let o = ppa(&["cost-report", "--net", "THREE_LAYER", "--weights", "weights/two_layer.ppanet"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("TWO_LAYER"));
}

#[test]
fn eval_noiseless_matches_oracle() {
    let o = ppa(&[
        "eval", "--weights", "weights/two_layer.ppanet", "--noise-sigma", "0", "--limit", "20",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let pct = |key: &str| {
        out.lines()
            .find(|l| l.starts_with(key))
            .and_then(|l| l.rsplit(' ').next())
            .map(str::to_owned)
            .unwrap_or_default()
    };
    assert_eq!(pct("oracle accuracy"), pct("simulated accuracy"), "{out}");
}

#[test]
fn infer_dumps_planes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = ppa(&[
        "infer", "--weights", "weights/two_layer.ppanet", "--index", "0", "--noise-sigma", "0", "--dump-dir", d,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("label 7  predicted 7  oracle 7"), "{}", stdout(&o));
    assert!(dir.path().join("manifest.txt").exists());
    assert!(dir.path().join("R0.pgm").exists());
}

#[test]
fn missing_weights_fail_with_diagnostic() {
    let o = ppa(&["eval", "--weights", "no/such/file.ppanet", "--limit", "1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no/such/file.ppanet"));
}

#[test]
fn malformed_weights_report_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.ppanet");
    std::fs::write(&p, "PPANET 1\nnet TWO_LAYER\nconv 0 64 4\n1 0 1\n").unwrap();
    let o = ppa(&["cost-report", "--net", "TWO_LAYER", "--weights", p.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn negative_noise_is_rejected() {
    let o = ppa(&["eval", "--weights", "weights/two_layer.ppanet", "--noise-sigma=-1", "--limit", "1"]);
    assert!(!o.status.success());
}

#[test]
fn train_smoke_writes_parseable_weights() {
    let dir = tempfile::tempdir().unwrap();
    let mnist = tempfile::tempdir().unwrap();
    // A 200-digit training split cut from the vendored test files.
    let data = ppa_core::mnist::load_split(&root().join("data/mnist"), ppa_core::mnist::Split::Test)
        .unwrap()
        .truncated(200);
    let mut imgs = Vec::new();
    for w in [2051u32, 200, 28, 28] {
        imgs.extend_from_slice(&w.to_be_bytes());
    }
    for i in 0..200 {
        imgs.extend_from_slice(data.image(i));
    }
    let mut labs = Vec::new();
    for w in [2049u32, 200] {
        labs.extend_from_slice(&w.to_be_bytes());
    }
    labs.extend_from_slice(&data.labels);
    std::fs::write(mnist.path().join("train-images-idx3-ubyte"), imgs).unwrap();
    std::fs::write(mnist.path().join("train-labels-idx1-ubyte"), labs).unwrap();
    let out = dir.path().join("w.ppanet");
    let o = ppa(&[
        "train",
        "--net",
        "TWO_LAYER",
        "--epochs",
        "1",
        "--seed",
        "5",
        "--mnist-dir",
        mnist.path().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let w = ppa_core::netplan::parse(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(w.preset, ppa_core::netplan::Preset::TwoLayer);
}
