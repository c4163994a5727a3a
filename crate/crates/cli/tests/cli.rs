use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dnnsched"))
}

fn tiny_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.toml")
}

fn run(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn dnnsched");
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn manifest(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_topo_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        run(bin()
            .args(["gen-topo", "--seed", "40", "--count", "3", "--out"])
            .arg(out)
            .arg("--config")
            .arg(tiny_config()));
    }
    for k in 40..43 {
        let name = format!("topo_{k}.json");
        let x = std::fs::read_to_string(a.join(&name)).unwrap();
        assert_eq!(x, std::fs::read_to_string(b.join(&name)).unwrap());
        let t = dnnsched_core::Topology::from_json(&x).unwrap();
        assert_eq!(t.n_cells(), 2);
    }
    let m = manifest(&a.join("manifest.json"));
    assert_eq!(m["command"], "gen-topo");
    assert_eq!(m["seeds"]["first_topology"], 40);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn full_pipeline_on_tiny_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = tiny_config();
    let data = d.join("data");
    let (power, sched) = (d.join("power.json"), d.join("sched.json"));

    let out = run(bin()
        .arg("gen-dataset")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&data));
    assert!(out.contains("0 dropped"), "{out}");
    for f in [
        "power_train.csv",
        "power_val.csv",
        "sched_train.jsonl",
        "sched_val.jsonl",
        "manifest.json",
    ] {
        assert!(data.join(f).exists(), "{f}");
    }

    run(bin()
        .arg("train-power")
        .arg("--config")
        .arg(&cfg)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&power));
    assert!(dnnsched_core::PowerNet::load(&power).is_ok());
    assert!(d.join("power.json.curve.csv").exists());
    let m = manifest(&d.join("power.json.manifest.json"));
    assert_eq!(m["inputs"].as_object().unwrap().len(), 3);

    run(bin()
        .arg("train-sched")
        .arg("--config")
        .arg(&cfg)
        .arg("--power-model")
        .arg(&power)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&sched));
    assert!(dnnsched_core::SchedNet::load(&sched).is_ok());

    let bench = d.join("bench");
    let out = run(bin()
        .args([
            "bench",
            "--methods",
            "exhaustive-gp,max-dnn,dqn-dnn-3,greedy-gp,random-gp",
            "--n",
            "4",
        ])
        .arg("--config")
        .arg(&cfg)
        .arg("--power-model")
        .arg(&power)
        .arg("--sched-model")
        .arg(&sched)
        .arg("--out")
        .arg(&bench));
    assert!(out.contains("DQN_DNN_3"), "{out}");
    let summary = std::fs::read_to_string(bench.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 6);
    let records = std::fs::read_to_string(bench.join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 1 + 5 * 4);
    let m = manifest(&bench.join("manifest.json"));
    assert_eq!(m["seeds"]["topologies"], 1_000_000);
    assert_eq!(m["inputs"].as_object().unwrap().len(), 3);

    let eval = d.join("eval");
    run(bin()
        .arg("eval")
        .arg("--config")
        .arg(&cfg)
        .arg("--data")
        .arg(&data)
        .arg("--power-model")
        .arg(&power)
        .arg("--sched-model")
        .arg(&sched)
        .arg("--out")
        .arg(&eval));
    let e = manifest(&eval.join("eval.json"));
    assert!(e["power"]["mse"].as_f64().unwrap().is_finite());
    assert!(e["sched"]["top_quarter_hit_rate"].as_f64().unwrap() >= 0.0);
}

#[test]
fn bench_without_models_rejects_dnn_methods() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["bench", "--methods", "max-dnn", "--n", "1", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("model"));
}

#[test]
fn bench_gp_only_methods_need_no_models() {
    let dir = tempfile::tempdir().unwrap();
    run(bin()
        .args([
            "bench",
            "--methods",
            "greedy-gp,random-gp",
            "--n",
            "2",
            "--out",
        ])
        .arg(dir.path())
        .arg("--config")
        .arg(tiny_config()));
    assert!(dir.path().join("cdf_GREEDY_GP.csv").exists());
}

#[test]
fn unknown_method_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["bench", "--methods", "oracle", "--n", "1", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
}
