use std::fs;
use std::path::Path;
use std::process::Command;

fn porecov(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_porecov")).args(args).output().expect("spawn porecov");
    assert!(out.status.success(), "porecov {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn quick_config(dir: &Path, mapped: Option<&Path>) -> String {
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/quick.toml");
    let mut text = fs::read_to_string(src).unwrap();
    if let Some(m) = mapped {
        text = format!("mapped = {:?}\n{text}", m.to_str().unwrap());
    }
    let path = dir.join("quick.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn map_partition_run_analyze() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let map_dir = dir.join("map");
    let config = quick_config(dir, None);
    porecov(&["map", "--config", &config, "--out", map_dir.to_str().unwrap()]);
    assert!(map_dir.join("distortion.toml").exists());

    // later steps reuse the saved map
    let config = quick_config(dir, Some(&map_dir.join("mapped.txt")));
    let bars = dir.join("bars");
    let text = porecov(&["partition", "--config", &config, "--phases", "0,1,2,3,4,5", "--out", bars.to_str().unwrap()]);
    assert!(text.contains("bar violations 0"), "{text}");
    assert!(fs::read_to_string(bars.join("bars.csv")).unwrap().lines().count() > 6);

    let run = dir.join("run");
    porecov(&["run", "--config", &config, "--out", run.to_str().unwrap(), "--seed", "3"]);
    let summary: toml::Table = fs::read_to_string(run.join("summary.toml")).unwrap().parse().unwrap();
    assert_eq!(summary["epochs"].as_array().unwrap().len(), 2);
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("stage,k,step,time,J,nominal_error,omega_min,m_0"));

    porecov(&["analyze", "--run", run.to_str().unwrap()]);
    let analysis: toml::Table = fs::read_to_string(run.join("analysis.toml")).unwrap().parse().unwrap();
    assert!(analysis.contains_key("spectral"));
}

#[test]
fn generate_writes_a_mesh() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("three.mesh");
    let text = porecov(&["generate", "--builtin", "three_hole", "--out", out.to_str().unwrap()]);
    assert!(text.contains("3 obstacles"), "{text}");
    assert!(out.metadata().unwrap().len() > 0);
}

#[test]
fn bad_fault_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_porecov"))
        .args(["run", "--fault", "oops", "--k-star", "1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
