use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vtolsafe"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("vtolsafe-cli-{name}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("scenario.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn verify_passes() {
    let out = bin().arg("verify").output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(code(&out), 0, "{stdout}");
    assert!(stdout.lines().count() >= 4);
    assert!(stdout.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn short_run_writes_csv() {
    let dir = scratch("run");
    let scenario = write(
        &dir,
        "[sim]\nduration = 0.5\n[[obstacle]]\ncenter = [3.6, 3.4, 0.0]\nradius = 1.0\n[initial]\np = [7.0, 7.0, 0.0]\n",
    );
    let out = bin()
        .args(["run", "--mode", "ed", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("run_ed.csv")).unwrap();
    assert!(csv.starts_with("t,x,y,z,"));
    assert_eq!(csv.lines().count(), 11);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn sweep_writes_one_file_per_pair() {
    let dir = scratch("sweep");
    let scenario = write(&dir, "[sim]\nduration = 0.25\n[initial]\np = [2.0, 0.0, 0.0]\n");
    let out = bin()
        .args(["sweep", "--gamma", "0.1,0.5", "--horizon", "5", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("sweep_g0.1_n5.csv").exists());
    assert!(dir.join("sweep_g0.5_n5.csv").exists());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn bad_config_exits_with_one() {
    let dir = scratch("bad");
    let scenario = write(&dir, "[mpc]\ngamma = 2.0\n");
    let out = bin().args(["run", "--scenario"]).arg(&scenario).output().unwrap();
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma"));

    let out = bin()
        .args(["run", "--scenario"])
        .arg(dir.join("nope.toml"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn infeasible_start_exits_with_two() {
    // Already moving fast at the obstacle boundary: no admissible plan exists.
    let dir = scratch("abort");
    let scenario = write(
        &dir,
        "[initial]\np = [1.3, 0.0, 0.0]\nv = [-4.0, 0.0, 0.0]\n[goal]\np = [-5.0, 0.0, 0.0]\n\
         [[obstacle]]\ncenter = [0.0, 0.0, 0.0]\nradius = 1.0\n[sim]\nduration = 1.0\n",
    );
    let out = bin()
        .args(["run", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stdout).contains("aborted"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn bundled_scenarios_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    for name in ["reference.toml", "noisy.toml"] {
        let text = std::fs::read_to_string(root.join(name)).unwrap();
        vtolsafe::sim::Scenario::from_toml_str(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    let file = vtolsafe::sim::Scenario::from_file(&root.join("reference.toml")).unwrap();
    assert_eq!(file, vtolsafe::sim::Scenario::reference());
}
