use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn weylroots(args: &[&str], cfg: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_weylroots"))
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .env_remove("WEYLROOTS_WORKERS")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, body).unwrap();
    p
}

const EXPECT: &str = r#"
[expect]
n = 400
a = 2.0
b = 18.0
dist = "gaussian"
trials = 300
seed = 11
"#;

#[test]
fn empty_config_lists_required_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let o = weylroots(&["expect"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    for k in ["n", "a", "b", "dist", "trials", "seed"] {
        assert!(err.contains(k), "{err}");
    }
    assert!(err.contains("missing required keys"), "{err}");
}

#[test]
fn unknown_key_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{EXPECT}colour = \"red\"\n"));
    let o = weylroots(&["expect"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
}

#[test]
fn unknown_section_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{EXPECT}[expectation]\nn = 3\n"));
    let o = weylroots(&["expect"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn expect_header_and_manifest_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), EXPECT);
    let first = dir.path().join("first");
    let o = weylroots(&["expect", "--workers", "1"], &cfg, &first);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(first.join("expectation.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "dist,n,a,b,trials,mean,se_mean,theory_mean,z");

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(first.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "expect");
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["resolved"]["grid_step"], 0.02);
    let files = manifest["files"].as_array().unwrap();
    assert!(files.iter().any(|f| f["name"] == "expectation.csv" && f["sha256"].as_str().unwrap().len() == 64));

    let second = dir.path().join("second");
    let o = weylroots(&["expect", "--workers", "3"], &first.join("manifest.json"), &second);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(first.join("expectation.csv")).unwrap(), fs::read(second.join("expectation.csv")).unwrap());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), EXPECT);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(weylroots(&["expect", "--seed", "12"], &cfg, &a).status.success());
    assert!(weylroots(&["expect"], &cfg, &b).status.success());
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 12);
    assert_ne!(fs::read(a.join("expectation.csv")).unwrap(), fs::read(b.join("expectation.csv")).unwrap());
}

#[test]
fn z_gate_gives_acceptance_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{EXPECT}max_abs_z = 1e-9\n"));
    let out = dir.path().join("out");
    let o = weylroots(&["expect"], &cfg, &out);
    assert_eq!(o.status.code(), Some(5));
    assert!(out.join("expectation.csv").exists());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn over_budget_is_resource_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{EXPECT}flop_budget = 1000.0\n"));
    let o = weylroots(&["expect"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn edgeworth_ledger_has_c1_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[edgeworth]\ndist = \"rademacher\"\n");
    let out = dir.path().join("out");
    let o = weylroots(&["edgeworth"], &cfg, &out);
    assert!(o.status.success());
    let consts = fs::read_to_string(out.join("constants.csv")).unwrap();
    let c1 = consts.lines().find(|l| l.starts_with("C1,")).expect("C1 line");
    assert!(c1.starts_with("C1,-7/192,"), "{c1}");
    let v: f64 = c1.rsplit(',').next().unwrap().parse().unwrap();
    assert!((v + 0.0065474472).abs() < 1e-10, "{v}");
    assert!(fs::read_to_string(out.join("ledger.csv")).unwrap().starts_with("group,term,weight,"));
}

#[test]
fn other_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
[variance]
n = 400
a = 2.0
b = 10.0
dist = { values = [-1.0, 1.0], probs = [0.5, 0.5] }
trials = 50
seed = 1

[smallball]
n = 400
x = 10.0
deltas = [0.1]
dist = "rademacher"
trials = 200
seed = 2

[blocks]
n = 400
a = 2.0
b = 10.0
dist = "gaussian"
trials = 40
seed = 3

[lcd]
family = "sk"
n = 16
r = 0.5
d_max = 4.0
tau = 5.5
step = 0.01
"#,
    );
    for (sub, file, header) in [
        ("variance", "variance.csv", "dist,n,a,b,trials,var,se_var,theory_var,z"),
        ("smallball", "smallball.csv", "dist,n,x,delta,dim,freq,freq_over_vol,theory"),
        ("blocks", "blocks.csv", "s,t,cov"),
        ("lcd", "lcd_profile.csv", "D,objective"),
    ] {
        let out = dir.path().join(sub);
        let o = weylroots(&[sub], &cfg, &out);
        assert!(o.status.success(), "{sub}: {}", String::from_utf8_lossy(&o.stderr));
        let text = fs::read_to_string(out.join(file)).unwrap();
        assert_eq!(text.lines().next().unwrap(), header, "{sub}");
    }
}

#[test]
fn unwritable_output_is_resource_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[cw]\n");
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = weylroots(&["cw"], &cfg, &blocker.join("sub"));
    assert_eq!(o.status.code(), Some(3));
}
