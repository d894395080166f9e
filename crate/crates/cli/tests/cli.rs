use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tensegrity"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_rig(dir: &TempDir) -> PathBuf {
    let p = path(dir, "rig.json");
    let o = run(&["topo", "rig", "--out", s(&p)]);
    assert!(o.status.success(), "{}", stderr(&o));
    p
}

fn top_load(dir: &TempDir, fz: f64) -> PathBuf {
    let p = path(dir, "load.json");
    let forces: Vec<String> = (8..12).map(|i| format!(r#""{i}": [0, 0, {fz}]"#)).collect();
    fs::write(&p, format!(r#"{{"forces": {{{}}}}}"#, forces.join(", "))).unwrap();
    p
}

#[test]
fn help_documents_every_flag() {
    let cases: &[(&[&str], &[&str])] = &[
        (
            &["topo", "prism"],
            &["--n", "--radius", "--height", "--twist", "--out"],
        ),
        (&["topo", "tbar"], &["--span", "--aspect", "--out"]),
        (&["topo", "dbar"], &["--span", "--aspect", "--out"]),
        (
            &["topo", "rig"],
            &[
                "--stay-angle",
                "--joints",
                "--stays-per-joint",
                "--radius",
                "--heights",
                "--out",
            ],
        ),
        (&["solve"], &["--topo", "--load", "--out"]),
        (
            &["mass"],
            &["--topo", "--solution", "--materials", "--out", "--csv"],
        ),
        (
            &["dyn"],
            &[
                "--topo",
                "--config",
                "--out",
                "--dt",
                "--duration",
                "--prestress",
            ],
        ),
        (
            &["mission"],
            &["--config", "--profile", "--duration", "--out"],
        ),
    ];
    for (cmd, flags) in cases {
        let mut args = cmd.to_vec();
        args.push("--help");
        let o = run(&args);
        assert!(o.status.success(), "{cmd:?}");
        let text = stdout(&o);
        for f in *flags {
            assert!(text.contains(f), "{cmd:?} help lacks {f}");
        }
    }
    assert!(run(&["--help"]).status.success());
}

#[test]
fn prism_file_and_bad_n() {
    let dir = TempDir::new().unwrap();
    let p = path(&dir, "prism.json");
    let o = run(&[
        "topo",
        "prism",
        "--n",
        "3",
        "--radius",
        "1",
        "--height",
        "1",
        "--twist",
        "2.618",
        "--out",
        s(&p),
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("nodes: 6"));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
    assert_eq!(v["nodes"].as_array().unwrap().len(), 6);

    let o = run(&["topo", "prism", "--n", "2"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("n_struts >= 3"), "{}", stderr(&o));
}

#[test]
fn rig_summary_counts_anchors() {
    let o = run(&["topo", "rig", "--stay-angle", "45"]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("anchored: 4"), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["nodes"].as_array().unwrap().len(), 12);
}

#[test]
fn solve_rig_under_top_load() {
    let dir = TempDir::new().unwrap();
    let rig = write_rig(&dir);
    let load = top_load(&dir, -10.0);
    let out = path(&dir, "sol.json");
    let o = run(&[
        "solve",
        "--topo",
        s(&rig),
        "--load",
        s(&load),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("residual: "));
    assert!(stdout(&o).contains("nullspace_dim: "));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(v["gamma"]
        .as_array()
        .unwrap()
        .iter()
        .all(|g| g.as_f64().unwrap() >= 0.0));
}

#[test]
fn solve_prism_with_zero_load() {
    let dir = TempDir::new().unwrap();
    let p = path(&dir, "prism.json");
    assert!(run(&["topo", "prism", "--out", s(&p)]).status.success());
    let o = run(&["solve", "--topo", s(&p)]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("residual: 0e0"), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for key in ["gamma", "lambda"] {
        assert!(v[key]
            .as_array()
            .unwrap()
            .iter()
            .all(|x| x.as_f64().unwrap() == 0.0));
    }
}

#[test]
fn exit_codes_separate_parse_and_model_errors() {
    let dir = TempDir::new().unwrap();
    let bad = path(&dir, "bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let o = run(&["solve", "--topo", s(&bad)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error[io]"));

    let rig = write_rig(&dir);
    let up = top_load(&dir, 10.0);
    let o = run(&["solve", "--topo", s(&rig), "--load", s(&up)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).starts_with("error[statics]"), "{}", stderr(&o));

    assert_eq!(run(&["solve"]).status.code(), Some(2));
    let o = run(&["mission", "--profile", "nope"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn mass_of_zero_prestress_is_zero() {
    let dir = TempDir::new().unwrap();
    let p = path(&dir, "prism.json");
    let sol = path(&dir, "sol.json");
    let csv = path(&dir, "mass.csv");
    assert!(run(&["topo", "prism", "--out", s(&p)]).status.success());
    assert!(run(&["solve", "--topo", s(&p), "--out", s(&sol)])
        .status
        .success());
    let o = run(&[
        "mass",
        "--topo",
        s(&p),
        "--solution",
        s(&sol),
        "--csv",
        s(&csv),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["total"].as_f64(), Some(0.0));
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 1 + 12);
}

#[test]
fn dyn_with_zero_duration_has_one_row() {
    let dir = TempDir::new().unwrap();
    let p = path(&dir, "prism.json");
    assert!(run(&["topo", "prism", "--out", s(&p)]).status.success());
    let o = run(&["dyn", "--topo", s(&p), "--duration", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 2);
}

#[test]
fn dyn_prestress_runs_and_needs_a_positive_mode() {
    let dir = TempDir::new().unwrap();
    let p = path(&dir, "prism.json");
    assert!(run(&["topo", "prism", "--out", s(&p)]).status.success());
    let cfg = path(&dir, "dyn.json");
    fs::write(&cfg, r#"{"gravity": [0, 0, 0], "sample_stride": 10}"#).unwrap();
    let o = run(&[
        "dyn",
        "--topo",
        s(&p),
        "--config",
        s(&cfg),
        "--duration",
        "0.01",
        "--prestress",
        "20",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 1 + 11);

    let flat = path(&dir, "flat.json");
    assert!(run(&["topo", "prism", "--twist", "0", "--out", s(&flat)])
        .status
        .success());
    let o = run(&[
        "dyn",
        "--topo",
        s(&flat),
        "--prestress",
        "20",
        "--duration",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn mission_two_hours_at_defaults() {
    let o = run(&["mission", "--duration", "7200"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let last: Vec<&str> = text.lines().last().unwrap().split(',').collect();
    assert_eq!(last[0], "7200");
    assert!((last[2].parse::<f64>().unwrap() - 1570.0).abs() < 1e-9);
    assert!((last[4].parse::<f64>().unwrap() - 750.0).abs() < 1e-9);

    let o = run(&["mission", "--profile", "as-tested", "--duration", "3600"]);
    let text = stdout(&o);
    let melted: f64 = text
        .lines()
        .last()
        .unwrap()
        .split(',')
        .nth(2)
        .unwrap()
        .parse()
        .unwrap();
    assert!((melted - 1530.0).abs() < 1e-9);
}

#[test]
fn mission_config_overlays_the_profile() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "m.json");
    fs::write(&cfg, r#"{"heater_power": 400}"#).unwrap();
    let o = run(&["mission", "--config", s(&cfg), "--duration", "3600"]);
    assert!(o.status.success());
    let melted: f64 = stdout(&o)
        .lines()
        .last()
        .unwrap()
        .split(',')
        .nth(2)
        .unwrap()
        .parse()
        .unwrap();
    assert!((melted - 3140.0).abs() < 1e-9);

    fs::write(&cfg, r#"{"heater_power": 900}"#).unwrap();
    let o = run(&["mission", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("heater_power"));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let rig = write_rig(&dir);
    let load = top_load(&dir, -10.0);
    let cfg = path(&dir, "dyn.json");
    fs::write(
        &cfg,
        r#"{"duration": 0.05, "sample_stride": 50, "string_damping": 5}"#,
    )
    .unwrap();
    let commands: Vec<Vec<String>> = vec![
        vec!["topo".into(), "rig".into()],
        vec![
            "solve".into(),
            "--topo".into(),
            s(&rig).into(),
            "--load".into(),
            s(&load).into(),
        ],
        vec![
            "dyn".into(),
            "--topo".into(),
            s(&rig).into(),
            "--config".into(),
            s(&cfg).into(),
        ],
        vec!["mission".into(), "--duration".into(), "10000".into()],
    ];
    for args in commands {
        let a = bin().args(&args).output().unwrap();
        let b = bin().args(&args).output().unwrap();
        assert!(a.status.success(), "{args:?}: {}", stderr(&a));
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}
