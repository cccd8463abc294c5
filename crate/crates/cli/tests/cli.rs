use std::path::Path;
use std::process::{Command, Output};

fn cgflow(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cgflow"));
    c.args(args).env_remove("CG_SEED");
    for (k, v) in envs {
        c.env(k, v);
    }
    c.output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.display().to_string()
}

fn flow_config(out: &Path, sampler: &str, workers: usize) -> String {
    format!(
        r#"{{
  "seed": 11,
  "output": "{}",
  "workers": {workers},
  "experiment": {{
    "kind": "flow",
    "sampler": {sampler},
    "levels": [1, 2],
    "samples": 6
  }}
}}
"#,
        out.display()
    )
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn constant_sampler_has_unit_theta() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "c.json", &flow_config(&out, r#"{"kind": "constant", "matrix": [[2.0, 0.5], [-0.5, 1.0]]}"#, 1));
    let o = cgflow(&["run", &cfg], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("flow.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "level,samples,theta_n,theta_n_stderr,theta_hat,fluct,A_bar_flat");
    for line in lines {
        let theta: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!((theta - 1.0).abs() < 1e-9, "{line}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let files: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|e| e["file"].as_str().unwrap()).collect();
    assert_eq!(files, ["flow.csv", "flow.json"]);
    assert_eq!(manifest["outputs"][0]["sha256"].as_str().unwrap(), cgflow_cli::sha256_hex(csv.as_bytes()));
}

#[test]
fn outputs_are_byte_identical_across_runs_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let sampler = r#"{"kind": "poisson", "rho1": 0.02, "rho2": 0.02, "lambda": 0.1, "big_lambda": 10.0, "radius": 1.0, "mode": "indicator"}"#;
    let mut csvs = Vec::new();
    for (i, w) in [1, 1, 3].iter().enumerate() {
        let out = dir.path().join(format!("out{i}"));
        let cfg = write_config(dir.path(), &format!("c{i}.json"), &flow_config(&out, sampler, *w));
        let o = cgflow(&["run", &cfg], &[]);
        assert!(matches!(o.status.code(), Some(0) | Some(2)), "{}", stderr(&o));
        csvs.push((std::fs::read(out.join("flow.csv")).unwrap(), std::fs::read(out.join("flow.json")).unwrap()));
    }
    assert_eq!(csvs[0], csvs[1]);
    assert_eq!(csvs[0], csvs[2]);
    let mirror: serde_json::Value = serde_json::from_slice(&csvs[0].1).unwrap();
    assert_eq!(mirror["records"].as_array().unwrap().len(), 2);
    // the seed override changes the draw
    let out = dir.path().join("env");
    let cfg = write_config(dir.path(), "env.json", &flow_config(&out, sampler, 1));
    cgflow(&["run", &cfg], &[("CG_SEED", "12")]);
    assert_ne!(std::fs::read(out.join("flow.csv")).unwrap(), csvs[0].0);
}

#[test]
fn malformed_config_is_line_anchored() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", "{\n  \"seed\": 1,\n  \"output\": \"x\"\n  \"experiment\": {}\n}\n");
    let o = cgflow(&["validate", &cfg], &[]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains(&format!("{cfg}:4:")), "{}", stderr(&o));

    let cfg = write_config(dir.path(), "extra.json", "{\n  \"seed\": 1,\n  \"output\": \"x\",\n  \"sede\": 2,\n  \"experiment\": {\"kind\": \"concentration\", \"m\": 4, \"trials\": 10, \"t_over_sqrt_m\": [1.0]}\n}\n");
    let o = cgflow(&["validate", &cfg], &[]);
    assert_eq!(o.status.code(), Some(4));
    let e = stderr(&o);
    assert!(e.contains(&format!("{cfg}:4:")) && e.contains("sede"), "{e}");
}

#[test]
fn unknown_sampler_gets_suggestions() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "s.json", &flow_config(&out, r#"{"kind": "poison"}"#, 1));
    let o = cgflow(&["run", &cfg], &[]);
    assert_eq!(o.status.code(), Some(4));
    let e = stderr(&o);
    assert!(e.contains(&format!("{cfg}:7:")) && e.contains("did you mean poisson"), "{e}");

    let cfg = write_config(dir.path(), "k.json", "{\"seed\": 1, \"output\": \"x\", \"experiment\": {\"kind\": \"flwo\"}}");
    let e = stderr(&cgflow(&["validate", &cfg], &[]));
    assert!(e.contains("did you mean flow"), "{e}");
}

#[test]
fn oversized_cube_names_the_level() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "big.json",
        r#"{"seed": 1, "output": "x", "box_side": 729,
            "experiment": {"kind": "flow", "sampler": {"kind": "constant", "matrix": [[1.0, 0.0], [0.0, 1.0]]}, "levels": [3, 7], "samples": 1}}"#,
    );
    let o = cgflow(&["validate", &cfg], &[]);
    assert_eq!(o.status.code(), Some(4));
    let e = stderr(&o);
    assert!(e.contains("level 7") && e.contains("2187") && e.contains("729"), "{e}");
}

#[test]
fn concentration_and_field_sample_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("conc");
    let cfg = write_config(
        dir.path(),
        "conc.json",
        &format!(
            r#"{{"seed": 3, "output": "{}", "experiment": {{"kind": "concentration", "m": 50, "trials": 4000, "t_over_sqrt_m": [1.0, 2.0, 4.0]}}}}"#,
            out.display()
        ),
    );
    let o = cgflow(&["run", &cfg], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("concentration.csv")).unwrap();
    assert!(csv.starts_with("t,empirical_tail,bound,margin\n"));
    assert_eq!(csv.lines().count(), 4);

    let out = dir.path().join("field");
    let cfg = write_config(
        dir.path(),
        "f.json",
        &format!(
            r#"{{"seed": 3, "output": "{}", "experiment": {{"kind": "field_sample", "sampler": {{"kind": "checkerboard", "alpha": 1.0, "beta": 4.0, "square": 3}}, "level": 2}}}}"#,
            out.display()
        ),
    );
    let o = cgflow(&["field", "sample", &cfg], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let f = cgflow::io::load_field(&out.join("field.cgf")).unwrap();
    assert_eq!(f.region().ncells(), 81);
}
