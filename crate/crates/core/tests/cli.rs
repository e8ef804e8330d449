//! Drives the `gpf` binary end to end on small files.

use graph_prompt::gnn::{save_checkpoint, ModelConfig};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn gpf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpf")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Files {
    dir: TempDir,
}

impl Files {
    fn new() -> Self {
        Files { dir: tempfile::tempdir().unwrap() }
    }

    fn write(&self, name: &str, body: &str) -> String {
        let p = self.path(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_string_lossy().into_owned()
    }

    fn checkpoint(&self, name: &str, config: &str, input: usize, seed: u64) -> String {
        let cfg: ModelConfig = serde_json::from_str(config).unwrap();
        let p = self.path(name);
        save_checkpoint(&cfg.build(input, seed).unwrap(), Path::new(&p)).unwrap();
        p
    }
}

const LINEAR_GIN: &str = r#"{"kind": "gin", "num_layers": 1, "hidden_dim": 3, "update": "linear", "bias": false,
    "epsilon": 0.25, "readout": "sum", "activation": "none"}"#;
const DEEP_GIN: &str = r#"{"kind": "gin", "num_layers": 2, "hidden_dim": 4, "update": "mlp", "bias": true,
    "readout": "sum", "activation": "relu", "head_layers": 2}"#;

const GRAPH: &str = r#"{"id": "tri", "n": 3, "edges": [[0, 1], [1, 2]], "x": [[1.0, 0.5], [-0.5, 2.0], [0.0, 1.0]]}"#;

const SPECS: [(&str, &str); 4] = [
    ("feature", r#"{"kind": "feature", "delta": [[0.5, 0.0], [0.0, -1.0], [2.0, 0.25]]}"#),
    ("link", r#"{"kind": "link", "delta": [[0, 0, 1], [0, 0, -1], [1, -1, 0]]}"#),
    (
        "component",
        r#"{"kind": "isolated_component", "edits": [
            {"op": "add", "graph": {"n": 2, "edges": [[0, 1]], "x": [[3.0, 1.0], [0.0, -2.0]]}}]}"#,
    ),
    (
        "composite",
        r#"{"kind": "composite", "steps": [
            {"kind": "link", "delta": [[0, 0, 1], [0, 0, 0], [1, 0, 0]]},
            {"kind": "isolated_component", "edits": [{"op": "add", "graph": {"n": 1, "x": [[1.0, 1.0]]}}]},
            {"kind": "feature", "delta": [[0.1, 0.2], [0.3, 0.4], [0.5, 0.6], [0.7, 0.8]]}]}"#,
    ),
];

fn solve(f: &Files, spec: &str, ckpt: &str, out: &str) -> Output {
    gpf(&["solve", "--graph", &f.path("g.json"), "--spec", spec, "--checkpoint", ckpt, "--out-prompt", out])
}

fn verify(f: &Files, spec: &str, ckpt: &str, prompt: &str) -> Output {
    gpf(&["verify", "--graph", &f.path("g.json"), "--spec", spec, "--checkpoint", ckpt, "--prompt", prompt])
}

#[test]
fn solved_prompts_verify() {
    let f = Files::new();
    f.write("g.json", GRAPH);
    let ckpt = f.checkpoint("lin.json", LINEAR_GIN, 2, 3);
    for (name, body) in SPECS {
        let spec = f.write(&format!("{name}.json"), body);
        let prompt = f.path(&format!("{name}_p.json"));
        let s = solve(&f, &spec, &ckpt, &prompt);
        assert_eq!(s.status.code(), Some(0), "{name}: {}", stderr(&s));
        let v = verify(&f, &spec, &ckpt, &prompt);
        assert_eq!(v.status.code(), Some(0), "{name}: {}", stderr(&v));
        let report: serde_json::Value = serde_json::from_str(stdout(&v).trim()).unwrap();
        assert!(report["rel_error"].as_f64().unwrap() <= 1e-9, "{name}: {report}");
        assert_eq!(report["passed"], true);
    }
}

#[test]
fn wrong_prompt_fails_verification_with_numeric_exit() {
    let f = Files::new();
    f.write("g.json", GRAPH);
    let ckpt = f.checkpoint("lin.json", LINEAR_GIN, 2, 3);
    let spec = f.write("feature.json", SPECS[0].1);
    let prompt = f.write("p.json", r#"{"version": 1, "dim": 2, "p": [5.0, -5.0]}"#);
    let v = verify(&f, &spec, &ckpt, &prompt);
    assert_eq!(v.status.code(), Some(3));
    let report: serde_json::Value = serde_json::from_str(stdout(&v).trim()).unwrap();
    assert_eq!(report["passed"], false);
}

#[test]
fn solve_rejects_deep_checkpoint() {
    let f = Files::new();
    f.write("g.json", GRAPH);
    let ckpt = f.checkpoint("deep.json", DEEP_GIN, 2, 1);
    let spec = f.write("feature.json", SPECS[0].1);
    let out = f.path("p.json");
    let s = solve(&f, &spec, &ckpt, &out);
    assert_ne!(s.status.code(), Some(0));
    assert!(stderr(&s).contains("expected exactly 1"), "{}", stderr(&s));
    assert!(!Path::new(&out).exists());
}

#[test]
fn mean_readout_with_node_change_falls_back_to_fitting() {
    let f = Files::new();
    f.write("g.json", GRAPH);
    let ckpt = f.checkpoint("mean.json", &LINEAR_GIN.replace("\"sum\"", "\"mean\""), 2, 3);
    let spec = f.write("component.json", SPECS[2].1);
    let prompt = f.path("p.json");
    let s = solve(&f, &spec, &ckpt, &prompt);
    assert_eq!(s.status.code(), Some(0), "{}", stderr(&s));
    assert!(stderr(&s).contains("falling back"), "{}", stderr(&s));
    let v = gpf(&[
        "verify", "--graph", &f.path("g.json"), "--spec", &spec, "--checkpoint", &ckpt, "--prompt", &prompt, "--tol",
        "1e-6",
    ]);
    assert_eq!(v.status.code(), Some(0), "{}", stdout(&v));
}

fn param_field(text: &str, key: &str) -> usize {
    text.lines()
        .find_map(|l| l.trim().strip_prefix(key))
        .and_then(|rest| rest.split_whitespace().next())
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .parse()
        .unwrap()
}

#[test]
fn params_counts_prompt_and_head() {
    let f = Files::new();
    let ckpt = f.checkpoint("deep.json", DEEP_GIN, 5, 1);
    let o = gpf(&["params", "--checkpoint", &ckpt, "--strategy", "gpf"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    // fresh linear head 4 -> 1
    assert_eq!(param_field(&text, "head:"), 5);
    assert_eq!(param_field(&text, "prompt:"), 5);
    assert_eq!(param_field(&text, "trainable:"), 10);

    let o = gpf(&["params", "--checkpoint", &ckpt, "--strategy", "mlp-2"]);
    let text = stdout(&o);
    // 4x4 + 4 then 4x1 + 1, no prompt
    assert_eq!(param_field(&text, "head:"), 25);
    assert_eq!(param_field(&text, "trainable:"), 25);
    assert!(!text.contains("prompt:"));
}

#[test]
fn exit_codes_for_bad_input() {
    let f = Files::new();
    f.write("g.json", GRAPH);
    let ckpt = f.checkpoint("lin.json", LINEAR_GIN, 2, 3);
    let out = f.path("p.json");

    let missing = solve(&f, &f.path("nope.json"), &ckpt, &out);
    assert_eq!(missing.status.code(), Some(4), "{}", stderr(&missing));

    let bad_kind = f.write("shear.json", r#"{"kind": "shear", "delta": []}"#);
    assert_eq!(solve(&f, &bad_kind, &ckpt, &out).status.code(), Some(2));

    let wrong_rows = f.write("rows.json", r#"{"kind": "feature", "delta": [[1.0, 0.0]]}"#);
    assert_eq!(solve(&f, &wrong_rows, &ckpt, &out).status.code(), Some(2));

    assert_eq!(gpf(&["solve", "--graph"]).status.code(), Some(2));
    assert_eq!(gpf(&["params", "--checkpoint", &ckpt, "--strategy", "sideways"]).status.code(), Some(2));
    let bad_n = gpf(&["gen-data", "--seed", "1", "--n", "2", "--rule", "triangle-motif", "--dim", "3", "--out", &out]);
    assert_eq!(bad_n.status.code(), Some(2));
}

#[test]
fn reruns_are_deterministic_and_leave_inputs_alone() {
    let f = Files::new();
    let g = f.write("g.json", GRAPH);
    let ckpt = f.checkpoint("lin.json", LINEAR_GIN, 2, 3);
    let spec = f.write("composite.json", SPECS[3].1);
    let inputs: Vec<PathBuf> = [&g, &ckpt, &spec].iter().map(PathBuf::from).collect();
    let before: Vec<Vec<u8>> = inputs.iter().map(|p| std::fs::read(p).unwrap()).collect();

    let a = solve(&f, &spec, &ckpt, &f.path("a.json"));
    let b = solve(&f, &spec, &ckpt, &f.path("b.json"));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(std::fs::read(f.path("a.json")).unwrap(), std::fs::read(f.path("b.json")).unwrap());

    let data = |name: &str| {
        let p = f.path(name);
        let o = gpf(&["gen-data", "--seed", "5", "--n", "12", "--rule", "community-pair", "--dim", "3", "--out", &p]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        std::fs::read(p).unwrap()
    };
    assert_eq!(data("d1.jsonl"), data("d2.jsonl"));

    let after: Vec<Vec<u8>> = inputs.iter().map(|p| std::fs::read(p).unwrap()).collect();
    assert_eq!(before, after);
}
