use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn mic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mic"))
        .args(args)
        .env_remove("MIC_LM_URL")
        .output()
        .expect("mic runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn golden(name: &str) -> String {
    fs::read_to_string(golden_path(name)).unwrap()
}

fn golden_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generates a world into `dir` and returns the directory.
fn gen(dir: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["gen-world", "--out", s(dir)];
    args.extend_from_slice(extra);
    let o = mic(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    dir.to_path_buf()
}

fn run_args<'a>(w: &'a Path, out: &'a Path, extra: &[&'a str]) -> Vec<String> {
    let mut args: Vec<String> = ["run", "--world"].iter().map(|x| x.to_string()).collect();
    args.push(s(&w.join("env.json")).into());
    args.push("--tasks".into());
    args.push(s(&w.join("tasks.json")).into());
    args.push("--demos".into());
    args.push(s(&w.join("demos.json")).into());
    args.push("--embeddings".into());
    args.push(s(&w.join("embeddings.jsonl")).into());
    args.push("--out".into());
    args.push(s(out).into());
    args.extend(extra.iter().map(|x| x.to_string()));
    args
}

fn mic_owned(args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    mic(&refs)
}

fn final_line(trace: &Path) -> Value {
    let text = fs::read_to_string(trace).unwrap();
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

#[test]
fn gen_world_count_contract_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let flags = ["--seed", "1", "--rooms", "4", "--nodes-per-room", "2", "--tasks", "5"];
    let a = gen(&tmp.path().join("a"), &flags);
    let b = gen(&tmp.path().join("b"), &flags);
    let env: Value = serde_json::from_str(&fs::read_to_string(a.join("env.json")).unwrap()).unwrap();
    let tasks: Value = serde_json::from_str(&fs::read_to_string(a.join("tasks.json")).unwrap()).unwrap();
    assert_eq!(env["nodes"].as_array().unwrap().len(), 8);
    assert_eq!(tasks.as_array().unwrap().len(), 5);
    for f in ["env.json", "tasks.json", "demos.json", "embeddings.jsonl"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn gen_world_rejects_oversized_house() {
    let tmp = tempfile::tempdir().unwrap();
    let o = mic(&["gen-world", "--rooms", "200", "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("40"));
}

#[test]
fn hli_mode_keeps_the_instruction_alone() {
    let tmp = tempfile::tempdir().unwrap();
    let w = gen(&tmp.path().join("w"), &["--seed", "2", "--tasks", "6"]);
    let out = tmp.path().join("r");
    let o = mic_owned(&run_args(&w, &out, &["--mode", "hli"]));
    assert_eq!(o.status.code(), Some(0));
    let tasks: Value = serde_json::from_str(&fs::read_to_string(w.join("tasks.json")).unwrap()).unwrap();
    for t in tasks.as_array().unwrap() {
        let id = t["id"].as_str().unwrap();
        let last = final_line(&out.join("traces").join(format!("{id}.jsonl")));
        assert_eq!(last["final_instruction"], t["instruction"]);
    }
}

#[test]
fn eval_reproduces_the_run_report() {
    let tmp = tempfile::tempdir().unwrap();
    let w = gen(&tmp.path().join("w"), &["--seed", "3"]);
    let out = tmp.path().join("r");
    let o = mic_owned(&run_args(&w, &out, &["--p-noise", "0.2", "--jobs", "3"]));
    assert!(o.status.success());
    let e = mic(&[
        "eval",
        "--traces",
        s(&out.join("traces")),
        "--tasks",
        s(&w.join("tasks.json")),
        "--world",
        s(&w.join("env.json")),
    ]);
    assert!(e.status.success(), "{}", String::from_utf8_lossy(&e.stderr));
    let run_report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(fs::read_to_string(out.join("eval.csv")).unwrap(), run_report);
    assert!(stdout(&o).ends_with(&stdout(&e)));
}

#[test]
fn eval_refuses_mixed_configurations() {
    let tmp = tempfile::tempdir().unwrap();
    let w = gen(&tmp.path().join("w"), &["--seed", "4", "--tasks", "3"]);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(mic_owned(&run_args(&w, &a, &["--seed", "1"])).status.success());
    assert!(mic_owned(&run_args(&w, &b, &["--seed", "2"])).status.success());
    let first = fs::read_dir(b.join("traces")).unwrap().next().unwrap().unwrap().path();
    fs::copy(&first, a.join("traces").join(first.file_name().unwrap())).unwrap();
    let (traces, tasks, world) = (a.join("traces"), w.join("tasks.json"), w.join("env.json"));
    let eval = |extra: &[&str]| {
        let mut args = vec!["eval", "--traces", s(&traces), "--tasks", s(&tasks), "--world", s(&world)];
        args.extend_from_slice(extra);
        mic(&args)
    };
    let refused = eval(&[]);
    assert_eq!(refused.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("--allow-mixed"));
    assert!(eval(&["--allow-mixed"]).status.success());
}

#[test]
fn eval_of_empty_directory_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let w = gen(&tmp.path().join("w"), &["--tasks", "2"]);
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = mic(&["eval", "--traces", s(&empty), "--tasks", s(&w.join("tasks.json")), "--world", s(&w.join("env.json"))]);
    assert_eq!(o.status.code(), Some(2));
}

const FIXTURE_WORLD: &str = r#"{
  "id": "fixture",
  "nodes": [
    {"id": "n0", "pos": [0.0, 0.0, 0.0], "room": "kitchen", "n_views": 4, "objects": []},
    {"id": "n1", "pos": [2.0, 0.0, 0.0], "room": "kitchen", "n_views": 4, "objects": []},
    {"id": "n2", "pos": [4.0, 0.0, 0.0], "room": "hallway", "n_views": 4, "objects": []},
    {"id": "n3", "pos": [6.0, 0.0, 0.0], "room": "bedroom", "n_views": 4,
     "objects": [{"id": "o1", "category": "lamp", "center": [6.0, 0.5, 0.0]}]}
  ],
  "edges": [["n0", "n1"], ["n1", "n2"], ["n2", "n3"]]
}"#;

const FIXTURE_TASKS: &str = r#"[
  {"id": "t1", "instruction": "Turn on the lamp", "target_object_category": "lamp",
   "goal_node_ids": ["n3"], "target_object_ids": ["o1"], "start_node": "n0", "max_steps": 15},
  {"id": "t2", "instruction": "Turn off the lamp", "target_object_category": "lamp",
   "goal_node_ids": ["n3"], "target_object_ids": ["o1"], "start_node": "n3", "max_steps": 15}
]"#;

const HEADER: &str = r#""seed":0,"config_hash":"h","mode":"hli","demo_id":null,"goal":null,"gosp":[]}"#;

#[test]
fn eval_matches_hand_computed_table() {
    let tmp = tempfile::tempdir().unwrap();
    let world = tmp.path().join("env.json");
    let tasks = tmp.path().join("tasks.json");
    fs::write(&world, FIXTURE_WORLD).unwrap();
    fs::write(&tasks, FIXTURE_TASKS).unwrap();
    let traces = tmp.path().join("traces");
    fs::create_dir(&traces).unwrap();
    // t1 walks the 6 m line and grounds the lamp: TL 6, success, SPL 1, RGS.
    fs::write(
        traces.join("t1.jsonl"),
        format!(
            "{{\"task_id\":\"t1\",{HEADER}\n{}\n",
            r#"{"path":["n0","n1","n2","n3"],"grounded_object_id":"o1","stop_reason":"policy_stop","final_instruction":"Turn on the lamp"}"#
        ),
    )
    .unwrap();
    // t2 starts on the goal and walks 4 m away: fails, but saw the lamp.
    fs::write(
        traces.join("t2.jsonl"),
        format!(
            "{{\"task_id\":\"t2\",{HEADER}\n{}\n",
            r#"{"path":["n3","n2","n1"],"grounded_object_id":null,"stop_reason":"max_steps","final_instruction":"Turn off the lamp"}"#
        ),
    )
    .unwrap();
    let report = tmp.path().join("report.csv");
    let o = mic(&["eval", "--traces", s(&traces), "--tasks", s(&tasks), "--world", s(&world), "--out", s(&report)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read_to_string(&report).unwrap(),
        "n,TL,OSR,SR,SPL,RGS,RGSPL\n2,5.00,100.00,50.00,50.00,50.00,50.00\n"
    );
}

#[test]
fn debug_prompt_bytes_match_goldens() {
    let hli = "Empty the washing machine on level one";
    let o = mic(&["debug", "prompt", "--stage", "gosp-recognition", "--instruction", hli]);
    assert_eq!(stdout(&o), golden("gosp_recognition.txt"));
    let o = mic(&["debug", "prompt", "--stage", "gosp-location", "--target", "washing machine"]);
    assert_eq!(stdout(&o), golden("gosp_location.txt"));
    let demo = golden_path("demo.json");
    let o = mic(&[
        "debug", "prompt", "--stage", "sodp", "--instruction", hli, "--room", "bedroom",
        "--objects", "bed, lamp, pillow", "--demos", s(&demo),
    ]);
    assert_eq!(stdout(&o), golden("sodp_step1.txt"));
    let o = mic(&[
        "debug", "prompt", "--stage", "sodp", "--instruction", hli, "--room", "hallway",
        "--objects", "rug,painting,clock", "--demos", s(&demo), "--step", "Exit the bedroom",
    ]);
    assert_eq!(stdout(&o), golden("sodp_step2.txt"));
}

#[test]
fn select_demo_on_single_demo_set() {
    let o = mic(&["debug", "select-demo", "--demos", s(&golden_path("demo.json")), "--instruction", "Find the cat"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("selected stairs_to_laundry "));
}

#[test]
fn noiseless_perception_equals_annotations() {
    let tmp = tempfile::tempdir().unwrap();
    let w = gen(&tmp.path().join("w"), &["--seed", "5", "--tasks", "1"]);
    let env: Value = serde_json::from_str(&fs::read_to_string(w.join("env.json")).unwrap()).unwrap();
    for node in env["nodes"].as_array().unwrap() {
        let id = node["id"].as_str().unwrap();
        let o = mic(&["debug", "perceive", "--world", s(&w.join("env.json")), "--node", id]);
        let out = stdout(&o);
        let json_end = out.rfind("\n}").unwrap() + 2;
        let percept: Value = serde_json::from_str(&out[..json_end]).unwrap();
        assert_eq!(percept["room"], node["room"]);
        let mut want: Vec<&str> = node["objects"].as_array().unwrap().iter().map(|o| o["category"].as_str().unwrap()).collect();
        let mut got: Vec<&str> = percept["objects"].as_array().unwrap().iter().map(|o| o.as_str().unwrap()).collect();
        want.sort();
        want.dedup();
        got.sort();
        assert_eq!(got, want, "{id}");
    }
}

#[test]
fn feature_perceiver_run() {
    let tmp = tempfile::tempdir().unwrap();
    let w = gen(&tmp.path().join("w"), &["--seed", "6", "--tasks", "4", "--features-dim", "48"]);
    let out = tmp.path().join("r");
    let features = w.join("features.bin");
    let o = mic_owned(&run_args(&w, &out, &["--perceiver", "features", "--features", s(&features)]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_dir(out.join("traces")).unwrap().count(), 4);
    let missing = mic_owned(&run_args(&w, &tmp.path().join("r2"), &["--perceiver", "features"]));
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn scripted_model_from_file() {
    let tmp = tempfile::tempdir().unwrap();
    let w = gen(&tmp.path().join("w"), &["--seed", "7", "--tasks", "3"]);
    let script = tmp.path().join("script.json");
    fs::write(&script, r#"[{"match": "I can see", "reply": "Look around"}]"#).unwrap();
    let out = tmp.path().join("r");
    let o = mic_owned(&run_args(&w, &out, &["--lm", "scripted", "--script", s(&script)]));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_dir(out.join("traces")).unwrap().next().unwrap().unwrap().path();
    let last = final_line(&trace);
    assert!(last["final_instruction"].as_str().unwrap().contains("Step 1: Look around."));
    let no_script = mic_owned(&run_args(&w, &tmp.path().join("r2"), &["--lm", "scripted"]));
    assert_eq!(no_script.status.code(), Some(2));
}

#[test]
fn unreachable_gateway_fails_episodes() {
    let tmp = tempfile::tempdir().unwrap();
    let w = gen(&tmp.path().join("w"), &["--seed", "8", "--tasks", "1"]);
    let out = tmp.path().join("r");
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let args = run_args(&w, &out, &["--lm", "gateway", "--mode", "hli_gosp"]);
    let o = Command::new(env!("CARGO_BIN_EXE_mic"))
        .args(&args)
        .env("MIC_LM_URL", format!("http://127.0.0.1:{port}"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_dir(out.join("traces")).unwrap().next().unwrap().unwrap().path();
    assert_eq!(final_line(&trace)["stop_reason"], "error");
    let no_url = mic_owned(&run_args(&w, &tmp.path().join("r2"), &["--lm", "gateway"]));
    assert_eq!(no_url.status.code(), Some(2));
}
