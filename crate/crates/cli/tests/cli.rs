use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hspace_core::store::VectorArchive;
use serde_json::{json, Value};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn hspace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hspace"))
        .args(args)
        .env_remove("HSPACE_TEXTGEN_URL")
        .env_remove("HSPACE_TEXTGEN_API_KEY")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

/// The structured error line on stderr.
fn error_line(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr
        .lines()
        .rev()
        .find(|l| l.starts_with("{\"error\""))
        .unwrap_or_else(|| panic!("no error line in {stderr}"));
    serde_json::from_str::<Value>(line).unwrap()["error"].clone()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(path: &Path, value: &Value) -> PathBuf {
    std::fs::write(path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
    path.to_path_buf()
}

fn backend(dir: &Path) -> PathBuf {
    let model = fixtures().join("planted/professions.json");
    write(
        &dir.join("backend.json"),
        &json!({
            "backend": "planted",
            "model": model,
            "adapter": "none",
            "num_inference_steps": 4,
            "guidance_scale": 1.0,
            "image_size": 32
        }),
    )
}

/// neutralize + sample over the profession pairs, 4 seeds.
fn sampled(dir: &Path) -> (PathBuf, PathBuf) {
    let out = dir.join("run");
    let corpus = fixtures().join("captions/profession_pairs.json");
    assert_eq!(code(&hspace(&["neutralize", "--corpus", s(&corpus), "--group-field", "--out", s(&out)])), 0);
    let pairing = out.join("pairing.json");
    let b = backend(dir);
    let r = hspace(&[
        "sample", "--backend-config", s(&b), "--prompts", s(&pairing), "--seeds", "4", "--images",
        s(&out.join("images")), "--out", s(&out),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    (out, pairing)
}

fn read(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn sample_writes_archive_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (out, pairing) = sampled(dir.path());
    let archive = VectorArchive::read(&out.join("archive")).unwrap();
    assert_eq!(archive.len(), 30 * 4);
    assert_eq!(archive.seeds(), vec![0, 1, 2, 3]);

    let m = read(&out.join("run-sample.json"));
    assert_eq!(m["command"], "sample");
    assert_eq!(m["exit_code"], 0);
    assert_eq!(m["config"]["seeds"], json!([0, 1, 2, 3]));
    let inputs = m["inputs"].as_array().unwrap();
    let pairing_hash = inputs.iter().find(|i| i["path"] == json!(pairing)).unwrap();
    let expected = hspace_core::ids::sha256_hex(&std::fs::read(&pairing).unwrap());
    assert_eq!(pairing_hash["sha256"], expected);
    assert!(m["outputs"].as_array().unwrap().iter().any(|o| o.as_str().unwrap().ends_with("archive.hvec")));
}

#[test]
fn bad_config_exits_2_naming_field() {
    let dir = tempfile::tempdir().unwrap();
    let b = write(
        &dir.path().join("b.json"),
        &json!({"backend": "planted", "model": "m", "adapter": "none", "num_inference_steps": 0,
                "guidance_scale": 1.0, "image_size": 32}),
    );
    let prompts = fixtures().join("captions/food.txt");
    let r = hspace(&["sample", "--backend-config", s(&b), "--prompts", s(&prompts), "--out", s(dir.path())]);
    assert_eq!(code(&r), 2);
    let e = error_line(&r);
    assert_eq!(e["kind"], "config");
    assert_eq!(e["exit_code"], 2);
    assert!(e["message"].as_str().unwrap().contains("num_inference_steps"), "{e}");

    let c = write(&dir.path().join("c.json"), &json!({"prompts_file": prompts, "workerz": 2}));
    let r = hspace(&["sample", "--config", s(&c), "--out", s(dir.path())]);
    assert_eq!(code(&r), 2);
    assert!(error_line(&r)["message"].as_str().unwrap().contains("workerz"));
    // A failed run still leaves its manifest.
    assert_eq!(read(&dir.path().join("run-sample.json"))["exit_code"], 2);
}

#[test]
fn missing_weights_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let b = write(
        &dir.path().join("b.json"),
        &json!({"backend": "toy-lcm", "model": "toy/ldm-absent", "adapter": "toy/lcm-lora-mini",
                "num_inference_steps": 4, "guidance_scale": 1.0, "image_size": 64}),
    );
    let prompts = fixtures().join("captions/food.txt");
    let r = hspace(&["sample", "--backend-config", s(&b), "--prompts", s(&prompts), "--seeds", "2", "--out", s(dir.path())]);
    assert_eq!(code(&r), 3);
    assert_eq!(error_line(&r)["kind"], "load");
}

#[test]
fn compare_outputs_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (out, pairing) = sampled(dir.path());
    let archive = out.join("archive");
    let r = hspace(&["compare", "--archive", s(&archive), "--pairing", s(&pairing), "--out", s(&out)]);
    assert_eq!(code(&r), 0);
    let gaps = read(&out.join("gaps.json"));
    assert_eq!(gaps["reports"].as_array().unwrap().len(), 20);
    assert_eq!(gaps["differences"].as_array().unwrap().len(), 10);
    assert!(std::fs::read_to_string(out.join("gaps_summary.csv")).unwrap().starts_with("group,concept,mean,std,n"));

    // Drop seed 2 of the female pilot.
    let full = VectorArchive::read(&archive).unwrap();
    let kept = full
        .vectors()
        .iter()
        .filter(|h| !(h.prompt_id == "female-pilot" && h.seed == 2))
        .cloned()
        .collect();
    let broken = dir.path().join("broken");
    VectorArchive::from_parts(full.config().clone(), full.prompts().to_vec(), kept)
        .unwrap()
        .write(&broken)
        .unwrap();
    let r = hspace(&["compare", "--archive", s(&broken), "--pairing", s(&pairing), "--out", s(&dir.path().join("b"))]);
    assert_eq!(code(&r), 4);
    let msg = error_line(&r)["message"].as_str().unwrap().to_string();
    assert!(msg.contains("female-pilot") && msg.contains("seed 2"), "{msg}");

    let empty = write(&dir.path().join("empty.json"), &json!([]));
    let r = hspace(&["compare", "--archive", s(&archive), "--pairing", s(&empty), "--out", s(&dir.path().join("e"))]);
    assert_eq!(code(&r), 2);
}

#[test]
fn rank_single_seed_and_missing_anchor() {
    let dir = tempfile::tempdir().unwrap();
    let b = backend(dir.path());
    let prompts = fixtures().join("captions/profession_pairs.json");
    let out = dir.path().join("r");
    assert_eq!(
        code(&hspace(&["sample", "--backend-config", s(&b), "--prompts", s(&prompts), "--seeds", "1", "--out", s(&out)])),
        0
    );
    let archive = out.join("archive");
    let r = hspace(&[
        "rank", "--archive", s(&archive), "--anchor-a", "a photo of a male pilot", "--anchor-b", "female-pilot",
        "--out", s(&out),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let doc = read(&out.join("rankings.json"));
    let entries = doc["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 18);
    assert!(entries.iter().all(|e| e["std"] == 0.0));
    assert!(std::fs::read_to_string(out.join("ranking.csv")).unwrap().starts_with("rank,prompt_id"));

    let r = hspace(&["rank", "--archive", s(&archive), "--anchor-a", "nobody", "--anchor-b", "female-pilot", "--out", s(&out)]);
    assert_eq!(code(&r), 4);
}

#[test]
fn cluster_summaries_degrade_without_service() {
    let dir = tempfile::tempdir().unwrap();
    let (out, _) = sampled(dir.path());
    let archive = out.join("archive");
    let cl = dir.path().join("cl");
    let r = hspace(&[
        "cluster", "--archive", s(&archive), "--perplexity", "5", "--min-cluster-size", "3", "--summarize", "--out",
        s(&cl),
    ]);
    assert_eq!(code(&r), 0);
    assert!(String::from_utf8_lossy(&r.stderr).contains("WARN"));
    let report = read(&cl.join("cluster_report.json"));
    assert!(report["clusters"].as_array().unwrap().iter().all(|c| c["summary"].is_null()));
    assert!(cl.join("cluster_report.md").is_file());
    assert!(cl.join("cluster_map.json").is_file());

    // 30 points cannot support perplexity 30.
    let r = hspace(&["cluster", "--archive", s(&archive), "--out", s(&dir.path().join("c2"))]);
    assert_eq!(code(&r), 2);
}

#[test]
fn condition_images() {
    let dir = tempfile::tempdir().unwrap();
    let (out, _) = sampled(dir.path());
    let cl = dir.path().join("cl");
    let archive = out.join("archive");
    let r = hspace(&["cluster", "--archive", s(&archive), "--perplexity", "5", "--min-cluster-size", "3", "--out", s(&cl)]);
    assert_eq!(code(&r), 0);
    let ids: Vec<i64> = serde_json::from_value(read(&cl.join("cluster_map.json"))["cluster_ids"].clone()).unwrap();
    assert!(ids.len() >= 2, "{ids:?}");
    let map = cl.join("cluster_map.json");
    let c = dir.path().join("cond");

    let one = hspace(&["condition", "--map", s(&map), "--clusters", "0", "--prompt", "a photo of food", "--seed", "1", "--out", s(&c)]);
    assert_eq!(code(&one), 0, "{}", String::from_utf8_lossy(&one.stderr));
    assert!(c.join("condition_0_seed1_scale1.png").is_file());
    let two = hspace(&[
        "condition", "--map", s(&map), "--clusters", "0,1", "--prompt", "a photo of food", "--seed", "1", "--out", s(&c),
    ]);
    assert_eq!(code(&two), 0);
    let a = std::fs::read(c.join("condition_0_seed1_scale1.png")).unwrap();
    let b = std::fs::read(c.join("condition_0+1_seed1_scale1.png")).unwrap();
    assert_ne!(a, b);

    let bad = hspace(&["condition", "--map", s(&map), "--clusters", "99", "--prompt", "x", "--seed", "1", "--out", s(&c)]);
    assert_eq!(code(&bad), 4);
}

fn scores(images: &Path, female: impl Fn(&str) -> f64) -> Value {
    let mut table = serde_json::Map::new();
    for entry in std::fs::read_dir(images).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        let stem = name.trim_end_matches(".png").to_string();
        let f = female(&stem);
        table.insert(stem, json!({"a photo of a man": 0.0, "a photo of a woman": f}));
    }
    Value::Object(table)
}

#[test]
fn validate_reports_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (out, _) = sampled(dir.path());
    let images = out.join("images");
    let table = write(&dir.path().join("scores.json"), &scores(&images, |stem| if stem.ends_with("seed0") { 1.0 } else { -1.0 }));
    let v = dir.path().join("v");
    let r = hspace(&[
        "validate", "--images", s(&images), "--scorer-fixture", s(&table), "--archive", s(&out.join("archive")),
        "--neutral-only", "--out", s(&v),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let csv = std::fs::read_to_string(v.join("outcome_table.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "group,percent,count,gap_difference");
    assert_eq!(lines.count(), 10);
    assert!(csv.contains("pilot,25.00,4,"));

    // Two groups only: correlation omitted with a warning.
    let groups = write(
        &dir.path().join("groups.json"),
        &json!(std::fs::read_dir(&images).unwrap().map(|e| {
            let n = e.unwrap().file_name().into_string().unwrap();
            let id = n.split("__").next().unwrap().to_string();
            let g = if id.len() % 2 == 0 { "even" } else { "odd" };
            (id, g)
        }).collect::<std::collections::BTreeMap<_, _>>()),
    );
    let r = hspace(&["validate", "--images", s(&images), "--scorer-fixture", s(&table), "--groups", s(&groups), "--out", s(&v)]);
    assert_eq!(code(&r), 0);
    assert!(String::from_utf8_lossy(&r.stderr).contains("WARN"));
    let report = &read(&v.join("outcomes.json"))["report"];
    assert!(report["pearson"].is_null() && report["spearman"].is_null());

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let r = hspace(&["validate", "--images", s(&empty), "--scorer-fixture", s(&table), "--out", s(&v)]);
    assert_eq!(code(&r), 2);
}

fn snapshot(paths: &[PathBuf]) -> Vec<Vec<u8>> {
    paths.iter().map(|p| std::fs::read(p).unwrap()).collect()
}

#[test]
fn replay_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (out, pairing) = sampled(dir.path());
    let r = hspace(&["compare", "--archive", s(&out.join("archive")), "--pairing", s(&pairing), "--out", s(&out)]);
    assert_eq!(code(&r), 0);

    for command in ["sample", "compare"] {
        let manifest_path = out.join(format!("run-{command}.json"));
        let saved = dir.path().join(format!("{command}.manifest.json"));
        std::fs::copy(&manifest_path, &saved).unwrap();
        let manifest = read(&saved);
        let outputs: Vec<PathBuf> = manifest["outputs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|o| PathBuf::from(o.as_str().unwrap()))
            .filter(|p| p.is_file())
            .collect();
        assert!(!outputs.is_empty());
        let before = snapshot(&outputs);
        for p in &outputs {
            std::fs::remove_file(p).unwrap();
        }
        assert_eq!(code(&hspace(&["replay", s(&saved)])), 0);
        assert_eq!(snapshot(&outputs), before, "{command} replay differs");
        let again = read(&manifest_path);
        assert_eq!(again["config"], manifest["config"]);
        assert_eq!(again["inputs"], manifest["inputs"]);
    }
}

#[test]
fn unparseable_args_exit_2() {
    assert_eq!(code(&hspace(&["sample", "--workers", "many"])), 2);
    assert_eq!(code(&hspace(&["--help"])), 0);
}
