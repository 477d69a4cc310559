use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use vlnav::synthetic::SyntheticScene;

const DET: &str = "```json\n{\"call\": \"det_object\"}\n```";

fn vlnav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vlnav"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Road with a parked car (id 1) at `car_x`, written with its transcript.
fn write_street(dir: &Path, id: &str, car_x: f64) -> (PathBuf, PathBuf) {
    let mut sc = SyntheticScene::new(id, [0.0, 0.0]);
    sc.region("road", [-2.0, -4.0], [car_x + 8.0, 4.0]);
    sc.obstacle("red car", [car_x, 2.5], [4.0, 2.0], 1.5);
    sc.obstacle("pole", [car_x / 2.0, 3.0], [0.6, 0.6], 2.0);
    let scene = dir.join(format!("{id}.json"));
    fs::write(&scene, sc.build().to_json()).unwrap();
    let plan = format!(
        "```json\n{{\"call\": \"plan\", \"segments\": [{{\"kind\": \"line\", \"from\": [0, 0], \"to\": [{}, -2]}}, {{\"kind\": \"to_nrp\", \"target_detection\": 1, \"region\": 0}}], \"regions\": [0]}}\n```",
        car_x / 2.0
    );
    let transcript = dir.join(format!("{id}_replies.json"));
    fs::write(
        &transcript,
        serde_json::to_string(&vec![DET.to_string(), plan]).unwrap(),
    )
    .unwrap();
    (scene, transcript)
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn assert_same_tree(a: &Path, b: &Path) {
    let (fa, fb) = (files_under(a), files_under(b));
    assert_eq!(fa, fb);
    for f in fa {
        assert!(
            fs::read(a.join(&f)).unwrap() == fs::read(b.join(&f)).unwrap(),
            "{} differs",
            f.display()
        );
    }
}

#[test]
fn build_map_writes_maps_and_render() {
    let tmp = TempDir::new().unwrap();
    let (scene, _) = write_street(tmp.path(), "street", 22.0);
    let out = tmp.path().join("maps");
    let o = vlnav(&["build-map", "--scene", s(&scene), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in [
        "occupancy.json",
        "semantic.json",
        "valuemap.json",
        "config.json",
        "render.png",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let vm: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("valuemap.json")).unwrap()).unwrap();
    let occ: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("occupancy.json")).unwrap()).unwrap();
    assert_eq!(vm["config_hash"], occ["config_hash"]);
    assert_eq!(vm["value_map"]["spec"], occ["grid"]["spec"]);
}

#[test]
fn build_map_matches_golden_files() {
    let tmp = TempDir::new().unwrap();
    let o = vlnav(&[
        "build-map",
        "--scene",
        s(&fixture("scene_min.json")),
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["occupancy.json", "semantic.json", "valuemap.json"] {
        let got = fs::read_to_string(tmp.path().join(f)).unwrap();
        let want = fs::read_to_string(fixture("golden_min").join(f)).unwrap();
        assert!(got == want, "{f} drifted from the golden copy");
    }
}

#[test]
fn scene_without_drivable_region_exits_2() {
    let tmp = TempDir::new().unwrap();
    let text = fs::read_to_string(fixture("scene_min.json")).unwrap();
    let scene = tmp.path().join("nodrive.json");
    fs::write(
        &scene,
        text.replace(
            "\"is_drivable_region\": true",
            "\"is_drivable_region\": false",
        ),
    )
    .unwrap();
    let o = vlnav(&[
        "build-map",
        "--scene",
        s(&scene),
        "--out",
        s(&tmp.path().join("m")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("NO_DRIVABLE_REGION"), "{}", stderr(&o));
}

#[test]
fn unreadable_inputs_exit_2() {
    let tmp = TempDir::new().unwrap();
    let o = vlnav(&[
        "build-map",
        "--scene",
        s(&tmp.path().join("nope.json")),
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(code(&o), 2);
    let bad_cfg = tmp.path().join("cfg.json");
    fs::write(&bad_cfg, r#"{"map": {"resolution": -1.0}}"#).unwrap();
    let o = vlnav(&[
        "build-map",
        "--scene",
        s(&fixture("scene_min.json")),
        "--out",
        s(tmp.path()),
        "--config",
        s(&bad_cfg),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn scripted_plan_is_byte_identical_across_runs() {
    let tmp = TempDir::new().unwrap();
    let (scene, replies) = write_street(tmp.path(), "street", 22.0);
    let run = |out: &Path| {
        vlnav(&[
            "plan",
            "--scene",
            s(&scene),
            "--instruction",
            "Stop beside the red car.",
            "--transcript",
            s(&replies),
            "--out",
            s(out),
        ])
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let oa = run(&a);
    assert_eq!(code(&oa), 0, "{}", stderr(&oa));
    assert_eq!(code(&run(&b)), 0);
    assert_same_tree(&a, &b);
    let ep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("episode.json")).unwrap()).unwrap();
    assert_eq!(ep["status"]["state"], "success");
    assert_eq!(ep["mode"], "opennav");
}

#[test]
fn scripted_plan_without_transcript_exits_2() {
    let tmp = TempDir::new().unwrap();
    let (scene, _) = write_street(tmp.path(), "street", 22.0);
    let o = vlnav(&[
        "plan",
        "--scene",
        s(&scene),
        "--instruction",
        "Go.",
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("transcript"), "{}", stderr(&o));
}

#[test]
fn unreachable_live_endpoint_fails_the_episode_with_exit_3() {
    let tmp = TempDir::new().unwrap();
    let (scene, _) = write_street(tmp.path(), "street", 22.0);
    let text = fs::read_to_string(&scene).unwrap();
    let bundle: serde_json::Value = serde_json::from_str(&text).unwrap();
    let image = tmp.path().join(bundle["image_path"].as_str().unwrap());
    fs::create_dir_all(image.parent().unwrap()).unwrap();
    fs::write(&image, b"not really a png").unwrap();
    let out = tmp.path().join("live");
    let o = Command::new(env!("CARGO_BIN_EXE_vlnav"))
        .args([
            "plan",
            "--scene",
            s(&scene),
            "--instruction",
            "Go.",
            "--client",
            "live",
            "--endpoint",
            "http://127.0.0.1:9/v1",
            "--timeout",
            "5",
            "--out",
            s(&out),
        ])
        .env("OPENAI_API_KEY", "test-key")
        .output()
        .unwrap();
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("ClientError"), "{}", stderr(&o));
    let ep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("episode.json")).unwrap()).unwrap();
    assert_eq!(ep["status"]["kind"], "ClientError");
}

#[test]
fn explicit_goal_needs_astar_only() {
    let tmp = TempDir::new().unwrap();
    let (scene, _) = write_street(tmp.path(), "street", 22.0);
    let out = tmp.path().join("goal");
    let o = vlnav(&[
        "plan",
        "--scene",
        s(&scene),
        "--mode",
        "astar_only",
        "--goal",
        "20,-2",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let t: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("trajectory.json")).unwrap()).unwrap();
    let last = t["poses"].as_array().unwrap().last().unwrap();
    assert!(
        (last[0].as_f64().unwrap() - 20.0).abs() < 0.2
            && (last[1].as_f64().unwrap() + 2.0).abs() < 0.2
    );
    let transcript = fs::read_to_string(out.join("transcript.json")).unwrap();
    assert_eq!(transcript.trim(), "[]");
    let o = vlnav(&[
        "plan",
        "--scene",
        s(&scene),
        "--mode",
        "opennav",
        "--goal",
        "20,-2",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn eval_scores_a_planned_trajectory() {
    let tmp = TempDir::new().unwrap();
    let (scene, _) = write_street(tmp.path(), "street", 22.0);
    let ep = tmp.path().join("goal");
    assert_eq!(
        code(&vlnav(&[
            "plan",
            "--scene",
            s(&scene),
            "--mode",
            "astar_only",
            "--goal",
            "20,-2",
            "--out",
            s(&ep)
        ])),
        0
    );
    let near = tmp.path().join("near.json");
    fs::write(
        &near,
        r#"{"scene_id": "street", "gt_end": [20.5, -2.0], "gt_trajectory": [[0, 0], [20.5, -2]]}"#,
    )
    .unwrap();
    let far = tmp.path().join("far.json");
    fs::write(
        &far,
        r#"{"scene_id": "street", "task_type": "object", "gt_end": [25.0, -2.0]}"#,
    )
    .unwrap();
    let out = tmp.path().join("report");
    let pred = ep.join("trajectory.json");
    let o = vlnav(&[
        "eval",
        "--pred",
        s(&pred),
        "--gt",
        s(&near),
        "--pred",
        s(&pred),
        "--gt",
        s(&far),
        "--scene",
        s(&scene),
        "--scene",
        s(&scene),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(r["aggregates"]["sr_text"], "1/2");
    assert_eq!(r["rows"][0]["success"], true);
    assert_eq!(r["rows"][1]["success"], false);
    assert!(r["rows"][0]["frechet"].as_f64().unwrap() < 2.0);
    assert!(r["rows"][1]["frechet"].is_null());
    assert_eq!(r["rows"][0]["collisions"], 0);
    assert!(fs::read_to_string(out.join("report.txt"))
        .unwrap()
        .contains("Total"));
    let o = vlnav(&[
        "eval",
        "--pred",
        s(&pred),
        "--gt",
        s(&near),
        "--gt",
        s(&far),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 2);
}

fn write_manifest(dir: &Path, with_transcripts: bool) -> PathBuf {
    let mut episodes = Vec::new();
    for (i, x) in [18.0, 22.0, 26.0].into_iter().enumerate() {
        let (scene, replies) = write_street(dir, &format!("street{i}"), x);
        let mut e = serde_json::json!({
            "scene": scene.file_name().unwrap().to_str().unwrap(),
            "instruction": "Pass the pole and stop beside the red car.",
            "gt_end": [x, 1.3],
            "gt_trajectory": [[0.0, 0.0], [x / 2.0, -2.0], [x, 1.3]],
        });
        if with_transcripts {
            e["transcript"] = replies.file_name().unwrap().to_str().unwrap().into();
        }
        episodes.push(e);
    }
    let path = dir.join("manifest.json");
    fs::write(
        &path,
        serde_json::json!({ "episodes": episodes }).to_string(),
    )
    .unwrap();
    path
}

#[test]
fn ablate_runs_every_mode_and_compares() {
    let tmp = TempDir::new().unwrap();
    let manifest = write_manifest(tmp.path(), true);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let o = vlnav(&["ablate", "--manifest", s(&manifest), "--out", s(&a)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let episodes = files_under(&a)
        .into_iter()
        .filter(|f| f.ends_with("episode.json"))
        .count();
    assert_eq!(episodes, 9);
    let table = fs::read_to_string(a.join("comparison.txt")).unwrap();
    for label in ["A*", "VLT-Code", "OpenNav"] {
        assert!(
            table.lines().any(|l| l.starts_with(label)),
            "{label} row missing:\n{table}"
        );
    }
    assert!(a.join("00_street0/compare.png").is_file());
    assert_eq!(
        code(&vlnav(&[
            "ablate",
            "--manifest",
            s(&manifest),
            "--out",
            s(&b)
        ])),
        0
    );
    assert_same_tree(&a, &b);
}

#[test]
fn ablate_without_transcripts_exits_2_before_running() {
    let tmp = TempDir::new().unwrap();
    let manifest = write_manifest(tmp.path(), false);
    let out = tmp.path().join("out");
    let o = vlnav(&["ablate", "--manifest", s(&manifest), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no transcript"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn render_overlays_and_tolerates_empty_trajectories() {
    let tmp = TempDir::new().unwrap();
    let manifest = write_manifest(tmp.path(), true);
    let out = tmp.path().join("abl");
    assert_eq!(
        code(&vlnav(&[
            "ablate",
            "--manifest",
            s(&manifest),
            "--out",
            s(&out)
        ])),
        0
    );
    let ep = out.join("01_street1");
    let png = tmp.path().join("fig.png");
    let mut args = vec![
        "render".to_string(),
        "--valuemap".into(),
        s(&ep.join("opennav/valuemap.json")).into(),
    ];
    for m in ["astar_only", "vlt_code", "opennav"] {
        args.extend([
            "--trajectory".into(),
            s(&ep.join(m).join("trajectory.json")).to_string(),
        ]);
    }
    args.extend([
        "--coarse".into(),
        s(&ep.join("opennav/coarse.json")).into(),
        "--out".into(),
        s(&png).into(),
    ]);
    let o = vlnav(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(png.is_file());

    let empty = tmp.path().join("empty.json");
    fs::write(
        &empty,
        r#"{"scene_id": "street1", "mode": "opennav", "config_hash": "", "poses": []}"#,
    )
    .unwrap();
    let png2 = tmp.path().join("map_only.png");
    let o = vlnav(&[
        "render",
        "--scene",
        s(&tmp.path().join("street1.json")),
        "--trajectory",
        s(&empty),
        "--out",
        s(&png2),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("empty trajectory"), "{}", stderr(&o));
    assert!(png2.is_file());
}
