//! Subcommand bodies.

use std::path::{Path, PathBuf};

use serde::Serialize;
use vlnav::bev::{OccupancyGrid, SemanticGrid, ValueMap};
use vlnav::config::PipelineConfig;
use vlnav::metrics::{comparison_table, evaluate_batch, EpisodeInput, EvalReport};
use vlnav::orchestrator::{
    plan_to_goal, run_ablation, write_episode, ChatClient, CoarseFile, EpisodeResult,
    EpisodeStatus, LiveClient, LiveClientConfig, Mode, SceneContext, ScriptedClient,
    TrajectoryFile, ValueMapFile,
};
use vlnav::render::{render_map, Overlay};

use crate::inputs::{check_end, load_ready_scene, read_json, GroundTruth, Manifest};
use crate::{CliError, CliResult, ClientArgs, ClientKind};

#[derive(Serialize)]
struct GridFile<'a, T> {
    scene_id: &'a str,
    config_hash: &'a str,
    grid: &'a T,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("cannot write {}: {e}", path.display()))
}

fn write_compact<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn save_png(vm: &ValueMap, overlays: &[Overlay], path: &Path) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    render_map(vm, overlays)
        .save(path)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn scene_context(path: &Path, cfg: &PipelineConfig) -> CliResult<SceneContext> {
    let bundle = load_ready_scene(path)?;
    SceneContext::build(bundle, &cfg.map)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_config(dir: &Path, cfg: &PipelineConfig) -> CliResult<()> {
    write_text(&dir.join("config.json"), &(cfg.to_json() + "\n"))
}

pub fn build_map(scene: &Path, out: &Path, cfg: &PipelineConfig) -> CliResult<()> {
    let ctx = scene_context(scene, cfg)?;
    create_dir(out)?;
    let hash = cfg.hash();
    let id = ctx.bundle.scene_id.as_str();
    let vm = ctx.value_map(&ctx.all_drivable(), &cfg.map);
    write_compact::<GridFile<OccupancyGrid>>(
        &out.join("occupancy.json"),
        &GridFile {
            scene_id: id,
            config_hash: &hash,
            grid: &ctx.occupancy,
        },
    )?;
    write_compact::<GridFile<SemanticGrid>>(
        &out.join("semantic.json"),
        &GridFile {
            scene_id: id,
            config_hash: &hash,
            grid: &ctx.semantic,
        },
    )?;
    write_compact(
        &out.join("valuemap.json"),
        &ValueMapFile {
            scene_id: id.to_string(),
            config_hash: hash.clone(),
            value_map: vm.clone(),
        },
    )?;
    write_config(out, cfg)?;
    save_png(&vm, &[], &out.join("render.png"))?;
    for id in &ctx.unsupported {
        log::warn!("detection {id} has no LiDAR support and is left out of the maps");
    }
    println!(
        "{}: {}x{} cells at {} m, maps written to {}",
        ctx.bundle.scene_id,
        ctx.spec.rows,
        ctx.spec.cols,
        ctx.spec.resolution,
        out.display()
    );
    Ok(())
}

fn make_client(
    args: &ClientArgs,
    transcript: Option<&Path>,
    image_root: Option<PathBuf>,
) -> CliResult<Box<dyn ChatClient>> {
    match args.client {
        ClientKind::Scripted => {
            let path = transcript.ok_or_else(|| {
                CliError::Input("the scripted client needs a transcript (--transcript)".into())
            })?;
            if !path.is_file() {
                return Err(CliError::Input(format!(
                    "transcript {} not found",
                    path.display()
                )));
            }
            let c = ScriptedClient::from_file(path).map_err(|e| CliError::Input(e.to_string()))?;
            Ok(Box::new(c))
        }
        ClientKind::Live => {
            let c = LiveClient::new(LiveClientConfig {
                endpoint: args.endpoint.clone(),
                model: args.model.clone(),
                api_key_env: args.api_key_env.clone(),
                timeout_secs: args.timeout,
                image_root,
                ..LiveClientConfig::default()
            })
            .map_err(|e| CliError::Input(e.to_string()))?;
            Ok(Box::new(c))
        }
    }
}

fn status_line(r: &EpisodeResult) -> String {
    match &r.status {
        EpisodeStatus::Success => format!(
            "{} [{}]: success, {} poses, {} retries",
            r.scene_id,
            r.mode,
            r.final_trajectory.len(),
            r.retry_count
        ),
        EpisodeStatus::Failed { kind, reason } => {
            format!("{} [{}]: failed ({kind}): {reason}", r.scene_id, r.mode)
        }
    }
}

pub fn plan(
    scene: &Path,
    instruction: &str,
    mode: Mode,
    goal: Option<[f64; 2]>,
    client: &ClientArgs,
    out: &Path,
    cfg: &PipelineConfig,
) -> CliResult<()> {
    if goal.is_some() && mode != Mode::AstarOnly {
        return Err(CliError::Input(format!(
            "--goal is only accepted with --mode astar_only, not {mode}"
        )));
    }
    let ctx = scene_context(scene, cfg)?;
    let result = match goal {
        Some(g) => {
            let mut r = plan_to_goal(&ctx, g, cfg);
            r.instruction = instruction.to_string();
            r
        }
        None => {
            if instruction.trim().is_empty() {
                return Err(CliError::Input(
                    "--instruction is required unless --goal is given".into(),
                ));
            }
            let c = make_client(
                client,
                client.transcript.as_deref(),
                scene.parent().map(Path::to_path_buf),
            )?;
            run_ablation(&ctx, instruction, c.as_ref(), mode, cfg)
        }
    };
    write_episode(out, &result, &ctx, cfg).map_err(io_err(out))?;
    write_config(out, cfg)?;
    let line = status_line(&result);
    if result.status.is_success() {
        println!("{line}");
        Ok(())
    } else {
        Err(CliError::Runtime(line))
    }
}

fn episode_input<'a>(
    result: &'a EpisodeResult,
    task_type: &str,
    gt_end: &[f64],
    gt: Option<&'a [[f64; 2]]>,
    ctx: Option<&'a SceneContext>,
) -> EpisodeInput<'a> {
    let failure = match &result.status {
        EpisodeStatus::Success => None,
        EpisodeStatus::Failed { kind, reason } => Some(format!("{kind}: {reason}")),
    };
    EpisodeInput {
        scene_id: result.scene_id.clone(),
        task_type: task_type.to_string(),
        pred: failure.is_none().then_some(&result.final_trajectory),
        gt_trajectory: gt,
        gt_end: gt_end.to_vec(),
        occupancy: ctx.map(|c| &c.occupancy),
        failure,
    }
}

pub fn eval(
    preds: &[PathBuf],
    gts: &[PathBuf],
    scenes: &[PathBuf],
    out: &Path,
    cfg: &PipelineConfig,
) -> CliResult<()> {
    if preds.len() != gts.len() {
        return Err(CliError::Input(format!(
            "{} --pred files but {} --gt files",
            preds.len(),
            gts.len()
        )));
    }
    if !scenes.is_empty() && scenes.len() != preds.len() {
        return Err(CliError::Input(format!(
            "{} --scene files for {} episodes",
            scenes.len(),
            preds.len()
        )));
    }
    let mut runs = Vec::with_capacity(preds.len());
    for (p, g) in preds.iter().zip(gts) {
        let traj: TrajectoryFile = read_json(p, "trajectory")?;
        let gt: GroundTruth = read_json(g, "ground truth")?;
        check_end(&gt.gt_end, g)?;
        if traj.scene_id != gt.scene_id {
            log::warn!(
                "{} is for scene {} but {} is for {}",
                p.display(),
                traj.scene_id,
                g.display(),
                gt.scene_id
            );
        }
        runs.push((traj, gt));
    }
    let contexts = scenes
        .iter()
        .map(|s| scene_context(s, cfg))
        .collect::<CliResult<Vec<_>>>()?;
    let trajectories: Vec<_> = runs.iter().map(|(t, _)| t.trajectory()).collect();
    let inputs: Vec<EpisodeInput> = runs
        .iter()
        .zip(&trajectories)
        .enumerate()
        .map(|(i, ((t, gt), traj))| {
            let empty = traj.is_empty();
            EpisodeInput {
                scene_id: t.scene_id.clone(),
                task_type: gt.task_type.clone(),
                pred: (!empty).then_some(traj),
                gt_trajectory: gt.gt_trajectory.as_deref(),
                gt_end: gt.gt_end.clone(),
                occupancy: contexts.get(i).map(|c| &c.occupancy),
                failure: empty.then(|| "empty trajectory".to_string()),
            }
        })
        .collect();
    let report = evaluate_batch(&inputs, &cfg.eval);
    create_dir(out)?;
    write_text(&out.join("report.json"), &(report.to_json() + "\n"))?;
    let table = report.to_table();
    write_text(&out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn ablate(
    manifest: &Path,
    client: &ClientArgs,
    out: &Path,
    cfg: &PipelineConfig,
) -> CliResult<()> {
    let m = Manifest::load(manifest)?;
    // Every input is checked before the first episode runs.
    let mut clients = Vec::with_capacity(m.episodes.len());
    let mut contexts = Vec::with_capacity(m.episodes.len());
    for (i, e) in m.episodes.iter().enumerate() {
        let transcript = e.transcript.as_deref().or(client.transcript.as_deref());
        if client.client == ClientKind::Scripted && transcript.is_none() {
            return Err(CliError::Input(format!(
                "episode {i} ({}) has no transcript for the scripted client",
                e.scene.display()
            )));
        }
        clients.push(make_client(
            client,
            transcript,
            e.scene.parent().map(Path::to_path_buf),
        )?);
        contexts.push(scene_context(&e.scene, cfg)?);
    }

    create_dir(out)?;
    write_config(out, cfg)?;
    let mut results: Vec<Vec<EpisodeResult>> = vec![Vec::new(); Mode::ALL.len()];
    for (i, (e, ctx)) in m.episodes.iter().zip(&contexts).enumerate() {
        let dir = out.join(format!("{i:02}_{}", ctx.bundle.scene_id));
        let mut overlays = Vec::new();
        let mut full_map = None;
        for (k, mode) in Mode::ALL.into_iter().enumerate() {
            let r = run_ablation(ctx, &e.instruction, clients[i].as_ref(), mode, cfg);
            write_episode(&dir.join(mode.as_str()), &r, ctx, cfg).map_err(io_err(&dir))?;
            println!("{}", status_line(&r));
            if mode == Mode::Full {
                overlays.insert(0, Overlay::coarse(&r.coarse_trajectory));
                full_map = r.value_map.clone();
            }
            overlays.push(Overlay::mode(mode, &r.final_trajectory.positions_2d()));
            results[k].push(r);
        }
        let vm = full_map.unwrap_or_else(|| ctx.value_map(&ctx.all_drivable(), &cfg.map));
        save_png(&vm, &overlays, &dir.join("compare.png"))?;
    }

    let mut reports: Vec<(Mode, EvalReport)> = Vec::new();
    for (k, mode) in Mode::ALL.into_iter().enumerate() {
        let inputs: Vec<EpisodeInput> = results[k]
            .iter()
            .zip(&m.episodes)
            .zip(&contexts)
            .map(|((r, e), ctx)| {
                episode_input(
                    r,
                    &e.task_type,
                    &e.gt_end,
                    e.gt_trajectory.as_deref(),
                    Some(ctx),
                )
            })
            .collect();
        let report = evaluate_batch(&inputs, &cfg.eval);
        write_text(
            &out.join(format!("report_{}.json", mode.as_str())),
            &(report.to_json() + "\n"),
        )?;
        reports.push((mode, report));
    }
    let labelled: Vec<(&str, &EvalReport)> = reports.iter().map(|(m, r)| (m.label(), r)).collect();
    let table = comparison_table(&labelled);
    write_text(&out.join("comparison.txt"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn render(
    valuemap: Option<&Path>,
    scene: Option<&Path>,
    trajectories: &[PathBuf],
    coarse: &[PathBuf],
    out: &Path,
    cfg: &PipelineConfig,
) -> CliResult<()> {
    let vm = match (valuemap, scene) {
        (Some(p), _) => read_json::<ValueMapFile>(p, "value map")?.value_map,
        (None, Some(s)) => {
            let ctx = scene_context(s, cfg)?;
            ctx.value_map(&ctx.all_drivable(), &cfg.map)
        }
        (None, None) => return Err(CliError::Input("render needs --valuemap or --scene".into())),
    };
    if vm.cost.len() != vm.spec.len() {
        return Err(CliError::Input(format!(
            "value map has {} cells but its grid spec needs {}",
            vm.cost.len(),
            vm.spec.len()
        )));
    }
    let mut overlays = Vec::new();
    for p in coarse {
        let c: CoarseFile = read_json(p, "coarse trajectory")?;
        if c.points.is_empty() {
            log::warn!("{} has no points; skipped", p.display());
        } else {
            overlays.push(Overlay::coarse(&c.points));
        }
    }
    for p in trajectories {
        let t: TrajectoryFile = read_json(p, "trajectory")?;
        let pts = t.trajectory().positions_2d();
        if pts.is_empty() {
            log::warn!(
                "{} is an empty trajectory; rendering the map without it",
                p.display()
            );
            continue;
        }
        overlays.push(match t.mode.parse::<Mode>() {
            Ok(mode) => Overlay::mode(mode, &pts),
            Err(_) => Overlay::new(t.mode.clone(), [128, 0, 160], &pts),
        });
    }
    save_png(&vm, &overlays, out)?;
    println!("wrote {}", out.display());
    Ok(())
}
