//! Subcommand bodies. Everything returns the library's `Result`; the
//! binary maps error variants onto exit codes.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;
use sha2::{Digest, Sha256};

use stitchkit_core::anchors::{
    collect_states, kmeans, select_anchors, StateCorpus, KMEANS_MAX_ITERS,
};
use stitchkit_core::analysis::{
    collect_latents, distance_matrix, pairwise_distances, pca_project, regression_probe,
};
use stitchkit_core::checkpoint::{Checkpoint, CheckpointMeta};
use stitchkit_core::env::make_env;
use stitchkit_core::error::{Error, Result};
use stitchkit_core::policy::{Actor, AnchorSet};
use stitchkit_core::rl::{evaluate, init_sac, EpochRecord, TrainParams, Trainer};
use stitchkit_core::stitch::{few_shot_finetune, stitch_actor, EvalTable, StitchRequest};
use stitchkit_core::util::{atomic_write, mix_seed};

use crate::config::{preset, RunConfig};

pub fn load_config(path: Option<&Path>, preset_name: Option<&str>) -> Result<RunConfig> {
    match (path, preset_name) {
        (Some(p), None) => RunConfig::load(p),
        (None, Some(name)) => {
            let text = preset(name).ok_or_else(|| {
                Error::usage(format!(
                    "no preset named {name}; available: reach-plain, push-plain, \
                     push-modular, push-ablation, push-devin"
                ))
            })?;
            RunConfig::parse(text)
        }
        (Some(_), Some(_)) => Err(Error::usage("pass either --config or --preset, not both")),
        (None, None) => Err(Error::usage("pass a --config file or a --preset name")),
    }
}

/// Experiment directories are keyed by what produced them: first eight hex
/// digits of the hash of the run description, then the seed.
fn experiment_dir(out: &Path, description: &str, seed: u64) -> PathBuf {
    let digest = Sha256::digest(description.as_bytes());
    out.join(format!("{}-s{seed}", hex::encode(&digest[..4])))
}

/// Advisory guard against two processes writing one experiment directory.
/// Removed when the owning run finishes, even on error; only a killed
/// process leaves it behind.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::usage(format!(
                "{} exists; another run may own this directory (remove the file if it is stale)",
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn append_records(path: &Path, records: &[EpochRecord], written: usize) -> Result<usize> {
    let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    for r in &records[written..] {
        let line = serde_json::to_string(r)
            .map_err(|e| Error::usage(format!("metrics row does not serialize: {e}")))?;
        writeln!(file, "{line}")?;
    }
    Ok(records.len())
}

fn progress_line(r: &EpochRecord) -> String {
    format!(
        "epoch {:>4}  success {:.2}  touching {:.2}  alpha {:.3}",
        r.epoch, r.success_rate, r.touching_rate, r.alpha
    )
}

pub fn cmd_train(
    config: Option<&Path>,
    preset_name: Option<&str>,
    seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let mut cfg = load_config(config, preset_name)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let env = make_env(&cfg.env)?;
    let desc = cfg.arch.to_desc(&env);
    let anchors = match &cfg.paths.anchors {
        Some(p) => Some(AnchorSet::load(p)?),
        None => None,
    };

    let dir = experiment_dir(out, &cfg.canonical(), cfg.seed);
    let _lock = DirLock::acquire(&dir)?;
    println!("run {}", dir.display());
    atomic_write(&dir.join("config.toml"), cfg.canonical().as_bytes())?;

    let params = cfg.train_params();
    let epochs = params.epochs;
    let sac = init_sac(&desc, anchors, &params)?;
    let mut trainer = Trainer::new(&env, sac, params)?;

    let ckpt_path = dir.join("policy.ckpt");
    let metrics_path = dir.join("metrics.jsonl");
    // Reruns of an identical config are deterministic, so overwriting is
    // harmless; start the log empty rather than appending to an old one.
    atomic_write(&metrics_path, b"")?;

    // A snapshot before the first epoch means an aborted run still leaves
    // the last completed state on disk.
    Checkpoint::of_sac(&trainer.sac, CheckpointMeta::trained(&cfg.env, cfg.seed, 0))?
        .save(&ckpt_path)?;
    let mut written = 0;
    for epoch in 1..=epochs {
        trainer.run(1)?;
        Checkpoint::of_sac(&trainer.sac, CheckpointMeta::trained(&cfg.env, cfg.seed, epoch))?
            .save(&ckpt_path)?;
        if trainer.records.len() > written {
            written = append_records(&metrics_path, &trainer.records, written)?;
            println!("{}", progress_line(trainer.records.last().expect("just appended")));
        }
    }

    if let Some(r) = trainer.records.last() {
        println!(
            "final success {:.4}  touching {:.4}  ({} env steps)",
            r.success_rate,
            r.touching_rate,
            trainer.env_steps()
        );
    }
    println!("checkpoint {}", ckpt_path.display());
    Ok(())
}

pub fn cmd_collect_anchors(
    ckpts: &[PathBuf],
    envs: &[String],
    episodes: usize,
    k: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    if ckpts.is_empty() {
        return Err(Error::usage("collect-anchors needs at least one --ckpt"));
    }
    if !envs.is_empty() && envs.len() != ckpts.len() {
        return Err(Error::usage(format!(
            "{} --env values for {} checkpoints; give one per checkpoint or none",
            envs.len(),
            ckpts.len()
        )));
    }
    let mut merged: Option<StateCorpus> = None;
    for (i, path) in ckpts.iter().enumerate() {
        let ck = Checkpoint::load(path)?;
        let actor = ck.build_actor()?;
        let env_id = envs.get(i).cloned().unwrap_or_else(|| ck.meta.env_id.clone());
        let env = make_env(&env_id)?;
        let corpus = collect_states(&actor, &env, episodes, mix_seed(seed, i as u64))?;
        merged = Some(match merged {
            None => corpus,
            Some(m) => m.merge(corpus)?,
        });
    }
    let corpus = merged.expect("at least one checkpoint");
    let balanced = corpus.balanced_by_tag(seed);
    let matrix = balanced.to_matrix();
    let km = kmeans(matrix.view(), k, seed, KMEANS_MAX_ITERS)?;
    let anchors = select_anchors(&balanced, km.centroids.view())?;
    anchors.save(out)?;
    println!(
        "picked {k} anchors of dim {} from {} balanced states (inertia {:.4})",
        anchors.state_dim(),
        balanced.len(),
        km.inertia
    );
    println!("anchors {} {}", out.display(), &anchors.content_hash()[..8]);
    Ok(())
}

pub fn cmd_stitch(task: &Path, robot: &Path, env_id: &str, seed: u64, out: &Path) -> Result<()> {
    let req = StitchRequest {
        task_source: Checkpoint::load(task)?,
        robot_source: Checkpoint::load(robot)?,
        target_env: env_id.to_string(),
    };
    let env = make_env(env_id)?;
    let actor = stitch_actor(&req)?;
    if actor.task_dim() != env.task_dim() || actor.robot_dim() != env.robot_dim() {
        return Err(Error::incompatible(format!(
            "stitched policy reads state ({}, {}) but {env_id} provides ({}, {})",
            actor.task_dim(),
            actor.robot_dim(),
            env.task_dim(),
            env.robot_dim()
        )));
    }
    let ck = Checkpoint::of_actor(&actor, req.stitched_meta(seed));
    ck.save(out)?;
    println!(
        "stitched task half of {} with robot half of {} for {env_id}",
        task.display(),
        robot.display()
    );
    println!("checkpoint {} {}", out.display(), &ck.content_hash()[..8]);
    Ok(())
}

/// The table deliberately names only the environment, never the checkpoint:
/// evaluating a policy and evaluating its self-stitch must print the same
/// bytes.
fn eval_text(env_id: &str, episodes: usize, seeds: &[u64], table: &EvalTable) -> String {
    let mut s = format!("eval {env_id} episodes {episodes}\n");
    s.push_str("seed   success  touching\n");
    for (seed, row) in seeds.iter().zip(&table.rows) {
        s.push_str(&format!(
            "{seed:>4}   {:>7.4}  {:>8.4}\n",
            row.success_rate, row.touching_rate
        ));
    }
    s.push_str(&format!(
        "mean   {:>7.4}  {:>8.4}\n",
        table.success_mean, table.touching_mean
    ));
    s.push_str(&format!(
        " std   {:>7.4}  {:>8.4}\n",
        table.success_std, table.touching_std
    ));
    s
}

pub fn cmd_eval(
    ckpt: &Path,
    env_override: Option<&str>,
    episodes: usize,
    seeds: &[u64],
    out: Option<&Path>,
) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::usage("eval needs at least one seed"));
    }
    let ck = Checkpoint::load(ckpt)?;
    let actor = ck.build_actor()?;
    let env_id = env_override.unwrap_or(&ck.meta.env_id);
    let env = make_env(env_id)?;
    let rows = seeds
        .iter()
        .map(|&s| evaluate(&actor, &env, episodes, s))
        .collect::<Result<Vec<_>>>()?;
    let table = EvalTable::from_rows(rows)?;
    let text = eval_text(env_id, episodes, seeds, &table);
    print!("{text}");
    if let Some(p) = out {
        atomic_write(p, text.as_bytes())?;
    }
    Ok(())
}

/// What a fine-tuning run was made of, written next to its artifacts and
/// hashed into the directory name.
#[derive(Serialize)]
struct FinetuneRecord<'a> {
    env: &'a str,
    task_source: String,
    robot_source: String,
    warm_epochs: usize,
    train: &'a TrainParams,
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_finetune(
    task: &Path,
    robot: &Path,
    env_id: &str,
    epochs: Option<usize>,
    warm_epochs: usize,
    config: Option<&Path>,
    preset_name: Option<&str>,
    seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let req = StitchRequest {
        task_source: Checkpoint::load(task)?,
        robot_source: Checkpoint::load(robot)?,
        target_env: env_id.to_string(),
    };
    // Architecture and anchors come from the donors; a config here only
    // contributes cadence and SAC hyperparameters. Epoch count is always
    // the --epochs flag (default 30): fine-tuning budgets are short and
    // configs are written for full runs.
    let mut params = if config.is_some() || preset_name.is_some() {
        let cfg = load_config(config, preset_name)?;
        let mut p = cfg.train_params();
        p.epochs = 30;
        p
    } else {
        TrainParams {
            epochs: 30,
            ..TrainParams::default()
        }
    };
    if let Some(e) = epochs {
        params.epochs = e;
    }
    params.seed = seed.unwrap_or(0);

    let record = FinetuneRecord {
        env: env_id,
        task_source: req.task_source.content_hash(),
        robot_source: req.robot_source.content_hash(),
        warm_epochs,
        train: &params,
    };
    let record_toml = toml::to_string_pretty(&record)
        .map_err(|e| Error::usage(format!("run record does not serialize: {e}")))?;
    let dir = experiment_dir(out, &record_toml, params.seed);
    let _lock = DirLock::acquire(&dir)?;
    println!("run {}", dir.display());
    atomic_write(&dir.join("config.toml"), record_toml.as_bytes())?;

    let meta_seed = params.seed;
    let meta_epochs = params.epochs;
    let outcome = few_shot_finetune(&req, warm_epochs, params)?;

    let mut meta = req.stitched_meta(meta_seed);
    meta.epoch = meta_epochs;
    let ck = Checkpoint::of_sac(&outcome.sac, meta)?;
    let ckpt_path = dir.join("policy.ckpt");
    ck.save(&ckpt_path)?;
    let metrics_path = dir.join("metrics.jsonl");
    atomic_write(&metrics_path, b"")?;
    append_records(&metrics_path, &outcome.records, 0)?;
    for r in &outcome.records {
        println!("{}", progress_line(r));
    }
    if let Some(r) = outcome.records.last() {
        println!(
            "final success {:.4}  touching {:.4}  ({} env steps)",
            r.success_rate, r.touching_rate, outcome.env_steps
        );
    }
    println!("checkpoint {}", ckpt_path.display());
    Ok(())
}

fn companion(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("out");
    let ext = path
        .extension()
        .and_then(|s| s.to_str())
        .unwrap_or("csv");
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

pub fn cmd_analyze_latent(
    ckpt: &Path,
    env_override: Option<&str>,
    n_states: usize,
    pca_dims: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let ck = Checkpoint::load(ckpt)?;
    let actor = ck.build_actor()?;
    let env_id = env_override.unwrap_or(&ck.meta.env_id);
    let env = make_env(env_id)?;
    let dump = collect_latents(&actor, &env, n_states, seed)?;
    atomic_write(out, dump.to_csv().as_bytes())?;
    println!(
        "wrote {} latents of width {} to {}",
        dump.len(),
        dump.latents.ncols(),
        out.display()
    );
    if pca_dims == 0 {
        return Ok(());
    }
    let proj = pca_project(dump.latents.view(), pca_dims)?;
    let mut csv = String::new();
    for j in 0..pca_dims {
        csv.push_str(&format!("pc_{j},"));
    }
    csv.push_str("group\n");
    for (i, &g) in dump.groups.iter().enumerate() {
        for v in proj.y.row(i) {
            csv.push_str(&format!("{v},"));
        }
        csv.push_str(&format!("{g}\n"));
    }
    let pca_path = companion(out, "-pca");
    atomic_write(&pca_path, csv.as_bytes())?;
    match &proj.explained {
        Some(fracs) => {
            let parts: Vec<String> = fracs.iter().map(|f| format!("{f:.4}")).collect();
            println!("projection {}  explained {}", pca_path.display(), parts.join(" "));
        }
        None => println!(
            "projection {}  (latents carry no variance; projection is zero)",
            pca_path.display()
        ),
    }
    Ok(())
}

/// Probe states are whatever the first policy visits, so every policy in
/// the comparison is scored on one shared footing.
fn probe_states(actor: &Actor, env_id: &str, n_states: usize, seed: u64) -> Result<Array2<f64>> {
    let env = make_env(env_id)?;
    let dump = collect_latents(actor, &env, n_states, seed)?;
    let d = env.task_dim();
    let flat: Vec<f64> = dump.task_states.iter().flatten().copied().collect();
    Ok(Array2::from_shape_vec((dump.len(), d), flat).expect("uniform task dims"))
}

pub fn cmd_analyze_pairwise(
    ckpts: &[PathBuf],
    env_override: Option<&str>,
    n_states: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    if ckpts.len() < 2 {
        return Err(Error::usage("pairwise analysis needs at least two checkpoints"));
    }
    let loaded = ckpts
        .iter()
        .map(|p| Checkpoint::load(p))
        .collect::<Result<Vec<_>>>()?;
    let actors = loaded
        .iter()
        .map(Checkpoint::build_actor)
        .collect::<Result<Vec<_>>>()?;
    let env_id = env_override.unwrap_or(&loaded[0].meta.env_id);
    let states = probe_states(&actors[0], env_id, n_states, seed)?;

    let mut text = format!(
        "probe states: {n_states} visited by {} on {env_id}\n",
        ckpts[0].display()
    );
    if actors.len() == 2 {
        let report = pairwise_distances(&actors[0], &actors[1], states.view())?;
        text.push_str(&format!("{report}\n"));
    } else {
        let refs: Vec<&Actor> = actors.iter().collect();
        let m = distance_matrix(&refs, states.view())?;
        text.push_str("cosine distance\n");
        for i in 0..actors.len() {
            let row: Vec<String> = (0..actors.len()).map(|j| format!("{:.6}", m.cos[[i, j]])).collect();
            text.push_str(&format!("  {}\n", row.join("  ")));
        }
        text.push_str("l2 distance\n");
        for i in 0..actors.len() {
            let row: Vec<String> = (0..actors.len()).map(|j| format!("{:.6}", m.l2[[i, j]])).collect();
            text.push_str(&format!("  {}\n", row.join("  ")));
        }
    }
    print!("{text}");
    if let Some(p) = out {
        atomic_write(p, text.as_bytes())?;
    }
    Ok(())
}

pub fn cmd_analyze_regression(
    ckpt: &Path,
    env_override: Option<&str>,
    n_points: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let ck = Checkpoint::load(ckpt)?;
    let actor = ck.build_actor()?;
    let env_id = env_override.unwrap_or(&ck.meta.env_id);
    let env = make_env(env_id)?;
    let report = regression_probe(&actor, &env, n_points, seed)?;
    let text = report.to_string();
    print!("{text}");
    if let Some(p) = out {
        atomic_write(p, text.as_bytes())?;
    }
    Ok(())
}
