//! Subcommand implementations. Every run archives its resolved config next
//! to its outputs, and artifacts are chained by config hashes: datasets
//! carry the hash of their generation config, checkpoints carry the hashes
//! of the dataset and experiment that produced them. Mismatched chains are
//! refused unless `--force` is given.

use crate::config::ExperimentConfig;
use crate::CliError;
use procplan::envgen::{Dataset, Trajectory};
use procplan::eval::{
    compounding_error, csv_report, plan_episodes, random_episodes, retrieval_episodes, summarize,
    table_report, Decoder, MetricsReport, RolloutPolicy,
};
use procplan::model::{Checkpoint, CoreKind, ModelBundle};
use procplan::planner::{discrepancy_gap, BeamConfig};
use procplan::train::{fresh_checkpoint, loss_curve_csv, train, TrainOutcome};
use std::fs;
use std::path::{Path, PathBuf};

fn dataset_path(cfg: &ExperimentConfig, over: &Option<PathBuf>) -> PathBuf {
    over.clone().unwrap_or_else(|| cfg.out_dir.join("dataset.json"))
}

fn checkpoint_path(cfg: &ExperimentConfig, over: &Option<PathBuf>) -> PathBuf {
    over.clone().unwrap_or_else(|| cfg.out_dir.join("checkpoint.best.json"))
}

fn archive_config(cfg: &ExperimentConfig, name: &str) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(cfg).expect("config serializes"))?;
    Ok(())
}

/// A dataset must agree with its own embedded generation config.
fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    let dataset = Dataset::load(path)?;
    let expect = dataset.header.config.config_hash();
    if dataset.header.config_hash != expect {
        return Err(CliError::Data(format!(
            "dataset {} fails its integrity check: header hash {} vs recomputed {}",
            path.display(),
            dataset.header.config_hash,
            expect
        )));
    }
    Ok(dataset)
}

fn check_checkpoint_lineage(
    ckpt: &Checkpoint,
    dataset: &Dataset,
    force: bool,
) -> Result<(), CliError> {
    let model = &ckpt.model.config;
    let data = &dataset.header.config;
    if model.num_actions != data.num_actions {
        return Err(CliError::Config(format!(
            "checkpoint model.num_actions {} != dataset num_actions {}",
            model.num_actions, data.num_actions
        )));
    }
    if model.obs_dim != data.obs_dim {
        return Err(CliError::Config(format!(
            "checkpoint model.obs_dim {} != dataset obs_dim {}",
            model.obs_dim, data.obs_dim
        )));
    }
    if ckpt.dataset_hash != dataset.header.config_hash {
        let msg = format!(
            "checkpoint was trained on dataset {} but this dataset is {}",
            ckpt.dataset_hash, dataset.header.config_hash
        );
        if force {
            eprintln!("warning: {msg} (continuing under --force)");
        } else {
            return Err(CliError::Data(format!("{msg}; pass --force to evaluate anyway")));
        }
    }
    Ok(())
}

pub fn generate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let dataset = procplan::envgen::generate_dataset(&cfg.dataset)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("dataset.json");
    dataset.save(&path)?;
    archive_config(cfg, "config.generate.json")?;
    println!(
        "dataset {} | {} train + {} test trajectories, {} states, {} actions, horizons {:?}",
        path.display(),
        dataset.train().len(),
        dataset.test().len(),
        cfg.dataset.num_states,
        cfg.dataset.num_actions,
        cfg.dataset.horizons,
    );
    println!("config hash {}", dataset.header.config_hash);
    Ok(())
}

pub fn train_cmd(
    cfg: &ExperimentConfig,
    dataset_over: &Option<PathBuf>,
    resume: &Option<PathBuf>,
    force: bool,
) -> Result<(), CliError> {
    let path = dataset_path(cfg, dataset_over);
    let dataset = load_dataset(&path)?;
    let expect = cfg.dataset.config_hash();
    if dataset.header.config_hash != expect {
        let msg = format!(
            "dataset {} was generated from a different config (hash {} vs resolved {})",
            path.display(),
            dataset.header.config_hash,
            expect
        );
        if force {
            eprintln!("warning: {msg} (continuing under --force)");
        } else {
            return Err(CliError::Data(format!("{msg}; pass --force to train anyway")));
        }
    }

    let start = match resume {
        Some(ckpt_path) => {
            let ckpt = Checkpoint::load(ckpt_path)?;
            check_checkpoint_lineage(&ckpt, &dataset, force)?;
            println!("resuming from epoch {}", ckpt.epoch);
            ckpt
        }
        None => fresh_checkpoint(
            ModelBundle::init(cfg.model.clone())?,
            dataset.header.config_hash.clone(),
            cfg.hash(),
        ),
    };

    let outcome: TrainOutcome = train(start, &dataset, &cfg.train)?;
    fs::create_dir_all(&cfg.out_dir)?;
    outcome.best.save(&cfg.out_dir.join("checkpoint.best.json"))?;
    outcome.last.save(&cfg.out_dir.join("checkpoint.last.json"))?;
    fs::write(cfg.out_dir.join("loss_curve.csv"), loss_curve_csv(&outcome.history))?;
    archive_config(cfg, "config.train.json")?;

    for s in &outcome.history {
        println!("epoch {:>4}  train {:.6}  test {:.6}", s.epoch, s.train_loss, s.test_loss);
    }
    println!(
        "best test loss {:.6} at epoch {} | {} parameters | checkpoints in {}",
        outcome.best.best_test_loss,
        outcome.best.epoch,
        outcome.best.model.num_params(),
        cfg.out_dir.display()
    );
    Ok(())
}

fn labeled_model_report(
    model: &ModelBundle,
    dataset: &Dataset,
    episodes: &[&Trajectory],
    decoder: &Decoder,
    label: &str,
    seed: u64,
) -> Result<MetricsReport, CliError> {
    let records = plan_episodes(model, &dataset.graph, episodes, decoder)?;
    let mut report = summarize(&records, &dataset.graph, label, seed)?;
    report.num_params = Some(model.num_params());
    Ok(report)
}

pub fn eval_cmd(
    cfg: &ExperimentConfig,
    dataset_over: &Option<PathBuf>,
    checkpoint_over: &Option<PathBuf>,
    force: bool,
) -> Result<(), CliError> {
    let dataset = load_dataset(&dataset_path(cfg, dataset_over))?;
    let ckpt = Checkpoint::load(&checkpoint_path(cfg, checkpoint_over))?;
    check_checkpoint_lineage(&ckpt, &dataset, force)?;

    let episodes: Vec<&Trajectory> = dataset.test().iter().collect();
    if episodes.is_empty() {
        return Err(CliError::Data("dataset has no held-out trajectories".into()));
    }
    let seed = cfg.train.seed;

    let beam_label = format!("planner-beam-k{}-n{}", cfg.beam.width, cfg.beam.buffer);
    let reports = vec![
        labeled_model_report(&ckpt.model, &dataset, &episodes, &Decoder::Greedy, "planner-greedy", seed)?,
        labeled_model_report(
            &ckpt.model,
            &dataset,
            &episodes,
            &Decoder::Beam(cfg.beam.clone()),
            &beam_label,
            seed,
        )?,
        summarize(
            &random_episodes(dataset.header.config.num_actions, &episodes, seed),
            &dataset.graph,
            "random",
            seed,
        )?,
        summarize(
            &retrieval_episodes(dataset.train(), &episodes)?,
            &dataset.graph,
            "retrieval",
            seed,
        )?,
    ];

    let refs: Vec<&MetricsReport> = reports.iter().collect();
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("report.csv"), csv_report(&refs))?;
    let table = table_report(&refs);
    fs::write(cfg.out_dir.join("report.txt"), &table)?;
    archive_config(cfg, "config.eval.json")?;
    print!("{table}");
    println!("reports written to {}", cfg.out_dir.display());
    Ok(())
}

pub fn plan_cmd(
    cfg: &ExperimentConfig,
    dataset_over: &Option<PathBuf>,
    checkpoint_over: &Option<PathBuf>,
    index: usize,
    use_beam: bool,
    force: bool,
) -> Result<(), CliError> {
    let dataset = load_dataset(&dataset_path(cfg, dataset_over))?;
    let ckpt = Checkpoint::load(&checkpoint_path(cfg, checkpoint_over))?;
    check_checkpoint_lineage(&ckpt, &dataset, force)?;

    let test = dataset.test();
    let traj = test.get(index).ok_or_else(|| {
        CliError::Data(format!("--index {index} out of range: {} held-out episodes", test.len()))
    })?;
    let decoder = if use_beam { Decoder::Beam(cfg.beam.clone()) } else { Decoder::Greedy };
    let records = plan_episodes(&ckpt.model, &dataset.graph, &[traj], &decoder)?;
    let rec = &records[0];

    println!(
        "episode {} | task {} | {} -> {} | horizon {} | {}",
        traj.id,
        traj.task,
        rec.start_state,
        rec.goal_state,
        rec.horizon,
        if use_beam {
            format!("beam k={} N={}", cfg.beam.width, cfg.beam.buffer)
        } else {
            "greedy".into()
        }
    );
    // Re-decode greedily for the per-step logits view; the table is about
    // inspecting discrepancies, which are defined per chosen step.
    let hyp = match &decoder {
        Decoder::Greedy => procplan::planner::greedy_plan(
            &ckpt.model,
            &traj.observations[0],
            traj.goal_observation(),
            traj.horizon(),
            dataset.graph.admissible_actions(traj.task),
        )?,
        Decoder::Beam(beam) => procplan::planner::beam_search(
            &ckpt.model,
            &traj.observations[0],
            traj.goal_observation(),
            traj.horizon(),
            beam,
            dataset.graph.admissible_actions(traj.task),
        )?,
    };
    println!("{:>4} {:>8} {:>8} {:>12}", "t", "chosen", "expert", "gap");
    for (step, expert) in hyp.to_plan().iter().zip(&traj.actions) {
        println!(
            "{:>4} {:>8} {:>8} {:>12.4}",
            step.t,
            step.action_id,
            expert,
            discrepancy_gap(&step.action_logits, step.action_id)
        );
    }
    let interactive = rec.interactive_success(&dataset.graph);
    println!(
        "offline match: {} | reaches goal: {}",
        if rec.offline_success() { "yes" } else { "no" },
        if interactive { "yes" } else { "no" }
    );
    Ok(())
}

pub fn ablate_cmd(
    cfg: &ExperimentConfig,
    dataset_over: &Option<PathBuf>,
    checkpoint_over: &Option<PathBuf>,
    compounding: bool,
    t_max: Option<usize>,
    force: bool,
) -> Result<(), CliError> {
    let dataset = load_dataset(&dataset_path(cfg, dataset_over))?;
    let ckpt = Checkpoint::load(&checkpoint_path(cfg, checkpoint_over))?;
    check_checkpoint_lineage(&ckpt, &dataset, force)?;
    let episodes: Vec<&Trajectory> = dataset.test().iter().collect();
    if episodes.is_empty() {
        return Err(CliError::Data("dataset has no held-out trajectories".into()));
    }
    let seed = cfg.train.seed;

    let mut reports = vec![labeled_model_report(
        &ckpt.model,
        &dataset,
        &episodes,
        &Decoder::Greedy,
        "planner-greedy",
        seed,
    )?];
    for k in 1..=3usize {
        let beam = BeamConfig { width: k, ..cfg.beam.clone() };
        let label = format!("planner-beam-k{}-n{}", k, beam.buffer);
        reports.push(labeled_model_report(
            &ckpt.model,
            &dataset,
            &episodes,
            &Decoder::Beam(beam),
            &label,
            seed,
        )?);
    }
    let sweep: Vec<String> = reports
        .iter()
        .map(|r| format!("{} {:.4}", r.method, r.overall.success_interactive))
        .collect();
    println!("observation (not asserted): interactive success across beam widths: {}", sweep.join(", "));

    if compounding {
        let t_max = match t_max {
            Some(t) => t,
            None => episodes.iter().map(|t| t.horizon()).max().unwrap(),
        };
        let eligible: Vec<&Trajectory> =
            episodes.iter().copied().filter(|t| t.horizon() >= t_max).collect();
        if eligible.is_empty() {
            return Err(CliError::Data(format!(
                "no held-out trajectory reaches horizon {t_max} for the compounding study"
            )));
        }
        reports[0].compounding =
            compounding_error(&ckpt.model, &eligible, t_max, &RolloutPolicy::Greedy)?;

        // Identical protocol, sequence cores swapped for 2-layer MLPs.
        let mut fc_model_cfg = cfg.model.clone();
        fc_model_cfg.core = CoreKind::Mlp;
        let fc_start = fresh_checkpoint(
            ModelBundle::init(fc_model_cfg)?,
            dataset.header.config_hash.clone(),
            cfg.hash(),
        );
        println!("training the fully-connected ablation ({} epochs)...", cfg.train.epochs);
        let fc = train(fc_start, &dataset, &cfg.train)?;
        fc.best.save(&cfg.out_dir.join("checkpoint.fc.json"))?;
        let mut fc_report = labeled_model_report(
            &fc.best.model,
            &dataset,
            &episodes,
            &Decoder::Greedy,
            "fc-greedy",
            seed,
        )?;
        fc_report.compounding =
            compounding_error(&fc.best.model, &eligible, t_max, &RolloutPolicy::Greedy)?;
        reports.push(fc_report);
    }

    let refs: Vec<&MetricsReport> = reports.iter().collect();
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("ablation.csv"), csv_report(&refs))?;
    let table = table_report(&refs);
    fs::write(cfg.out_dir.join("ablation.txt"), &table)?;
    archive_config(cfg, "config.ablate.json")?;
    print!("{table}");
    println!("ablation reports written to {}", cfg.out_dir.display());
    Ok(())
}
