use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

use kghop_core::kg::KnowledgeGraph;
use kghop_core::policy::{PolicyConfig, PolicyNetwork};
use kghop_core::rng::Rng;
use kghop_core::trainer::{train, BaselineMode, TrainConfig};
use kghop_core::Real;

use crate::commands::{check_precision, parse_anticipation, parse_gold_mask};
use crate::config::{AgentRunConfig, DataConfig, CONFIG_FILE};
use crate::{artifacts, io, TrainAgentArgs};

pub fn run(args: TrainAgentArgs) -> Result<()> {
    let cfg = resolve_config(&args)?;
    check_precision(&cfg.precision)?;
    fs::create_dir_all(&args.out)?;

    let grid = grid_cells(&args, &cfg);
    match grid {
        None => {
            io::write_json(&args.out.join(CONFIG_FILE), &cfg)?;
            let hits = dispatch(&cfg, &args.out)?;
            if let Some((epoch, value)) = hits {
                println!("best valid Hits@10 {value:.4} at epoch {epoch}");
            }
            Ok(())
        }
        Some(cells) => run_grid(&cfg, cells, &args.out),
    }
}

/// Cartesian grid over completion hyperparameters, when any grid flag is
/// present. Selection is by valid Hits@10, so evaluation must be enabled.
fn grid_cells(args: &TrainAgentArgs, cfg: &AgentRunConfig) -> Option<Vec<(f64, usize, usize)>> {
    if args.grid_alpha.is_empty() && args.grid_max_added.is_empty() && args.grid_tails.is_empty() {
        return None;
    }
    let alphas = if args.grid_alpha.is_empty() {
        vec![cfg.policy.completion.alpha]
    } else {
        args.grid_alpha.clone()
    };
    let caps = if args.grid_max_added.is_empty() {
        vec![cfg.policy.completion.max_added]
    } else {
        args.grid_max_added.clone()
    };
    let tails = if args.grid_tails.is_empty() {
        vec![cfg.policy.completion.tails_per_relation]
    } else {
        args.grid_tails.clone()
    };
    let mut cells = Vec::new();
    for &a in &alphas {
        for &m in &caps {
            for &k in &tails {
                cells.push((a, m, k));
            }
        }
    }
    Some(cells)
}

fn run_grid(base: &AgentRunConfig, cells: Vec<(f64, usize, usize)>, out: &Path) -> Result<()> {
    if base.train.eval_every == 0 {
        bail!("grid search selects by valid Hits@10; set --eval-every > 0");
    }
    if base.data.valid.is_none() {
        bail!("grid search needs a --valid split");
    }
    #[derive(serde::Serialize)]
    struct Cell {
        alpha: f64,
        max_added: usize,
        tails_per_relation: usize,
        dir: String,
        valid_hits10: f64,
        best_epoch: usize,
    }
    let mut results: Vec<Cell> = Vec::new();
    for (alpha, max_added, tails) in cells {
        let mut cfg = base.clone();
        cfg.policy.completion.alpha = alpha;
        cfg.policy.completion.max_added = max_added;
        cfg.policy.completion.tails_per_relation = tails;
        let cell_dir = out.join(format!("grid/cell-a{alpha}-m{max_added}-k{tails}"));
        fs::create_dir_all(&cell_dir)?;
        io::write_json(&cell_dir.join(CONFIG_FILE), &cfg)?;
        let hits = dispatch(&cfg, &cell_dir)?;
        let (best_epoch, valid_hits10) = hits.unwrap_or((0, 0.0));
        println!(
            "grid cell alpha={alpha} max={max_added} k={tails}: valid Hits@10 {valid_hits10:.4}"
        );
        results.push(Cell {
            alpha,
            max_added,
            tails_per_relation: tails,
            dir: cell_dir.display().to_string(),
            valid_hits10,
            best_epoch,
        });
    }
    results.sort_by(|a, b| b.valid_hits10.total_cmp(&a.valid_hits10));
    io::write_json(&out.join("grid.json"), &results)?;
    let best = &results[0];
    // Promote the winning cell's artifacts to the run root.
    let best_dir = Path::new(&best.dir);
    fs::copy(best_dir.join(CONFIG_FILE), out.join(CONFIG_FILE))?;
    fs::create_dir_all(out.join("policy"))?;
    for file in [crate::checkpoint::MANIFEST_FILE, crate::checkpoint::BLOB_FILE] {
        fs::copy(best_dir.join("policy").join(file), out.join("policy").join(file))?;
    }
    fs::copy(best_dir.join("epochs.jsonl"), out.join("epochs.jsonl"))?;
    println!(
        "grid winner: alpha={} max={} k={} (valid Hits@10 {:.4})",
        best.alpha, best.max_added, best.tails_per_relation, best.valid_hits10
    );
    Ok(())
}

fn resolve_config(args: &TrainAgentArgs) -> Result<AgentRunConfig> {
    let mut cfg: AgentRunConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).context("parsing agent run config")?
        }
        None => {
            let train = args
                .train
                .clone()
                .ok_or_else(|| anyhow::anyhow!("--train is required without --config"))?;
            let kge = args
                .kge
                .clone()
                .ok_or_else(|| anyhow::anyhow!("--kge is required without --config"))?;
            AgentRunConfig {
                data: DataConfig {
                    train,
                    valid: None,
                    test: None,
                    max_out_degree: Some(200),
                },
                kge_checkpoint: kge,
                precision: "f32".to_string(),
                policy: PolicyConfig::default(),
                train: TrainConfig::default(),
            }
        }
    };
    if let Some(p) = &args.train {
        cfg.data.train = p.clone();
    }
    if let Some(p) = &args.valid {
        cfg.data.valid = Some(p.clone());
    }
    if let Some(p) = &args.test {
        cfg.data.test = Some(p.clone());
    }
    if let Some(n) = args.max_out_degree {
        cfg.data.max_out_degree = if n == 0 { None } else { Some(n) };
    }
    if let Some(p) = &args.kge {
        cfg.kge_checkpoint = p.clone();
    }
    if let Some(v) = args.dim {
        cfg.policy.dim = v;
    }
    if let Some(v) = args.hidden {
        cfg.policy.hidden = v;
    }
    if let Some(v) = args.lstm_layers {
        cfg.policy.lstm_layers = v;
    }
    if let Some(s) = &args.anticipation {
        cfg.policy.anticipation = parse_anticipation(s)?;
    }
    if let Some(v) = args.completion_alpha {
        cfg.policy.completion.alpha = v;
    }
    if let Some(v) = args.completion_max {
        cfg.policy.completion.max_added = v;
    }
    if let Some(v) = args.completion_tails {
        cfg.policy.completion.tails_per_relation = v;
    }
    if let Some(v) = args.action_dropout {
        cfg.policy.action_dropout = v;
    }
    if let Some(v) = args.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = args.rollouts {
        cfg.train.rollouts = v;
    }
    if let Some(v) = args.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = args.hops {
        cfg.train.max_hops = v;
    }
    if let Some(v) = args.entropy_weight {
        cfg.train.entropy_weight = v;
    }
    if let Some(s) = &args.baseline {
        cfg.train.baseline = match s.to_ascii_lowercase().as_str() {
            "none" => BaselineMode::None,
            "ema" | "moving-average" => BaselineMode::MovingAverage {
                decay: args.baseline_decay.unwrap_or(0.95),
            },
            other => bail!("unknown baseline `{other}` (none|ema)"),
        };
    } else if let Some(decay) = args.baseline_decay {
        cfg.train.baseline = BaselineMode::MovingAverage { decay };
    }
    if let Some(s) = &args.gold_mask {
        cfg.train.gold_mask = parse_gold_mask(s)?;
    }
    if let Some(v) = args.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = args.eval_every {
        cfg.train.eval_every = v;
    }
    if let Some(v) = args.eval_beam_width {
        cfg.train.eval_beam_width = v;
    }
    if let Some(p) = &args.precision {
        cfg.precision = p.clone();
    }
    Ok(cfg)
}

fn dispatch(cfg: &AgentRunConfig, out: &Path) -> Result<Option<(usize, f64)>> {
    match cfg.precision.as_str() {
        "f32" => train_run::<f32>(cfg, out),
        _ => train_run::<f64>(cfg, out),
    }
}

fn train_run<R: Real>(cfg: &AgentRunConfig, out: &Path) -> Result<Option<(usize, f64)>> {
    let kg: KnowledgeGraph = io::load_graph(
        &cfg.data.train,
        cfg.data.valid.as_deref(),
        cfg.data.test.as_deref(),
        cfg.data.max_out_degree,
    )?;
    let kge = artifacts::load_kge::<R>(&cfg.kge_checkpoint)?;
    if kge.num_entities != kg.vocab().entity_count()
        || kge.num_relations != kg.vocab().relation_count()
    {
        bail!(
            "score model was trained on a different vocabulary ({} entities / {} relations vs {} / {})",
            kge.num_entities,
            kge.num_relations,
            kg.vocab().entity_count(),
            kg.vocab().relation_count()
        );
    }
    let mut init_rng = Rng::seed_from_u64(cfg.train.seed).fork();
    let mut policy = PolicyNetwork::<R>::new(
        kg.vocab().entity_count(),
        kg.vocab().relation_count(),
        cfg.policy.clone(),
        &mut init_rng,
    )
    .map_err(|e| anyhow::anyhow!("{e}"))?;

    let mut log = io::JsonLines::create(&out.join("epochs.jsonl"))?;
    let mut log_err: Option<anyhow::Error> = None;
    let outcome = {
        let mut on_epoch = |report: &kghop_core::trainer::EpochReport| {
            if log_err.is_none() {
                if let Err(e) = log.write(report) {
                    log_err = Some(e);
                }
            }
        };
        train(&kg, &mut policy, &kge, &cfg.train, Some(&mut on_epoch))
            .map_err(|e| anyhow::anyhow!("{e}"))?
    };
    if let Some(e) = log_err {
        return Err(e);
    }
    artifacts::save_policy(
        &out.join("policy"),
        &policy,
        cfg.train.seed,
        outcome.reports.len() as u64,
    )?;
    let last = outcome.reports.last().expect("at least one epoch");
    println!(
        "trained {} epochs; final reward {:.3}, hit rate {:.3}, completion share {:.3}",
        outcome.reports.len(),
        last.mean_reward,
        last.hit_rate,
        last.dc_hits_ratio
    );
    Ok(outcome.best_valid_hits10)
}
