use std::fs;

use anyhow::{bail, Context, Result};

use kghop_core::kge::{train_kge, KgeConfig};
use kghop_core::Real;

use crate::commands::{check_precision, parse_kind};
use crate::config::{DataConfig, KgeRunConfig, CONFIG_FILE};
use crate::{artifacts, io, TrainKgeArgs};

pub fn run(args: TrainKgeArgs) -> Result<()> {
    let cfg = resolve_config(&args)?;
    check_precision(&cfg.precision)?;
    fs::create_dir_all(&args.out)?;
    io::write_json(&args.out.join(CONFIG_FILE), &cfg)?;
    match cfg.precision.as_str() {
        "f32" => train::<f32>(&cfg, &args),
        _ => train::<f64>(&cfg, &args),
    }
}

fn resolve_config(args: &TrainKgeArgs) -> Result<KgeRunConfig> {
    let mut cfg: KgeRunConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).context("parsing score-model run config")?
        }
        None => {
            let train = args
                .train
                .clone()
                .ok_or_else(|| anyhow::anyhow!("--train is required without --config"))?;
            KgeRunConfig {
                data: DataConfig {
                    train,
                    valid: None,
                    test: None,
                    max_out_degree: Some(200),
                },
                precision: "f32".to_string(),
                kge: KgeConfig::default(),
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
    if let Some(kind) = &args.kind {
        cfg.kge.kind = parse_kind(kind)?;
    }
    if let Some(v) = args.dim {
        cfg.kge.dim = v;
    }
    if let Some(v) = args.lr {
        cfg.kge.lr = v;
    }
    if let Some(v) = args.epochs {
        cfg.kge.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.kge.batch_size = v;
    }
    if let Some(v) = args.label_smoothing {
        cfg.kge.label_smoothing = v;
    }
    if let Some(v) = args.negatives {
        cfg.kge.negatives = v;
    }
    if let Some(v) = args.margin {
        cfg.kge.margin = v;
    }
    if let Some(v) = args.norm {
        if v != 1 && v != 2 {
            bail!("--norm must be 1 or 2");
        }
        cfg.kge.norm = v;
    }
    if let Some(v) = args.eval_every {
        cfg.kge.eval_every = v;
    }
    if let Some(v) = args.patience {
        cfg.kge.patience = v;
    }
    if let Some(v) = args.seed {
        cfg.kge.seed = v;
    }
    if let Some(p) = &args.precision {
        cfg.precision = p.clone();
    }
    if let Some(v) = args.conve_rows {
        cfg.kge.conve.rows = v;
    }
    if let Some(v) = args.conve_cols {
        cfg.kge.conve.cols = v;
    }
    if let Some(v) = args.conve_channels {
        cfg.kge.conve.channels = v;
    }
    if let Some(v) = args.conve_kernel {
        cfg.kge.conve.kernel = v;
    }
    if let Some(v) = args.conve_input_dropout {
        cfg.kge.conve.input_dropout = v;
    }
    if let Some(v) = args.conve_feature_dropout {
        cfg.kge.conve.feature_dropout = v;
    }
    if let Some(v) = args.conve_hidden_dropout {
        cfg.kge.conve.hidden_dropout = v;
    }
    Ok(cfg)
}

fn train<R: Real>(cfg: &KgeRunConfig, args: &TrainKgeArgs) -> Result<()> {
    let kg = io::load_graph(
        &cfg.data.train,
        cfg.data.valid.as_deref(),
        cfg.data.test.as_deref(),
        cfg.data.max_out_degree,
    )?;
    let (model, reports) =
        train_kge::<R>(&kg, &cfg.kge).map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut log = io::JsonLines::create(&args.out.join("kge_epochs.jsonl"))?;
    for r in &reports {
        log.write(r)?;
    }
    artifacts::save_kge(
        &args.out.join("kge"),
        &model,
        cfg.kge.seed,
        reports.len() as u64,
    )?;
    let best = reports
        .iter()
        .filter_map(|r| r.valid_mrr)
        .fold(f64::NEG_INFINITY, f64::max);
    if best.is_finite() {
        println!(
            "trained {:?} for {} epochs; best valid MRR {:.4}; checkpoint in {}",
            cfg.kge.kind,
            reports.len(),
            best,
            args.out.join("kge").display()
        );
    } else {
        println!(
            "trained {:?} for {} epochs; checkpoint in {}",
            cfg.kge.kind,
            reports.len(),
            args.out.join("kge").display()
        );
    }
    Ok(())
}
