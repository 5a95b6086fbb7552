use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

use kghop_core::env::{format_path, Query};
use kghop_core::eval::{beam_search, evaluate, RankingResult};
use kghop_core::kg::{KnowledgeGraph, Split};
use kghop_core::kge::ScoreCache;
use kghop_core::policy::anticipate;
use kghop_core::rng::Rng;
use kghop_core::Real;

use crate::commands::parse_split;
use crate::config::{AgentRunConfig, CONFIG_FILE};
use crate::{artifacts, io, EvaluateArgs};

pub fn run(args: EvaluateArgs) -> Result<()> {
    let text = fs::read_to_string(args.run.join(CONFIG_FILE))
        .with_context(|| format!("reading run config in {}", args.run.display()))?;
    let cfg: AgentRunConfig = serde_json::from_str(&text).context("parsing run config")?;
    let split = parse_split(&args.split)?;
    match cfg.precision.as_str() {
        "f32" => eval_run::<f32>(&cfg, &args, split),
        _ => eval_run::<f64>(&cfg, &args, split),
    }
}

fn eval_run<R: Real>(cfg: &AgentRunConfig, args: &EvaluateArgs, split: Split) -> Result<()> {
    let kg: KnowledgeGraph = io::load_graph(
        &cfg.data.train,
        cfg.data.valid.as_deref(),
        cfg.data.test.as_deref(),
        cfg.data.max_out_degree,
    )?;
    let kge = artifacts::load_kge::<R>(&cfg.kge_checkpoint)?;
    let policy = artifacts::load_policy::<R>(&args.run.join("policy"))?;

    let result = evaluate(
        &kg,
        &policy,
        &kge,
        split,
        args.beam_width,
        cfg.train.max_hops,
        cfg.train.seed,
    )
    .map_err(|e| anyhow::anyhow!("{e}"))?;

    let metrics_path = args.run.join(format!("metrics-{}.json", args.split));
    io::write_json(&metrics_path, &MetricsOut::from(&result))?;
    write_ranks_csv(&args.run.join(format!("ranks-{}.csv", args.split)), &kg, &result)?;
    if args.dump_paths > 0 {
        dump_paths(cfg, args, split, &kg, &kge, &policy)?;
    }
    println!("{}", serde_json::to_string_pretty(&MetricsOut::from(&result))?);
    Ok(())
}

#[derive(serde::Serialize)]
struct MetricsOut {
    queries: usize,
    mrr: f64,
    hits1: f64,
    hits3: f64,
    hits10: f64,
}

impl From<&RankingResult> for MetricsOut {
    fn from(r: &RankingResult) -> Self {
        MetricsOut {
            queries: r.per_query.len(),
            mrr: r.mrr,
            hits1: r.hits1,
            hits3: r.hits3,
            hits10: r.hits10,
        }
    }
}

fn write_ranks_csv(path: &Path, kg: &KnowledgeGraph, result: &RankingResult) -> Result<()> {
    let mut out = String::from("head\trelation\tgold\trank\treciprocal\n");
    for q in &result.per_query {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            kg.vocab().entity_name(q.head),
            kg.vocab().relation_name(q.relation),
            kg.vocab().entity_name(q.gold),
            q.rank,
            1.0 / q.rank
        ));
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Render the top-3 beam paths for the first `dump_paths` queries of the
/// split, marking completion-injected hops with asterisks.
fn dump_paths<R: Real>(
    cfg: &AgentRunConfig,
    args: &EvaluateArgs,
    split: Split,
    kg: &KnowledgeGraph,
    kge: &kghop_core::kge::KgeModel<R>,
    policy: &kghop_core::policy::PolicyNetwork<R>,
) -> Result<()> {
    let mut rng = Rng::seed_from_u64(cfg.train.seed);
    let mut cache = ScoreCache::new(kge);
    let mut out = String::new();
    for t in kg.split(split).iter().take(args.dump_paths) {
        let query = Query {
            head: t.head,
            relation: t.relation,
        };
        let e_p = anticipate(&mut cache, t.head, t.relation, policy.cfg.anticipation, &mut rng);
        let beams = beam_search(
            kg,
            policy,
            &mut cache,
            query,
            args.beam_width,
            cfg.train.max_hops,
            &e_p,
        )
        .map_err(|e| anyhow::anyhow!("{e}"))?;
        out.push_str(&format!(
            "query: ({}, {}, ?)    gold: {}\n",
            kg.vocab().entity_name(t.head),
            kg.vocab().relation_name(t.relation),
            kg.vocab().entity_name(t.tail)
        ));
        for (i, entry) in beams.iter().take(3).enumerate() {
            out.push_str(&format!(
                "  {}. [{:.4}] {}\n",
                i + 1,
                entry.log_prob,
                format_path(kg, t.head, &entry.hops)
            ));
        }
        out.push('\n');
    }
    let path = args.run.join(format!("paths-{}.txt", args.split));
    fs::write(&path, out).with_context(|| format!("writing {}", path.display()))
}
