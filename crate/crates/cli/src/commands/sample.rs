use std::fs;

use anyhow::{bail, Context, Result};

use kghop_core::kg::{GraphConfig, KnowledgeGraph, RawTriple};
use kghop_core::rng::Rng;
use kghop_core::sampler;

use crate::io;
use crate::SampleArgs;

pub fn run(args: SampleArgs) -> Result<()> {
    let mut triples: Vec<RawTriple> = Vec::new();
    for path in &args.input {
        triples.extend(io::read_triples(path)?);
    }
    if triples.is_empty() {
        bail!("inputs contain no triples");
    }
    let mut rng = Rng::seed_from_u64(args.seed);

    if args.retain_fraction.is_some() && (args.entity_seeds.is_some() || args.entity_file.is_some())
    {
        bail!("--retain-fraction and entity sampling are mutually exclusive");
    }
    if let Some(fraction) = args.retain_fraction {
        triples = sampler::retain_fraction(&triples, fraction, &mut rng)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
    } else if args.entity_seeds.is_some() || args.entity_file.is_some() {
        let seeds: Vec<String> = match (&args.entity_file, args.entity_seeds) {
            (Some(file), _) => fs::read_to_string(file)
                .with_context(|| format!("reading {}", file.display()))?
                .lines()
                .map(|l| l.trim().to_string())
                .filter(|l| !l.is_empty())
                .collect(),
            (None, Some(count)) => sampler::random_entity_seeds(&triples, count, &mut rng),
            (None, None) => unreachable!(),
        };
        triples = sampler::sample_by_entities(&triples, &seeds, args.expansion_rounds)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
    }

    let ratios = parse_ratios(&args.split_ratios)?;
    let splits =
        sampler::resplit(&triples, ratios, &mut rng).map_err(|e| anyhow::anyhow!("{e}"))?;

    fs::create_dir_all(&args.out)?;
    io::write_triples(&args.out.join("train.txt"), &splits.train)?;
    io::write_triples(&args.out.join("valid.txt"), &splits.valid)?;
    io::write_triples(&args.out.join("test.txt"), &splits.test)?;

    let (kg, warnings) =
        KnowledgeGraph::build(&splits.train, &splits.valid, &splits.test, GraphConfig::default());
    io::report_warnings(&warnings);
    let report = kg.sparsity_report();
    io::write_json(&args.out.join("sparsity.json"), &report)?;
    println!(
        "wrote {} train / {} valid / {} test triples to {} (mean out-degree {:.2})",
        splits.train.len(),
        splits.valid.len(),
        splits.test.len(),
        args.out.display(),
        report.mean_out_degree
    );
    Ok(())
}

fn parse_ratios(s: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().context("ratio must be a number"))
        .collect::<Result<_>>()?;
    if parts.len() != 3 {
        bail!("--split-ratios wants three comma-separated numbers");
    }
    Ok((parts[0], parts[1], parts[2]))
}
