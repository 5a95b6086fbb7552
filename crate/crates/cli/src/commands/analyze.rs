use std::fs;

use anyhow::{Context, Result};

use kghop_core::eval::{ratio_vs_alpha, ratio_vs_epoch};
use kghop_core::trainer::EpochReport;

use crate::config::{AgentRunConfig, CONFIG_FILE};
use crate::{io, AnalyzeArgs};

pub fn run(args: AnalyzeArgs) -> Result<()> {
    fs::create_dir_all(&args.out)?;
    let mut per_run: Vec<(String, f64, Vec<EpochReport>)> = Vec::new();
    for dir in &args.runs {
        let text = fs::read_to_string(dir.join(CONFIG_FILE))
            .with_context(|| format!("reading run config in {}", dir.display()))?;
        let cfg: AgentRunConfig = serde_json::from_str(&text).context("parsing run config")?;
        let reports: Vec<EpochReport> = io::read_json_lines(&dir.join("epochs.jsonl"))?;
        per_run.push((
            dir.display().to_string(),
            cfg.policy.completion.alpha,
            reports,
        ));
    }

    let mut epoch_csv = String::from("run\talpha\tepoch\tdc_hits_ratio\n");
    for (name, alpha, reports) in &per_run {
        for (epoch, ratio) in ratio_vs_epoch(reports) {
            epoch_csv.push_str(&format!("{name}\t{alpha}\t{epoch}\t{ratio}\n"));
        }
    }
    fs::write(args.out.join("dc_ratio_vs_epoch.csv"), epoch_csv)?;

    let runs: Vec<(f64, Vec<EpochReport>)> = per_run
        .iter()
        .map(|(_, alpha, reports)| (*alpha, reports.clone()))
        .collect();
    let mut alpha_csv = String::from("alpha\tdc_hits_ratio_last_epochs_avg\n");
    for (alpha, avg) in ratio_vs_alpha(&runs, args.window) {
        alpha_csv.push_str(&format!("{alpha}\t{avg}\n"));
    }
    fs::write(args.out.join("dc_ratio_vs_alpha.csv"), alpha_csv)?;
    println!(
        "wrote dc_ratio_vs_epoch.csv and dc_ratio_vs_alpha.csv for {} runs to {}",
        per_run.len(),
        args.out.display()
    );
    Ok(())
}
