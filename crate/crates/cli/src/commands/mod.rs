pub mod analyze;
pub mod evaluate;
pub mod inspect;
pub mod sample;
pub mod train_agent;
pub mod train_kge;

use anyhow::{bail, Result};

use kghop_core::env::GoldMask;
use kghop_core::kg::Split;
use kghop_core::kge::KgeKind;
use kghop_core::policy::AnticipationStrategy;

pub fn parse_kind(s: &str) -> Result<KgeKind> {
    Ok(match s.to_ascii_lowercase().as_str() {
        "transe" => KgeKind::TransE,
        "distmult" => KgeKind::DistMult,
        "conve" => KgeKind::ConvE,
        other => bail!("unknown model kind `{other}` (transe|distmult|conve)"),
    })
}

pub fn parse_anticipation(s: &str) -> Result<AnticipationStrategy> {
    Ok(match s.to_ascii_lowercase().as_str() {
        "off" => AnticipationStrategy::Off,
        "sample" => AnticipationStrategy::Sample,
        "topone" | "top-one" | "top" => AnticipationStrategy::TopOne,
        "average" | "avg" => AnticipationStrategy::Average,
        other => bail!("unknown anticipation strategy `{other}` (off|sample|topone|average)"),
    })
}

pub fn parse_gold_mask(s: &str) -> Result<GoldMask> {
    Ok(match s.to_ascii_lowercase().as_str() {
        "never" => GoldMask::Never,
        "first-step" | "first_step" => GoldMask::FirstStep,
        "every-step" | "every_step" => GoldMask::EveryStep,
        other => bail!("unknown gold-mask mode `{other}` (never|first-step|every-step)"),
    })
}

pub fn parse_split(s: &str) -> Result<Split> {
    Ok(match s.to_ascii_lowercase().as_str() {
        "train" => Split::Train,
        "valid" => Split::Valid,
        "test" => Split::Test,
        other => bail!("unknown split `{other}` (train|valid|test)"),
    })
}

pub fn check_precision(s: &str) -> Result<()> {
    if s != "f32" && s != "f64" {
        bail!("unknown precision `{s}` (f32|f64)");
    }
    Ok(())
}
