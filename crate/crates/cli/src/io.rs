//! File IO for the TSV triple format, vocab dumps and JSON outputs.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};

use kghop_core::kg::{parse_triples, KnowledgeGraph, RawTriple, Vocab};

pub fn read_triples(path: &Path) -> Result<Vec<RawTriple>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading triples from {}", path.display()))?;
    parse_triples(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

pub fn read_triples_opt(path: Option<&Path>) -> Result<Vec<RawTriple>> {
    match path {
        Some(p) => read_triples(p),
        None => Ok(Vec::new()),
    }
}

pub fn write_triples(path: &Path, triples: &[RawTriple]) -> Result<()> {
    let mut out = String::new();
    for (h, r, t) in triples {
        out.push_str(h);
        out.push('\t');
        out.push_str(r);
        out.push('\t');
        out.push_str(t);
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Two-column `name<TAB>id` dumps for entities and (augmented) relations.
pub fn dump_vocab(dir: &Path, vocab: &Vocab) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entities = String::new();
    for (id, name) in vocab.entity_names().iter().enumerate() {
        entities.push_str(&format!("{name}\t{id}\n"));
    }
    fs::write(dir.join("entities.tsv"), entities)?;
    let mut relations = String::new();
    for id in 0..vocab.relation_count() {
        relations.push_str(&format!("{}\t{id}\n", vocab.relation_name(id)));
    }
    fs::write(dir.join("relations.tsv"), relations)?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Append-style JSON-lines writer.
pub struct JsonLines {
    file: fs::File,
}

impl JsonLines {
    pub fn create(path: &Path) -> Result<Self> {
        let file = fs::File::create(path)
            .with_context(|| format!("creating {}", path.display()))?;
        Ok(JsonLines { file })
    }

    pub fn write<T: serde::Serialize>(&mut self, value: &T) -> Result<()> {
        let line = serde_json::to_string(value)?;
        writeln!(self.file, "{line}")?;
        Ok(())
    }
}

pub fn read_json_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).with_context(|| format!("bad JSON line in {}", path.display())))
        .collect()
}

/// Print loader warnings (duplicate triples and the like) to stderr.
pub fn report_warnings(warnings: &[String]) {
    const SHOWN: usize = 10;
    for w in warnings.iter().take(SHOWN) {
        eprintln!("warning: {w}");
    }
    if warnings.len() > SHOWN {
        eprintln!("warning: ... and {} more", warnings.len() - SHOWN);
    }
}

pub fn load_graph(
    train: &Path,
    valid: Option<&Path>,
    test: Option<&Path>,
    max_out_degree: Option<usize>,
) -> Result<KnowledgeGraph> {
    let train_t = read_triples(train)?;
    let valid_t = read_triples_opt(valid)?;
    let test_t = read_triples_opt(test)?;
    let (kg, warnings) = KnowledgeGraph::build(
        &train_t,
        &valid_t,
        &test_t,
        kghop_core::kg::GraphConfig { max_out_degree },
    );
    report_warnings(&warnings);
    Ok(kg)
}
