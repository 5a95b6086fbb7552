//! Dataset construction tools: fraction retention, entity-neighborhood
//! sampling and split regeneration.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kg::RawTriple;
use crate::rng::Rng;

/// Uniformly retain ceil(fraction * n) triples without replacement.
pub fn retain_fraction(
    triples: &[RawTriple],
    fraction: f64,
    rng: &mut Rng,
) -> Result<Vec<RawTriple>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config("fraction must be in (0, 1]"));
    }
    if triples.is_empty() {
        return Err(Error::config("no triples to sample"));
    }
    if fraction == 1.0 {
        return Ok(triples.to_vec());
    }
    let keep = libm::ceil(fraction * triples.len() as f64 - 1e-9) as usize;
    let mut picked = rng.sample_indices(triples.len(), keep.max(1));
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| triples[i].clone()).collect())
}

/// Triples incident to a seed entity set, optionally expanded: each round
/// adds every endpoint of the currently selected triples to the set and
/// re-selects.
pub fn sample_by_entities(
    triples: &[RawTriple],
    seed_entities: &[String],
    expansion_rounds: usize,
) -> Result<Vec<RawTriple>> {
    if seed_entities.is_empty() {
        return Err(Error::config("empty entity seed set"));
    }
    let mut keep: BTreeSet<&str> = seed_entities.iter().map(|s| s.as_str()).collect();
    for _ in 0..expansion_rounds {
        let mut next = keep.clone();
        for (h, _, t) in triples {
            if keep.contains(h.as_str()) || keep.contains(t.as_str()) {
                next.insert(h.as_str());
                next.insert(t.as_str());
            }
        }
        if next.len() == keep.len() {
            break;
        }
        keep = next;
    }
    Ok(triples
        .iter()
        .filter(|(h, _, t)| keep.contains(h.as_str()) || keep.contains(t.as_str()))
        .cloned()
        .collect())
}

/// Pick `count` distinct entity names uniformly from the triples.
pub fn random_entity_seeds(triples: &[RawTriple], count: usize, rng: &mut Rng) -> Vec<String> {
    let mut entities: Vec<&str> = Vec::new();
    let mut seen = BTreeSet::new();
    for (h, _, t) in triples {
        if seen.insert(h.as_str()) {
            entities.push(h);
        }
        if seen.insert(t.as_str()) {
            entities.push(t);
        }
    }
    let picked = rng.sample_indices(entities.len(), count);
    picked.into_iter().map(|i| String::from(entities[i])).collect()
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<RawTriple>,
    pub valid: Vec<RawTriple>,
    pub test: Vec<RawTriple>,
}

/// Shuffle and split by ratios, then repair coverage: any valid/test triple
/// whose entities or relation are unseen in train moves to train (ranking
/// over unseen symbols is undefined for embedding tables). The repair loop
/// is bounded as a safety net.
pub fn resplit(
    triples: &[RawTriple],
    ratios: (f64, f64, f64),
    rng: &mut Rng,
) -> Result<Splits> {
    let (rt, rv, rs) = ratios;
    if rt < 0.0 || rv < 0.0 || rs < 0.0 || libm::fabs(rt + rv + rs - 1.0) > 1e-9 {
        return Err(Error::config("split ratios must be nonnegative and sum to 1"));
    }
    if triples.is_empty() {
        return Err(Error::config("no triples to split"));
    }
    let mut order: Vec<usize> = (0..triples.len()).collect();
    rng.shuffle(&mut order);
    let n = triples.len();
    let n_train = libm::round(rt * n as f64) as usize;
    let n_valid = libm::round(rv * n as f64) as usize;
    let n_train = n_train.min(n);
    let n_valid = n_valid.min(n - n_train);

    let mut train: Vec<RawTriple> = order[..n_train].iter().map(|&i| triples[i].clone()).collect();
    let mut valid: Vec<RawTriple> = order[n_train..n_train + n_valid]
        .iter()
        .map(|&i| triples[i].clone())
        .collect();
    let mut test: Vec<RawTriple> = order[n_train + n_valid..]
        .iter()
        .map(|&i| triples[i].clone())
        .collect();

    let mut rounds = 0usize;
    loop {
        let mut entities: BTreeSet<&str> = BTreeSet::new();
        let mut relations: BTreeSet<&str> = BTreeSet::new();
        for (h, r, t) in &train {
            entities.insert(h);
            entities.insert(t);
            relations.insert(r);
        }
        let covered = |(h, r, t): &RawTriple| {
            entities.contains(h.as_str())
                && entities.contains(t.as_str())
                && relations.contains(r.as_str())
        };
        let mut moved = Vec::new();
        valid.retain(|t| {
            if covered(t) {
                true
            } else {
                moved.push(t.clone());
                false
            }
        });
        test.retain(|t| {
            if covered(t) {
                true
            } else {
                moved.push(t.clone());
                false
            }
        });
        if moved.is_empty() {
            break;
        }
        train.extend(moved);
        rounds += 1;
        if rounds > 100 {
            return Err(Error::train("split coverage repair did not converge"));
        }
    }
    Ok(Splits { train, valid, test })
}
