//! Triple store: vocabularies, adjacency with inverse edges, filtered
//! candidate sets and sparsity statistics.
//!
//! Ids are dense and assigned in first-appearance order over
//! train -> valid -> test, so reloading the same files reproduces the same
//! graph exactly. The relation vocabulary is augmented: base relations get
//! ids `0..B`, the inverse of relation `r` is `B + r`, and the self-loop
//! relation sits at `2B`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::Serialize;

use crate::error::{Error, Result};

pub type EntityId = usize;
pub type RelationId = usize;

pub const LOOP_NAME: &str = "LOOP";
pub const INVERSE_SUFFIX: &str = "_inv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

/// A raw, not-yet-interned triple as read from a TSV line.
pub type RawTriple = (String, String, String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Origin {
    Graph,
    SelfLoop,
    Completion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Action {
    pub relation: RelationId,
    pub entity: EntityId,
    pub origin: Origin,
}

/// Ordered actions for one state: graph edges first (sorted by relation,
/// then entity), then the mandatory self-loop, then any completion-injected
/// actions.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ActionSpace {
    pub actions: Vec<Action>,
}

impl ActionSpace {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Vocab {
    entity_names: Vec<String>,
    entity_ids: BTreeMap<String, EntityId>,
    base_relation_names: Vec<String>,
    base_relation_ids: BTreeMap<String, RelationId>,
}

impl Vocab {
    fn new() -> Self {
        Vocab {
            entity_names: Vec::new(),
            entity_ids: BTreeMap::new(),
            base_relation_names: Vec::new(),
            base_relation_ids: BTreeMap::new(),
        }
    }

    fn intern_entity(&mut self, name: &str) -> EntityId {
        if let Some(&id) = self.entity_ids.get(name) {
            return id;
        }
        let id = self.entity_names.len();
        self.entity_names.push(name.to_string());
        self.entity_ids.insert(name.to_string(), id);
        id
    }

    fn intern_relation(&mut self, name: &str) -> RelationId {
        if let Some(&id) = self.base_relation_ids.get(name) {
            return id;
        }
        let id = self.base_relation_names.len();
        self.base_relation_names.push(name.to_string());
        self.base_relation_ids.insert(name.to_string(), id);
        id
    }

    pub fn entity_count(&self) -> usize {
        self.entity_names.len()
    }

    /// Base relations only, before inverse/self-loop augmentation.
    pub fn base_relation_count(&self) -> usize {
        self.base_relation_names.len()
    }

    /// Total relation ids handed to models: base + inverses + LOOP.
    pub fn relation_count(&self) -> usize {
        2 * self.base_relation_names.len() + 1
    }

    pub fn loop_relation(&self) -> RelationId {
        2 * self.base_relation_names.len()
    }

    pub fn inverse_of(&self, r: RelationId) -> RelationId {
        let base = self.base_relation_names.len();
        if r < base {
            base + r
        } else if r < 2 * base {
            r - base
        } else {
            r // LOOP is its own inverse
        }
    }

    pub fn is_base_relation(&self, r: RelationId) -> bool {
        r < self.base_relation_names.len()
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_ids.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.base_relation_ids.get(name).copied()
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.entity_names[id]
    }

    pub fn relation_name(&self, id: RelationId) -> String {
        let base = self.base_relation_names.len();
        if id < base {
            self.base_relation_names[id].clone()
        } else if id < 2 * base {
            format!("{}{INVERSE_SUFFIX}", self.base_relation_names[id - base])
        } else {
            LOOP_NAME.to_string()
        }
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphConfig {
    /// Cap on stored graph actions per entity; the self-loop never counts
    /// against it. Entries are kept in (relation, entity) order.
    pub max_out_degree: Option<usize>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            max_out_degree: Some(200),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, Serialize)]
pub struct SparsityReport {
    pub entities: usize,
    pub relations: usize,
    pub facts: usize,
    pub mean_out_degree: f64,
    pub median_out_degree: f64,
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    vocab: Vocab,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    /// Per entity: train edges plus their inverses, sorted (relation, entity).
    adjacency: Vec<Vec<(RelationId, EntityId)>>,
    /// Raw (h, r, t) facts from every split, for filtered ranking.
    all_facts: BTreeSet<(EntityId, RelationId, EntityId)>,
}

impl KnowledgeGraph {
    /// Build a graph from interned raw triples. Duplicate triples within a
    /// split, and valid/test triples that already appear in an earlier
    /// split, are dropped with a warning so adjacency/degree statistics and
    /// the leakage invariant stay intact.
    pub fn build(
        train: &[RawTriple],
        valid: &[RawTriple],
        test: &[RawTriple],
        config: GraphConfig,
    ) -> (KnowledgeGraph, Vec<String>) {
        let mut vocab = Vocab::new();
        let mut warnings = Vec::new();
        let mut seen: BTreeSet<(EntityId, RelationId, EntityId)> = BTreeSet::new();

        let mut intern_split = |raw: &[RawTriple],
                                split: &str,
                                vocab: &mut Vocab,
                                warnings: &mut Vec<String>|
         -> Vec<Triple> {
            let mut out = Vec::with_capacity(raw.len());
            for (h, r, t) in raw {
                let triple = Triple {
                    head: vocab.intern_entity(h),
                    relation: vocab.intern_relation(r),
                    tail: vocab.intern_entity(t),
                };
                if !seen.insert((triple.head, triple.relation, triple.tail)) {
                    warnings.push(format!(
                        "dropped duplicate triple ({h}, {r}, {t}) from {split}"
                    ));
                    continue;
                }
                out.push(triple);
            }
            out
        };

        let train = intern_split(train, "train", &mut vocab, &mut warnings);
        let valid = intern_split(valid, "valid", &mut vocab, &mut warnings);
        let test = intern_split(test, "test", &mut vocab, &mut warnings);

        let mut adjacency: Vec<Vec<(RelationId, EntityId)>> =
            vec![Vec::new(); vocab.entity_count()];
        for t in &train {
            adjacency[t.head].push((t.relation, t.tail));
            adjacency[t.tail].push((vocab.inverse_of(t.relation), t.head));
        }
        for list in &mut adjacency {
            list.sort_unstable();
            if let Some(cap) = config.max_out_degree {
                if list.len() > cap {
                    list.truncate(cap);
                }
            }
        }

        let all_facts = train
            .iter()
            .chain(&valid)
            .chain(&test)
            .map(|t| (t.head, t.relation, t.tail))
            .collect();

        (
            KnowledgeGraph {
                vocab,
                train,
                valid,
                test,
                adjacency,
                all_facts,
            },
            warnings,
        )
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// Stored graph edges of an entity (train + inverses), without the
    /// self-loop.
    pub fn outgoing(&self, entity: EntityId) -> &[(RelationId, EntityId)] {
        &self.adjacency[entity]
    }

    /// Graph actions plus the mandatory self-loop, appended last.
    pub fn actions_of(&self, entity: EntityId) -> ActionSpace {
        let mut actions: Vec<Action> = self.adjacency[entity]
            .iter()
            .map(|&(relation, e)| Action {
                relation,
                entity: e,
                origin: Origin::Graph,
            })
            .collect();
        actions.push(Action {
            relation: self.vocab.loop_relation(),
            entity,
            origin: Origin::SelfLoop,
        });
        ActionSpace { actions }
    }

    /// True if (head, relation, tail) is a stored train edge (including
    /// inverse-augmented edges).
    pub fn has_train_edge(&self, head: EntityId, relation: RelationId, tail: EntityId) -> bool {
        self.adjacency[head].binary_search(&(relation, tail)).is_ok()
    }

    /// All tails t with (head, relation, t) in any split; used to mask
    /// known answers during filtered ranking.
    pub fn filter_candidates(&self, head: EntityId, relation: RelationId) -> BTreeSet<EntityId> {
        self.all_facts
            .range((head, relation, 0)..=(head, relation, EntityId::MAX))
            .map(|&(_, _, t)| t)
            .collect()
    }

    pub fn is_known_fact(&self, head: EntityId, relation: RelationId, tail: EntityId) -> bool {
        self.all_facts.contains(&(head, relation, tail))
    }

    /// Degree statistics over raw train edges, before inverse augmentation
    /// and before the adjacency cap.
    pub fn sparsity_report(&self) -> SparsityReport {
        let entities = self.vocab.entity_count();
        let mut degrees = vec![0usize; entities];
        for t in &self.train {
            degrees[t.head] += 1;
        }
        let facts = self.train.len();
        let mean = if entities == 0 {
            0.0
        } else {
            facts as f64 / entities as f64
        };
        let median = if entities == 0 {
            0.0
        } else {
            degrees.sort_unstable();
            if entities % 2 == 1 {
                degrees[entities / 2] as f64
            } else {
                (degrees[entities / 2 - 1] + degrees[entities / 2]) as f64 / 2.0
            }
        };
        SparsityReport {
            entities,
            relations: self.vocab.base_relation_count(),
            facts,
            mean_out_degree: mean,
            median_out_degree: median,
        }
    }
}

/// Parse one TSV split: `head<TAB>relation<TAB>tail` per line. Blank lines
/// are ignored; anything else malformed reports its 1-based line number.
pub fn parse_triples(text: &str) -> Result<Vec<RawTriple>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (h, r, t) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(h), Some(r), Some(t), None) => (h.trim(), r.trim(), t.trim()),
            _ => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected `head\\trelation\\ttail`, got {line:?}"),
                })
            }
        };
        if h.is_empty() || r.is_empty() || t.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                message: "empty field".to_string(),
            });
        }
        out.push((h.to_string(), r.to_string(), t.to_string()));
    }
    Ok(out)
}
