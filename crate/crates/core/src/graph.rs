//! In-memory knowledge graph with adjacency indexes.
//!
//! Entities and relations are interned into sorted tables, so numeric order
//! equals lexical order of ids and names. Each fact is stored once; the
//! inverse view of a fact is produced on demand from `in_index`.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: expected {expected} tab-separated fields, found {found}")]
    Malformed {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("subgraph radius must be at least 1")]
    ZeroRadius,
}

pub type Result<T> = std::result::Result<T, GraphError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub label: String,
}

/// The `domain.source_type.target_type` decomposition of a relation name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationHierarchy {
    pub domain: String,
    pub source_type: String,
    pub target_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub name: String,
    pub hierarchy: Option<RelationHierarchy>,
}

impl Relation {
    pub fn new(name: impl Into<String>) -> Self {
        let name = name.into();
        let hierarchy = parse_relation_hierarchy(&name);
        Self { name, hierarchy }
    }
}

/// Splits a relation name into its three hierarchy levels.
///
/// Returns `None` unless the name has exactly three nonempty dot-separated
/// parts; flat vocabularies (e.g. Wikidata-style `borders`) have none.
pub fn parse_relation_hierarchy(name: &str) -> Option<RelationHierarchy> {
    let mut parts = name.split('.');
    let (domain, source_type, target_type) = (parts.next()?, parts.next()?, parts.next()?);
    if parts.next().is_some() || [domain, source_type, target_type].iter().any(|p| p.is_empty()) {
        return None;
    }
    Some(RelationHierarchy {
        domain: domain.to_string(),
        source_type: source_type.to_string(),
        target_type: target_type.to_string(),
    })
}

/// Relation name as plain words: hierarchy dots and underscores become spaces.
pub fn relation_words(name: &str) -> String {
    name.split(['.', '_'])
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Inverse,
}

/// A fact `(head, relation, tail)` seen from one of its endpoints.
///
/// `head`/`relation`/`tail` always keep the fact's stored orientation. A
/// forward triple is traversed from head to tail; an inverse one from tail to
/// head.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub direction: Direction,
}

impl Triple {
    pub fn forward(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        Self {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
            direction: Direction::Forward,
        }
    }

    pub fn inverse(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        Self {
            direction: Direction::Inverse,
            ..Self::forward(head, relation, tail)
        }
    }

    /// The endpoint the traversal starts from.
    pub fn origin(&self) -> &str {
        match self.direction {
            Direction::Forward => &self.head,
            Direction::Inverse => &self.tail,
        }
    }

    /// The endpoint the traversal reaches.
    pub fn target(&self) -> &str {
        match self.direction {
            Direction::Forward => &self.tail,
            Direction::Inverse => &self.head,
        }
    }

    pub fn fact(&self) -> (&str, &str, &str) {
        (&self.head, &self.relation, &self.tail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Fact {
    head: u32,
    relation: u32,
    tail: u32,
}

/// Counters gathered while parsing a triple file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LoadStats {
    pub lines: usize,
    pub duplicates: usize,
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    entities: Vec<Entity>,
    entity_ids: HashMap<String, u32>,
    relations: Vec<Relation>,
    relation_ids: HashMap<String, u32>,
    facts: Vec<Fact>,
    out_index: Vec<Vec<u32>>,
    in_index: Vec<Vec<u32>>,
    by_label: HashMap<String, u32>,
    by_folded_label: HashMap<String, u32>,
}

impl KnowledgeGraph {
    /// Builds a graph from `(head, relation, tail)` triples; duplicates collapse.
    pub fn from_triples<I, S>(triples: I) -> Self
    where
        I: IntoIterator<Item = (S, S, S)>,
        S: Into<String>,
    {
        let set: BTreeSet<(String, String, String)> = triples
            .into_iter()
            .map(|(h, r, t)| (h.into(), r.into(), t.into()))
            .collect();
        Self::build(set, BTreeSet::new(), &BTreeMap::new())
    }

    fn build(
        facts: BTreeSet<(String, String, String)>,
        extra_entities: BTreeSet<String>,
        labels: &BTreeMap<String, String>,
    ) -> Self {
        let mut entity_names: BTreeSet<&str> = extra_entities.iter().map(String::as_str).collect();
        let mut relation_names: BTreeSet<&str> = BTreeSet::new();
        for (h, r, t) in &facts {
            entity_names.insert(h);
            entity_names.insert(t);
            relation_names.insert(r);
        }
        let entities: Vec<Entity> = entity_names
            .iter()
            .map(|id| Entity {
                id: id.to_string(),
                label: labels.get(*id).cloned().unwrap_or_else(|| id.to_string()),
            })
            .collect();
        let entity_ids: HashMap<String, u32> = entities
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.clone(), i as u32))
            .collect();
        let relations: Vec<Relation> = relation_names.iter().map(|n| Relation::new(*n)).collect();
        let relation_ids: HashMap<String, u32> = relations
            .iter()
            .enumerate()
            .map(|(i, r)| (r.name.clone(), i as u32))
            .collect();

        // BTreeSet iteration order is (head, relation, tail) lexical, which
        // matches numeric order after interning.
        let facts: Vec<Fact> = facts
            .iter()
            .map(|(h, r, t)| Fact {
                head: entity_ids[h],
                relation: relation_ids[r],
                tail: entity_ids[t],
            })
            .collect();

        let mut out_index = vec![Vec::new(); entities.len()];
        let mut in_index = vec![Vec::new(); entities.len()];
        for (i, f) in facts.iter().enumerate() {
            out_index[f.head as usize].push(i as u32);
            in_index[f.tail as usize].push(i as u32);
        }
        for list in &mut in_index {
            list.sort_by_key(|&i| {
                let f = facts[i as usize];
                (f.relation, f.head)
            });
        }

        let mut graph = Self {
            entities,
            entity_ids,
            relations,
            relation_ids,
            facts,
            out_index,
            in_index,
            ..Default::default()
        };
        graph.rebuild_label_index();
        graph
    }

    fn rebuild_label_index(&mut self) {
        self.by_label.clear();
        self.by_folded_label.clear();
        // Entities are visited in id order, so the smallest id wins on collisions.
        for (i, e) in self.entities.iter().enumerate() {
            self.by_label.entry(e.label.clone()).or_insert(i as u32);
            self.by_folded_label
                .entry(e.label.to_lowercase())
                .or_insert(i as u32);
        }
    }

    /// Replaces display labels from an `(id, label)` map; unknown ids are ignored.
    pub fn apply_labels(&mut self, labels: &BTreeMap<String, String>) {
        for e in &mut self.entities {
            if let Some(l) = labels.get(&e.id) {
                e.label = l.clone();
            }
        }
        self.rebuild_label_index();
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn triple_count(&self) -> usize {
        self.facts.len()
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entity_ids.get(id).map(|&i| &self.entities[i as usize])
    }

    pub fn relation(&self, name: &str) -> Option<&Relation> {
        self.relation_ids.get(name).map(|&i| &self.relations[i as usize])
    }

    pub fn contains_entity(&self, id: &str) -> bool {
        self.entity_ids.contains_key(id)
    }

    /// Display label for an id; falls back to the id itself.
    pub fn label<'a>(&'a self, id: &'a str) -> &'a str {
        self.entity(id).map(|e| e.label.as_str()).unwrap_or(id)
    }

    /// Resolves free text to an entity id: exact label, then exact id, then
    /// case-insensitive label.
    pub fn resolve(&self, text: &str) -> Option<&str> {
        let text = text.trim();
        if let Some(&i) = self.by_label.get(text) {
            return Some(&self.entities[i as usize].id);
        }
        if let Some(&i) = self.entity_ids.get(text) {
            return Some(&self.entities[i as usize].id);
        }
        self.by_folded_label
            .get(&text.to_lowercase())
            .map(|&i| self.entities[i as usize].id.as_str())
    }

    fn triple_of(&self, fact: u32, direction: Direction) -> Triple {
        let f = self.facts[fact as usize];
        Triple {
            head: self.entities[f.head as usize].id.clone(),
            relation: self.relations[f.relation as usize].name.clone(),
            tail: self.entities[f.tail as usize].id.clone(),
            direction,
        }
    }

    /// All stored facts as forward triples, in (head, relation, tail) order.
    pub fn triples(&self) -> impl Iterator<Item = Triple> + '_ {
        (0..self.facts.len() as u32).map(|i| self.triple_of(i, Direction::Forward))
    }

    pub fn contains_fact(&self, head: &str, relation: &str, tail: &str) -> bool {
        let (Some(&h), Some(&r), Some(&t)) = (
            self.entity_ids.get(head),
            self.relation_ids.get(relation),
            self.entity_ids.get(tail),
        ) else {
            return false;
        };
        self.facts
            .binary_search(&Fact {
                head: h,
                relation: r,
                tail: t,
            })
            .is_ok()
    }

    /// One-hop neighbourhood of `entity`.
    ///
    /// Forward triples come first, sorted by relation then tail; inverse
    /// triples follow, sorted by relation then head.
    pub fn one_hop(&self, entity: &str, include_inverse: bool) -> Result<Vec<Triple>> {
        let &idx = self
            .entity_ids
            .get(entity)
            .ok_or_else(|| GraphError::UnknownEntity(entity.to_string()))?;
        let mut out: Vec<Triple> = self.out_index[idx as usize]
            .iter()
            .map(|&f| self.triple_of(f, Direction::Forward))
            .collect();
        if include_inverse {
            out.extend(
                self.in_index[idx as usize]
                    .iter()
                    .map(|&f| self.triple_of(f, Direction::Inverse)),
            );
        }
        Ok(out)
    }

    /// Triples traversed by an undirected BFS of depth `radius` from `key`.
    ///
    /// A fact is included when one of its endpoints lies at distance
    /// `< radius`; the entity set is everything at distance `<= radius`.
    pub fn subgraph_for_key_entity(&self, key: &str, radius: usize) -> Result<KnowledgeGraph> {
        if radius == 0 {
            return Err(GraphError::ZeroRadius);
        }
        let &start = self
            .entity_ids
            .get(key)
            .ok_or_else(|| GraphError::UnknownEntity(key.to_string()))?;
        let mut dist: HashMap<u32, usize> = HashMap::from([(start, 0)]);
        let mut queue = VecDeque::from([start]);
        let mut facts: BTreeSet<u32> = BTreeSet::new();
        while let Some(node) = queue.pop_front() {
            let d = dist[&node];
            if d >= radius {
                continue;
            }
            let incident = self.out_index[node as usize]
                .iter()
                .chain(&self.in_index[node as usize]);
            for &fi in incident {
                facts.insert(fi);
                let f = self.facts[fi as usize];
                let other = if f.head == node { f.tail } else { f.head };
                if let std::collections::hash_map::Entry::Vacant(slot) = dist.entry(other) {
                    slot.insert(d + 1);
                    queue.push_back(other);
                }
            }
        }
        let fact_set = facts
            .iter()
            .map(|&fi| {
                let f = self.facts[fi as usize];
                (
                    self.entities[f.head as usize].id.clone(),
                    self.relations[f.relation as usize].name.clone(),
                    self.entities[f.tail as usize].id.clone(),
                )
            })
            .collect();
        let members: BTreeSet<String> = dist
            .keys()
            .map(|&i| self.entities[i as usize].id.clone())
            .collect();
        let labels: BTreeMap<String, String> = members
            .iter()
            .map(|id| (id.clone(), self.label(id).to_string()))
            .collect();
        Ok(Self::build(fact_set, members, &labels))
    }

    /// `head relation-words tail`, using display labels.
    pub fn verbalize(&self, triple: &Triple) -> String {
        format!(
            "{} {} {}",
            self.label(&triple.head),
            relation_words(&triple.relation),
            self.label(&triple.tail)
        )
    }

    /// Writes the fact set as a triple TSV that `load_graph` reads back unchanged.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> io::Result<()> {
        for f in &self.facts {
            writeln!(
                out,
                "{}\t{}\t{}",
                self.entities[f.head as usize].id,
                self.relations[f.relation as usize].name,
                self.entities[f.tail as usize].id
            )?;
        }
        Ok(())
    }

    /// Writes non-trivial labels (label differs from id) as an `(id, label)` TSV.
    pub fn write_labels<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in self.entities.iter().filter(|e| e.label != e.id) {
            writeln!(out, "{}\t{}", e.id, e.label)?;
        }
        Ok(())
    }
}

fn split_fields(line: &str) -> Vec<&str> {
    line.trim_end_matches(['\r', '\n']).split('\t').collect()
}

/// Parses a triple TSV stream. `origin` is used only for error messages.
pub fn parse_triples<R: BufRead>(reader: R, origin: &Path) -> Result<(KnowledgeGraph, LoadStats)> {
    let mut set = BTreeSet::new();
    let mut stats = LoadStats::default();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| GraphError::Io {
            path: origin.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_fields(&line);
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(GraphError::Malformed {
                path: origin.to_path_buf(),
                line: n + 1,
                expected: 3,
                found: fields.iter().filter(|f| !f.is_empty()).count(),
            });
        }
        stats.lines += 1;
        if !set.insert((fields[0].to_string(), fields[1].to_string(), fields[2].to_string())) {
            stats.duplicates += 1;
        }
    }
    Ok((KnowledgeGraph::build(set, BTreeSet::new(), &BTreeMap::new()), stats))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| GraphError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Loads a `head\trelation\ttail` file, deduplicating repeated facts.
pub fn load_graph(path: &Path) -> Result<KnowledgeGraph> {
    load_graph_with_stats(path).map(|(g, _)| g)
}

pub fn load_graph_with_stats(path: &Path) -> Result<(KnowledgeGraph, LoadStats)> {
    parse_triples(open(path)?, path)
}

/// Reads an `id\tlabel` file.
pub fn load_labels(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut labels = BTreeMap::new();
    for (n, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|source| GraphError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_fields(&line);
        if fields.len() != 2 || fields[0].is_empty() {
            return Err(GraphError::Malformed {
                path: path.to_path_buf(),
                line: n + 1,
                expected: 2,
                found: fields.len(),
            });
        }
        labels.insert(fields[0].to_string(), fields[1].to_string());
    }
    Ok(labels)
}
