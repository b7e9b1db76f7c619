//! In-memory triple store.
//!
//! Entity and relation labels are interned into dense `u32` handles. Triples
//! are deduplicated and indexed twice in compressed sparse row layout: once by
//! head (sorted by relation, then tail) and once by tail (sorted by relation,
//! then head). Both indexes are immutable after [`GraphBuilder::build`].

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label prefix for relations materialized by [`LoadOptions::inverse_relations`].
pub const INVERSE_PREFIX: &str = "~";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl EntityId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

/// Bijective label <-> dense handle table.
#[derive(Clone, Debug, Default)]
pub struct Vocab {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = u32::try_from(self.labels.len()).expect("vocabulary exceeds u32 handles");
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), id);
        id
    }

    pub fn get(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
}

impl fmt::Display for GraphStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>12}", "entities", self.entities)?;
        writeln!(f, "{:<10} {:>12}", "relations", self.relations)?;
        write!(f, "{:<10} {:>12}", "triples", self.triples)
    }
}

/// One direction of the adjacency index. `offsets[v]..offsets[v + 1]` is the
/// edge range of vertex `v`; within it edges are sorted by `(relation, other)`.
#[derive(Clone, Debug, Default)]
struct Csr {
    offsets: Vec<usize>,
    relations: Vec<RelationId>,
    others: Vec<EntityId>,
}

impl Csr {
    fn build(n: usize, mut edges: Vec<(u32, u32, u32)>) -> Self {
        edges.sort_unstable();
        edges.dedup();
        let mut offsets = vec![0usize; n + 1];
        for &(v, _, _) in &edges {
            offsets[v as usize + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let relations = edges.iter().map(|&(_, r, _)| RelationId(r)).collect();
        let others = edges.iter().map(|&(_, _, o)| EntityId(o)).collect();
        Csr {
            offsets,
            relations,
            others,
        }
    }

    #[inline]
    fn range(&self, v: EntityId) -> std::ops::Range<usize> {
        self.offsets[v.index()]..self.offsets[v.index() + 1]
    }

    fn matching(&self, v: EntityId, r: RelationId) -> &[EntityId] {
        let range = self.range(v);
        let rels = &self.relations[range.clone()];
        let lo = rels.partition_point(|&x| x < r);
        let hi = rels.partition_point(|&x| x <= r);
        &self.others[range.start + lo..range.start + hi]
    }

    fn edges(&self, v: EntityId) -> impl ExactSizeIterator<Item = (RelationId, EntityId)> + '_ {
        let range = self.range(v);
        self.relations[range.clone()]
            .iter()
            .copied()
            .zip(self.others[range].iter().copied())
    }
}

/// Immutable directed labeled multigraph. Safe to share across threads.
#[derive(Clone, Debug, Default)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    forward: Csr,
    reverse: Csr,
}

impl KnowledgeGraph {
    pub fn empty() -> Self {
        GraphBuilder::new().build()
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats {
            entities: self.entities.len(),
            relations: self.relations.len(),
            triples: self.forward.others.len(),
        }
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_triples(&self) -> usize {
        self.forward.others.len()
    }

    pub fn entity_vocab(&self) -> &Vocab {
        &self.entities
    }

    pub fn relation_vocab(&self) -> &Vocab {
        &self.relations
    }

    pub fn entity_id(&self, label: &str) -> Option<EntityId> {
        self.entities.get(label).map(EntityId)
    }

    pub fn relation_id(&self, label: &str) -> Option<RelationId> {
        self.relations.get(label).map(RelationId)
    }

    /// Label of a valid entity handle. Panics on an out-of-range handle; use
    /// [`KnowledgeGraph::check_entity`] first when the handle is untrusted.
    pub fn entity_label(&self, id: EntityId) -> &str {
        self.entities.label(id.0).expect("entity handle out of range")
    }

    pub fn relation_label(&self, id: RelationId) -> &str {
        self.relations.label(id.0).expect("relation handle out of range")
    }

    pub fn check_entity(&self, id: EntityId) -> Result<()> {
        if id.index() < self.entities.len() {
            Ok(())
        } else {
            Err(Error::InvalidEntity(id.0))
        }
    }

    pub fn check_relation(&self, id: RelationId) -> Result<()> {
        if id.index() < self.relations.len() {
            Ok(())
        } else {
            Err(Error::InvalidRelation(id.0))
        }
    }

    /// Tails `t` with `(head, relation, t)` in the graph, ascending by handle.
    pub fn neighbors(&self, head: EntityId, relation: RelationId) -> Result<&[EntityId]> {
        self.check_entity(head)?;
        self.check_relation(relation)?;
        Ok(self.forward.matching(head, relation))
    }

    /// Unchecked variant of [`KnowledgeGraph::neighbors`] for hot loops over
    /// handles that came from this graph.
    #[inline]
    pub(crate) fn tails(&self, head: EntityId, relation: RelationId) -> &[EntityId] {
        self.forward.matching(head, relation)
    }

    /// Outgoing `(relation, tail)` pairs of `head`, sorted.
    pub fn out_edges(&self, head: EntityId) -> impl ExactSizeIterator<Item = (RelationId, EntityId)> + '_ {
        self.forward.edges(head)
    }

    /// Incoming `(relation, head)` pairs of `tail`, sorted.
    pub fn in_edges(&self, tail: EntityId) -> impl ExactSizeIterator<Item = (RelationId, EntityId)> + '_ {
        self.reverse.edges(tail)
    }

    /// Distinct relations leaving `head`, ascending.
    pub fn relations_of(&self, head: EntityId) -> Vec<RelationId> {
        let mut rels: Vec<RelationId> = self.forward.relations[self.forward.range(head)].to_vec();
        rels.dedup();
        rels
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        if self.check_entity(triple.head).is_err() || self.check_relation(triple.relation).is_err() {
            return false;
        }
        self.tails(triple.head, triple.relation)
            .binary_search(&triple.tail)
            .is_ok()
    }

    /// All triples in `(head, relation, tail)` handle order.
    pub fn triples(&self) -> impl Iterator<Item = Triple> + '_ {
        (0..self.entities.len() as u32).flat_map(move |h| {
            let head = EntityId(h);
            self.forward
                .edges(head)
                .map(move |(relation, tail)| Triple { head, relation, tail })
        })
    }

    /// Writes the graph as tab-separated triples, one per line, sorted by
    /// label so the output does not depend on interning order.
    pub fn write_tsv<W: Write>(&self, mut writer: W) -> Result<()> {
        let mut rows: Vec<[&str; 3]> = self
            .triples()
            .map(|t| {
                [
                    self.entity_label(t.head),
                    self.relation_label(t.relation),
                    self.entity_label(t.tail),
                ]
            })
            .collect();
        rows.sort_unstable();
        for [h, r, t] in rows {
            writeln!(writer, "{h}\t{r}\t{t}")?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Triples reachable on a forward walk of at most `max_hops` edges from any
    /// seed, re-interned into a fresh dense graph.
    pub fn extract_subgraph(&self, seeds: &[EntityId], max_hops: usize) -> Result<KnowledgeGraph> {
        if seeds.is_empty() {
            return Err(Error::domain("subgraph extraction needs at least one seed"));
        }
        if max_hops == 0 {
            return Err(Error::domain("max_hops must be at least 1"));
        }
        for &s in seeds {
            self.check_entity(s)?;
        }
        // Every vertex within max_hops - 1 contributes all its outgoing triples.
        let mut visited: HashSet<EntityId> = seeds.iter().copied().collect();
        let mut frontier: Vec<EntityId> = visited.iter().copied().collect();
        frontier.sort_unstable();
        let mut expand: Vec<EntityId> = frontier.clone();
        for _ in 1..max_hops {
            let mut next = Vec::new();
            for &v in &frontier {
                for (_, t) in self.out_edges(v) {
                    if visited.insert(t) {
                        next.push(t);
                    }
                }
            }
            next.sort_unstable();
            expand.extend_from_slice(&next);
            frontier = next;
        }
        expand.sort_unstable();

        let mut builder = GraphBuilder::new();
        for &h in &expand {
            for (r, t) in self.out_edges(h) {
                builder.add(self.entity_label(h), self.relation_label(r), self.entity_label(t));
            }
        }
        Ok(builder.build())
    }
}

/// Options for reading triple files.
#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    /// Materialize `(t, ~r, h)` for every `(h, r, t)`.
    pub inverse_relations: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TripleFormat {
    Tsv,
    TsvGzip,
    /// Gzip if the stream starts with the gzip magic bytes, plain TSV otherwise.
    Auto,
}

/// Accumulates labeled triples; duplicates collapse at [`GraphBuilder::build`].
#[derive(Debug, Default)]
pub struct GraphBuilder {
    entities: Vocab,
    relations: Vocab,
    edges: Vec<(u32, u32, u32)>,
    inverse: bool,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_options(options: &LoadOptions) -> Self {
        GraphBuilder {
            inverse: options.inverse_relations,
            ..Self::default()
        }
    }

    pub fn add(&mut self, head: &str, relation: &str, tail: &str) -> Triple {
        let h = self.entities.intern(head);
        let r = self.relations.intern(relation);
        let t = self.entities.intern(tail);
        self.edges.push((h, r, t));
        if self.inverse {
            let inv = self.relations.intern(&format!("{INVERSE_PREFIX}{relation}"));
            self.edges.push((t, inv, h));
        }
        Triple {
            head: EntityId(h),
            relation: RelationId(r),
            tail: EntityId(t),
        }
    }

    pub fn build(self) -> KnowledgeGraph {
        let n = self.entities.len();
        let reverse_edges = self.edges.iter().map(|&(h, r, t)| (t, r, h)).collect();
        let forward = Csr::build(n, self.edges);
        let reverse = Csr::build(n, reverse_edges);
        KnowledgeGraph {
            entities: self.entities,
            relations: self.relations,
            forward,
            reverse,
        }
    }
}

fn parse_tsv<R: BufRead>(reader: R, builder: &mut GraphBuilder) -> Result<()> {
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        if let Some(pos) = fields.iter().position(|f| f.is_empty()) {
            let name = ["head", "relation", "tail"][pos];
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("empty {name} field"),
            });
        }
        builder.add(fields[0], fields[1], fields[2]);
    }
    Ok(())
}

/// Reads a triple stream. Empty input yields an empty graph.
pub fn load_graph<R: Read>(source: R, format: TripleFormat, options: &LoadOptions) -> Result<KnowledgeGraph> {
    let mut reader = BufReader::new(source);
    let gzip = match format {
        TripleFormat::Tsv => false,
        TripleFormat::TsvGzip => true,
        TripleFormat::Auto => {
            let head = reader.fill_buf()?;
            head.len() >= 2 && head[0] == 0x1f && head[1] == 0x8b
        }
    };
    let mut builder = GraphBuilder::with_options(options);
    if gzip {
        parse_tsv(BufReader::new(MultiGzDecoder::new(reader)), &mut builder)?;
    } else {
        parse_tsv(reader, &mut builder)?;
    }
    Ok(builder.build())
}

pub fn load_graph_file(path: impl AsRef<Path>, options: &LoadOptions) -> Result<KnowledgeGraph> {
    let file = File::open(path)?;
    load_graph(file, TripleFormat::Auto, options)
}

/// Handles for the given labels; the first unknown label is an error.
pub fn resolve_entities(g: &KnowledgeGraph, labels: &[String]) -> Result<Vec<EntityId>> {
    labels
        .iter()
        .map(|l| g.entity_id(l).ok_or_else(|| Error::UnknownEntity(l.clone())))
        .collect()
}

/// Handles for the labels known to the graph; unknown labels are dropped.
pub fn resolve_known(g: &KnowledgeGraph, labels: &[String]) -> Vec<EntityId> {
    let mut ids: Vec<EntityId> = labels.iter().filter_map(|l| g.entity_id(l)).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}
