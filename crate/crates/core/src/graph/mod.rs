//! Universal graph: KG edges and textual edges over one entity set, plus
//! multi-hop path retrieval between target entity pairs.
//!
//! The graph is built once and then only read. All query methods take
//! `&self`, so a built graph can be shared across threads.

mod io;
mod path;
mod walk;

use std::collections::{HashMap, HashSet};

pub use io::{build_graph, load_graph, write_graph};
pub use path::{PathEvidence, PathType, UGPath, INVERSE_TOKEN, SEPARATOR_TOKEN};
pub use walk::{cap_paths, DEFAULT_ENUMERATION_CAP};

use crate::error::{Error, Result};

/// Dense index of an entity inside a [`UniversalGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub id: String,
    pub surface: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    Kg { relation: usize },
    /// `sentence` indexes [`UniversalGraph::sentence`]; positions are the
    /// mention indices of `src` and `dst` within it.
    Text { sentence: usize, src_pos: usize, dst_pos: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UGEdge {
    pub kind: EdgeKind,
    pub src: NodeId,
    pub dst: NodeId,
}

impl UGEdge {
    pub fn is_kg(&self) -> bool {
        matches!(self.kind, EdgeKind::Kg { .. })
    }
}

/// One step of a path: an edge and whether it is walked dst→src.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Hop {
    pub edge: usize,
    pub reversed: bool,
}

/// Splits a relation id such as `may_treat` or `/location/contains` into
/// surface tokens.
pub fn default_relation_surface(relation: &str) -> Vec<String> {
    let tokens: Vec<String> = relation
        .split(|c: char| c == '_' || c == '/' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect();
    if tokens.is_empty() {
        vec![relation.to_string()]
    } else {
        tokens
    }
}

#[derive(Debug, Clone, Default)]
pub struct UniversalGraph {
    entities: Vec<Entity>,
    entity_index: HashMap<String, NodeId>,
    relations: Vec<(String, Vec<String>)>,
    relation_index: HashMap<String, usize>,
    sentences: Vec<Vec<String>>,
    sentence_index: HashMap<Vec<String>, usize>,
    edges: Vec<UGEdge>,
    edge_set: HashSet<UGEdge>,
    adjacency: Vec<Vec<Hop>>,
}

impl UniversalGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_entity(&mut self, id: &str, surface: Vec<String>) -> Result<NodeId> {
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(Error::InvalidEntity { id: id.into(), reason: "id must be a non-empty token".into() });
        }
        if surface.is_empty() || surface.iter().any(|t| t.is_empty()) {
            return Err(Error::InvalidEntity { id: id.into(), reason: "empty surface".into() });
        }
        if self.entity_index.contains_key(id) {
            return Err(Error::DuplicateEntity(id.into()));
        }
        let node = NodeId(self.entities.len());
        self.entities.push(Entity { id: id.into(), surface });
        self.entity_index.insert(id.into(), node);
        self.adjacency.push(Vec::new());
        Ok(node)
    }

    /// Registers a KG relation. `surface` defaults to the id split on `_`/`/`.
    pub fn add_relation(&mut self, id: &str, surface: Option<Vec<String>>) -> usize {
        if let Some(&r) = self.relation_index.get(id) {
            if let Some(s) = surface {
                self.relations[r].1 = s;
            }
            return r;
        }
        let r = self.relations.len();
        let surface = surface.unwrap_or_else(|| default_relation_surface(id));
        self.relations.push((id.into(), surface));
        self.relation_index.insert(id.into(), r);
        r
    }

    pub fn node(&self, id: &str) -> Result<NodeId> {
        self.entity_index.get(id).copied().ok_or_else(|| Error::UnknownEntity(id.into()))
    }

    pub fn relation(&self, id: &str) -> Result<usize> {
        self.relation_index.get(id).copied().ok_or_else(|| Error::UnknownRelation(id.into()))
    }

    pub fn entity(&self, node: NodeId) -> &Entity {
        &self.entities[node.0]
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn relations(&self) -> &[(String, Vec<String>)] {
        &self.relations
    }

    pub fn relation_surface(&self, r: usize) -> &[String] {
        &self.relations[r].1
    }

    pub fn sentence(&self, idx: usize) -> &[String] {
        &self.sentences[idx]
    }

    pub fn edges(&self) -> &[UGEdge] {
        &self.edges
    }

    pub fn edge(&self, idx: usize) -> &UGEdge {
        &self.edges[idx]
    }

    pub fn node_count(&self) -> usize {
        self.entities.len()
    }

    /// Incident edges of `node` in insertion order, each oriented away from `node`.
    pub fn incident(&self, node: NodeId) -> &[Hop] {
        &self.adjacency[node.0]
    }

    /// Edges stored with `node` as their source.
    pub fn outgoing(&self, node: NodeId) -> impl Iterator<Item = &UGEdge> {
        self.adjacency[node.0].iter().filter(|h| !h.reversed).map(|h| &self.edges[h.edge])
    }

    /// Endpoints of a hop in walk order.
    pub fn hop_endpoints(&self, hop: Hop) -> (NodeId, NodeId) {
        let e = &self.edges[hop.edge];
        if hop.reversed {
            (e.dst, e.src)
        } else {
            (e.src, e.dst)
        }
    }

    pub fn add_kg_edge(&mut self, head: &str, relation: &str, tail: &str) -> Result<()> {
        let src = self.node(head)?;
        let dst = self.node(tail)?;
        let relation = self.relation(relation)?;
        self.insert_edge(UGEdge { kind: EdgeKind::Kg { relation }, src, dst });
        Ok(())
    }

    pub fn add_text_edge(
        &mut self,
        sentence: &[String],
        head: &str,
        head_pos: usize,
        tail: &str,
        tail_pos: usize,
    ) -> Result<()> {
        let src = self.node(head)?;
        let dst = self.node(tail)?;
        for pos in [head_pos, tail_pos] {
            if pos >= sentence.len() {
                return Err(Error::PositionOutOfBounds { pos, len: sentence.len() });
            }
        }
        if head_pos == tail_pos {
            return Err(Error::SamePosition(head_pos));
        }
        let idx = match self.sentence_index.get(sentence) {
            Some(&i) => i,
            None => {
                let i = self.sentences.len();
                self.sentences.push(sentence.to_vec());
                self.sentence_index.insert(sentence.to_vec(), i);
                i
            }
        };
        self.insert_edge(UGEdge {
            kind: EdgeKind::Text { sentence: idx, src_pos: head_pos, dst_pos: tail_pos },
            src,
            dst,
        });
        Ok(())
    }

    fn insert_edge(&mut self, edge: UGEdge) {
        if !self.edge_set.insert(edge.clone()) {
            return;
        }
        let idx = self.edges.len();
        self.adjacency[edge.src.0].push(Hop { edge: idx, reversed: false });
        if edge.dst != edge.src {
            self.adjacency[edge.dst.0].push(Hop { edge: idx, reversed: true });
        }
        self.edges.push(edge);
    }
}
