//! Dataset files, bag assembly with closed-world NA labels, and path
//! attachment from a universal graph.
//!
//! Directory layout:
//!
//! * `entities.txt`: `id<TAB>surface tokens`
//! * `relations.txt`: one relation id per line, `NA` first
//! * `triplets.tsv`: `head<TAB>relation<TAB>tail` (KG facts, no `NA`)
//! * `train/sentences.tsv`, `test/sentences.tsv`: `head<TAB>tail<TAB>pos1<TAB>pos2<TAB>tokens`
//! * `train/paths.tsv`, `test/paths.tsv` (optional): path dump lines
//! * `kg_edges.tsv`, `text_edges.tsv`, `kg_relations.txt`: the graph, when present

pub mod synthetic;
mod vocab;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

pub use vocab::{load_embeddings, BagEncoder, Vocab, UNK};

use crate::error::{Error, Result};
use crate::evaluation::NA;
use crate::graph::{cap_paths, Entity, PathEvidence, UniversalGraph};
use crate::textio::{display, fields, parse_usize, read_lines, tokens, write_file};

pub const NA_RELATION: &str = "NA";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub head_pos: usize,
    pub tail_pos: usize,
}

/// All evidence for one entity pair. `labels` is sorted and is `[NA]` when
/// the pair has no KG fact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bag {
    pub head: usize,
    pub tail: usize,
    pub labels: Vec<usize>,
    pub sentences: Vec<Sentence>,
    pub paths: Vec<PathEvidence>,
}

impl Bag {
    pub fn is_na(&self) -> bool {
        self.labels == [NA]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub entities: Vec<Entity>,
    /// `NA` at index 0.
    pub relations: Vec<String>,
    /// `(head, relation, tail)` indices.
    pub triplets: Vec<(usize, usize, usize)>,
    /// Sorted by `(head, tail)`.
    pub train: Vec<Bag>,
    pub test: Vec<Bag>,
}

#[derive(Default)]
struct PairEvidence {
    sentences: Vec<Sentence>,
    paths: Vec<PathEvidence>,
}

impl Dataset {
    pub fn bags(&self, split: Split) -> &[Bag] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn bags_mut(&mut self, split: Split) -> &mut Vec<Bag> {
        match split {
            Split::Train => &mut self.train,
            Split::Test => &mut self.test,
        }
    }

    /// Sorted relation labels of every pair with a KG fact.
    pub fn label_map(&self) -> HashMap<(usize, usize), Vec<usize>> {
        let mut map: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for &(h, r, t) in &self.triplets {
            let v = map.entry((h, t)).or_default();
            if !v.contains(&r) {
                v.push(r);
            }
        }
        for v in map.values_mut() {
            v.sort_unstable();
        }
        map
    }

    /// Closed-world label of a pair: its KG relations, or `[NA]`.
    pub fn labels_for(&self, map: &HashMap<(usize, usize), Vec<usize>>, head: usize, tail: usize) -> Vec<usize> {
        map.get(&(head, tail)).cloned().unwrap_or_else(|| vec![NA])
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("entities.txt");
        let mut entities = Vec::new();
        let mut entity_index = HashMap::new();
        for (n, line) in read_lines(&path)? {
            let f = fields(&line, 2, &path, n)?;
            if entity_index.insert(f[0].to_string(), entities.len()).is_some() {
                return Err(Error::parse(display(&path), n, format!("duplicate entity `{}`", f[0])));
            }
            entities.push(Entity { id: f[0].to_string(), surface: tokens(f[1], &path, n)? });
        }

        let path = dir.join("relations.txt");
        let mut relations = Vec::new();
        let mut relation_index = HashMap::new();
        for (n, line) in read_lines(&path)? {
            let f = fields(&line, 1, &path, n)?;
            if relations.is_empty() && f[0] != NA_RELATION {
                return Err(Error::parse(display(&path), n, format!("first relation must be `{NA_RELATION}`")));
            }
            if relation_index.insert(f[0].to_string(), relations.len()).is_some() {
                return Err(Error::parse(display(&path), n, format!("duplicate relation `{}`", f[0])));
            }
            relations.push(f[0].to_string());
        }
        if relations.is_empty() {
            return Err(Error::parse(display(&path), 1, "no relations"));
        }

        let lookup = |map: &HashMap<String, usize>, key: &str, what: &str, path: &Path, n: usize| {
            map.get(key).copied().ok_or_else(|| Error::parse(display(path), n, format!("unknown {what} `{key}`")))
        };

        let path = dir.join("triplets.tsv");
        let mut triplets = Vec::new();
        for (n, line) in read_lines(&path)? {
            let f = fields(&line, 3, &path, n)?;
            let h = lookup(&entity_index, f[0], "entity", &path, n)?;
            let r = lookup(&relation_index, f[1], "relation", &path, n)?;
            let t = lookup(&entity_index, f[2], "entity", &path, n)?;
            if r == NA {
                return Err(Error::parse(display(&path), n, "NA is not a KG relation"));
            }
            triplets.push((h, r, t));
        }

        let mut ds = Dataset { entities, relations, triplets, train: Vec::new(), test: Vec::new() };
        let labels = ds.label_map();
        for split in [Split::Train, Split::Test] {
            let mut pairs: BTreeMap<(usize, usize), PairEvidence> = BTreeMap::new();
            let path = dir.join(split.dir()).join("sentences.tsv");
            for (n, line) in read_lines(&path)? {
                let f = fields(&line, 5, &path, n)?;
                let h = lookup(&entity_index, f[0], "entity", &path, n)?;
                let t = lookup(&entity_index, f[1], "entity", &path, n)?;
                let head_pos = parse_usize(f[2], "pos1", &path, n)?;
                let tail_pos = parse_usize(f[3], "pos2", &path, n)?;
                let toks = tokens(f[4], &path, n)?;
                if h == t {
                    return Err(Error::parse(display(&path), n, "head and tail are the same entity"));
                }
                if head_pos >= toks.len() || tail_pos >= toks.len() || head_pos == tail_pos {
                    return Err(Error::parse(display(&path), n, "mention positions out of range or equal"));
                }
                pairs.entry((h, t)).or_default().sentences.push(Sentence { tokens: toks, head_pos, tail_pos });
            }
            let path = dir.join(split.dir()).join("paths.tsv");
            if path.exists() {
                for (n, line) in read_lines(&path)? {
                    let (e1, e2, ev) = PathEvidence::parse_dump_line(&line, |id| {
                        entity_index.get(id).map(|&i| ds.entities[i].surface.as_slice())
                    })
                    .map_err(|reason| Error::parse(display(&path), n, reason))?;
                    let h = lookup(&entity_index, &e1, "entity", &path, n)?;
                    let t = lookup(&entity_index, &e2, "entity", &path, n)?;
                    pairs.entry((h, t)).or_default().paths.push(ev);
                }
            }
            let bags = pairs
                .into_iter()
                .map(|((head, tail), ev)| Bag {
                    head,
                    tail,
                    labels: ds.labels_for(&labels, head, tail),
                    sentences: ev.sentences,
                    paths: ev.paths,
                })
                .collect();
            *ds.bags_mut(split) = bags;
        }
        ds.validate()?;
        let kg_edges = dir.join("kg_edges.tsv");
        if kg_edges.exists() {
            ds.check_test_facts_unseen(&kg_edges)?;
        }
        Ok(ds)
    }

    /// Non-NA pairs of the two splits must be disjoint.
    pub fn validate(&self) -> Result<()> {
        let train: HashSet<(usize, usize)> =
            self.train.iter().filter(|b| !b.is_na()).map(|b| (b.head, b.tail)).collect();
        if let Some(b) = self.test.iter().find(|b| !b.is_na() && train.contains(&(b.head, b.tail))) {
            return Err(Error::InvalidArgument(format!(
                "pair ({}, {}) has KG facts and evidence in both splits",
                self.entities[b.head].id, self.entities[b.tail].id
            )));
        }
        Ok(())
    }

    /// Test facts must not be graph edges.
    fn check_test_facts_unseen(&self, kg_edges: &Path) -> Result<()> {
        let mut edges = HashSet::new();
        for (n, line) in read_lines(kg_edges)? {
            let f = fields(&line, 3, kg_edges, n)?;
            edges.insert((f[0].to_string(), f[1].to_string(), f[2].to_string()));
        }
        for b in &self.test {
            for &r in b.labels.iter().filter(|&&r| r != NA) {
                let key = (self.entities[b.head].id.clone(), self.relations[r].clone(), self.entities[b.tail].id.clone());
                if edges.contains(&key) {
                    return Err(Error::InvalidArgument(format!(
                        "test fact ({}, {}, {}) is an edge of the graph",
                        key.0, key.1, key.2
                    )));
                }
            }
        }
        Ok(())
    }

    /// Writes every dataset file except the graph.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for d in [dir.to_path_buf(), dir.join("train"), dir.join("test")] {
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        let mut s = String::new();
        for e in &self.entities {
            let _ = writeln!(s, "{}\t{}", e.id, e.surface.join(" "));
        }
        write_file(&dir.join("entities.txt"), &s)?;
        let mut s = String::new();
        for r in &self.relations {
            let _ = writeln!(s, "{r}");
        }
        write_file(&dir.join("relations.txt"), &s)?;
        let mut s = String::new();
        for &(h, r, t) in &self.triplets {
            let _ = writeln!(s, "{}\t{}\t{}", self.entities[h].id, self.relations[r], self.entities[t].id);
        }
        write_file(&dir.join("triplets.tsv"), &s)?;
        for split in [Split::Train, Split::Test] {
            let (mut sents, mut paths) = (String::new(), String::new());
            for b in self.bags(split) {
                let (h, t) = (&self.entities[b.head].id, &self.entities[b.tail].id);
                for st in &b.sentences {
                    let _ = writeln!(sents, "{h}\t{t}\t{}\t{}\t{}", st.head_pos, st.tail_pos, st.tokens.join(" "));
                }
                for p in &b.paths {
                    let _ = writeln!(paths, "{}", p.dump_line(h, t));
                }
            }
            write_file(&dir.join(split.dir()).join("sentences.tsv"), &sents)?;
            write_file(&dir.join(split.dir()).join("paths.tsv"), &paths)?;
        }
        Ok(())
    }
}

/// Path search settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkSettings {
    pub max_steps: usize,
    pub num_walks: usize,
    pub max_paths: usize,
    pub seed: u64,
}

impl Default for WalkSettings {
    fn default() -> Self {
        WalkSettings { max_steps: 3, num_walks: 200, max_paths: 100, seed: 0 }
    }
}

/// Replaces every bag's paths with random-walk paths from `graph`.
/// Bag `i` of a split walks with seed `seed + i` (test bags offset by the
/// train count), so results do not depend on processing order.
pub fn attach_paths(dataset: &mut Dataset, graph: &UniversalGraph, walk: WalkSettings) -> Result<()> {
    let ids: Vec<String> = dataset.entities.iter().map(|e| e.id.clone()).collect();
    let mut offset = 0u64;
    for split in [Split::Train, Split::Test] {
        let bags = dataset.bags_mut(split);
        for (i, bag) in bags.iter_mut().enumerate() {
            let seed = walk.seed.wrapping_add(offset + i as u64);
            let paths = graph.random_walk_paths(&ids[bag.head], &ids[bag.tail], walk.max_steps, walk.num_walks, seed)?;
            bag.paths = cap_paths(paths, walk.max_paths, seed).iter().map(|p| p.evidence()).collect();
        }
        offset += bags.len() as u64;
    }
    Ok(())
}
