//! Synthetic universal graphs with planted two-hop rules.
//!
//! Each target relation `R_k` holds for a pair `(h, t)` exactly when the
//! graph contains `p_k(h, m)` followed by `q_k(m, t)` for some middle
//! entity `m`. Each hop is stored either as a KG edge or as a sentence
//! carrying the hop's relation name as a word; the KG rate is lower in the
//! test split. Target facts themselves are never graph edges. Sentence
//! evidence for the pair names the relation through a signature word, and
//! a fixed fraction of those sentences is corrupted.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{attach_paths, Bag, Dataset, Sentence, Split, WalkSettings, NA_RELATION};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::evaluation::{sort_records, EvalRecord, NA};
use crate::graph::{write_graph, EdgeKind, Entity, UniversalGraph};
use crate::textio::write_file;

/// `relation(h, t) ⇐ first(h, m) ∧ second(m, t)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedRule {
    /// Index into the relation vocabulary (1-based; 0 is NA).
    pub relation: usize,
    pub first: String,
    pub second: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub entities: usize,
    /// Non-NA target relations.
    pub relations: usize,
    pub rules: Vec<PlantedRule>,
    pub positive_pairs: usize,
    pub na_pairs: usize,
    pub test_fraction: f64,
    /// Fraction of sentence evidences whose relation signal is corrupted.
    pub noise: f64,
    /// Inclusive range of sentences per bag.
    pub sentences_per_bag: (usize, usize),
    /// Probability that a rule hop is a KG edge rather than a sentence.
    pub kg_hop_rate_train: f64,
    pub kg_hop_rate_test: f64,
    pub distractor_kg_edges: usize,
    pub distractor_text_edges: usize,
    /// Path search; `max_paths` is the paths-per-bag cap.
    pub walk: WalkSettings,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(seed: u64) -> Self {
        let relations = 8;
        SyntheticSpec {
            entities: 400,
            relations,
            rules: Self::default_rules(relations),
            positive_pairs: 1500,
            na_pairs: 1500,
            test_fraction: 0.2,
            noise: 0.3,
            sentences_per_bag: (1, 3),
            kg_hop_rate_train: 0.7,
            kg_hop_rate_test: 0.3,
            distractor_kg_edges: 150,
            distractor_text_edges: 150,
            walk: WalkSettings { max_steps: 2, num_walks: 3000, max_paths: 20, seed },
            seed,
        }
    }

    /// `R_k ⇐ p_k ∘ q_k` for every target relation.
    pub fn default_rules(relations: usize) -> Vec<PlantedRule> {
        (1..=relations).map(|k| PlantedRule { relation: k, first: format!("p{k}"), second: format!("q{k}") }).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("synthetic spec: {what}")));
        if !(0.0..1.0).contains(&self.noise) {
            return bad("noise must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad("test fraction must lie in [0, 1)");
        }
        for rate in [self.kg_hop_rate_train, self.kg_hop_rate_test] {
            if !(0.0..=1.0).contains(&rate) {
                return bad("KG hop rates must lie in [0, 1]");
            }
        }
        if self.relations == 0 || self.entities < 4 {
            return bad("need at least one relation and four entities");
        }
        let (lo, hi) = self.sentences_per_bag;
        if lo == 0 || lo > hi {
            return bad("sentences per bag must be a range starting at 1 or more");
        }
        let mut covered = vec![false; self.relations + 1];
        let mut aux = HashSet::new();
        for r in &self.rules {
            if r.relation == NA || r.relation > self.relations {
                return bad(&format!("rule over missing relation {}", r.relation));
            }
            if covered[r.relation] {
                return bad(&format!("relation {} has two rules", r.relation));
            }
            covered[r.relation] = true;
            if r.first == r.second || !aux.insert(r.first.clone()) || !aux.insert(r.second.clone()) {
                return bad("rule body relations must be distinct");
            }
        }
        if covered[1..].iter().any(|&c| !c) {
            return bad("every relation needs a rule");
        }
        let pairs = self.positive_pairs + self.na_pairs;
        if pairs > self.entities * (self.entities - 1) / 4 {
            return bad("too many pairs for the entity count");
        }
        if self.positive_pairs.div_ceil(self.relations) + 2 > self.entities {
            return bad("too few entities for distinct rule middles");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub graph: UniversalGraph,
    pub rules: Vec<PlantedRule>,
    /// Sentence evidences over both splits.
    pub sentences: usize,
    pub corrupted: usize,
}

const FILLERS: usize = 40;


fn filler<R: Rng>(rng: &mut R) -> String {
    format!("w{}", rng.gen_range(0..FILLERS))
}

fn signature<R: Rng>(rng: &mut R, relation: usize) -> String {
    format!("s{relation}{}", ["a", "b", "c"][rng.gen_range(0..3)])
}

/// `[pre] first [middle with `word` inside] second [post]`; returns the
/// tokens and the positions of `first` and `second`.
fn template<R: Rng>(rng: &mut R, first: &str, second: &str, word: Option<String>) -> (Vec<String>, usize, usize) {
    let mut t: Vec<String> = (0..rng.gen_range(0..3)).map(|_| filler(rng)).collect();
    let p1 = t.len();
    t.push(first.to_string());
    let mut middle: Vec<String> = (0..rng.gen_range(1..4)).map(|_| filler(rng)).collect();
    if let Some(w) = word {
        let at = rng.gen_range(0..=middle.len());
        middle.insert(at, w);
    }
    t.extend(middle);
    let p2 = t.len();
    t.push(second.to_string());
    t.extend((0..rng.gen_range(0..3)).map(|_| filler(rng)));
    (t, p1, p2)
}

struct PairPlan {
    head: usize,
    tail: usize,
    label: usize,
    split: Split,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.entities;
    let entities: Vec<Entity> = (0..n).map(|i| Entity { id: format!("E{i}"), surface: vec![format!("e{i}")] }).collect();
    let mut relations = vec![NA_RELATION.to_string()];
    relations.extend((1..=spec.relations).map(|k| format!("R{k}")));

    // Distinct unordered pairs, labels round-robin over relations.
    let mut used = HashSet::new();
    let mut plans = Vec::new();
    let total = spec.positive_pairs + spec.na_pairs;
    while plans.len() < total {
        let (h, t) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if h == t || !used.insert((h.min(t), h.max(t))) {
            continue;
        }
        let label = if plans.len() < spec.positive_pairs { 1 + plans.len() % spec.relations } else { NA };
        plans.push(PairPlan { head: h, tail: t, label, split: Split::Train });
    }
    // Test share per label class.
    for label in 0..=spec.relations {
        let mut idx: Vec<usize> = (0..plans.len()).filter(|&i| plans[i].label == label).collect();
        idx.shuffle(&mut rng);
        let k = (spec.test_fraction * idx.len() as f64).round() as usize;
        for &i in &idx[..k] {
            plans[i].split = Split::Test;
        }
    }

    let mut g = UniversalGraph::new();
    for e in &entities {
        g.add_entity(&e.id, e.surface.clone())?;
    }
    let rule_of: HashMap<usize, &PlantedRule> = spec.rules.iter().map(|r| (r.relation, r)).collect();
    for r in &spec.rules {
        g.add_relation(&r.first, None);
        g.add_relation(&r.second, None);
    }
    let distractor_relations: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
    for r in &distractor_relations {
        g.add_relation(r, None);
    }

    // Rule chains through a fresh middle per rule.
    let mut middles: HashMap<usize, HashSet<usize>> = HashMap::new();
    for p in plans.iter().filter(|p| p.label != NA) {
        let rule = rule_of[&p.label];
        let taken = middles.entry(p.label).or_default();
        let m = loop {
            let m = rng.gen_range(0..n);
            if m != p.head && m != p.tail && !taken.contains(&m) {
                break m;
            }
        };
        taken.insert(m);
        let rate = if p.split == Split::Train { spec.kg_hop_rate_train } else { spec.kg_hop_rate_test };
        for (src, aux, dst) in [(p.head, &rule.first, m), (m, &rule.second, p.tail)] {
            if rng.gen_bool(rate) {
                g.add_kg_edge(&entities[src].id, aux, &entities[dst].id)?;
            } else {
                let (toks, p1, p2) = template(&mut rng, &entities[src].surface[0], &entities[dst].surface[0], Some(aux.clone()));
                g.add_text_edge(&toks, &entities[src].id, p1, &entities[dst].id, p2)?;
            }
        }
    }

    // Sentence evidence for every pair.
    let mut sentences: Vec<(usize, Sentence)> = Vec::new();
    for (i, p) in plans.iter().enumerate() {
        let count = rng.gen_range(spec.sentences_per_bag.0..=spec.sentences_per_bag.1);
        for _ in 0..count {
            let word = if p.label == NA { None } else { Some(signature(&mut rng, p.label)) };
            let (h, t) = (&entities[p.head].surface[0], &entities[p.tail].surface[0]);
            let s = if rng.gen_bool(0.5) {
                let (tokens, a, b) = template(&mut rng, h, t, word);
                Sentence { tokens, head_pos: a, tail_pos: b }
            } else {
                let (tokens, a, b) = template(&mut rng, t, h, word);
                Sentence { tokens, head_pos: b, tail_pos: a }
            };
            sentences.push((i, s));
        }
    }
    let corrupted = (spec.noise * sentences.len() as f64).floor() as usize;
    let mut chosen = sample(&mut rng, sentences.len(), corrupted).into_vec();
    chosen.sort_unstable();
    for &c in &chosen {
        let (i, s) = &mut sentences[c];
        let label = plans[*i].label;
        let lo = s.head_pos.min(s.tail_pos) + 1;
        let hi = s.head_pos.max(s.tail_pos);
        if label == NA {
            let other = rng.gen_range(1..=spec.relations);
            let at = rng.gen_range(lo..hi);
            s.tokens[at] = signature(&mut rng, other);
        } else {
            let at = (lo..hi).find(|&k| s.tokens[k].starts_with('s')).expect("signature present");
            s.tokens[at] = if rng.gen_bool(0.5) {
                let other = 1 + (label - 1 + rng.gen_range(1..spec.relations.max(2))) % spec.relations;
                signature(&mut rng, other)
            } else {
                filler(&mut rng)
            };
        }
    }

    // The corpus sentences are textual edges too, plus background noise.
    for (i, s) in &sentences {
        let p = &plans[*i];
        g.add_text_edge(&s.tokens, &entities[p.head].id, s.head_pos, &entities[p.tail].id, s.tail_pos)?;
    }
    for _ in 0..spec.distractor_kg_edges {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b {
            let r = distractor_relations.choose(&mut rng).expect("non-empty");
            g.add_kg_edge(&entities[a].id, r, &entities[b].id)?;
        }
    }
    for _ in 0..spec.distractor_text_edges {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b {
            let (toks, p1, p2) = template(&mut rng, &entities[a].surface[0], &entities[b].surface[0], None);
            g.add_text_edge(&toks, &entities[a].id, p1, &entities[b].id, p2)?;
        }
    }

    let mut by_pair: HashMap<usize, Vec<Sentence>> = HashMap::new();
    for (i, s) in sentences {
        by_pair.entry(i).or_default().push(s);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut triplets = Vec::new();
    for (i, p) in plans.iter().enumerate() {
        if p.label != NA {
            triplets.push((p.head, p.label, p.tail));
        }
        let bag = Bag {
            head: p.head,
            tail: p.tail,
            labels: vec![p.label],
            sentences: by_pair.remove(&i).unwrap_or_default(),
            paths: Vec::new(),
        };
        match p.split {
            Split::Train => train.push(bag),
            Split::Test => test.push(bag),
        }
    }
    train.sort_by_key(|b| (b.head, b.tail));
    test.sort_by_key(|b| (b.head, b.tail));
    let total_sentences = train.iter().chain(&test).map(|b| b.sentences.len()).sum();
    let mut dataset = Dataset { entities, relations, triplets, train, test };
    attach_paths(&mut dataset, &g, spec.walk)?;
    dataset.validate()?;
    Ok(Synthetic { dataset, graph: g, rules: spec.rules.clone(), sentences: total_sentences, corrupted })
}

/// Desk-scale training settings matched to the generator's defaults.
pub fn desk_config(seed: u64) -> TrainConfig {
    TrainConfig {
        lr_net: 0.2,
        lr_kg: 0.05,
        batch_size: 20,
        epochs: 12,
        pretrain_epochs: 3,
        seed,
        maxdist: 15,
        filters: 32,
        word_dim: 16,
        pos_dim: 4,
        kg_dim: 16,
        max_paths: 20,
        j: 3,
        ..TrainConfig::default()
    }
}

impl Synthetic {
    /// Writes the dataset, the graph, `rules.tsv` and `config.txt`.
    pub fn write(&self, dir: &Path, config: &TrainConfig) -> Result<()> {
        self.dataset.save(dir)?;
        write_graph(&self.graph, dir)?;
        let mut s = String::new();
        for r in &self.rules {
            let _ = writeln!(s, "{}\t{}\t{}", self.dataset.relations[r.relation], r.first, r.second);
        }
        write_file(&dir.join("rules.tsv"), &s)?;
        write_file(&dir.join("config.txt"), &config.to_text())
    }
}

/// Rule label of an edge read in its stored direction: the KG relation, or
/// the rule relation named inside the sentence.
fn edge_rule_label<'a>(g: &'a UniversalGraph, edge: usize, markers: &HashSet<&str>) -> Option<&'a str> {
    match &g.edge(edge).kind {
        EdgeKind::Kg { relation } => Some(g.relations()[*relation].0.as_str()),
        EdgeKind::Text { sentence, .. } => {
            g.sentence(*sentence).iter().find(|w| markers.contains(w.as_str())).map(String::as_str)
        }
    }
}

/// Scores every (bag, non-NA relation) of `split` with 1 when the graph
/// holds the relation's rule chain from head to tail, else 0.
pub fn rule_oracle(g: &UniversalGraph, rules: &[PlantedRule], ds: &Dataset, split: Split) -> Result<Vec<EvalRecord>> {
    let markers: HashSet<&str> = rules.iter().flat_map(|r| [r.first.as_str(), r.second.as_str()]).collect();
    let mut records = Vec::new();
    for (pair, bag) in ds.bags(split).iter().enumerate() {
        let h = g.node(&ds.entities[bag.head].id)?;
        let t = g.node(&ds.entities[bag.tail].id)?;
        for relation in 1..ds.relations.len() {
            let chain = rules.iter().filter(|r| r.relation == relation).any(|r| {
                g.incident(h).iter().filter(|hop| !hop.reversed).any(|first| {
                    let m = g.edge(first.edge).dst;
                    edge_rule_label(g, first.edge, &markers) == Some(r.first.as_str())
                        && g.incident(m).iter().filter(|hop| !hop.reversed).any(|second| {
                            g.edge(second.edge).dst == t
                                && edge_rule_label(g, second.edge, &markers) == Some(r.second.as_str())
                        })
                })
            });
            records.push(EvalRecord {
                pair,
                head: bag.head,
                tail: bag.tail,
                relation,
                score: if chain { 1.0 } else { 0.0 },
                gold: bag.labels.contains(&relation),
            });
        }
    }
    sort_records(&mut records);
    Ok(records)
}
