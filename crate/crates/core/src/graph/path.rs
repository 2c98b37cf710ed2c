use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use super::{EdgeKind, Hop, NodeId, UniversalGraph};
use crate::error::{Error, Result};

/// Joins hop renderings in a linearized path.
pub const SEPARATOR_TOKEN: &str = "<sep>";
/// Precedes the relation tokens of a KG hop walked against its direction.
pub const INVERSE_TOKEN: &str = "<inv>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PathType {
    Kg,
    Textual,
    Hybrid,
}

impl PathType {
    pub const ALL: [PathType; 3] = [PathType::Kg, PathType::Textual, PathType::Hybrid];

    pub fn as_str(self) -> &'static str {
        match self {
            PathType::Kg => "KG",
            PathType::Textual => "Textual",
            PathType::Hybrid => "Hybrid",
        }
    }

    /// KG iff every hop is a KG edge, Textual iff every hop is textual.
    pub fn from_hop_kinds(kg_flags: impl IntoIterator<Item = bool>) -> Option<PathType> {
        let (mut kg, mut text) = (0usize, 0usize);
        for is_kg in kg_flags {
            if is_kg {
                kg += 1;
            } else {
                text += 1;
            }
        }
        match (kg, text) {
            (0, 0) => None,
            (_, 0) => Some(PathType::Kg),
            (0, _) => Some(PathType::Textual),
            _ => Some(PathType::Hybrid),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PathType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PathType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "KG" => Ok(PathType::Kg),
            "Textual" => Ok(PathType::Textual),
            "Hybrid" => Ok(PathType::Hybrid),
            other => Err(Error::InvalidArgument(format!("unknown path type `{other}`"))),
        }
    }
}

/// A path between a target pair, linearized to a token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UGPath {
    pub hops: Vec<Hop>,
    pub head: NodeId,
    pub tail: NodeId,
    pub path_type: PathType,
    pub tokens: Vec<String>,
    pub head_pos: usize,
    pub tail_pos: usize,
    /// Token count.
    pub tau1: usize,
    /// Distinct token types.
    pub tau2: usize,
}

impl UGPath {
    pub fn evidence(&self) -> PathEvidence {
        PathEvidence {
            tokens: self.tokens.clone(),
            path_type: self.path_type,
            head_pos: self.head_pos,
            tail_pos: self.tail_pos,
            tau1: self.tau1,
            tau2: self.tau2,
        }
    }
}

/// The graph-free view of a path used as model input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathEvidence {
    pub tokens: Vec<String>,
    pub path_type: PathType,
    pub head_pos: usize,
    pub tail_pos: usize,
    pub tau1: usize,
    pub tau2: usize,
}

pub fn token_types(tokens: &[String]) -> usize {
    tokens.iter().collect::<HashSet<_>>().len()
}

fn find_first(tokens: &[String], surface: &[String]) -> Option<usize> {
    if surface.is_empty() || surface.len() > tokens.len() {
        return None;
    }
    tokens.windows(surface.len()).position(|w| w == surface)
}

impl PathEvidence {
    /// Builds evidence from linearized tokens. Mention anchors are the first
    /// occurrence of each entity surface, falling back to the given defaults.
    pub fn new(
        tokens: Vec<String>,
        path_type: PathType,
        head_surface: &[String],
        tail_surface: &[String],
        fallback: (usize, usize),
    ) -> Self {
        let head_pos = find_first(&tokens, head_surface).unwrap_or(fallback.0);
        let tail_pos = find_first(&tokens, tail_surface).unwrap_or(fallback.1);
        let tau1 = tokens.len();
        let tau2 = token_types(&tokens);
        PathEvidence { tokens, path_type, head_pos, tail_pos, tau1, tau2 }
    }

    /// Parses one path-dump line: `e1 e2 type τ1 τ2 tokens`, tab-separated,
    /// tokens space-joined. τ1/τ2 must agree with the tokens.
    pub fn parse_dump_line<'a, S>(line: &str, surface: S) -> std::result::Result<(String, String, PathEvidence), String>
    where
        S: Fn(&str) -> Option<&'a [String]>,
    {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(format!("expected 6 tab-separated fields, found {}", fields.len()));
        }
        let (e1, e2) = (fields[0], fields[1]);
        let path_type: PathType = fields[2].parse().map_err(|e: Error| e.to_string())?;
        let tau1: usize = fields[3].parse().map_err(|_| format!("bad tau1 `{}`", fields[3]))?;
        let tau2: usize = fields[4].parse().map_err(|_| format!("bad tau2 `{}`", fields[4]))?;
        let tokens: Vec<String> = fields[5].split(' ').map(str::to_string).collect();
        if tokens.iter().any(String::is_empty) {
            return Err("empty token in path".into());
        }
        let hs = surface(e1).ok_or_else(|| format!("unknown entity `{e1}`"))?;
        let ts = surface(e2).ok_or_else(|| format!("unknown entity `{e2}`"))?;
        let last = tokens.len() - 1;
        let ev = PathEvidence::new(tokens, path_type, hs, ts, (0, last));
        if ev.tau1 != tau1 || ev.tau2 != tau2 {
            return Err(format!("tau mismatch: stored ({tau1}, {tau2}), recomputed ({}, {})", ev.tau1, ev.tau2));
        }
        Ok((e1.to_string(), e2.to_string(), ev))
    }

    pub fn dump_line(&self, e1: &str, e2: &str) -> String {
        format!("{e1}\t{e2}\t{}\t{}\t{}\t{}", self.path_type, self.tau1, self.tau2, self.tokens.join(" "))
    }
}

impl UniversalGraph {
    pub fn classify_path_type(&self, hops: &[Hop]) -> Option<PathType> {
        PathType::from_hop_kinds(hops.iter().map(|h| self.edge(h.edge).is_kg()))
    }

    /// Renders hops in walk order. A KG hop becomes `src-surface [<inv>]
    /// relation-tokens dst-surface`; a textual hop is its sentence verbatim.
    /// Renderings are joined by [`SEPARATOR_TOKEN`]. Returns the tokens and
    /// the structural mention positions of the path's first and last entity.
    pub fn linearize_path(&self, hops: &[Hop]) -> (Vec<String>, usize, usize) {
        let mut tokens = Vec::new();
        let mut head_pos = 0;
        let mut tail_pos = 0;
        for (i, &hop) in hops.iter().enumerate() {
            if i > 0 {
                tokens.push(SEPARATOR_TOKEN.to_string());
            }
            let offset = tokens.len();
            let (from, to) = self.hop_endpoints(hop);
            let edge = self.edge(hop.edge);
            let (from_pos, to_pos) = match edge.kind {
                EdgeKind::Kg { relation } => {
                    tokens.extend(self.entity(from).surface.iter().cloned());
                    if hop.reversed {
                        tokens.push(INVERSE_TOKEN.to_string());
                    }
                    tokens.extend(self.relation_surface(relation).iter().cloned());
                    let to_pos = tokens.len() - offset;
                    tokens.extend(self.entity(to).surface.iter().cloned());
                    (0, to_pos)
                }
                EdgeKind::Text { sentence, src_pos, dst_pos } => {
                    tokens.extend(self.sentence(sentence).iter().cloned());
                    if hop.reversed {
                        (dst_pos, src_pos)
                    } else {
                        (src_pos, dst_pos)
                    }
                }
            };
            if i == 0 {
                head_pos = offset + from_pos;
            }
            if i + 1 == hops.len() {
                tail_pos = offset + to_pos;
            }
        }
        (tokens, head_pos, tail_pos)
    }

    /// Assembles a [`UGPath`] from a hop chain.
    pub fn make_path(&self, head: NodeId, tail: NodeId, hops: Vec<Hop>) -> UGPath {
        debug_assert!(self.is_chain(head, tail, &hops));
        let path_type = self.classify_path_type(&hops).expect("path has at least one hop");
        let (tokens, structural_head, structural_tail) = self.linearize_path(&hops);
        let ev = PathEvidence::new(
            tokens,
            path_type,
            &self.entity(head).surface,
            &self.entity(tail).surface,
            (structural_head, structural_tail),
        );
        UGPath {
            hops,
            head,
            tail,
            path_type,
            tokens: ev.tokens,
            head_pos: ev.head_pos,
            tail_pos: ev.tail_pos,
            tau1: ev.tau1,
            tau2: ev.tau2,
        }
    }

    /// True when `hops` walks from `head` to `tail` without gaps.
    pub fn is_chain(&self, head: NodeId, tail: NodeId, hops: &[Hop]) -> bool {
        let mut cur = head;
        for &h in hops {
            let (from, to) = self.hop_endpoints(h);
            if from != cur {
                return false;
            }
            cur = to;
        }
        !hops.is_empty() && cur == tail
    }

    pub fn path_dump_line(&self, p: &UGPath) -> String {
        p.evidence().dump_line(&self.entity(p.head).id, &self.entity(p.tail).id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::toks;

    fn graph() -> UniversalGraph {
        let mut g = UniversalGraph::new();
        g.add_entity("aspirin", toks("aspirin")).unwrap();
        g.add_entity("pain", toks("pain")).unwrap();
        g.add_entity("fever", toks("fever")).unwrap();
        g.add_entity("x", toks("compound x")).unwrap();
        g.add_relation("may_treat", None);
        g.add_relation("co_occurs_with", None);
        g.add_kg_edge("aspirin", "may_treat", "pain").unwrap();
        g.add_text_edge(&toks("pain often comes with fever"), "pain", 0, "fever", 4).unwrap();
        g.add_text_edge(&toks("fever was reduced by compound x"), "fever", 0, "x", 4).unwrap();
        g.add_kg_edge("x", "co_occurs_with", "aspirin").unwrap();
        g
    }

    #[test]
    fn kg_hop_reads_as_phrase() {
        let g = graph();
        let p = g.make_path(g.node("aspirin").unwrap(), g.node("pain").unwrap(), vec![Hop { edge: 0, reversed: false }]);
        assert_eq!(p.tokens, toks("aspirin may treat pain"));
        assert_eq!((p.head_pos, p.tail_pos), (0, 3));
        assert_eq!(p.path_type, PathType::Kg);
    }

    #[test]
    fn text_hop_is_verbatim() {
        let g = graph();
        let p = g.make_path(g.node("pain").unwrap(), g.node("fever").unwrap(), vec![Hop { edge: 1, reversed: false }]);
        assert_eq!(p.tokens, toks("pain often comes with fever"));
        assert_eq!(p.path_type, PathType::Textual);
        assert_eq!((p.head_pos, p.tail_pos), (0, 4));
    }

    #[test]
    fn three_hop_hybrid_has_two_separators() {
        let g = graph();
        // aspirin -may_treat-> pain -text-> fever -text-> x
        let hops = vec![
            Hop { edge: 0, reversed: false },
            Hop { edge: 1, reversed: false },
            Hop { edge: 2, reversed: false },
        ];
        let p = g.make_path(g.node("aspirin").unwrap(), g.node("x").unwrap(), hops);
        assert_eq!(p.path_type, PathType::Hybrid);
        // 4 + 5 + 6 tokens plus two separators.
        assert_eq!(p.tau1, 4 + 5 + 6 + 2);
        assert_eq!(p.tokens.iter().filter(|t| *t == SEPARATOR_TOKEN).count(), 2);
        assert_eq!(p.tau1, p.tokens.len());
        assert_eq!(p.tau2, token_types(&p.tokens));
        assert!(p.tau2 <= p.tau1);
        // "compound x" first appears in the last hop at offset 4.
        assert_eq!(p.tail_pos, 4 + 1 + 5 + 1 + 4);
        assert_eq!(&p.tokens[p.tail_pos..p.tail_pos + 2], toks("compound x").as_slice());
    }

    #[test]
    fn reversed_kg_hop_is_marked() {
        let g = graph();
        let p = g.make_path(g.node("aspirin").unwrap(), g.node("x").unwrap(), vec![Hop { edge: 3, reversed: true }]);
        assert_eq!(p.tokens, toks("aspirin <inv> co occurs with compound x"));
        assert_eq!(p.tail_pos, 5);
    }

    #[test]
    fn classify_mixed() {
        assert_eq!(PathType::from_hop_kinds([true, false, false]), Some(PathType::Hybrid));
        assert_eq!(PathType::from_hop_kinds([true, true]), Some(PathType::Kg));
        assert_eq!(PathType::from_hop_kinds([false]), Some(PathType::Textual));
        assert_eq!(PathType::from_hop_kinds([]), None);
    }

    #[test]
    fn dump_line_round_trip() {
        let g = graph();
        let hops = vec![Hop { edge: 0, reversed: false }, Hop { edge: 1, reversed: false }];
        let p = g.make_path(g.node("aspirin").unwrap(), g.node("fever").unwrap(), hops);
        let line = g.path_dump_line(&p);
        let surface = |id: &str| g.node(id).ok().map(|n| g.entity(n).surface.as_slice());
        let (e1, e2, ev) = PathEvidence::parse_dump_line(&line, surface).unwrap();
        assert_eq!((e1.as_str(), e2.as_str()), ("aspirin", "fever"));
        assert_eq!(ev, p.evidence());
    }

    #[test]
    fn dump_line_rejects_bad_tau() {
        let g = graph();
        let surface = |id: &str| g.node(id).ok().map(|n| g.entity(n).surface.as_slice());
        assert!(PathEvidence::parse_dump_line("aspirin\tpain\tKG\t5\t4\taspirin may treat pain", surface).is_err());
        assert!(PathEvidence::parse_dump_line("aspirin\tpain\tKG\t4\t4\taspirin may treat pain\textra", surface).is_err());
        assert!(PathEvidence::parse_dump_line("aspirin\tpain\tKG\t4\t4\taspirin may treat pain", surface).is_ok());
    }
}
