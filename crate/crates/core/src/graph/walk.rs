use std::collections::HashSet;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Hop, NodeId, UGPath, UniversalGraph};
use crate::error::{Error, Result};

/// Node-count limit above which exhaustive enumeration is refused.
pub const DEFAULT_ENUMERATION_CAP: usize = 10_000;

impl UniversalGraph {
    /// Samples simple paths from `head` to `tail` with `num_walks` uniform
    /// random walks of at most `max_steps` hops.
    ///
    /// Each step picks uniformly among incident edges (either direction)
    /// that lead to an entity not yet on the walk. A walk ends when it hits
    /// `tail`, gets stuck, or runs out of steps. Paths are returned in
    /// discovery order with duplicate hop sequences removed.
    pub fn random_walk_paths(
        &self,
        head: &str,
        tail: &str,
        max_steps: usize,
        num_walks: usize,
        seed: u64,
    ) -> Result<Vec<UGPath>> {
        check_limits(max_steps, num_walks)?;
        let (h, t) = (self.node(head)?, self.node(tail)?);
        if h == t {
            return Ok(Vec::new());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen: HashSet<Vec<Hop>> = HashSet::new();
        let mut paths = Vec::new();
        let mut candidates: Vec<Hop> = Vec::new();
        for _ in 0..num_walks {
            let mut visited = vec![h];
            let mut hops = Vec::with_capacity(max_steps);
            let mut cur = h;
            for _ in 0..max_steps {
                candidates.clear();
                candidates.extend(
                    self.incident(cur).iter().copied().filter(|&hop| !visited.contains(&self.hop_endpoints(hop).1)),
                );
                let Some(&hop) = candidates.choose(&mut rng) else { break };
                hops.push(hop);
                cur = self.hop_endpoints(hop).1;
                visited.push(cur);
                if cur == t {
                    if seen.insert(hops.clone()) {
                        paths.push(self.make_path(h, t, hops.clone()));
                    }
                    break;
                }
            }
        }
        Ok(paths)
    }

    /// Every simple path of at most `max_steps` hops from `head` to `tail`,
    /// in depth-first order over insertion-ordered adjacency.
    pub fn enumerate_paths(&self, head: &str, tail: &str, max_steps: usize) -> Result<Vec<UGPath>> {
        self.enumerate_paths_capped(head, tail, max_steps, DEFAULT_ENUMERATION_CAP)
    }

    pub fn enumerate_paths_capped(&self, head: &str, tail: &str, max_steps: usize, cap: usize) -> Result<Vec<UGPath>> {
        check_limits(max_steps, 1)?;
        if self.node_count() > cap {
            return Err(Error::EnumerationCap { nodes: self.node_count(), cap });
        }
        let (h, t) = (self.node(head)?, self.node(tail)?);
        let mut out = Vec::new();
        if h == t {
            return Ok(out);
        }
        let mut visited = vec![h];
        let mut hops = Vec::new();
        self.dfs(h, t, max_steps, &mut visited, &mut hops, &mut out);
        Ok(out)
    }

    fn dfs(
        &self,
        cur: NodeId,
        target: NodeId,
        budget: usize,
        visited: &mut Vec<NodeId>,
        hops: &mut Vec<Hop>,
        out: &mut Vec<UGPath>,
    ) {
        if budget == 0 {
            return;
        }
        for &hop in self.incident(cur) {
            let next = self.hop_endpoints(hop).1;
            if visited.contains(&next) {
                continue;
            }
            hops.push(hop);
            if next == target {
                out.push(self.make_path(visited[0], target, hops.clone()));
            } else {
                visited.push(next);
                self.dfs(next, target, budget - 1, visited, hops, out);
                visited.pop();
            }
            hops.pop();
        }
    }
}

fn check_limits(max_steps: usize, num_walks: usize) -> Result<()> {
    if max_steps == 0 {
        return Err(Error::InvalidArgument("max_steps must be at least 1".into()));
    }
    if num_walks == 0 {
        return Err(Error::InvalidArgument("num_walks must be at least 1".into()));
    }
    Ok(())
}

/// Keeps at most `max_paths` paths, chosen uniformly with a seeded
/// generator; survivors keep their original relative order.
pub fn cap_paths<T>(paths: Vec<T>, max_paths: usize, seed: u64) -> Vec<T> {
    if paths.len() <= max_paths {
        return paths;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = sample(&mut rng, paths.len(), max_paths).into_vec();
    keep.sort_unstable();
    let mut keep = keep.into_iter().peekable();
    paths
        .into_iter()
        .enumerate()
        .filter_map(|(i, p)| {
            if keep.peek() == Some(&i) {
                keep.next();
                Some(p)
            } else {
                None
            }
        })
        .collect()
}
