use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{distance, NavGraph, Result};

#[derive(Copy, Clone, PartialEq)]
struct Entry {
    cost: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // min-heap on cost, then on node index
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single- or multi-source shortest path tree.
pub(crate) struct PathTree {
    pub dist: Vec<f64>,
    pub pred: Vec<Option<usize>>,
}

impl PathTree {
    /// Node indices from the nearest source to `target`, inclusive.
    pub fn path_to(&self, target: usize) -> Option<Vec<usize>> {
        if !self.dist[target].is_finite() {
            return None;
        }
        let mut path = vec![target];
        let mut cur = target;
        while let Some(p) = self.pred[cur] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        Some(path)
    }
}

impl NavGraph {
    pub fn edge_length(&self, a: usize, b: usize) -> f64 {
        distance(&self.node_at(a).pos, &self.node_at(b).pos)
    }

    pub(crate) fn dijkstra(&self, sources: &[usize]) -> PathTree {
        let n = self.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred = vec![None; n];
        let mut heap = BinaryHeap::new();
        for &s in sources {
            dist[s] = 0.0;
            heap.push(Entry { cost: 0.0, node: s });
        }
        while let Some(Entry { cost, node }) = heap.pop() {
            if cost > dist[node] {
                continue;
            }
            for &next in self.neighbors_of(node) {
                let c = cost + self.edge_length(node, next);
                if c < dist[next] {
                    dist[next] = c;
                    pred[next] = Some(node);
                    heap.push(Entry { cost: c, node: next });
                }
            }
        }
        PathTree { dist, pred }
    }

    /// Length in meters of the minimum-weight path between two nodes.
    pub fn shortest_path_length(&self, a: &str, b: &str) -> Result<f64> {
        let ia = self.index_of(a)?;
        let ib = self.index_of(b)?;
        if ia == ib {
            return Ok(0.0);
        }
        Ok(self.dijkstra(&[ia]).dist[ib])
    }

    /// Shortest distance from `a` to the nearest of `targets`.
    pub fn distance_to_nearest(&self, a: &str, targets: &[String]) -> Result<f64> {
        let tree = self.dijkstra(&[self.index_of(a)?]);
        let mut best = f64::INFINITY;
        for t in targets {
            best = best.min(tree.dist[self.index_of(t)?]);
        }
        Ok(best)
    }

    /// Node ids along a shortest path from any of `sources` to the nearest
    /// of `targets`.
    pub fn shortest_path_between_sets(&self, sources: &[String], targets: &[String]) -> Result<Option<Vec<String>>> {
        let src = sources
            .iter()
            .map(|s| self.index_of(s))
            .collect::<Result<Vec<_>>>()?;
        let tree = self.dijkstra(&src);
        let mut best: Option<usize> = None;
        for t in targets {
            let it = self.index_of(t)?;
            if tree.dist[it].is_finite() && best.is_none_or(|b| tree.dist[it] < tree.dist[b]) {
                best = Some(it);
            }
        }
        Ok(best.and_then(|b| tree.path_to(b)).map(|p| {
            p.into_iter().map(|i| self.node_at(i).id.clone()).collect()
        }))
    }
}
