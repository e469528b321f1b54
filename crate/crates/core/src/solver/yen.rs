//! Yen's k shortest loopless paths on static link weights.
//!
//! Paths come out in non-decreasing total weight; equal weights are ordered by
//! node-id sequence, then by link-id sequence (parallel links). Spur paths are
//! found with a Dijkstra whose labels compare `(cost, nodes, link ids)`, which
//! yields the lexicographically smallest among the cheapest spur paths.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap, HashSet};

use crate::network::{NodeId, RoadNetwork};
use crate::objectives::Path;

#[derive(Debug, Clone)]
struct Label {
    cost: f64,
    nodes: Vec<usize>,
    link_ids: Vec<i64>,
    links: Vec<usize>,
}

impl Label {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then_with(|| self.nodes.cmp(&other.nodes))
            .then_with(|| self.link_ids.cmp(&other.link_ids))
    }
}

impl PartialEq for Label {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}

impl Eq for Label {}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Label {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

/// Sum of link weights in path order.
pub fn path_weight(weights: &[f64], links: &[usize]) -> f64 {
    links.iter().fold(0.0, |acc, &l| acc + weights[l])
}

fn spur_search(
    net: &RoadNetwork,
    weights: &[f64],
    src: usize,
    dst: usize,
    blocked_nodes: &[bool],
    blocked_links: &HashSet<usize>,
) -> Option<Label> {
    let mut settled = vec![false; net.n_nodes()];
    let mut heap = BinaryHeap::new();
    heap.push(Reverse(Label { cost: 0.0, nodes: vec![src], link_ids: Vec::new(), links: Vec::new() }));
    while let Some(Reverse(label)) = heap.pop() {
        let u = *label.nodes.last().expect("labels are never empty");
        if settled[u] {
            continue;
        }
        settled[u] = true;
        if u == dst {
            return Some(label);
        }
        for &l in net.out_links(u) {
            let v = net.endpoints(l).1;
            if settled[v] || blocked_nodes[v] || blocked_links.contains(&l) {
                continue;
            }
            let mut next = label.clone();
            next.cost += weights[l];
            next.nodes.push(v);
            next.link_ids.push(net.links()[l].link_id);
            next.links.push(l);
            heap.push(Reverse(next));
        }
    }
    None
}

/// Lazily enumerates loopless `o → d` paths in order; each item carries the
/// path's summed weight.
pub struct YenPaths<'a> {
    net: &'a RoadNetwork,
    weights: &'a [f64],
    origin: usize,
    dest: usize,
    accepted: Vec<Label>,
    candidates: BTreeSet<Label>,
    seen: HashSet<Vec<usize>>,
    started: bool,
}

impl<'a> YenPaths<'a> {
    pub fn new(net: &'a RoadNetwork, weights: &'a [f64], origin: NodeId, dest: NodeId) -> Result<Self, crate::NetworkError> {
        assert_eq!(weights.len(), net.n_links(), "one weight per link");
        Ok(Self {
            net,
            weights,
            origin: net.node_index(origin)?,
            dest: net.node_index(dest)?,
            accepted: Vec::new(),
            candidates: BTreeSet::new(),
            seen: HashSet::new(),
            started: false,
        })
    }

    fn finish(&mut self, mut label: Label) -> Label {
        label.cost = path_weight(self.weights, &label.links);
        label
    }

    fn spur_candidates(&mut self) {
        let last = self.accepted.last().expect("called after the first path").clone();
        let mut blocked_nodes = vec![false; self.net.n_nodes()];
        for i in 0..last.links.len() {
            let spur = last.nodes[i];
            let root_nodes = &last.nodes[..=i];
            let root_links = &last.links[..i];
            let blocked_links: HashSet<usize> = self
                .accepted
                .iter()
                .filter(|a| a.links.len() > i && a.nodes[..=i] == *root_nodes && a.links[..i] == *root_links)
                .map(|a| a.links[i])
                .collect();
            if i > 0 {
                blocked_nodes[last.nodes[i - 1]] = true;
            }
            let Some(spur_path) =
                spur_search(self.net, self.weights, spur, self.dest, &blocked_nodes, &blocked_links)
            else {
                continue;
            };
            let mut links = root_links.to_vec();
            links.extend_from_slice(&spur_path.links);
            if !self.seen.insert(links.clone()) {
                continue;
            }
            let mut nodes = root_nodes.to_vec();
            nodes.extend_from_slice(&spur_path.nodes[1..]);
            let link_ids = links.iter().map(|&l| self.net.links()[l].link_id).collect();
            let candidate = self.finish(Label { cost: 0.0, nodes, link_ids, links });
            self.candidates.insert(candidate);
        }
    }

    fn to_path(&self, label: &Label) -> Path {
        Path {
            nodes: label.nodes.iter().map(|&n| self.net.nodes()[n]).collect(),
            links: label.links.clone(),
        }
    }
}

impl Iterator for YenPaths<'_> {
    type Item = (Path, f64);

    fn next(&mut self) -> Option<Self::Item> {
        if self.origin == self.dest {
            return None;
        }
        let next = if !self.started {
            self.started = true;
            let blocked = vec![false; self.net.n_nodes()];
            let first = spur_search(self.net, self.weights, self.origin, self.dest, &blocked, &HashSet::new())?;
            let first = self.finish(first);
            self.seen.insert(first.links.clone());
            first
        } else {
            self.spur_candidates();
            self.candidates.pop_first()?
        };
        let item = (self.to_path(&next), next.cost);
        self.accepted.push(next);
        Some(item)
    }
}

/// The `k`-th (1-based) loopless shortest path, or `None` when fewer exist.
pub fn yen_next_path(net: &RoadNetwork, weights: &[f64], o: NodeId, d: NodeId, k: usize) -> Result<Option<(Path, f64)>, crate::NetworkError> {
    assert!(k >= 1, "k is 1-based");
    Ok(YenPaths::new(net, weights, o, d)?.nth(k - 1))
}
