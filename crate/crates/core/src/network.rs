//! Directed road network: loading, validation and adjacency indexing.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LINKS_HEADER: [&str; 4] = ["link_id", "from_node", "to_node", "length_km"];

/// External node identifier as it appears in `links.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub link_id: i64,
    pub from: NodeId,
    pub to: NodeId,
    pub length_km: f64,
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing or malformed header, expected `link_id,from_node,to_node,length_km`")]
    MissingHeader,
    #[error("row {row}: cannot parse field `{field}`")]
    Parse { row: usize, field: &'static str },
    #[error("row {row}: duplicate link_id {link_id}")]
    DuplicateLinkId { row: usize, link_id: i64 },
    #[error("row {row}: non-positive length {length_km}")]
    NonPositiveLength { row: usize, length_km: f64 },
    #[error("row {row}: self loop on node {node}")]
    SelfLoop { row: usize, node: NodeId },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("network has no links")]
    Empty,
}

/// Immutable directed network. Nodes are stored densely, in ascending id order,
/// so comparing dense indices is the same as comparing external ids.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    nodes: Vec<NodeId>,
    node_index: HashMap<NodeId, usize>,
    links: Vec<Link>,
    link_index: HashMap<i64, usize>,
    // per dense node, indices into `links` in file order
    out_links: Vec<Vec<usize>>,
    // (from, to) dense node indices per link
    endpoints: Vec<(usize, usize)>,
}

impl RoadNetwork {
    /// Builds a network from links, validating the invariants. `row` in errors is
    /// the 1-based data row (header excluded).
    pub fn from_links(links: Vec<Link>) -> Result<Self, NetworkError> {
        if links.is_empty() {
            return Err(NetworkError::Empty);
        }
        let mut link_index = HashMap::with_capacity(links.len());
        for (i, link) in links.iter().enumerate() {
            let row = i + 1;
            if link_index.insert(link.link_id, i).is_some() {
                return Err(NetworkError::DuplicateLinkId { row, link_id: link.link_id });
            }
            if !(link.length_km > 0.0) || !link.length_km.is_finite() {
                return Err(NetworkError::NonPositiveLength { row, length_km: link.length_km });
            }
            if link.from == link.to {
                return Err(NetworkError::SelfLoop { row, node: link.from });
            }
        }
        let ids: std::collections::BTreeSet<NodeId> =
            links.iter().flat_map(|l| [l.from, l.to]).collect();
        let nodes: Vec<NodeId> = ids.into_iter().collect();
        let node_index: HashMap<NodeId, usize> =
            nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let mut out_links = vec![Vec::new(); nodes.len()];
        let mut endpoints = Vec::with_capacity(links.len());
        for (i, link) in links.iter().enumerate() {
            let (f, t) = (node_index[&link.from], node_index[&link.to]);
            out_links[f].push(i);
            endpoints.push((f, t));
        }
        Ok(Self { nodes, node_index, links, link_index, out_links, endpoints })
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, NetworkError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers().map_err(|_| NetworkError::MissingHeader)?;
        if header.iter().ne(LINKS_HEADER.iter().copied()) {
            return Err(NetworkError::MissingHeader);
        }
        let mut links = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let row = i + 1;
            let record = record?;
            let field = |idx: usize, name: &'static str| {
                record.get(idx).ok_or(NetworkError::Parse { row, field: name })
            };
            let parse_err = |field| NetworkError::Parse { row, field };
            links.push(Link {
                link_id: field(0, "link_id")?.parse().map_err(|_| parse_err("link_id"))?,
                from: NodeId(field(1, "from_node")?.parse().map_err(|_| parse_err("from_node"))?),
                to: NodeId(field(2, "to_node")?.parse().map_err(|_| parse_err("to_node"))?),
                length_km: field(3, "length_km")?.parse().map_err(|_| parse_err("length_km"))?,
            });
        }
        Self::from_links(links)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NetworkError> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    /// Writes the canonical link table. Lengths use Rust's shortest round-trip
    /// form, so a file written here loads and re-serializes byte-identically.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", LINKS_HEADER.join(","))?;
        for l in &self.links {
            writeln!(out, "{},{},{},{:?}", l.link_id, l.from, l.to, l.length_km)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf)
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    pub fn node_index(&self, id: NodeId) -> Result<usize, NetworkError> {
        self.node_index.get(&id).copied().ok_or(NetworkError::UnknownNode(id))
    }

    pub fn link_position(&self, link_id: i64) -> Option<usize> {
        self.link_index.get(&link_id).copied()
    }

    /// Outgoing link positions of a dense node index, in file order.
    pub fn out_links(&self, node: usize) -> &[usize] {
        &self.out_links[node]
    }

    /// Dense (from, to) indices of the link at `pos`.
    pub fn endpoints(&self, pos: usize) -> (usize, usize) {
        self.endpoints[pos]
    }

    /// Adjacency keyed by external node id, values are link ids in file order.
    pub fn adjacency(&self) -> BTreeMap<NodeId, Vec<i64>> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, &n)| (n, self.out_links[i].iter().map(|&p| self.links[p].link_id).collect()))
            .collect()
    }

    /// True iff a directed path from `o` to `d` exists; `o == d` is the empty path.
    pub fn paths_exist(&self, o: NodeId, d: NodeId) -> Result<bool, NetworkError> {
        let (o, d) = (self.node_index(o)?, self.node_index(d)?);
        if o == d {
            return Ok(true);
        }
        let mut seen = HashSet::from([o]);
        let mut queue = VecDeque::from([o]);
        while let Some(u) = queue.pop_front() {
            for &p in &self.out_links[u] {
                let v = self.endpoints[p].1;
                if v == d {
                    return Ok(true);
                }
                if seen.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        Ok(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(s: &str) -> Result<RoadNetwork, NetworkError> {
        RoadNetwork::from_reader(s.as_bytes())
    }

    const TRIANGLE: &str = "link_id,from_node,to_node,length_km\n1,0,1,1.0\n2,0,2,3.0\n3,1,2,1.0\n";

    #[test]
    fn two_node_file() {
        let net = load("link_id,from_node,to_node,length_km\n1,0,1,5.0\n").unwrap();
        assert_eq!(net.n_nodes(), 2);
        assert_eq!(net.n_links(), 1);
        assert_eq!(net.links()[0].length_km, 5.0);
    }

    #[test]
    fn rejects_bad_rows() {
        let h = "link_id,from_node,to_node,length_km\n";
        assert!(matches!(
            load(&format!("{h}1,0,1,2.0\n2,1,0,0\n")),
            Err(NetworkError::NonPositiveLength { row: 2, .. })
        ));
        assert!(matches!(
            load(&format!("{h}1,0,1,2.0\n1,1,0,1\n")),
            Err(NetworkError::DuplicateLinkId { row: 2, link_id: 1 })
        ));
        assert!(matches!(load(&format!("{h}4,3,3,2.0\n")), Err(NetworkError::SelfLoop { row: 1, .. })));
        assert!(matches!(load("a,b,c,d\n1,0,1,2\n"), Err(NetworkError::MissingHeader)));
        assert!(matches!(load(&format!("{h}1,0,x,2\n")), Err(NetworkError::Parse { row: 1, field: "to_node" })));
    }

    #[test]
    fn triangle_adjacency() {
        let net = load(TRIANGLE).unwrap();
        let adj = net.adjacency();
        assert_eq!(adj[&NodeId(0)], vec![1, 2]);
        assert_eq!(adj[&NodeId(1)], vec![3]);
        assert!(adj[&NodeId(2)].is_empty());
        let degree_sum: usize = adj.values().map(Vec::len).sum();
        assert_eq!(degree_sum, net.n_links());
    }

    #[test]
    fn parallel_links_allowed() {
        let net = load("link_id,from_node,to_node,length_km\n1,0,1,1.0\n2,0,1,2.0\n").unwrap();
        assert_eq!(net.out_links(0).len(), 2);
    }

    #[test]
    fn reachability() {
        let net = load(TRIANGLE).unwrap();
        assert!(net.paths_exist(NodeId(0), NodeId(0)).unwrap());
        assert!(net.paths_exist(NodeId(0), NodeId(2)).unwrap());
        assert!(!net.paths_exist(NodeId(2), NodeId(0)).unwrap());
        assert!(matches!(net.paths_exist(NodeId(9), NodeId(0)), Err(NetworkError::UnknownNode(_))));

        let chain = load("link_id,from_node,to_node,length_km\n1,0,1,1\n2,1,2,1\n3,2,3,1\n").unwrap();
        assert!(chain.paths_exist(NodeId(0), NodeId(3)).unwrap());
        assert!(!chain.paths_exist(NodeId(3), NodeId(1)).unwrap());
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let text = "link_id,from_node,to_node,length_km\n7,10,11,0.35\n3,11,10,12.5\n9,11,12,5.0\n";
        let net = load(text).unwrap();
        let mut out = Vec::new();
        net.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }
}
