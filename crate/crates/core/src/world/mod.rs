//! Synthetic navigation worlds.
//!
//! A world is a connected graph of viewpoints laid out on a jittered grid. Nodes belong to
//! rooms (regions of neighbouring nodes sharing a room label) and may hold one object. Every
//! node carries a 36-view panorama on a 12-heading by 3-elevation lattice; the mid-elevation
//! view facing a neighbour shows that neighbour's room and object, which is what the agent sees
//! as the candidate's appearance.

mod episode;
mod generate;
mod io;

pub use episode::{
    compose_instruction, generate_episode, subpath_views, template_fillers, template_verbs,
    Episode, EpisodeConfig, Split, SubPath, Template,
};
pub use generate::{generate_world, render_view, WorldConfig};
pub use io::{read_episodes, write_episodes, GraphRecord};

use crate::error::{Error, Result};

pub type NodeId = usize;

/// Worlds keyed by their generation seed.
pub type WorldStore = std::collections::BTreeMap<u64, NavGraph>;

pub const HEADINGS: usize = 12;
pub const ELEVATIONS: usize = 3;
pub const VIEWS_PER_PANORAMA: usize = HEADINGS * ELEVATIONS;
/// Elevation index of the horizon row; candidate approach views live here.
pub const HORIZON: usize = 1;

/// One of the 36 panorama views at a node.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewImage {
    /// Sorted, deduplicated scene labels visible in this view.
    pub labels: Vec<String>,
    /// Unit-norm appearance feature.
    pub feature: Vec<f32>,
    pub heading: usize,
    pub elevation: usize,
}

impl ViewImage {
    pub fn index(&self) -> usize {
        view_index(self.heading, self.elevation)
    }

    /// Heading angle in radians, counter-clockwise from +x.
    pub fn heading_angle(&self) -> f64 {
        self.heading as f64 * std::f64::consts::TAU / HEADINGS as f64
    }

    /// Elevation angle in radians: -30°, 0°, +30°.
    pub fn elevation_angle(&self) -> f64 {
        (self.elevation as f64 - HORIZON as f64) * std::f64::consts::PI / 6.0
    }

    pub fn has_label(&self, label: &str) -> bool {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).is_ok()
    }
}

pub fn view_index(heading: usize, elevation: usize) -> usize {
    elevation * HEADINGS + heading
}

/// Heading bucket of the direction from `from` to `to`.
pub fn heading_between(from: [f64; 2], to: [f64; 2]) -> usize {
    let angle = (to[1] - from[1]).atan2(to[0] - from[0]).rem_euclid(std::f64::consts::TAU);
    let step = std::f64::consts::TAU / HEADINGS as f64;
    ((angle / step).round() as usize) % HEADINGS
}

/// Reference to a single view inside a world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ViewRef {
    pub node: NodeId,
    pub view: usize,
}

/// The navigation connectivity graph with per-node panoramas.
#[derive(Debug, Clone, PartialEq)]
pub struct NavGraph {
    pub seed: u64,
    pub positions: Vec<[f64; 2]>,
    pub rooms: Vec<String>,
    pub objects: Vec<Option<String>>,
    adjacency: Vec<Vec<NodeId>>,
    panoramas: Vec<Vec<ViewImage>>,
    dist: Vec<Vec<f64>>,
}

/// A single navigable option at the current node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub target: NodeId,
    /// Index of the approach view (horizon view facing `target`) at the current node.
    pub view: usize,
}

/// The J neighbours of a node in ascending id order, plus an implicit stop action at index J.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub node: NodeId,
    pub moves: Vec<Candidate>,
}

impl CandidateSet {
    /// J + 1.
    pub fn len(&self) -> usize {
        self.moves.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn stop_index(&self) -> usize {
        self.moves.len()
    }

    /// Candidate index of a move to `target`, if it is a neighbour.
    pub fn index_of(&self, target: NodeId) -> Option<usize> {
        self.moves.iter().position(|c| c.target == target)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Moved(NodeId),
    Stopped,
}

impl NavGraph {
    /// Assemble a graph from parts, validating every structural invariant.
    pub fn from_parts(
        seed: u64,
        positions: Vec<[f64; 2]>,
        rooms: Vec<String>,
        objects: Vec<Option<String>>,
        edges: &[(NodeId, NodeId)],
        panoramas: Vec<Vec<ViewImage>>,
    ) -> Result<Self> {
        let n = positions.len();
        if rooms.len() != n || objects.len() != n || panoramas.len() != n {
            return Err(Error::InvalidWorldConfig(
                "per-node arrays disagree in length".into(),
            ));
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n || a == b {
                return Err(Error::InvalidWorldConfig(format!("bad edge ({a}, {b})")));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for adj in adjacency.iter_mut() {
            adj.sort_unstable();
            adj.dedup();
        }
        for (i, pano) in panoramas.iter().enumerate() {
            if pano.len() != VIEWS_PER_PANORAMA {
                return Err(Error::InvalidWorldConfig(format!(
                    "node {i} has {} views, expected {VIEWS_PER_PANORAMA}",
                    pano.len()
                )));
            }
            for (k, v) in pano.iter().enumerate() {
                if v.index() != k {
                    return Err(Error::InvalidWorldConfig(format!(
                        "node {i} view {k} has orientation of view {}",
                        v.index()
                    )));
                }
            }
        }
        let mut g = NavGraph {
            seed,
            positions,
            rooms,
            objects,
            adjacency,
            panoramas,
            dist: Vec::new(),
        };
        g.dist = (0..n).map(|s| g.dijkstra(s)).collect();
        // Summation order differs by source; keep the table exactly symmetric.
        for s in 0..n {
            for t in s + 1..n {
                g.dist[t][s] = g.dist[s][t];
            }
        }
        if let Some(i) = (0..n).find(|&i| g.adjacency[i].is_empty()) {
            return Err(Error::InvalidWorldConfig(format!("node {i} has no neighbours")));
        }
        if g.dist.iter().flatten().any(|d| !d.is_finite()) {
            return Err(Error::InvalidWorldConfig("graph is not connected".into()));
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.adjacency[node]
    }

    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::new();
        for (a, adj) in self.adjacency.iter().enumerate() {
            for &b in adj {
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out
    }

    pub fn is_adjacent(&self, a: NodeId, b: NodeId) -> bool {
        a < self.len() && self.adjacency[a].binary_search(&b).is_ok()
    }

    pub fn panorama(&self, node: NodeId) -> &[ViewImage] {
        &self.panoramas[node]
    }

    pub fn view(&self, r: ViewRef) -> &ViewImage {
        &self.panoramas[r.node][r.view]
    }

    /// Euclidean distance between node positions.
    pub fn euclidean(&self, a: NodeId, b: NodeId) -> f64 {
        let (p, q) = (self.positions[a], self.positions[b]);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
    }

    pub fn edge_length(&self, a: NodeId, b: NodeId) -> Result<f64> {
        self.check(a)?;
        self.check(b)?;
        if !self.is_adjacent(a, b) {
            return Err(Error::NotAdjacent(a, b));
        }
        Ok(self.euclidean(a, b))
    }

    /// The horizon view at `from` facing `to`.
    pub fn approach_view(&self, from: NodeId, to: NodeId) -> usize {
        view_index(
            heading_between(self.positions[from], self.positions[to]),
            HORIZON,
        )
    }

    pub fn candidates(&self, node: NodeId) -> Result<CandidateSet> {
        self.check(node)?;
        Ok(CandidateSet {
            node,
            moves: self.adjacency[node]
                .iter()
                .map(|&t| Candidate {
                    target: t,
                    view: self.approach_view(node, t),
                })
                .collect(),
        })
    }

    /// Apply candidate `action` at `current`: indices `0..J` move to the corresponding
    /// neighbour, index `J` stops.
    pub fn step(&self, current: NodeId, action: usize) -> Result<StepOutcome> {
        self.check(current)?;
        let adj = &self.adjacency[current];
        match action.cmp(&adj.len()) {
            std::cmp::Ordering::Less => Ok(StepOutcome::Moved(adj[action])),
            std::cmp::Ordering::Equal => Ok(StepOutcome::Stopped),
            std::cmp::Ordering::Greater => Err(Error::ActionOutOfRange {
                index: action,
                count: adj.len() + 1,
            }),
        }
    }

    /// Geodesic distance over edge lengths.
    pub fn shortest_path_length(&self, a: NodeId, b: NodeId) -> Result<f64> {
        self.check(a)?;
        self.check(b)?;
        let d = self.dist[a][b];
        assert!(d.is_finite(), "connected graph has unreachable pair ({a}, {b})");
        Ok(d)
    }

    /// Unchecked geodesic distance, for hot loops over known-valid nodes.
    pub fn geodesic(&self, a: NodeId, b: NodeId) -> f64 {
        self.dist[a][b]
    }

    /// A shortest node path from `a` to `b`. Among equal-length routes the one whose
    /// predecessors have the lowest ids (traced back from `b`) is returned.
    pub fn shortest_path(&self, a: NodeId, b: NodeId) -> Result<Vec<NodeId>> {
        self.check(a)?;
        self.check(b)?;
        let d = &self.dist[a];
        let mut path = vec![b];
        let mut cur = b;
        while cur != a {
            let prev = self.adjacency[cur]
                .iter()
                .copied()
                .find(|&p| (d[p] + self.euclidean(p, cur) - d[cur]).abs() <= 1e-9 * (1.0 + d[cur]))
                .expect("dijkstra predecessor must exist");
            path.push(prev);
            cur = prev;
        }
        path.reverse();
        Ok(path)
    }

    fn dijkstra(&self, source: NodeId) -> Vec<f64> {
        let n = self.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut done = vec![false; n];
        dist[source] = 0.0;
        for _ in 0..n {
            let mut u = None;
            for v in 0..n {
                if !done[v] && dist[v].is_finite() && u.is_none_or(|w: usize| dist[v] < dist[w]) {
                    u = Some(v);
                }
            }
            let Some(u) = u else { break };
            done[u] = true;
            for &v in &self.adjacency[u] {
                let nd = dist[u] + self.euclidean(u, v);
                if nd < dist[v] {
                    dist[v] = nd;
                }
            }
        }
        dist
    }

    fn check(&self, node: NodeId) -> Result<()> {
        if node < self.len() {
            Ok(())
        } else {
            Err(Error::UnknownNode(node))
        }
    }

    pub(crate) fn panoramas(&self) -> &[Vec<ViewImage>] {
        &self.panoramas
    }
}
