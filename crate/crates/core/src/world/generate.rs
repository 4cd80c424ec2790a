use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{heading_between, NavGraph, NodeId, ViewImage, ELEVATIONS, HEADINGS, HORIZON};
use crate::error::{Error, Result};
use crate::util::{gaussian_vector, mix, normalize, rng_from, str_seed, to_f32};

const WORLD_STREAM: u64 = 0x0057_4f52_4c44;
const VIEW_STREAM: u64 = 0x5649_4557;
const LABEL_STREAM: u64 = 0x004c_4142_454c;

/// Parameters shared by every world of a benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub nodes: usize,
    /// Room (location) vocabulary; every node belongs to a room.
    pub rooms: Vec<String>,
    /// Object vocabulary; nodes optionally hold one object.
    pub objects: Vec<String>,
    pub feature_dim: usize,
    /// Seed of the label geometry. Shared across worlds so that a label looks alike everywhere.
    pub feature_seed: u64,
    /// Grid spacing in distance units.
    pub spacing: f64,
    pub view_noise: f64,
    /// Mean number of nodes per room.
    pub room_size: f64,
    pub object_prob: f64,
    /// Probability that an off-axis horizon view shows a stray object.
    pub clutter_prob: f64,
    pub extra_edge_prob: f64,
    pub diagonal_prob: f64,
}

pub fn default_rooms() -> Vec<String> {
    [
        "bedroom", "kitchen", "bathroom", "hallway", "lounge", "office", "garage", "closet",
        "balcony", "library", "pantry", "foyer",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

pub fn default_objects() -> Vec<String> {
    [
        "chair", "table", "bed", "sofa", "plant", "lamp", "sink", "stairs", "piano", "fireplace",
        "mirror", "shelf",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            nodes: 25,
            rooms: default_rooms(),
            objects: default_objects(),
            feature_dim: 64,
            feature_seed: 7,
            spacing: 2.0,
            view_noise: 0.3,
            room_size: 2.5,
            object_prob: 0.4,
            clutter_prob: 0.3,
            extra_edge_prob: 0.4,
            diagonal_prob: 0.1,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes < 4 {
            return Err(Error::InvalidWorldConfig(format!(
                "node count {} is below the minimum of 4",
                self.nodes
            )));
        }
        if self.rooms.is_empty() {
            return Err(Error::InvalidWorldConfig("empty room vocabulary".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::InvalidWorldConfig("feature_dim must be positive".into()));
        }
        if self.rooms.iter().any(|r| self.objects.contains(r)) {
            return Err(Error::InvalidWorldConfig(
                "room and object vocabularies overlap".into(),
            ));
        }
        Ok(())
    }

    /// Unit direction of a label in appearance space.
    pub fn label_direction(&self, label: &str) -> Vec<f64> {
        let mut g = gaussian_vector(
            mix(&[LABEL_STREAM, self.feature_seed, str_seed(label)]),
            self.feature_dim,
        );
        normalize(&mut g).expect("gaussian vector is nonzero");
        g
    }
}

/// Appearance feature of a view: the sum of its label directions plus orientation-seeded
/// noise, renormalized. A pure function of `(labels, world seed, orientation)`.
pub fn render_view(
    cfg: &WorldConfig,
    labels: &[String],
    world_seed: u64,
    heading: usize,
    elevation: usize,
) -> Vec<f32> {
    let d = cfg.feature_dim;
    let mut v = vec![0.0; d];
    let mut label_key = 0u64;
    for l in labels {
        for (x, g) in v.iter_mut().zip(cfg.label_direction(l)) {
            *x += g;
        }
        label_key = mix(&[label_key, str_seed(l)]);
    }
    let noise = gaussian_vector(
        mix(&[VIEW_STREAM, world_seed, heading as u64, elevation as u64, label_key]),
        d,
    );
    for (x, n) in v.iter_mut().zip(noise) {
        *x += cfg.view_noise * n;
    }
    if normalize(&mut v).is_err() {
        v = vec![0.0; d];
        v[0] = 1.0;
    }
    to_f32(&v)
}

pub fn generate_world(seed: u64, cfg: &WorldConfig) -> Result<NavGraph> {
    cfg.validate()?;
    let mut rng = rng_from(&[WORLD_STREAM, seed]);
    let n = cfg.nodes;
    let width = (n as f64).sqrt().ceil() as usize;
    let jitter = 0.3 * cfg.spacing;

    let positions: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let (c, r) = ((i % width) as f64, (i / width) as f64);
            [
                c * cfg.spacing + rng.gen_range(-jitter..=jitter),
                r * cfg.spacing + rng.gen_range(-jitter..=jitter),
            ]
        })
        .collect();

    // Grid edges; a random spanning tree over them guarantees connectivity.
    let mut grid = Vec::new();
    let mut diagonal = Vec::new();
    for i in 0..n {
        let c = i % width;
        if c + 1 < width && i + 1 < n {
            grid.push((i, i + 1));
        }
        if i + width < n {
            grid.push((i, i + width));
        }
        if c + 1 < width && i + width + 1 < n {
            diagonal.push((i, i + width + 1));
        }
        if c > 0 && i + width - 1 < n {
            diagonal.push((i, i + width - 1));
        }
    }
    grid.shuffle(&mut rng);
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut y = x;
        while p[y] != r {
            let next = p[y];
            p[y] = r;
            y = next;
        }
        r
    }
    let mut edges = Vec::new();
    let mut spare = Vec::new();
    for (a, b) in grid {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            edges.push((a, b));
        } else {
            spare.push((a, b));
        }
    }
    spare.sort_unstable();
    for e in spare {
        if rng.gen_bool(cfg.extra_edge_prob) {
            edges.push(e);
        }
    }
    for e in diagonal {
        if rng.gen_bool(cfg.diagonal_prob) {
            edges.push(e);
        }
    }
    edges.sort_unstable();

    let mut adjacency = vec![Vec::new(); n];
    for &(a, b) in &edges {
        adjacency[a].push(b);
        adjacency[b].push(a);
    }
    for adj in adjacency.iter_mut() {
        adj.sort_unstable();
    }

    let rooms = assign_rooms(cfg, &adjacency, &mut rng);
    let objects: Vec<Option<String>> = (0..n)
        .map(|_| {
            if !cfg.objects.is_empty() && rng.gen_bool(cfg.object_prob) {
                Some(cfg.objects[rng.gen_range(0..cfg.objects.len())].clone())
            } else {
                None
            }
        })
        .collect();

    let mut panoramas = Vec::with_capacity(n);
    for u in 0..n {
        let mut facing: Vec<Vec<NodeId>> = vec![Vec::new(); HEADINGS];
        for &v in &adjacency[u] {
            facing[heading_between(positions[u], positions[v])].push(v);
        }
        let mut pano = Vec::with_capacity(HEADINGS * ELEVATIONS);
        for elevation in 0..ELEVATIONS {
            for heading in 0..HEADINGS {
                let mut labels: Vec<String> = Vec::new();
                match elevation {
                    HORIZON => {
                        labels.push(rooms[u].clone());
                        if facing[heading].is_empty() {
                            if !cfg.objects.is_empty() && rng.gen_bool(cfg.clutter_prob) {
                                labels.push(
                                    cfg.objects[rng.gen_range(0..cfg.objects.len())].clone(),
                                );
                            }
                        } else {
                            for &v in &facing[heading] {
                                labels.push(rooms[v].clone());
                                if let Some(o) = &objects[v] {
                                    labels.push(o.clone());
                                }
                            }
                        }
                    }
                    0 => {
                        if let Some(o) = &objects[u] {
                            labels.push(o.clone());
                        }
                    }
                    _ => {}
                }
                labels.sort();
                labels.dedup();
                let feature = render_view(cfg, &labels, seed, heading, elevation);
                pano.push(ViewImage {
                    labels,
                    feature,
                    heading,
                    elevation,
                });
            }
        }
        panoramas.push(pano);
    }

    NavGraph::from_parts(seed, positions, rooms, objects, &edges, panoramas)
}

/// Multi-source BFS from random seed nodes; neighbouring rooms avoid sharing a label when the
/// vocabulary allows it.
fn assign_rooms(cfg: &WorldConfig, adjacency: &[Vec<NodeId>], rng: &mut impl Rng) -> Vec<String> {
    let n = adjacency.len();
    let count = ((n as f64 / cfg.room_size).round() as usize).clamp(1, n);
    let mut order: Vec<NodeId> = (0..n).collect();
    order.shuffle(rng);
    let seeds = &order[..count];

    let mut region = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for (r, &s) in seeds.iter().enumerate() {
        region[s] = r;
        queue.push_back(s);
    }
    while let Some(u) = queue.pop_front() {
        for &v in &adjacency[u] {
            if region[v] == usize::MAX {
                region[v] = region[u];
                queue.push_back(v);
            }
        }
    }

    let mut label_of: Vec<Option<usize>> = vec![None; count];
    for r in 0..count {
        let mut taken = vec![false; cfg.rooms.len()];
        for u in 0..n {
            if region[u] != r {
                continue;
            }
            for &v in &adjacency[u] {
                if region[v] != r {
                    if let Some(l) = label_of[region[v]] {
                        taken[l] = true;
                    }
                }
            }
        }
        let free: Vec<usize> = (0..cfg.rooms.len()).filter(|&l| !taken[l]).collect();
        let pick = if free.is_empty() {
            rng.gen_range(0..cfg.rooms.len())
        } else {
            free[rng.gen_range(0..free.len())]
        };
        label_of[r] = Some(pick);
    }
    region
        .iter()
        .map(|&r| cfg.rooms[label_of[r].expect("every region labelled")].clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_tiny_or_empty_configs() {
        let cfg = WorldConfig {
            nodes: 3,
            ..WorldConfig::default()
        };
        assert!(matches!(generate_world(0, &cfg), Err(Error::InvalidWorldConfig(_))));
        let cfg = WorldConfig {
            rooms: vec![],
            ..WorldConfig::default()
        };
        assert!(matches!(generate_world(0, &cfg), Err(Error::InvalidWorldConfig(_))));
    }

    #[test]
    fn identical_view_inputs_render_identically() {
        let cfg = WorldConfig::default();
        let labels = vec!["kitchen".to_string()];
        let a = render_view(&cfg, &labels, 3, 4, 1);
        assert_eq!(a, render_view(&cfg, &labels, 3, 4, 1));
        assert_ne!(a, render_view(&cfg, &labels, 3, 5, 1));
        assert_ne!(a, render_view(&cfg, &labels, 4, 4, 1));
    }

    #[test]
    fn approach_views_show_the_neighbour() {
        let g = generate_world(2, &WorldConfig::default()).unwrap();
        for u in 0..g.len() {
            for c in g.candidates(u).unwrap().moves {
                let v = &g.panorama(u)[c.view];
                assert!(v.has_label(&g.rooms[c.target]));
                assert!(v.has_label(&g.rooms[u]));
                if let Some(o) = &g.objects[c.target] {
                    assert!(v.has_label(o));
                }
            }
        }
    }
}
