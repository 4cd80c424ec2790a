use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Episode, NavGraph, ViewImage};
use crate::error::{Error, Result};
use crate::util::{decode_f32, encode_f32, read_text, write_atomic};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub room: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewRecord {
    pub heading: usize,
    pub elevation: usize,
    pub labels: Vec<String>,
    /// Base64 of little-endian f32 values.
    pub feature: String,
}

/// On-disk form of a [`NavGraph`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphRecord {
    pub seed: u64,
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<(usize, usize)>,
    pub panoramas: Vec<Vec<ViewRecord>>,
}

impl From<&NavGraph> for GraphRecord {
    fn from(g: &NavGraph) -> Self {
        GraphRecord {
            seed: g.seed,
            nodes: (0..g.len())
                .map(|i| NodeRecord {
                    id: i,
                    x: g.positions[i][0],
                    y: g.positions[i][1],
                    room: g.rooms[i].clone(),
                    object: g.objects[i].clone(),
                })
                .collect(),
            edges: g.edges(),
            panoramas: g
                .panoramas()
                .iter()
                .map(|p| {
                    p.iter()
                        .map(|v| ViewRecord {
                            heading: v.heading,
                            elevation: v.elevation,
                            labels: v.labels.clone(),
                            feature: encode_f32(&v.feature),
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

impl TryFrom<GraphRecord> for NavGraph {
    type Error = Error;

    fn try_from(r: GraphRecord) -> Result<Self> {
        for (i, n) in r.nodes.iter().enumerate() {
            if n.id != i {
                return Err(Error::format("graph", format!("node {i} has id {}", n.id)));
            }
        }
        let panoramas = r
            .panoramas
            .into_iter()
            .map(|p| {
                p.into_iter()
                    .map(|v| {
                        Ok(ViewImage {
                            labels: v.labels,
                            feature: decode_f32(&v.feature)?,
                            heading: v.heading,
                            elevation: v.elevation,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        NavGraph::from_parts(
            r.seed,
            r.nodes.iter().map(|n| [n.x, n.y]).collect(),
            r.nodes.iter().map(|n| n.room.clone()).collect(),
            r.nodes.iter().map(|n| n.object.clone()).collect(),
            &r.edges,
            panoramas,
        )
    }
}

impl NavGraph {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&GraphRecord::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: GraphRecord = serde_json::from_str(s).map_err(|e| Error::format("graph", e))?;
        r.try_into()
    }
}

pub fn write_episodes(path: &Path, episodes: &[Episode]) -> Result<()> {
    let mut out = String::new();
    for e in episodes {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_episodes(path: &Path) -> Result<Vec<Episode>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::format(format!("episode line {}", i + 1), e))
        })
        .collect()
}
