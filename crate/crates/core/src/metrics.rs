//! Trajectory metrics: TL, NE, SR, SPL, CLS, nDTW and SDTW, plus split-level reports.
//!
//! Ground distances are geodesic distances in the navigation graph.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{NavGraph, NodeId};

/// Default success radius in distance units.
pub const DEFAULT_SUCCESS_RADIUS: f64 = 3.0;

pub fn trajectory_length(graph: &NavGraph, path: &[NodeId]) -> Result<f64> {
    path.windows(2).map(|w| graph.edge_length(w[0], w[1])).sum()
}

fn check_path(graph: &NavGraph, path: &[NodeId]) -> Result<()> {
    if path.is_empty() {
        return Err(Error::EmptyInput("path".into()));
    }
    match path.iter().find(|&&n| n >= graph.len()) {
        Some(&n) => Err(Error::UnknownNode(n)),
        None => Ok(()),
    }
}

pub fn navigation_error(graph: &NavGraph, predicted: &[NodeId], reference: &[NodeId]) -> Result<f64> {
    check_path(graph, predicted)?;
    check_path(graph, reference)?;
    graph.shortest_path_length(*predicted.last().unwrap(), *reference.last().unwrap())
}

/// Dynamic time warping cost between two node sequences.
pub fn dtw(graph: &NavGraph, predicted: &[NodeId], reference: &[NodeId]) -> f64 {
    let (n, m) = (predicted.len(), reference.len());
    let mut d = vec![vec![f64::INFINITY; m + 1]; n + 1];
    d[0][0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let c = graph.geodesic(predicted[i - 1], reference[j - 1]);
            d[i][j] = c + d[i - 1][j].min(d[i][j - 1]).min(d[i - 1][j - 1]);
        }
    }
    d[n][m]
}

pub fn ndtw(graph: &NavGraph, predicted: &[NodeId], reference: &[NodeId], radius: f64) -> f64 {
    (-dtw(graph, predicted, reference) / (reference.len() as f64 * radius)).exp()
}

/// Coverage weighted by length score.
pub fn cls(graph: &NavGraph, predicted: &[NodeId], reference: &[NodeId], radius: f64) -> Result<f64> {
    let coverage = reference
        .iter()
        .map(|&r| {
            let near = predicted
                .iter()
                .map(|&p| graph.geodesic(r, p))
                .fold(f64::INFINITY, f64::min);
            (-near / radius).exp()
        })
        .sum::<f64>()
        / reference.len() as f64;
    let expected = coverage * trajectory_length(graph, reference)?;
    let actual = trajectory_length(graph, predicted)?;
    let denom = expected + (expected - actual).abs();
    let length_score = if denom == 0.0 { 1.0 } else { expected / denom };
    Ok(coverage * length_score)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub tl: f64,
    pub ne: f64,
    pub sr: f64,
    pub spl: f64,
    pub cls: f64,
    pub ndtw: f64,
    pub sdtw: f64,
}

/// All metrics of one predicted path against its reference path.
pub fn score(
    graph: &NavGraph,
    predicted: &[NodeId],
    reference: &[NodeId],
    radius: f64,
) -> Result<EpisodeMetrics> {
    let ne = navigation_error(graph, predicted, reference)?;
    let tl = trajectory_length(graph, predicted)?;
    let sr = if ne < radius { 1.0 } else { 0.0 };
    let shortest = graph.shortest_path_length(reference[0], *reference.last().unwrap())?;
    let spl = if sr > 0.0 {
        let denom = tl.max(shortest);
        if denom == 0.0 {
            1.0
        } else {
            shortest / denom
        }
    } else {
        0.0
    };
    let ndtw = ndtw(graph, predicted, reference, radius);
    Ok(EpisodeMetrics {
        tl,
        ne,
        sr,
        spl,
        cls: cls(graph, predicted, reference, radius)?,
        ndtw,
        sdtw: sr * ndtw,
    })
}

/// Split-level means. SR and SPL are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub split: String,
    pub n_episodes: usize,
    #[serde(rename = "TL")]
    pub tl: f64,
    #[serde(rename = "NE")]
    pub ne: f64,
    #[serde(rename = "SR")]
    pub sr: f64,
    #[serde(rename = "SPL")]
    pub spl: f64,
    #[serde(rename = "CLS")]
    pub cls: f64,
    #[serde(rename = "nDTW")]
    pub ndtw: f64,
    #[serde(rename = "SDTW")]
    pub sdtw: f64,
    /// Success radius the report was computed with.
    pub success_radius: f64,
}

pub fn aggregate(split: &str, results: &[EpisodeMetrics], radius: f64) -> Result<Report> {
    if results.is_empty() {
        return Err(Error::EmptyInput("no episodes to aggregate".into()));
    }
    let n = results.len() as f64;
    let mean = |f: fn(&EpisodeMetrics) -> f64| results.iter().map(f).sum::<f64>() / n;
    Ok(Report {
        split: split.to_string(),
        n_episodes: results.len(),
        tl: mean(|m| m.tl),
        ne: mean(|m| m.ne),
        sr: 100.0 * mean(|m| m.sr),
        spl: 100.0 * mean(|m| m.spl),
        cls: mean(|m| m.cls),
        ndtw: mean(|m| m.ndtw),
        sdtw: mean(|m| m.sdtw),
        success_radius: radius,
    })
}

/// Per-episode rows as CSV text.
pub fn episode_csv(ids: &[String], results: &[EpisodeMetrics]) -> String {
    let mut out = String::from("episode,TL,NE,SR,SPL,CLS,nDTW,SDTW\n");
    for (id, m) in ids.iter().zip(results) {
        out.push_str(&format!(
            "{id},{},{},{},{},{},{},{}\n",
            m.tl, m.ne, m.sr, m.spl, m.cls, m.ndtw, m.sdtw
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_world, WorldConfig};

    fn world() -> NavGraph {
        generate_world(21, &WorldConfig { nodes: 16, ..WorldConfig::default() }).unwrap()
    }

    #[test]
    fn identical_paths_score_perfectly() {
        let g = world();
        let p = g.shortest_path(0, 15).unwrap();
        let m = score(&g, &p, &p, 3.0).unwrap();
        assert_eq!((m.sr, m.spl, m.ndtw, m.cls, m.ne), (1.0, 1.0, 1.0, 1.0, 0.0));
        let single = score(&g, &[4], &[4], 3.0).unwrap();
        assert_eq!((single.tl, single.sr, single.spl), (0.0, 1.0, 1.0));
    }

    #[test]
    fn failure_and_detour() {
        let g = world();
        let p = g.shortest_path(0, 15).unwrap();
        let m = score(&g, &[0], &p, 0.5).unwrap();
        assert_eq!((m.sr, m.spl, m.sdtw), (0.0, 0.0, 0.0));
        let (a, b) = g.edges()[0];
        let back = score(&g, &[a, b, a, b], &[a, b], 0.5).unwrap();
        let d = g.edge_length(a, b).unwrap();
        assert!((back.tl - 3.0 * d).abs() < 1e-12);
        assert!((back.spl - 1.0 / 3.0).abs() < 1e-12);
        assert!(matches!(trajectory_length(&g, &[0, 0]), Err(Error::NotAdjacent(0, 0))));
    }

    #[test]
    fn aggregate_means() {
        assert!(aggregate("val", &[], 3.0).is_err());
        let one = EpisodeMetrics { tl: 2.0, ne: 0.0, sr: 1.0, spl: 1.0, cls: 1.0, ndtw: 1.0, sdtw: 1.0 };
        let zero = EpisodeMetrics { tl: 4.0, ne: 5.0, sr: 0.0, spl: 0.0, cls: 0.2, ndtw: 0.4, sdtw: 0.0 };
        let r = aggregate("val", &[one, zero], 3.0).unwrap();
        assert_eq!((r.sr, r.spl, r.tl, r.ne), (50.0, 50.0, 3.0, 2.5));
        let v = serde_json::to_value(&r).unwrap();
        for k in ["split", "n_episodes", "TL", "NE", "SR", "SPL", "CLS", "nDTW", "SDTW"] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }
}
