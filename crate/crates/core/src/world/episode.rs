use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NavGraph, NodeId, ViewRef};
use crate::error::{Error, Result};
use crate::util::rng_from;

const EPISODE_STREAM: u64 = 0x4550_4953;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    ValSeen,
    ValUnseen,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::ValSeen => "val_seen",
            Split::ValUnseen => "val_unseen",
        }
    }
}

/// A contiguous slice `path[start..=end]` that one instruction phrase talks about.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubPath {
    pub object: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub instruction: String,
    pub path: Vec<NodeId>,
    /// Ordered segment annotations; the k-th mention of an object in the instruction maps to the
    /// k-th sub-path carrying that object.
    pub sub_paths: Vec<SubPath>,
    pub world_seed: u64,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    /// Path length bounds, in nodes.
    pub min_len: usize,
    pub max_len: usize,
    /// Chance that a non-initial segment names the object at its last node instead of its room.
    pub object_mention_prob: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            min_len: 3,
            max_len: 7,
            object_mention_prob: 0.3,
        }
    }
}

/// Verb-led phrase templates. Each renders as `"<words> the <object>"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Template {
    WalkOutOf,
    Exit,
    Leave,
    WalkThrough,
    GoThrough,
    ContinueThrough,
    PassThrough,
    WalkPast,
    GoPast,
    WalkInto,
    Enter,
    StopIn,
    HeadInto,
    StopAt,
    WalkTo,
}

impl Template {
    pub fn words(&self) -> &'static str {
        match self {
            Template::WalkOutOf => "walk out of",
            Template::Exit => "exit",
            Template::Leave => "leave",
            Template::WalkThrough => "walk through",
            Template::GoThrough => "go through",
            Template::ContinueThrough => "continue through",
            Template::PassThrough => "pass through",
            Template::WalkPast => "walk past",
            Template::GoPast => "go past",
            Template::WalkInto => "walk into",
            Template::Enter => "enter",
            Template::StopIn => "stop in",
            Template::HeadInto => "head into",
            Template::StopAt => "stop at",
            Template::WalkTo => "walk to",
        }
    }

    const LEAVING: [Template; 3] = [Template::WalkOutOf, Template::Exit, Template::Leave];
    const THROUGH: [Template; 4] = [
        Template::WalkThrough,
        Template::GoThrough,
        Template::ContinueThrough,
        Template::PassThrough,
    ];
    const PAST: [Template; 2] = [Template::WalkPast, Template::GoPast];
    const ARRIVING: [Template; 5] = [
        Template::WalkInto,
        Template::Enter,
        Template::StopIn,
        Template::HeadInto,
        Template::WalkThrough,
    ];
    const ARRIVING_AT: [Template; 2] = [Template::StopAt, Template::WalkTo];
}

/// Every verb used by the templates.
pub fn template_verbs() -> Vec<String> {
    ["walk", "exit", "leave", "go", "continue", "pass", "enter", "stop", "head"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Every non-verb, non-object word the templates emit.
pub fn template_fillers() -> Vec<String> {
    ["out", "of", "through", "past", "into", "in", "at", "to", "the"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Render `(template, object)` phrases as sentences: `"walk out of the bedroom. walk through
/// the kitchen."`.
pub fn compose_instruction(phrases: &[(Template, &str)]) -> String {
    phrases
        .iter()
        .map(|(t, o)| format!("{} the {o}.", t.words()))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Views along a sub-path: for every node of the slice, the view it was entered through and the
/// view it is left through.
pub fn subpath_views(graph: &NavGraph, path: &[NodeId], start: usize, end: usize) -> Vec<ViewRef> {
    let mut out: Vec<ViewRef> = Vec::new();
    let last = path.len() - 1;
    for k in start..=end.min(last) {
        if k > 0 {
            out.push(ViewRef {
                node: path[k - 1],
                view: graph.approach_view(path[k - 1], path[k]),
            });
        }
        if k < last {
            out.push(ViewRef {
                node: path[k],
                view: graph.approach_view(path[k], path[k + 1]),
            });
        }
    }
    let mut seen = std::collections::HashSet::new();
    out.retain(|r| seen.insert(*r));
    out
}

impl Episode {
    pub fn start(&self) -> NodeId {
        self.path[0]
    }

    pub fn goal(&self) -> NodeId {
        *self.path.last().expect("validated path is nonempty")
    }

    pub fn validate(&self, graph: &NavGraph) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidEpisode(format!("{}: {m}", self.id)));
        if self.instruction.trim().is_empty() {
            return bad("empty instruction".into());
        }
        if self.path.is_empty() {
            return bad("empty path".into());
        }
        if let Some(&n) = self.path.iter().find(|&&n| n >= graph.len()) {
            return bad(format!("node {n} not in graph"));
        }
        for w in self.path.windows(2) {
            if !graph.is_adjacent(w[0], w[1]) {
                return bad(format!("path step {} -> {} is not an edge", w[0], w[1]));
            }
        }
        let mut next = 0;
        for sp in &self.sub_paths {
            if sp.start > sp.end || sp.end >= self.path.len() {
                return bad(format!("sub-path {}..={} out of range", sp.start, sp.end));
            }
            if sp.start != next {
                return bad(format!("sub-path for '{}' leaves a gap or overlaps", sp.object));
            }
            next = sp.end + 1;
            let visible = subpath_views(graph, &self.path, sp.start, sp.end)
                .iter()
                .any(|r| graph.view(*r).has_label(&sp.object));
            if !visible {
                return bad(format!("'{}' not visible along its sub-path", sp.object));
            }
        }
        if !self.sub_paths.is_empty() && next != self.path.len() {
            return bad("sub-paths do not cover the path".into());
        }
        Ok(())
    }
}

/// Sample a shortest-path route of random length and describe it room by room.
///
/// The route ends on the first node of its final room so that "arrive in the last room named"
/// pins down the goal.
pub fn generate_episode(
    graph: &NavGraph,
    seed: u64,
    cfg: &EpisodeConfig,
    id: impl Into<String>,
    split: Split,
) -> Result<Episode> {
    let mut rng = rng_from(&[EPISODE_STREAM, graph.seed, seed]);
    let len = rng.gen_range(cfg.min_len..=cfg.max_len);
    let n = graph.len();
    let mut routes = Vec::new();
    for s in 0..n {
        for t in 0..n {
            if s == t {
                continue;
            }
            let p = graph.shortest_path(s, t)?;
            if p.len() == len && graph.rooms[p[len - 1]] != graph.rooms[p[len - 2]] {
                routes.push(p);
            }
        }
    }
    if routes.is_empty() {
        return Err(Error::NoPathOfLength(len));
    }
    let path = routes.swap_remove(rng.gen_range(0..routes.len()));

    // Maximal runs of nodes sharing a room.
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for k in 1..=path.len() {
        if k == path.len() || graph.rooms[path[k]] != graph.rooms[path[start]] {
            runs.push((start, k - 1));
            start = k;
        }
    }

    let last_run = runs.len() - 1;
    let mut phrases: Vec<(Template, String)> = Vec::new();
    let mut sub_paths = Vec::new();
    for (i, &(a, b)) in runs.iter().enumerate() {
        let room = graph.rooms[path[a]].clone();
        let object = graph.objects[path[b]]
            .clone()
            .filter(|_| b > 0 && i > 0 && rng.gen_bool(cfg.object_mention_prob));
        let (template, word) = match (i, object) {
            (0, _) => (pick(&mut rng, &Template::LEAVING), room),
            (i, Some(o)) if i == last_run => (pick(&mut rng, &Template::ARRIVING_AT), o),
            (_, Some(o)) => (pick(&mut rng, &Template::PAST), o),
            (i, None) if i == last_run => (pick(&mut rng, &Template::ARRIVING), room),
            (_, None) => (pick(&mut rng, &Template::THROUGH), room),
        };
        sub_paths.push(SubPath {
            object: word.clone(),
            start: a,
            end: b,
        });
        phrases.push((template, word));
    }
    let refs: Vec<(Template, &str)> = phrases.iter().map(|(t, w)| (*t, w.as_str())).collect();
    let episode = Episode {
        id: id.into(),
        instruction: compose_instruction(&refs),
        path,
        sub_paths,
        world_seed: graph.seed,
        split,
    };
    episode.validate(graph)?;
    Ok(episode)
}

fn pick<R: Rng>(rng: &mut R, options: &[Template]) -> Template {
    options[rng.gen_range(0..options.len())]
}
