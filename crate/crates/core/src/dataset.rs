//! Benchmark suites: sets of worlds with training and held-out episodes.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::rng_from;
use crate::world::{
    generate_episode, generate_world, Episode, EpisodeConfig, NavGraph, Split, WorldConfig,
    WorldStore,
};

const SUBSET_STREAM: u64 = 0x5355_4253;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub world: WorldConfig,
    pub episodes: EpisodeConfig,
    pub train_worlds: Vec<u64>,
    pub train_per_world: usize,
    /// Worlds never seen in training.
    pub val_worlds: Vec<u64>,
    pub val_per_world: usize,
}

impl Default for SuiteConfig {
    /// 25-node worlds, 10 × 50 training episodes and 4 × 25 unseen validation episodes.
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            episodes: EpisodeConfig::default(),
            train_worlds: (1..=10).collect(),
            train_per_world: 50,
            val_worlds: (1001..=1004).collect(),
            val_per_world: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub worlds: WorldStore,
    pub train: Vec<Episode>,
    pub val: Vec<Episode>,
}

impl Dataset {
    pub fn world(&self, ep: &Episode) -> Result<&NavGraph> {
        self.worlds.get(&ep.world_seed).ok_or_else(|| {
            Error::InvalidEpisode(format!("{}: world {} not loaded", ep.id, ep.world_seed))
        })
    }

    /// The same suite with a seeded `fraction` of the training episodes.
    pub fn with_train_fraction(&self, fraction: f64, seed: u64) -> Dataset {
        let mut train = self.train.clone();
        train.shuffle(&mut rng_from(&[SUBSET_STREAM, seed]));
        let keep = ((train.len() as f64 * fraction).round() as usize).clamp(1, train.len().max(1));
        train.truncate(keep);
        train.sort_by(|a, b| a.id.cmp(&b.id));
        Dataset {
            worlds: self.worlds.clone(),
            train,
            val: self.val.clone(),
        }
    }
}

/// `count` episodes in one world. Seeds whose sampled length has no route are skipped.
pub fn generate_episodes(
    graph: &NavGraph,
    count: usize,
    cfg: &EpisodeConfig,
    split: Split,
) -> Result<Vec<Episode>> {
    let mut out = Vec::with_capacity(count);
    let mut seed = 0u64;
    while out.len() < count {
        if seed > 100 * count as u64 + 100 {
            return Err(Error::InvalidWorldConfig(format!(
                "world {} yields too few episodes",
                graph.seed
            )));
        }
        let id = format!("{}-w{}-{:04}", split.as_str(), graph.seed, out.len());
        match generate_episode(graph, seed, cfg, id, split) {
            Ok(e) => out.push(e),
            Err(Error::NoPathOfLength(_)) => {}
            Err(e) => return Err(e),
        }
        seed += 1;
    }
    Ok(out)
}

pub fn generate_suite(cfg: &SuiteConfig) -> Result<Dataset> {
    if let Some(s) = cfg.val_worlds.iter().find(|s| cfg.train_worlds.contains(s)) {
        return Err(Error::Config(format!("world {s} is in both training and validation")));
    }
    let mut worlds = WorldStore::new();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (seeds, per, split, sink) in [
        (&cfg.train_worlds, cfg.train_per_world, Split::Train, &mut train),
        (&cfg.val_worlds, cfg.val_per_world, Split::ValUnseen, &mut val),
    ] {
        for &s in seeds {
            let g = generate_world(s, &cfg.world)?;
            sink.extend(generate_episodes(&g, per, &cfg.episodes, split)?);
            worlds.insert(s, g);
        }
    }
    Ok(Dataset { worlds, train, val })
}

/// Instruction vocabulary for worlds built from `cfg`: template words and every label.
pub fn instruction_vocab(cfg: &WorldConfig) -> crate::text::Vocab {
    crate::text::Vocab::new(
        crate::world::template_verbs()
            .into_iter()
            .chain(crate::world::template_fillers())
            .chain(cfg.rooms.iter().cloned())
            .chain(cfg.objects.iter().cloned()),
    )
}
