//! Command line front end: world and episode generation, prompt-base construction, training,
//! evaluation and prompt inspection.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::agent::Agent;
use crate::checkpoint::Checkpoint;
use crate::config::Settings;
use crate::dataset::{generate_suite, instruction_vocab, Dataset};
use crate::encoders::build_encoder;
use crate::error::{Error, Result};
use crate::metrics::{aggregate, episode_csv, score};
use crate::prompt_base::{build_prompt_base, retrieve_prompts, PromptBase, Vocabularies};
use crate::training::{
    evaluate, train_stage1, train_stage2, write_log, PromptCache, PromptInputs, TrainOutcome,
};
use crate::util::{read_text, write_atomic};
use crate::world::{generate_world, read_episodes, write_episodes, Episode, NavGraph, Split, WorldStore};

#[derive(Parser, Debug)]
#[command(name = "adapt-nav", version, about = "Action-prompt navigation agent on synthetic worlds")]
pub struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed; the world seed for `gen-world`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write one generated world as JSON.
    GenWorld {
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the training and unseen-validation episodes of the configured suite.
    GenEpisodes {
        #[arg(long)]
        out: PathBuf,
        /// Also write every world of the suite as `world-<seed>.json` into this directory.
        #[arg(long)]
        worlds: Option<PathBuf>,
    },
    /// Collect action prompts from the training episodes.
    BuildPromptBase {
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tau1: Option<f64>,
        #[command(flatten)]
        worlds: WorldsArg,
    },
    /// Run one training stage and save the best checkpoint.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Stage-1 checkpoint to continue from (stage 2 only).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Prompt base for stage 2; without it stage 2 continues prompt-free.
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        nmax: Option<usize>,
        /// Train on a seeded fraction of the training episodes.
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
        #[command(flatten)]
        worlds: WorldsArg,
    },
    /// Score greedy rollouts and write a JSON report.
    Eval {
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, required_unless_present = "oracle")]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        nmax: Option<usize>,
        /// Replay the reference paths instead of running an agent.
        #[arg(long)]
        oracle: bool,
        /// Which episodes of the file to score.
        #[arg(long, default_value = "val_unseen")]
        split: String,
        /// Also write per-episode metrics as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        worlds: WorldsArg,
    },
    /// Show the prompts retrieved for an instruction.
    InspectPrompts {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        instruction: String,
        #[arg(long)]
        nmax: Option<usize>,
    },
}

#[derive(Args, Debug, Clone)]
pub struct WorldsArg {
    /// Directory of `world-<seed>.json` files; worlds are regenerated from the config otherwise.
    #[arg(long = "worlds")]
    pub dir: Option<PathBuf>,
}

fn require(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingFile(path.to_path_buf()))
    }
}

/// The directory an output will be written into must already exist.
fn writable(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(Error::MissingFile(dir.to_path_buf())),
        _ => Ok(()),
    }
}

pub fn world_file(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("world-{seed}.json"))
}

/// Graphs of every world referenced by `episodes`.
fn load_worlds(settings: &Settings, dir: Option<&Path>, episodes: &[Episode]) -> Result<WorldStore> {
    let mut store = WorldStore::new();
    for ep in episodes {
        if store.contains_key(&ep.world_seed) {
            continue;
        }
        let g = match dir {
            Some(d) => NavGraph::from_json(&read_text(&world_file(d, ep.world_seed))?)?,
            None => generate_world(ep.world_seed, &settings.suite.world)?,
        };
        store.insert(ep.world_seed, g);
    }
    for ep in episodes {
        ep.validate(&store[&ep.world_seed])?;
    }
    Ok(store)
}

fn load_dataset(settings: &Settings, dir: Option<&Path>, path: &Path) -> Result<Dataset> {
    let episodes = read_episodes(path)?;
    if episodes.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no episodes", path.display())));
    }
    let worlds = load_worlds(settings, dir, &episodes)?;
    let (train, val) = episodes.into_iter().partition(|e| e.split == Split::Train);
    Ok(Dataset { worlds, train, val })
}

fn worlds_dir<'a>(settings: &'a Settings, arg: &'a WorldsArg) -> Option<&'a Path> {
    arg.dir.as_deref().or(settings.worlds_dir.as_deref())
}

fn save_outcome(out: &Path, outcome: &TrainOutcome) -> Result<()> {
    outcome.best.save(out)?;
    write_log(&log_path(out), &outcome.log)?;
    let evals = serde_json::to_string_pretty(&outcome.evals)?;
    write_atomic(&sidecar(out, "evals.json"), evals.as_bytes())
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

/// Training log written next to a checkpoint.
pub fn log_path(ckpt: &Path) -> PathBuf {
    sidecar(ckpt, "log.jsonl")
}

/// Run a parsed command.
pub fn execute(cli: Cli) -> Result<()> {
    if let Some(p) = &cli.config {
        require(p)?;
    }
    let mut settings = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    if let Some(seed) = cli.seed {
        settings.train.seed = seed;
    }
    match cli.command {
        Command::GenWorld { out } => {
            writable(&out)?;
            let seed = cli.seed.unwrap_or(settings.suite.train_worlds[0]);
            let g = generate_world(seed, &settings.suite.world)?;
            write_atomic(&out, g.to_json()?.as_bytes())?;
            println!("world {seed}: {} nodes, {} edges -> {}", g.len(), g.edges().len(), out.display());
        }
        Command::GenEpisodes { out, worlds } => {
            writable(&out)?;
            let data = generate_suite(&settings.suite)?;
            if let Some(dir) = &worlds {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                for (seed, g) in &data.worlds {
                    write_atomic(&world_file(dir, *seed), g.to_json()?.as_bytes())?;
                }
            }
            let all: Vec<Episode> = data.train.iter().chain(&data.val).cloned().collect();
            write_episodes(&out, &all)?;
            println!(
                "{} train and {} val_unseen episodes over {} worlds -> {}",
                data.train.len(),
                data.val.len(),
                data.worlds.len(),
                out.display()
            );
        }
        Command::BuildPromptBase { episodes, out, tau1, worlds } => {
            require(&episodes)?;
            writable(&out)?;
            let tau1 = tau1.unwrap_or(settings.tau1);
            let data = load_dataset(&settings, worlds_dir(&settings, &worlds), &episodes)?;
            let encoder = build_encoder(&settings.encoder, &settings.suite.world)?;
            let vocabs = Vocabularies::from_world(&settings.suite.world)?;
            let base = build_prompt_base(&data.train, &data.worlds, &vocabs, encoder.as_ref(), tau1)?;
            base.save(&out)?;
            println!(
                "{} prompts from {} episodes ({} phrases skipped) -> {}",
                base.len(),
                data.train.len(),
                base.meta.skipped,
                out.display()
            );
        }
        Command::Train { stage, episodes, out, resume, base, nmax, fraction, worlds } => {
            require(&episodes)?;
            for p in resume.iter().chain(&base) {
                require(p)?;
            }
            writable(&out)?;
            if let Some(n) = nmax {
                settings.train.retrieval.n_max = n;
            }
            settings.validate()?;
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::Config("--fraction must be in (0, 1]".into()));
            }
            let mut data = load_dataset(&settings, worlds_dir(&settings, &worlds), &episodes)?;
            if fraction < 1.0 {
                data = data.with_train_fraction(fraction, settings.train.seed);
            }
            if data.train.is_empty() || data.val.is_empty() {
                return Err(Error::EmptyInput("training needs train and val_unseen episodes".into()));
            }
            let outcome = match stage {
                1 => {
                    if resume.is_some() || base.is_some() {
                        return Err(Error::Config("--resume and --base apply to stage 2".into()));
                    }
                    let vocab = instruction_vocab(&settings.suite.world);
                    let agent = Agent::new(settings.model_config(), vocab, settings.train.seed)?;
                    train_stage1(&settings.train, agent, &data)?
                }
                _ => {
                    let resume = resume
                        .ok_or_else(|| Error::Config("stage 2 needs --resume <stage-1 checkpoint>".into()))?;
                    let start = Checkpoint::load(&resume)?;
                    let encoder = build_encoder(&settings.encoder, &settings.suite.world)?;
                    let vocabs = Vocabularies::from_world(&settings.suite.world)?;
                    let base = base.map(|p| PromptBase::load(&p)).transpose()?;
                    let prompts = base.as_ref().map(|b| PromptInputs {
                        base: b,
                        vocabs: &vocabs,
                        encoder: encoder.as_ref(),
                    });
                    train_stage2(&settings.train, &start, prompts, &data)?
                }
            };
            save_outcome(&out, &outcome)?;
            let best = &outcome.best.provenance;
            println!(
                "stage {stage}: {} iterations, best val SPL {:.2} at iteration {} -> {}",
                outcome.iterations,
                best.val_spl.unwrap_or(0.0),
                best.iteration,
                out.display()
            );
        }
        Command::Eval { episodes, out, ckpt, base, nmax, oracle, split, csv, worlds } => {
            require(&episodes)?;
            for p in ckpt.iter().chain(&base) {
                require(p)?;
            }
            for p in std::iter::once(&out).chain(&csv) {
                writable(p)?;
            }
            if let Some(n) = nmax {
                settings.train.retrieval.n_max = n;
            }
            let data = load_dataset(&settings, worlds_dir(&settings, &worlds), &episodes)?;
            let selected: Vec<Episode> = match split.as_str() {
                "all" => data.train.iter().chain(&data.val).cloned().collect(),
                "train" => data.train.clone(),
                "val_unseen" => data.val.clone(),
                other => return Err(Error::Config(format!("unknown split '{other}'"))),
            };
            if selected.is_empty() {
                return Err(Error::EmptyInput(format!("no {split} episodes in {}", episodes.display())));
            }
            let radius = settings.train.loss.success_radius;
            let metrics = if oracle {
                selected
                    .iter()
                    .map(|e| score(data.world(e)?, &e.path, &e.path, radius))
                    .collect::<Result<Vec<_>>>()?
            } else {
                let ckpt = Checkpoint::load(ckpt.as_deref().expect("clap requires --ckpt"))?;
                let cache = match (&ckpt.provenance.prompt_base, &base) {
                    (None, None) => None,
                    (Some(_), None) => {
                        return Err(Error::CheckpointMismatch(
                            "checkpoint was trained with prompts; pass --base".into(),
                        ))
                    }
                    (expected, Some(p)) => {
                        let b = PromptBase::load(p)?;
                        if let Some(fp) = expected {
                            if *fp != b.fingerprint()? {
                                return Err(Error::CheckpointMismatch(
                                    "prompt base differs from the one used in training".into(),
                                ));
                            }
                        }
                        let encoder = build_encoder(&b.meta.encoder, &settings.suite.world)?;
                        let vocabs = Vocabularies::from_world(&settings.suite.world)?;
                        Some(PromptCache::build(&selected, &b, &vocabs, encoder.as_ref(), settings.train.retrieval)?)
                    }
                };
                evaluate(&ckpt.agent, &data, &selected, cache.as_ref(), settings.train.max_steps, radius)?.0
            };
            let report = aggregate(&split, &metrics, radius)?;
            write_atomic(&out, serde_json::to_string_pretty(&report)?.as_bytes())?;
            if let Some(csv) = csv {
                let ids: Vec<String> = selected.iter().map(|e| e.id.clone()).collect();
                write_atomic(&csv, episode_csv(&ids, &metrics).as_bytes())?;
            }
            println!(
                "{split}: {} episodes, SR {:.1}, SPL {:.1}, NE {:.2} -> {}",
                report.n_episodes,
                report.sr,
                report.spl,
                report.ne,
                out.display()
            );
        }
        Command::InspectPrompts { base, instruction, nmax } => {
            require(&base)?;
            if let Some(n) = nmax {
                settings.train.retrieval.n_max = n;
            }
            let b = PromptBase::load(&base)?;
            let encoder = build_encoder(&b.meta.encoder, &settings.suite.world)?;
            let vocabs = Vocabularies::from_world(&settings.suite.world)?;
            let set = retrieve_prompts(&instruction, &b, &vocabs, encoder.as_ref(), settings.train.retrieval)?;
            print!("{}", format_listing(&b, &set.slots));
        }
    }
    info!("done");
    Ok(())
}

/// Ranked listing of the valid slots of a retrieved set.
pub fn format_listing(base: &PromptBase, slots: &[Option<crate::prompt_base::RetrievedSlot>]) -> String {
    let valid: Vec<_> = slots.iter().flatten().collect();
    let mut out = format!("{} prompts retrieved\n", valid.len());
    for (rank, s) in valid.iter().enumerate() {
        let p = &base.prompts[s.prompt];
        let v = &p.view_ref;
        let _ = writeln!(
            out,
            "{:>3}. {:.3}  \"{}\"  query \"{}\"  episode {}  view w{}/n{}/v{}  labels {}",
            rank + 1,
            s.similarity,
            p.phrase,
            s.query,
            p.episode_id,
            v.world_seed,
            v.node,
            v.view,
            v.labels.join(",")
        );
    }
    out
}
