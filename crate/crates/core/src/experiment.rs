//! The ablation protocol: one prompt-free first stage per seed, then three second-stage
//! variants under the same budget (no prompts, prompts only, prompts with both auxiliary losses).

use serde::{Deserialize, Serialize};

use crate::agent::Agent;
use crate::config::Settings;
use crate::dataset::{generate_suite, instruction_vocab, Dataset};
use crate::encoders::build_encoder;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::prompt_base::{build_prompt_base, Vocabularies};
use crate::training::{train_stage1, train_stage2, PromptInputs, TrainOutcome};
use crate::util::median;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Second stage without prompts.
    Baseline,
    /// Prompts trained through the navigation losses only.
    PromptsOnly,
    /// Prompts plus the consistency and alignment losses.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::PromptsOnly, Variant::Full];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::PromptsOnly => "adapt-1",
            Variant::Full => "adapt-full",
        }
    }

    fn losses(&self, base: &LossConfig) -> LossConfig {
        match self {
            Variant::Full => *base,
            _ => LossConfig {
                consistency_weight: 0.0,
                alignment_weight: 0.0,
                ..*base
            },
        }
    }
}

/// Validation success rates of the best checkpoint of each run for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub stage1_sr: f64,
    /// In the order of `variants`.
    pub sr: Vec<f64>,
    pub variants: Vec<Variant>,
}

impl SeedResult {
    pub fn sr_of(&self, v: Variant) -> Option<f64> {
        self.variants.iter().position(|&x| x == v).map(|i| self.sr[i])
    }
}

fn best_sr(out: &TrainOutcome) -> Result<f64> {
    out.evals
        .iter()
        .find(|e| e.iter == out.best.provenance.iteration)
        .map(|e| e.report.sr)
        .ok_or_else(|| Error::InvalidValue("best checkpoint has no evaluation".into()))
}

/// Run the protocol for `seed` on `data`, restricted to a seeded `fraction` of its training
/// episodes. The prompt base is built from the same training episodes the agent sees.
pub fn run_seed(
    settings: &Settings,
    data: &Dataset,
    seed: u64,
    fraction: f64,
    variants: &[Variant],
) -> Result<SeedResult> {
    let data = if fraction < 1.0 {
        data.with_train_fraction(fraction, seed)
    } else {
        data.clone()
    };
    let mut train = settings.train.clone();
    train.seed = seed;
    let encoder = build_encoder(&settings.encoder, &settings.suite.world)?;
    let vocabs = Vocabularies::from_world(&settings.suite.world)?;
    let base = build_prompt_base(&data.train, &data.worlds, &vocabs, encoder.as_ref(), settings.tau1)?;
    let agent = Agent::new(settings.model_config(), instruction_vocab(&settings.suite.world), seed)?;
    let first = train_stage1(&train, agent, &data)?;
    let stage1_sr = best_sr(&first)?;
    let mut sr = Vec::with_capacity(variants.len());
    for v in variants {
        let mut cfg = train.clone();
        cfg.loss = v.losses(&settings.train.loss);
        let prompts = (*v != Variant::Baseline).then(|| PromptInputs {
            base: &base,
            vocabs: &vocabs,
            encoder: encoder.as_ref(),
        });
        sr.push(best_sr(&train_stage2(&cfg, &first.best, prompts, &data)?)?);
    }
    Ok(SeedResult {
        seed,
        stage1_sr,
        sr,
        variants: variants.to_vec(),
    })
}

/// Run the protocol over `seeds` on the configured suite.
pub fn run_ablation(
    settings: &Settings,
    seeds: &[u64],
    fraction: f64,
    variants: &[Variant],
    mut on_seed: impl FnMut(&SeedResult),
) -> Result<Vec<SeedResult>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config("training fraction must be in (0, 1]".into()));
    }
    let data = generate_suite(&settings.suite)?;
    let mut out = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let r = run_seed(settings, &data, seed, fraction, variants)?;
        on_seed(&r);
        out.push(r);
    }
    Ok(out)
}

/// Median success rate of `v` across seeds.
pub fn median_sr(results: &[SeedResult], v: Variant) -> Option<f64> {
    let srs: Vec<f64> = results.iter().filter_map(|r| r.sr_of(v)).collect();
    (!srs.is_empty()).then(|| median(&srs))
}
