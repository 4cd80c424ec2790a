//! The action prompt base: verb-object phrases from training instructions, each paired with the
//! view along its annotated sub-path that best shows the object, plus retrieval of the prompts
//! relevant to a new instruction.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoders::{cosine_similarity, DualEncoder, EncoderSpec};
use crate::error::{Error, Result};
use crate::tensor::Mat;
use crate::text::{tokenize, PERIOD};
use crate::util::{
    argmax_lowest, decode_f32, encode_f32, read_text, to_f32, to_f64, write_atomic,
};
use crate::world::{
    subpath_views, template_verbs, Episode, NodeId, Split, ViewRef, WorldConfig, WorldStore,
};

/// Default softmax temperature for image sub-prompt selection.
pub const DEFAULT_TAU1: f64 = 0.07;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabularies {
    /// Object and location words.
    pub objects: Vec<String>,
    pub verbs: Vec<String>,
}

impl Vocabularies {
    pub fn new(objects: Vec<String>, verbs: Vec<String>) -> Result<Self> {
        if objects.is_empty() || verbs.is_empty() {
            return Err(Error::Config("object and verb vocabularies must be nonempty".into()));
        }
        if let Some(w) = objects.iter().find(|o| verbs.contains(o)) {
            return Err(Error::Config(format!("'{w}' is both an object and a verb")));
        }
        Ok(Self { objects, verbs })
    }

    /// Rooms and objects of a world config, with the instruction template verbs.
    pub fn from_world(cfg: &WorldConfig) -> Result<Self> {
        let objects = cfg.rooms.iter().chain(&cfg.objects).cloned().collect();
        Self::new(objects, template_verbs())
    }

    pub fn is_object(&self, w: &str) -> bool {
        self.objects.iter().any(|o| o == w)
    }

    pub fn is_verb(&self, w: &str) -> bool {
        self.verbs.iter().any(|v| v == w)
    }

    pub fn class_index(&self, label: &str) -> Result<usize> {
        self.objects
            .iter()
            .position(|o| o == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionPhrase {
    pub verb: String,
    pub object: String,
    /// Tokens from the verb through the object word, space-joined.
    pub phrase: String,
    pub verb_pos: usize,
    pub object_pos: usize,
}

/// One entry per object word that has a verb earlier in its sentence, using the closest such
/// verb.
pub fn extract_action_phrases(tokens: &[String], vocabs: &Vocabularies) -> Vec<ActionPhrase> {
    let mut out = Vec::new();
    let mut last_verb: Option<usize> = None;
    for (i, tok) in tokens.iter().enumerate() {
        if tok == PERIOD {
            last_verb = None;
        } else if vocabs.is_verb(tok) {
            last_verb = Some(i);
        } else if vocabs.is_object(tok) {
            if let Some(v) = last_verb {
                out.push(ActionPhrase {
                    verb: tokens[v].clone(),
                    object: tok.clone(),
                    phrase: tokens[v..=i].join(" "),
                    verb_pos: v,
                    object_pos: i,
                });
            }
        }
    }
    out
}

/// Text embeddings of `"a photo of <label>"` for every vocabulary label.
#[derive(Debug, Clone)]
pub struct ClassPrompts {
    pub labels: Vec<String>,
    pub embeddings: Vec<Vec<f64>>,
}

impl ClassPrompts {
    pub fn new(vocabs: &Vocabularies, encoder: &dyn DualEncoder) -> Result<Self> {
        let embeddings = vocabs
            .objects
            .iter()
            .map(|l| encoder.encode_text(&tokenize(&format!("a photo of {l}"))))
            .collect::<Result<_>>()?;
        Ok(Self {
            labels: vocabs.objects.clone(),
            embeddings,
        })
    }

    /// Cosine similarity of each image against each class phrase.
    pub fn similarities(&self, images: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        images
            .iter()
            .map(|img| {
                self.embeddings
                    .iter()
                    .map(|c| cosine_similarity(img, c))
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    /// Per image, class probabilities `softmax(sim / tau1)`.
    pub probs: Vec<Vec<f64>>,
}

/// Select from a precomputed image × class similarity table. The chosen image maximizes the
/// similarity to the target class, lowest index first on ties.
pub fn select_from_similarities(sims: &[Vec<f64>], class: usize, tau1: f64) -> Result<Selection> {
    if sims.is_empty() {
        return Err(Error::EmptyInput("no candidate views".into()));
    }
    if tau1.is_nan() || tau1 <= 0.0 {
        return Err(Error::InvalidValue(format!("tau1 must be positive, got {tau1}")));
    }
    let target: Vec<f64> = sims.iter().map(|row| row[class]).collect();
    let index = argmax_lowest(&target).ok_or_else(|| Error::InvalidValue("NaN similarity".into()))?;
    let probs = sims
        .iter()
        .map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|s| ((s - m) / tau1).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|x| x / z).collect()
        })
        .collect();
    Ok(Selection { index, probs })
}

pub fn select_image_subprompt(
    image_embeddings: &[Vec<f64>],
    label: &str,
    classes: &ClassPrompts,
    tau1: f64,
) -> Result<Selection> {
    let class = classes
        .labels
        .iter()
        .position(|l| l == label)
        .ok_or_else(|| Error::UnknownLabel(label.to_string()))?;
    let sims = classes.similarities(image_embeddings)?;
    select_from_similarities(&sims, class, tau1)
}

/// Where an image sub-prompt came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptViewRef {
    pub world_seed: u64,
    pub node: NodeId,
    pub view: usize,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionPrompt {
    pub phrase: String,
    pub verb: String,
    pub object: String,
    pub episode_id: String,
    pub view_ref: PromptViewRef,
    pub img_emb: Vec<f32>,
    pub txt_emb: Vec<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PromptRecord {
    phrase: String,
    verb: String,
    object: String,
    episode_id: String,
    view_ref: PromptViewRef,
    img_emb: String,
    txt_emb: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseMeta {
    pub encoder: EncoderSpec,
    pub world_seeds: Vec<u64>,
    pub tau1: f64,
    /// Phrases dropped because their object had no sub-path annotation.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptBase {
    pub prompts: Vec<ActionPrompt>,
    pub meta: BaseMeta,
}

pub fn build_prompt_base(
    episodes: &[Episode],
    worlds: &WorldStore,
    vocabs: &Vocabularies,
    encoder: &dyn DualEncoder,
    tau1: f64,
) -> Result<PromptBase> {
    let classes = ClassPrompts::new(vocabs, encoder)?;
    let mut order: Vec<&Episode> = episodes.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let mut prompts = Vec::new();
    let mut skipped = 0;
    let mut seeds = Vec::new();
    for ep in order {
        if ep.split != Split::Train {
            return Err(Error::InvalidEpisode(format!(
                "{}: prompt bases are built from training episodes only (split {})",
                ep.id,
                ep.split.as_str()
            )));
        }
        let graph = worlds.get(&ep.world_seed).ok_or_else(|| {
            Error::InvalidEpisode(format!("{}: world {} not loaded", ep.id, ep.world_seed))
        })?;
        if !seeds.contains(&ep.world_seed) {
            seeds.push(ep.world_seed);
        }
        let tokens = tokenize(&ep.instruction);
        let mut used: Vec<(String, usize)> = Vec::new();
        for ap in extract_action_phrases(&tokens, vocabs) {
            // k-th mention of an object pairs with its k-th annotated sub-path
            let k = used.iter().filter(|(o, _)| *o == ap.object).count();
            let sub = ep.sub_paths.iter().filter(|s| s.object == ap.object).nth(k);
            used.push((ap.object.clone(), k));
            let Some(sub) = sub else {
                warn!("{}: no sub-path for '{}', phrase skipped", ep.id, ap.object);
                skipped += 1;
                continue;
            };
            let refs: Vec<ViewRef> = subpath_views(graph, &ep.path, sub.start, sub.end);
            if refs.is_empty() {
                skipped += 1;
                continue;
            }
            let images = refs
                .iter()
                .map(|r| encoder.encode_image(graph.view(*r)))
                .collect::<Result<Vec<_>>>()?;
            let sel = select_image_subprompt(&images, &ap.object, &classes, tau1)?;
            let r = refs[sel.index];
            let txt = encoder.encode_text(&tokenize(&ap.phrase))?;
            prompts.push(ActionPrompt {
                phrase: ap.phrase,
                verb: ap.verb,
                object: ap.object,
                episode_id: ep.id.clone(),
                view_ref: PromptViewRef {
                    world_seed: ep.world_seed,
                    node: r.node,
                    view: r.view,
                    labels: graph.view(r).labels.clone(),
                },
                img_emb: to_f32(&images[sel.index]),
                txt_emb: to_f32(&txt),
            });
        }
    }
    if skipped > 0 {
        warn!("{skipped} phrases skipped while building the prompt base");
    }
    Ok(PromptBase {
        prompts,
        meta: BaseMeta {
            encoder: encoder.spec().clone(),
            world_seeds: seeds,
            tau1,
            skipped,
        },
    })
}

fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

impl PromptBase {
    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn embedding_dim(&self) -> usize {
        self.prompts.first().map_or(0, |p| p.txt_emb.len())
    }

    /// One JSON object per prompt, one per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for p in &self.prompts {
            let r = PromptRecord {
                phrase: p.phrase.clone(),
                verb: p.verb.clone(),
                object: p.object.clone(),
                episode_id: p.episode_id.clone(),
                view_ref: p.view_ref.clone(),
                img_emb: encode_f32(&p.img_emb),
                txt_emb: encode_f32(&p.txt_emb),
            };
            out.push_str(&serde_json::to_string(&r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str, meta: BaseMeta) -> Result<Self> {
        let prompts = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                let r: PromptRecord = serde_json::from_str(l)
                    .map_err(|e| Error::format(format!("prompt base line {}", i + 1), e))?;
                let p = ActionPrompt {
                    phrase: r.phrase,
                    verb: r.verb,
                    object: r.object,
                    episode_id: r.episode_id,
                    view_ref: r.view_ref,
                    img_emb: decode_f32(&r.img_emb)?,
                    txt_emb: decode_f32(&r.txt_emb)?,
                };
                if p.img_emb.len() != meta.encoder.dim || p.txt_emb.len() != meta.encoder.dim {
                    return Err(Error::format(
                        format!("prompt base line {}", i + 1),
                        format!("embedding width differs from encoder dim {}", meta.encoder.dim),
                    ));
                }
                Ok(p)
            })
            .collect::<Result<_>>()?;
        Ok(Self { prompts, meta })
    }

    /// Hex SHA-256 of the serialized prompts; identifies the base in checkpoint provenance.
    pub fn fingerprint(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_jsonl()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Writes the prompts to `path` and the build metadata to `<path>.meta.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(&meta_path(path), serde_json::to_string_pretty(&self.meta)?.as_bytes())?;
        write_atomic(path, self.to_jsonl()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let meta: BaseMeta = serde_json::from_str(&read_text(&meta_path(path))?)
            .map_err(|e| Error::format("prompt base metadata", e))?;
        Self::from_jsonl(&text, meta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    /// Slots in a retrieved set.
    pub n_max: usize,
    /// Best matches considered per instruction phrase.
    pub top_k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { n_max: 16, top_k: 4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedSlot {
    /// Index into the base.
    pub prompt: usize,
    /// Instruction phrase that retrieved it.
    pub query: String,
    pub similarity: f64,
}

/// Fixed-size prompt set. Padded slots are `None`, masked out, and carry zero embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedPromptSet {
    pub slots: Vec<Option<RetrievedSlot>>,
    /// `n_max × d_e` image sub-prompt embeddings.
    pub img: Mat,
    /// `n_max × d_e` text sub-prompt embeddings.
    pub txt: Mat,
}

impl RetrievedPromptSet {
    /// All-padding set.
    pub fn empty(n_max: usize, dim: usize) -> Self {
        Self {
            slots: vec![None; n_max],
            img: Mat::zeros(n_max, dim),
            txt: Mat::zeros(n_max, dim),
        }
    }

    pub fn mask(&self) -> Vec<bool> {
        self.slots.iter().map(Option::is_some).collect()
    }

    pub fn n_valid(&self) -> usize {
        self.slots.iter().flatten().count()
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }
}

/// Rank base prompts by text-embedding cosine for every action phrase of the instruction and
/// fill the set round-robin across phrases, skipping prompts already taken.
pub fn retrieve_prompts(
    instruction: &str,
    base: &PromptBase,
    vocabs: &Vocabularies,
    encoder: &dyn DualEncoder,
    cfg: RetrievalConfig,
) -> Result<RetrievedPromptSet> {
    let dim = encoder.dim();
    let mut set = RetrievedPromptSet::empty(cfg.n_max, dim);
    let phrases = extract_action_phrases(&tokenize(instruction), vocabs);
    if phrases.is_empty() || base.is_empty() || cfg.n_max == 0 {
        return Ok(set);
    }
    let base_txt: Vec<Vec<f64>> = base.prompts.iter().map(|p| to_f64(&p.txt_emb)).collect();
    let mut rankings = Vec::with_capacity(phrases.len());
    for ap in &phrases {
        let q = encoder.encode_text(&tokenize(&ap.phrase))?;
        let mut scored: Vec<(usize, f64)> = base_txt
            .iter()
            .enumerate()
            .map(|(i, t)| Ok((i, cosine_similarity(&q, t)?)))
            .collect::<Result<_>>()?;
        // stable sort keeps lower indices first among equal scores
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        scored.truncate(cfg.top_k);
        rankings.push(scored);
    }
    let mut taken = HashSet::new();
    let mut filled = 0;
    'outer: for depth in 0..cfg.top_k {
        for (p, ranking) in rankings.iter().enumerate() {
            let Some(&(idx, sim)) = ranking.get(depth) else { continue };
            if !taken.insert(idx) {
                continue;
            }
            let prompt = &base.prompts[idx];
            set.img.row_mut(filled).copy_from_slice(&to_f64(&prompt.img_emb));
            set.txt.row_mut(filled).copy_from_slice(&to_f64(&prompt.txt_emb));
            set.slots[filled] = Some(RetrievedSlot {
                prompt: idx,
                query: phrases[p].phrase.clone(),
                similarity: sim,
            });
            filled += 1;
            if filled == cfg.n_max {
                break 'outer;
            }
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{EncoderSpec, MockClip};
    use crate::world::{generate_episode, generate_world, EpisodeConfig};

    fn vocabs() -> Vocabularies {
        Vocabularies::from_world(&WorldConfig::default()).unwrap()
    }

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn nearest_verb_phrases() {
        let v = vocabs();
        let got = extract_action_phrases(&toks("walk through the kitchen"), &v);
        assert_eq!(got.len(), 1);
        assert_eq!(
            (got[0].verb.as_str(), got[0].object.as_str(), got[0].phrase.as_str()),
            ("walk", "kitchen", "walk through the kitchen")
        );
        assert!(extract_action_phrases(&toks("turn around twice"), &v).is_empty());
        let got = extract_action_phrases(
            &toks("exit the room. walk past the chair then stop at the chair"),
            &v,
        );
        let summary: Vec<_> = got.iter().map(|a| (a.verb.as_str(), a.phrase.as_str())).collect();
        assert_eq!(summary, vec![("walk", "walk past the chair"), ("stop", "stop at the chair")]);
        // a verb in an earlier sentence does not reach across the period
        assert!(extract_action_phrases(&toks("walk. the kitchen"), &v).is_empty());
    }

    #[test]
    fn vocabularies_must_be_disjoint() {
        assert!(Vocabularies::new(vec!["walk".into()], vec!["walk".into()]).is_err());
        assert!(Vocabularies::new(vec![], vec!["walk".into()]).is_err());
    }

    #[test]
    fn selection_basics() {
        let one = select_from_similarities(&[vec![0.1, 0.9]], 0, 0.07).unwrap();
        assert_eq!(one.index, 0);
        let sym = select_from_similarities(&[vec![0.3, 0.3]], 1, 1.0).unwrap();
        assert!((sym.probs[0][0] - 0.5).abs() < 1e-15 && (sym.probs[0][1] - 0.5).abs() < 1e-15);
        let tie = select_from_similarities(&[vec![0.2], vec![0.5], vec![0.5]], 0, 0.1).unwrap();
        assert_eq!(tie.index, 1);
        assert!(select_from_similarities(&[], 0, 0.1).is_err());
        assert!(select_from_similarities(&[vec![0.0]], 0, 0.0).is_err());
        let cfg = WorldConfig::default();
        let enc = MockClip::new(EncoderSpec::default(), &cfg).unwrap();
        let classes = ClassPrompts::new(&vocabs(), &enc).unwrap();
        assert!(matches!(
            select_image_subprompt(&[vec![1.0; 64]], "zebra", &classes, 0.07),
            Err(Error::UnknownLabel(_))
        ));
    }

    fn small_base() -> (WorldStore, Vec<Episode>, MockClip, PromptBase) {
        let cfg = WorldConfig::default();
        let g = generate_world(2, &cfg).unwrap();
        let mut worlds = WorldStore::new();
        let episodes: Vec<Episode> = (0..12)
            .filter_map(|s| {
                generate_episode(&g, s, &EpisodeConfig::default(), format!("t{s:03}"), Split::Train).ok()
            })
            .collect();
        worlds.insert(2, g);
        let enc = MockClip::new(EncoderSpec::default(), &cfg).unwrap();
        let base = build_prompt_base(&episodes, &worlds, &vocabs(), &enc, DEFAULT_TAU1).unwrap();
        (worlds, episodes, enc, base)
    }

    #[test]
    fn base_is_deterministic_and_round_trips() {
        let (worlds, episodes, enc, base) = small_base();
        assert!(!base.is_empty());
        let again = build_prompt_base(&episodes, &worlds, &vocabs(), &enc, DEFAULT_TAU1).unwrap();
        assert_eq!(base.to_jsonl().unwrap(), again.to_jsonl().unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("base.jsonl");
        base.save(&path).unwrap();
        assert_eq!(PromptBase::load(&path).unwrap(), base);
        for p in &base.prompts {
            assert!(p.phrase.contains(&p.verb) && p.phrase.contains(&p.object));
            let n: f64 = p.img_emb.iter().map(|&x| f64::from(x).powi(2)).sum();
            assert!((n - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn retrieval_fills_round_robin_and_pads() {
        let (_, _, enc, base) = small_base();
        let v = vocabs();
        let q = &base.prompts[0].phrase;
        let set = retrieve_prompts(q, &base, &v, &enc, RetrievalConfig { n_max: 60, top_k: 5 })
            .unwrap();
        let first = set.slots[0].as_ref().unwrap();
        assert_eq!(&base.prompts[first.prompt].phrase, q);
        assert!((first.similarity - 1.0).abs() < 1e-6);
        assert_eq!(set.n_valid(), 5.min(base.len()));
        for (k, slot) in set.slots.iter().enumerate() {
            if slot.is_none() {
                assert!(set.img.row(k).iter().all(|&x| x == 0.0));
                assert!(set.txt.row(k).iter().all(|&x| x == 0.0));
            }
        }
        let none = retrieve_prompts("turn around", &base, &v, &enc, RetrievalConfig::default()).unwrap();
        assert_eq!(none.n_valid(), 0);
        assert_eq!(none.capacity(), RetrievalConfig::default().n_max);
    }

    #[test]
    fn validation_episodes_are_refused() {
        let (worlds, mut episodes, enc, _) = small_base();
        episodes[0].split = Split::ValUnseen;
        assert!(build_prompt_base(&episodes, &worlds, &vocabs(), &enc, DEFAULT_TAU1).is_err());
    }
}
