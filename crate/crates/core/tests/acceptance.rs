//! Acceptance checks. Prints one PASS/FAIL line per criterion and a summary line.
//!
//! Failing criteria are reported but do not fail the run unless `ACCEPTANCE_STRICT=1` is set.
//! Set `ACCEPTANCE_SKIP_TRENDS=1` to skip the two multi-seed training criteria.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use adapt_nav::agent::{rollout, Agent, DecisionTrace, RolloutMode};
use adapt_nav::autograd::{Graph, Var};
use adapt_nav::agent::multi_head_attention;
use adapt_nav::checkpoint::Checkpoint;
use adapt_nav::config::Settings;
use adapt_nav::dataset::{generate_suite, instruction_vocab, Dataset};
use adapt_nav::encoders::build_encoder;
use adapt_nav::experiment::{median_sr, run_ablation, Variant};
use adapt_nav::losses::{
    discounted_returns, imitation_loss, mean_of, modality_alignment_loss, rl_loss,
    sequential_consistency_loss, total_loss, LossConfig, LossTerms, Pass,
};
use adapt_nav::metrics::{dtw, score};
use adapt_nav::prompt_base::{
    build_prompt_base, extract_action_phrases, retrieve_prompts, select_from_similarities,
    select_image_subprompt, ClassPrompts, RetrievalConfig, RetrievedPromptSet, Vocabularies,
};
use adapt_nav::tensor::Mat;
use adapt_nav::text::tokenize;
use adapt_nav::training::{train_stage1, train_stage2, PromptInputs, TrainOutcome};
use adapt_nav::util::{gaussian_vector, rng_from};
use adapt_nav::world::{generate_world, NavGraph, NodeId, WorldConfig};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check, bool);

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rand_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect())
}

fn unit(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------------------------
// attention

fn naive_attention(q: &Mat, k: &Mat, v: &Mat, heads: usize, scale: f64, mask: Option<&[bool]>) -> (Vec<Mat>, Mat) {
    let dh = q.cols / heads;
    let mut out = Mat::zeros(q.rows, q.cols);
    let mut weights = Vec::new();
    for h in 0..heads {
        let mut w = Mat::zeros(q.rows, k.rows);
        for i in 0..q.rows {
            let mut logits = vec![f64::NEG_INFINITY; k.rows];
            for (j, l) in logits.iter_mut().enumerate() {
                if mask.is_none_or(|m| m[j]) {
                    *l = scale * (0..dh).map(|c| q.get(i, h * dh + c) * k.get(j, h * dh + c)).sum::<f64>();
                }
            }
            let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let z: f64 = e.iter().sum();
            for (j, ej) in e.iter().enumerate() {
                w.set(i, j, ej / z);
            }
            for c in 0..dh {
                let s: f64 = (0..k.rows).map(|j| w.get(i, j) * v.get(j, h * dh + c)).sum();
                out.set(i, h * dh + c, s);
            }
        }
        weights.push(w);
    }
    (weights, out)
}

fn attention_correctness() -> Check {
    let mut rng = rng_from(&[1]);
    let (mut max_diff, mut max_row_err) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let heads = [1, 2, 4][rng.gen_range(0..3)];
        let d = heads * rng.gen_range(1..=5);
        let (nq, nk) = (rng.gen_range(1..=5), rng.gen_range(1..=7));
        let (q, k, v) = (rand_mat(&mut rng, nq, d), rand_mat(&mut rng, nk, d), rand_mat(&mut rng, nk, d));
        let mask: Option<Vec<bool>> = rng.gen_bool(0.6).then(|| {
            let mut m: Vec<bool> = (0..nk).map(|_| rng.gen_bool(0.6)).collect();
            let keep = rng.gen_range(0..nk);
            m[keep] = true;
            m
        });
        let scale = 1.0 / (d as f64 / heads as f64).sqrt();
        let mut g = Graph::new();
        let (qv, kv, vv) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
        let (ws, out) = multi_head_attention(&mut g, qv, kv, vv, heads, scale, mask.as_deref())
            .map_err(|e| e.to_string())?;
        let (ows, oout) = naive_attention(&q, &k, &v, heads, scale, mask.as_deref());
        for (w, ow) in ws.iter().zip(&ows) {
            let w = g.value(*w);
            for (a, b) in w.data.iter().zip(&ow.data) {
                max_diff = max_diff.max((a - b).abs());
            }
            for r in 0..w.rows {
                max_row_err = max_row_err.max((w.row(r).iter().sum::<f64>() - 1.0).abs());
            }
        }
        for (a, b) in g.value(out).data.iter().zip(&oout.data) {
            max_diff = max_diff.max((a - b).abs());
        }
    }
    ensure(
        max_diff <= 1e-6 && max_row_err <= 1e-6,
        format!("200 instances, max |oracle diff| {max_diff:.1e}, max |row sum - 1| {max_row_err:.1e}"),
    )
}

// ---------------------------------------------------------------------------------------------
// gradients

struct GradFixture {
    data: Dataset,
    sets: Vec<RetrievedPromptSet>,
    baselines: Vec<Vec<f64>>,
}

const GRAD_EPISODES: usize = 2;

/// The five objectives on a fixed two-episode batch, with dropout off and actions fixed to the
/// teacher's so that the objectives are smooth functions of the parameters.
fn objectives(agent: &Agent, fx: &GradFixture) -> (Graph, [Var; 5], Vec<Vec<f64>>) {
    let mut g = Graph::new();
    let mut rng = rng_from(&[0]);
    let (mut il, mut rl, mut cons) = (Vec::new(), Vec::new(), Vec::new());
    let (mut img, mut txt, mut groups, mut ids) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut values_out = Vec::new();
    for (e, ep) in fx.data.train.iter().take(GRAD_EPISODES).enumerate() {
        let graph = &fx.data.worlds[&ep.world_seed];
        let ro = rollout(agent, &mut g, graph, ep, Some(&fx.sets[e]), RolloutMode::TeacherForcing, 10, &mut rng, false)
            .unwrap();
        let lb: Vec<Var> = ro.steps.iter().map(|s| s.out.log_beta).collect();
        let teacher: Vec<usize> = ro.steps.iter().map(|s| s.teacher).collect();
        il.push(imitation_loss(&mut g, &lb, &teacher).unwrap());
        let lp: Vec<Var> = ro.steps.iter().map(|s| g.gather(s.out.log_beta, 0, s.action)).collect();
        let values: Vec<Var> = ro.steps.iter().map(|s| s.out.value).collect();
        values_out.push(values.iter().map(|&v| g.scalar_value(v)).collect());
        let rewards: Vec<f64> = (0..lp.len()).map(|t| 1.0 - 0.7 * t as f64).collect();
        let returns = discounted_returns(&rewards, 0.9);
        let baselines = fx.baselines.get(e).cloned().unwrap_or_else(|| vec![0.0; lp.len()]);
        rl.push(rl_loss(&mut g, &lp, &values, &returns, &baselines).unwrap());
        let p = ro.ctx.prompts.as_ref().unwrap();
        let steps: Vec<Var> = ro
            .steps
            .iter()
            .map(|s| {
                let o = &s.out;
                sequential_consistency_loss(&mut g, o.p_img_att.unwrap(), o.v_att, o.p_txt_att.unwrap(), o.x_att)
                    .unwrap()
            })
            .collect();
        cons.push(mean_of(&mut g, &steps).unwrap());
        let n = p.n_valid();
        img.push(g.slice_rows(p.img, 0, n));
        txt.push(g.slice_rows(p.txt, 0, n));
        groups.extend(std::iter::repeat_n(e, n));
        ids.extend(p.ids.iter().flatten().copied());
    }
    let l_il = mean_of(&mut g, &il).unwrap();
    let l_rl = mean_of(&mut g, &rl).unwrap();
    let l_c = mean_of(&mut g, &cons).unwrap();
    let (img, txt) = (g.concat_rows(&img), g.concat_rows(&txt));
    let l_a = modality_alignment_loss(&mut g, img, txt, &groups, &ids, 0.1).unwrap();
    let terms = LossTerms { rl: Some(l_rl), il: Some(l_il), consistency: Some(l_c), alignment: Some(l_a) };
    // weights large enough that every term moves the total visibly
    let cfg = LossConfig { il_weight: 0.5, consistency_weight: 0.3, alignment_weight: 0.2, ..LossConfig::default() };
    let total = total_loss(&mut g, &terms, &cfg, Pass::Imitation);
    (g, [l_il, l_rl, l_c, l_a, total], values_out)
}

fn gradient_suite() -> Check {
    let start = Instant::now();
    let mut s = Settings::default();
    s.model.hidden = 8;
    s.model.heads = 2;
    s.model.lang_layers = 2;
    s.model.cross_layers = 2;
    s.model.ffn = 16;
    s.encoder.dim = 8;
    s.suite.world.nodes = 9;
    s.suite.world.feature_dim = 8;
    s.suite.train_worlds = vec![1, 2];
    s.suite.train_per_world = 3;
    s.suite.val_worlds = vec![1001];
    s.suite.val_per_world = 1;
    let data = generate_suite(&s.suite).map_err(|e| e.to_string())?;
    let encoder = build_encoder(&s.encoder, &s.suite.world).map_err(|e| e.to_string())?;
    let vocabs = Vocabularies::from_world(&s.suite.world).map_err(|e| e.to_string())?;
    let base = build_prompt_base(&data.train, &data.worlds, &vocabs, encoder.as_ref(), s.tau1)
        .map_err(|e| e.to_string())?;
    let cfg = RetrievalConfig { n_max: 4, top_k: 2 };
    let sets: Vec<RetrievedPromptSet> = data
        .train
        .iter()
        .take(GRAD_EPISODES)
        .map(|ep| retrieve_prompts(&ep.instruction, &base, &vocabs, encoder.as_ref(), cfg).unwrap())
        .collect();
    if sets.iter().any(|s| s.n_valid() == 0) {
        return Err("fixture episodes retrieved no prompts".into());
    }
    let agent = Agent::new(s.model_config(), instruction_vocab(&s.suite.world), 11).map_err(|e| e.to_string())?;
    let mut fx = GradFixture { data, sets, baselines: Vec::new() };
    let (_, _, values) = objectives(&agent, &fx);
    // held fixed like the critic baselines in training
    fx.baselines = values.iter().map(|v| v.iter().map(|x| x + 0.25).collect()).collect();
    let (g, losses, _) = objectives(&agent, &fx);
    let analytic: Vec<Vec<(usize, Mat)>> = losses.iter().map(|&l| g.backward(l)).collect();

    let mut rng = rng_from(&[2]);
    // central step: large enough that forward-pass roundoff stays well below 1e-3 relative
    let eps = 1e-5;
    let names = ["L_IL", "L_RL", "L_c", "L_a", "total"];
    let mut worst = [0.0f64; 5];
    let mut checked = 0;
    for id in 0..agent.params.len() {
        let size = agent.params.get(id).len();
        let mut entries: Vec<usize> = (0..size).collect();
        entries.shuffle(&mut rng);
        for &idx in entries.iter().take(6) {
            let eval = |delta: f64| -> [f64; 5] {
                let mut a = agent.clone();
                a.params.get_mut(id).data[idx] += delta;
                let (g, l, _) = objectives(&a, &fx);
                l.map(|v| g.scalar_value(v))
            };
            let (plus, minus) = (eval(eps), eval(-eps));
            for li in 0..5 {
                let numeric = (plus[li] - minus[li]) / (2.0 * eps);
                let exact = analytic[li]
                    .iter()
                    .find(|(pid, _)| *pid == id)
                    .map_or(0.0, |(_, m)| m.data[idx]);
                let rel = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(1e-6);
                worst[li] = worst[li].max(rel);
            }
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    let summary: Vec<String> = names.iter().zip(&worst).map(|(n, w)| format!("{n} {w:.1e}")).collect();
    ensure(
        worst.iter().all(|&w| w < 1e-3) && elapsed < Duration::from_secs(60),
        format!("{checked} entries, max rel err: {}; {:.1}s", summary.join(", "), elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------------------------------------
// loss oracles

fn naive_alignment(img: &Mat, txt: &Mat, groups: &[usize], ids: &[usize], tau: f64) -> f64 {
    let n = img.rows;
    let cos = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (unit(a) * unit(b));
    let mut total = 0.0;
    for r in 0..n {
        let allowed: Vec<usize> =
            (0..n).filter(|&m| m == r || (groups[m] != groups[r] && ids[m] != ids[r])).collect();
        let logits: Vec<f64> = allowed.iter().map(|&m| cos(img.row(r), txt.row(m)) / tau).collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - top).exp()).sum();
        let own = logits[allowed.iter().position(|&m| m == r).unwrap()];
        total += -(own - top - z.ln());
    }
    total / n as f64
}

fn loss_oracles() -> Check {
    let mut rng = rng_from(&[3]);
    let run = |img: &Mat, txt: &Mat, groups: &[usize], ids: &[usize], tau: f64| -> f64 {
        let mut g = Graph::new();
        let (a, b) = (g.constant(img.clone()), g.constant(txt.clone()));
        let l = modality_alignment_loss(&mut g, a, b, groups, ids, tau).unwrap();
        g.scalar_value(l)
    };
    let one = run(&rand_mat(&mut rng, 1, 6), &rand_mat(&mut rng, 1, 6), &[0], &[0], 0.1);
    let row = rand_mat(&mut rng, 1, 6);
    let pair = Mat::from_rows(&[row.row(0).to_vec(), row.row(0).to_vec()]);
    let two = run(&pair, &pair, &[0, 1], &[0, 1], 0.1);
    let mut align_diff = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(1..=8);
        let d = rng.gen_range(2..=6);
        let (img, txt) = (rand_mat(&mut rng, n, d), rand_mat(&mut rng, n, d));
        let groups: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let ids: Vec<usize> = (0..n).map(|_| rng.gen_range(0..5)).collect();
        let tau = rng.gen_range(0.05..1.0);
        align_diff = align_diff.max((run(&img, &txt, &groups, &ids, tau) - naive_alignment(&img, &txt, &groups, &ids, tau)).abs());
    }
    let mut cons_diff = 0.0f64;
    for _ in 0..100 {
        let d = rng.gen_range(1..=8);
        let m: Vec<Mat> = (0..4).map(|_| rand_mat(&mut rng, 1, d)).collect();
        let mut g = Graph::new();
        let v: Vec<Var> = m.iter().map(|x| g.constant(x.clone())).collect();
        let l = sequential_consistency_loss(&mut g, v[0], v[1], v[2], v[3]).unwrap();
        let oracle: f64 = (0..d)
            .map(|c| (m[0].data[c] - m[1].data[c]).powi(2) + (m[2].data[c] - m[3].data[c]).powi(2))
            .sum();
        cons_diff = cons_diff.max((g.scalar_value(l) - oracle).abs());
    }
    ensure(
        one == 0.0 && (two - 2f64.ln()).abs() <= 1e-9 && align_diff <= 1e-6 && cons_diff <= 1e-6,
        format!(
            "batch-of-1 {one}, symmetric pair {two:.12} (log 2 = {:.12}), alignment oracle {align_diff:.1e}, consistency oracle {cons_diff:.1e}",
            2f64.ln()
        ),
    )
}

// ---------------------------------------------------------------------------------------------
// retrieval oracles

fn retrieval_oracles() -> Check {
    let settings = Settings::default();
    let world = &settings.suite.world;
    let encoder = build_encoder(&settings.encoder, world).map_err(|e| e.to_string())?;
    let vocabs = Vocabularies::from_world(world).map_err(|e| e.to_string())?;
    let classes = ClassPrompts::new(&vocabs, encoder.as_ref()).map_err(|e| e.to_string())?;
    let graph = generate_world(5, world).map_err(|e| e.to_string())?;
    let mut rng = rng_from(&[4]);
    let dim = encoder.dim();
    let (mut argmax_bad, mut monotone_bad) = (0, 0);
    for _ in 0..1000 {
        let len = rng.gen_range(1..=8);
        let mut images: Vec<Vec<f64>> = (0..len)
            .map(|_| {
                if rng.gen_bool(0.5) {
                    let node = rng.gen_range(0..graph.len());
                    let view = rng.gen_range(0..graph.panorama(node).len());
                    encoder.encode_image(&graph.panorama(node)[view]).unwrap()
                } else {
                    gaussian_vector(rng.gen(), dim)
                }
            })
            .collect();
        if len > 1 && rng.gen_bool(0.2) {
            let (a, b) = (rng.gen_range(0..len), rng.gen_range(0..len));
            images[b] = images[a].clone();
        }
        let label = &vocabs.objects[rng.gen_range(0..vocabs.objects.len())];
        let sel = select_image_subprompt(&images, label, &classes, 0.07).unwrap();
        let class = classes.labels.iter().position(|l| l == label).unwrap();
        let target = &classes.embeddings[class];
        let mut best = (0, f64::NEG_INFINITY);
        for (i, img) in images.iter().enumerate() {
            let c = img.iter().zip(target).map(|(x, y)| x * y).sum::<f64>() / (unit(img) * unit(target));
            if c > best.1 + 1e-12 {
                best = (i, c);
            }
        }
        if sel.index != best.0 {
            argmax_bad += 1;
        }
        let sims = classes.similarities(&images).unwrap();
        for f in [|s: f64| 2.0 * s.powi(3) + s + 7.0, |s: f64| (4.0 * s).exp(), |s: f64| (s + 1.5).ln()] {
            let mapped: Vec<Vec<f64>> = sims.iter().map(|r| r.iter().map(|&s| f(s)).collect()).collect();
            if select_from_similarities(&mapped, class, 0.07).unwrap().index != sel.index {
                monotone_bad += 1;
            }
        }
    }
    let data = generate_suite(&settings.suite).map_err(|e| e.to_string())?;
    let mut verb_bad = 0;
    let instructions: Vec<&str> = data.train.iter().chain(&data.val).take(500).map(|e| e.instruction.as_str()).collect();
    for text in &instructions {
        let tokens = tokenize(text);
        let got: Vec<(usize, usize)> =
            extract_action_phrases(&tokens, &vocabs).iter().map(|p| (p.verb_pos, p.object_pos)).collect();
        let mut want = Vec::new();
        for (i, tok) in tokens.iter().enumerate() {
            if !vocabs.is_object(tok) {
                continue;
            }
            let verb = (0..i)
                .filter(|&j| vocabs.is_verb(&tokens[j]) && !tokens[j + 1..i].iter().any(|t| t == "."))
                .max();
            if let Some(j) = verb {
                want.push((j, i));
            }
        }
        if got != want {
            verb_bad += 1;
        }
    }
    ensure(
        argmax_bad == 0 && monotone_bad == 0 && verb_bad == 0 && instructions.len() == 500,
        format!(
            "argmax mismatches {argmax_bad}/1000, monotone-transform changes {monotone_bad}/3000, verb-search mismatches {verb_bad}/{}",
            instructions.len()
        ),
    )
}

// ---------------------------------------------------------------------------------------------
// prompt-base quality

fn prompt_base_quality() -> Check {
    let mut s = Settings::default();
    s.suite.train_worlds = vec![1, 2];
    s.suite.train_per_world = 50;
    s.suite.val_worlds = vec![1001];
    s.suite.val_per_world = 1;
    let data = generate_suite(&s.suite).map_err(|e| e.to_string())?;
    let encoder = build_encoder(&s.encoder, &s.suite.world).map_err(|e| e.to_string())?;
    let vocabs = Vocabularies::from_world(&s.suite.world).map_err(|e| e.to_string())?;
    let base = build_prompt_base(&data.train, &data.worlds, &vocabs, encoder.as_ref(), s.tau1)
        .map_err(|e| e.to_string())?;
    let good = base.prompts.iter().filter(|p| p.view_ref.labels.contains(&p.object)).count();
    let frac = good as f64 / base.len().max(1) as f64;
    ensure(
        data.train.len() == 100 && !base.is_empty() && frac >= 0.95,
        format!("{good}/{} prompts from {} episodes show their object ({:.1}%)", base.len(), data.train.len(), 100.0 * frac),
    )
}

// ---------------------------------------------------------------------------------------------
// baseline reduction

fn trace(agent: &Agent, data: &Dataset, ep: usize, set: Option<&RetrievedPromptSet>) -> DecisionTrace {
    let ep = &data.val[ep];
    let mut g = Graph::new();
    let mut rng = rng_from(&[0]);
    let ro = rollout(agent, &mut g, &data.worlds[&ep.world_seed], ep, set, RolloutMode::Greedy, 10, &mut rng, false)
        .unwrap();
    ro.trace(&g)
}

fn max_beta_diff(a: &DecisionTrace, b: &DecisionTrace) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            let len_gap = if x.beta.len() == y.beta.len() { 0.0 } else { f64::INFINITY };
            x.beta.iter().zip(&y.beta).map(move |(p, q)| (p - q).abs() + len_gap)
        })
        .fold(0.0, f64::max)
}

fn baseline_reduction() -> Check {
    let mut s = Settings::preset("benchmark").unwrap();
    s.suite.train_worlds = vec![1, 2];
    s.suite.train_per_world = 20;
    let data = generate_suite(&s.suite).map_err(|e| e.to_string())?;
    let encoder = build_encoder(&s.encoder, &s.suite.world).map_err(|e| e.to_string())?;
    let vocabs = Vocabularies::from_world(&s.suite.world).map_err(|e| e.to_string())?;
    let base = build_prompt_base(&data.train, &data.worlds, &vocabs, encoder.as_ref(), s.tau1)
        .map_err(|e| e.to_string())?;
    let mut rng = rng_from(&[6]);
    let (mut empty_diff, mut pad_diff) = (0.0f64, 0.0f64);
    for seed in 0..5u64 {
        let agent = Agent::new(s.model_config(), instruction_vocab(&s.suite.world), seed).map_err(|e| e.to_string())?;
        for ep in 0..10 {
            let empty = RetrievedPromptSet::empty(s.train.retrieval.n_max, encoder.dim());
            empty_diff = empty_diff.max(max_beta_diff(&trace(&agent, &data, ep, None), &trace(&agent, &data, ep, Some(&empty))));
            let set = retrieve_prompts(&data.val[ep].instruction, &base, &vocabs, encoder.as_ref(), s.train.retrieval)
                .map_err(|e| e.to_string())?;
            let mut noisy = set.clone();
            for (r, slot) in set.slots.iter().enumerate() {
                if slot.is_none() {
                    for c in 0..noisy.img.cols {
                        noisy.img.set(r, c, rng.gen_range(-3.0..3.0));
                        noisy.txt.set(r, c, rng.gen_range(-3.0..3.0));
                    }
                }
            }
            pad_diff = pad_diff.max(max_beta_diff(&trace(&agent, &data, ep, Some(&set)), &trace(&agent, &data, ep, Some(&noisy))));
        }
    }
    ensure(
        empty_diff <= 1e-7 && pad_diff <= 1e-7,
        format!("50 rollouts, empty set vs no prompts max |Δβ| {empty_diff:.1e}, padded-slot perturbation max |Δβ| {pad_diff:.1e}"),
    )
}

// ---------------------------------------------------------------------------------------------
// metric oracles

fn simple_paths(graph: &NavGraph, max_len: usize) -> Vec<Vec<NodeId>> {
    fn extend(graph: &NavGraph, path: &mut Vec<NodeId>, max_len: usize, out: &mut Vec<Vec<NodeId>>) {
        out.push(path.clone());
        if path.len() == max_len {
            return;
        }
        let last = *path.last().unwrap();
        for &n in graph.neighbors(last) {
            if !path.contains(&n) {
                path.push(n);
                extend(graph, path, max_len, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    for start in 0..graph.len() {
        extend(graph, &mut vec![start], max_len, &mut out);
    }
    out
}

/// Minimum cost over every explicitly enumerated monotone warping path.
fn brute_dtw(graph: &NavGraph, a: &[NodeId], b: &[NodeId]) -> f64 {
    fn walk(graph: &NavGraph, a: &[NodeId], b: &[NodeId], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + graph.geodesic(a[i], b[j]);
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() {
            walk(graph, a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(graph, a, b, i, j + 1, acc, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(graph, a, b, i + 1, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(graph, a, b, 0, 0, 0.0, &mut best);
    best
}

fn random_walk(graph: &NavGraph, start: NodeId, len: usize, rng: &mut ChaCha8Rng) -> Vec<NodeId> {
    let mut p = vec![start];
    while p.len() < len {
        let nb = graph.neighbors(*p.last().unwrap());
        p.push(nb[rng.gen_range(0..nb.len())]);
    }
    p
}

fn metric_oracles() -> Check {
    let small = generate_world(3, &WorldConfig { nodes: 6, ..WorldConfig::default() }).map_err(|e| e.to_string())?;
    let paths = simple_paths(&small, 6);
    let mut dtw_diff = 0.0f64;
    for a in &paths {
        for b in &paths {
            dtw_diff = dtw_diff.max((dtw(&small, a, b) - brute_dtw(&small, a, b)).abs());
        }
    }
    let worlds: Vec<NavGraph> = (1..=5).map(|s| generate_world(s, &WorldConfig::default()).unwrap()).collect();
    let mut rng = rng_from(&[7]);
    let (mut bound_bad, mut identical_bad) = (0, 0);
    for i in 0..10_000 {
        let g = &worlds[i % worlds.len()];
        let (a, b) = (rng.gen_range(0..g.len()), rng.gen_range(0..g.len()));
        let reference = g.shortest_path(a, b).unwrap();
        let predicted = random_walk(g, a, rng.gen_range(1..=10), &mut rng);
        let m = score(g, &predicted, &reference, 3.0).map_err(|e| e.to_string())?;
        if m.spl > m.sr + 1e-12 || m.sdtw > m.sr.min(m.ndtw) + 1e-12 {
            bound_bad += 1;
        }
        let same = score(g, &reference, &reference, 3.0).map_err(|e| e.to_string())?;
        if (same.ndtw - 1.0).abs() > 1e-12 || (same.cls - 1.0).abs() > 1e-12 || (same.spl - 1.0).abs() > 1e-12 {
            identical_bad += 1;
        }
    }
    ensure(
        dtw_diff <= 1e-9 && bound_bad == 0 && identical_bad == 0,
        format!(
            "DTW vs enumeration over {} path pairs max |Δ| {dtw_diff:.1e}; bound violations {bound_bad}/10000; identical-path misses {identical_bad}/10000",
            paths.len() * paths.len()
        ),
    )
}

// ---------------------------------------------------------------------------------------------
// training trends

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn show(results: &[adapt_nav::experiment::SeedResult]) -> String {
    results
        .iter()
        .map(|r| {
            let v: Vec<String> = r.sr.iter().map(|x| format!("{x:.0}")).collect();
            format!("s{}[{}]", r.seed, v.join("/"))
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn ablation_trend() -> Check {
    let start = Instant::now();
    let settings = Settings::preset("benchmark").unwrap();
    let results = run_ablation(&settings, &SEEDS, 1.0, &Variant::ALL, |r| {
        eprintln!("  ablation seed {}: {:?} ({:.0}s)", r.seed, r.sr, start.elapsed().as_secs_f64())
    })
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let m = |v| median_sr(&results, v).unwrap();
    let (b, one, full) = (m(Variant::Baseline), m(Variant::PromptsOnly), m(Variant::Full));
    ensure(
        b <= one && one <= full && full >= b + 2.0 && elapsed <= Duration::from_secs(30 * 60),
        format!(
            "median val SR baseline {b:.0} <= adapt-1 {one:.0} <= adapt-full {full:.0} (need full >= baseline + 2); {:.0}s; per seed baseline/adapt-1/full {}",
            elapsed.as_secs_f64(),
            show(&results)
        ),
    )
}

fn data_efficiency() -> Check {
    let start = Instant::now();
    let settings = Settings::preset("benchmark").unwrap();
    let variants = [Variant::Baseline, Variant::Full];
    let results = run_ablation(&settings, &SEEDS, 0.4, &variants, |r| {
        eprintln!("  40% seed {}: {:?} ({:.0}s)", r.seed, r.sr, start.elapsed().as_secs_f64())
    })
    .map_err(|e| e.to_string())?;
    let (b, full) = (median_sr(&results, Variant::Baseline).unwrap(), median_sr(&results, Variant::Full).unwrap());
    ensure(
        full >= b,
        format!(
            "40% of training episodes: median val SR adapt-full {full:.0} vs baseline {b:.0}; {:.0}s; per seed baseline/full {}",
            start.elapsed().as_secs_f64(),
            show(&results)
        ),
    )
}

// ---------------------------------------------------------------------------------------------
// reproducibility

fn short_run() -> Result<(Vec<u8>, Vec<u8>), String> {
    let mut s = Settings::preset("benchmark").unwrap();
    s.suite.train_worlds = vec![1, 2];
    s.suite.train_per_world = 10;
    s.suite.val_worlds = vec![1001];
    s.suite.val_per_world = 5;
    s.train.iters_stage1 = 30;
    s.train.iters_stage2 = 20;
    s.train.eval_every = 10;
    s.train.batch_size = 4;
    s.train.seed = 42;
    let data = generate_suite(&s.suite).map_err(|e| e.to_string())?;
    let encoder = build_encoder(&s.encoder, &s.suite.world).map_err(|e| e.to_string())?;
    let vocabs = Vocabularies::from_world(&s.suite.world).map_err(|e| e.to_string())?;
    let base = build_prompt_base(&data.train, &data.worlds, &vocabs, encoder.as_ref(), s.tau1)
        .map_err(|e| e.to_string())?;
    let agent = Agent::new(s.model_config(), instruction_vocab(&s.suite.world), s.train.seed).map_err(|e| e.to_string())?;
    let first = train_stage1(&s.train, agent, &data).map_err(|e| e.to_string())?;
    let prompts = PromptInputs { base: &base, vocabs: &vocabs, encoder: encoder.as_ref() };
    let second = train_stage2(&s.train, &first.best, Some(prompts), &data).map_err(|e| e.to_string())?;
    let mut logs = Vec::new();
    let mut ckpts = Vec::new();
    for out in [&first, &second] {
        for line in &out.log {
            logs.extend(serde_json::to_vec(line).unwrap());
            logs.push(b'\n');
        }
        ckpts.extend(checkpoint_bytes(out)?);
    }
    Ok((logs, ckpts))
}

fn checkpoint_bytes(out: &TrainOutcome) -> Result<Vec<u8>, String> {
    let bytes = out.best.to_bytes().map_err(|e| e.to_string())?;
    Checkpoint::from_bytes(&bytes).map_err(|e| e.to_string())?;
    Ok(bytes)
}

fn reproducibility() -> Check {
    let (log_a, ckpt_a) = short_run()?;
    let (log_b, ckpt_b) = short_run()?;
    ensure(
        log_a == log_b && ckpt_a == ckpt_b && !log_a.is_empty(),
        format!(
            "two seeded runs (stage 1 + stage 2 with prompts): logs {} bytes identical={}, checkpoints {} bytes identical={}",
            log_a.len(),
            log_a == log_b,
            ckpt_a.len(),
            ckpt_a == ckpt_b
        ),
    )
}

fn main() -> ExitCode {
    let skip_trends = std::env::var("ACCEPTANCE_SKIP_TRENDS").is_ok();
    let criteria: [Criterion; 10] = [
        ("attention correctness", attention_correctness, false),
        ("gradient suite", gradient_suite, false),
        ("loss oracles", loss_oracles, false),
        ("retrieval oracles", retrieval_oracles, false),
        ("prompt-base quality", prompt_base_quality, false),
        ("baseline reduction", baseline_reduction, false),
        ("metric oracles", metric_oracles, false),
        ("reproducibility", reproducibility, false),
        ("ablation trend", ablation_trend, true),
        ("data-efficiency trend", data_efficiency, true),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, check, slow) in criteria {
        if slow && skip_trends {
            println!("SKIP {name}");
            continue;
        }
        ran += 1;
        let start = Instant::now();
        match check() {
            Ok(d) => println!("PASS {name}: {d} [{:.1}s]", start.elapsed().as_secs_f64()),
            Err(d) => {
                failed += 1;
                println!("FAIL {name}: {d} [{:.1}s]", start.elapsed().as_secs_f64());
            }
        }
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed);
    if failed == 0 || std::env::var("ACCEPTANCE_STRICT").is_err() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
