//! Choice model and loss for double-sided triplets.
//!
//! Per view `v`, pair similarities are `exp(-||y_a - y_b||^2)` and the three
//! pair probabilities are their normalised shares. The entropy of those
//! probabilities, rescaled to `[0, 1)`, gives an inherent view weight that is
//! added to the worker's preference before a softmax over views. The worker's
//! similarity for a pair is the weight-mixed per-view similarity, and the
//! probability of choosing a pair is its share of the three mixed
//! similarities. The loss is the mean negative log-probability of the
//! annotated pairs.
//!
//! All `exp(-d^2)` terms are handled as logits: pair probabilities are a
//! max-shifted softmax and each mixed similarity is a log-sum-exp over views
//! of `log(weight) - d^2`, so no quantity under- or overflows.

use ndarray::{Array2, ArrayView1};

use crate::data::{ItemStore, TripletAnnotation};
use crate::error::{Error, Result};
use crate::model::{self, EncoderConfig, ModelParams, MultiviewEmbedding};

/// Natural log of 3, the entropy of a uniform three-way choice.
pub const LN_3: f64 = 1.098_612_288_668_109_8;

/// Tolerance for inherent weights computed from entropies that drift past
/// `[0, ln 3]` by rounding.
const ENTROPY_SLACK: f64 = 1e-12;

/// Probabilities that each pair of a triplet is the most similar in one view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewPairProbs {
    pub ij: f64,
    pub ik: f64,
    pub jk: f64,
}

impl ViewPairProbs {
    pub fn as_array(&self) -> [f64; 3] {
        [self.ij, self.ik, self.jk]
    }
}

/// Per-view weights of one triplet for one worker.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletWeights {
    pub entropy: Vec<f64>,
    pub inherent: Vec<f64>,
    pub combined_raw: Vec<f64>,
    pub combined: Vec<f64>,
}

/// Probabilities that a worker picks `(i, j)`, `(i, k)` or `(j, k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkerChoiceProbs {
    pub ij: f64,
    pub ik: f64,
    pub jk: f64,
}

impl WorkerChoiceProbs {
    pub fn as_array(&self) -> [f64; 3] {
        [self.ij, self.ik, self.jk]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObjectiveOptions {
    /// Add the entropy-based inherent weight to worker preferences.
    pub use_entropy: bool,
    /// Treat inherent weights as constants when differentiating.
    pub entropy_stop_gradient: bool,
}

impl Default for ObjectiveOptions {
    fn default() -> Self {
        Self {
            use_entropy: true,
            entropy_stop_gradient: false,
        }
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("vector lengths differ: {a} vs {b}")));
    }
    Ok(())
}

fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| (x - lse).exp()).collect()
}

/// `exp(-||a - b||^2)`. Underflows to zero beyond `||a - b||^2 ~ 745`; the
/// probability functions below never form this quantity directly.
pub fn view_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    Ok((-squared_distance(a.into(), b.into())).exp())
}

/// Pair logits `(-d_ij^2, -d_ik^2, -d_jk^2)` for one view.
fn pair_logits(yi: ArrayView1<f64>, yj: ArrayView1<f64>, yk: ArrayView1<f64>) -> [f64; 3] {
    [
        -squared_distance(yi, yj),
        -squared_distance(yi, yk),
        -squared_distance(yj, yk),
    ]
}

pub fn view_pair_probs(yi: &[f64], yj: &[f64], yk: &[f64]) -> Result<ViewPairProbs> {
    check_len(yi.len(), yj.len())?;
    check_len(yi.len(), yk.len())?;
    if yi.iter().chain(yj).chain(yk).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite embedding value".into()));
    }
    let a = pair_logits(yi.into(), yj.into(), yk.into());
    let p = softmax(&a);
    Ok(ViewPairProbs {
        ij: p[0],
        ik: p[1],
        jk: p[2],
    })
}

/// Shannon entropy in nats; zero-probability terms contribute nothing.
pub fn triplet_entropy(p: &ViewPairProbs) -> f64 {
    -p.as_array()
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// `(ln 3 - h) / ln 3`.
pub fn inherent_weight(h: f64) -> Result<f64> {
    if !(-ENTROPY_SLACK..=LN_3 + ENTROPY_SLACK).contains(&h) {
        return Err(Error::Numeric(format!("entropy {h} outside [0, ln 3]")));
    }
    Ok((LN_3 - h.clamp(0.0, LN_3)) / LN_3)
}

/// Softmax over views of `inherent + worker_pref`, or of `worker_pref` alone
/// when the entropy term is disabled.
pub fn combined_weights(inherent: &[f64], worker_pref: &[f64], use_entropy: bool) -> Result<Vec<f64>> {
    check_len(inherent.len(), worker_pref.len())?;
    let raw: Vec<f64> = if use_entropy {
        inherent.iter().zip(worker_pref).map(|(h, w)| h + w).collect()
    } else {
        worker_pref.to_vec()
    };
    Ok(softmax(&raw))
}

/// Everything the forward pass of one triplet produces, in log space.
#[derive(Debug, Clone)]
struct TripletForward {
    /// `[view][pair]` logits `-d^2`.
    logits: Vec<[f64; 3]>,
    /// `[view][pair]` log pair probabilities.
    log_pair_probs: Vec<[f64; 3]>,
    entropy: Vec<f64>,
    inherent: Vec<f64>,
    combined_raw: Vec<f64>,
    log_combined: Vec<f64>,
    /// `log s_m` for the three pairs.
    log_mixed: [f64; 3],
    /// Log choice probabilities.
    log_choice: [f64; 3],
}

fn triplet_forward(
    yi: &MultiviewEmbedding,
    yj: &MultiviewEmbedding,
    yk: &MultiviewEmbedding,
    pref: ArrayView1<f64>,
    use_entropy: bool,
) -> Result<TripletForward> {
    let views = yi.num_views();
    for y in [yj, yk] {
        if y.num_views() != views || y.dim() != yi.dim() {
            return Err(Error::Shape(format!(
                "embedding shapes differ: {}x{} vs {}x{}",
                views,
                yi.dim(),
                y.num_views(),
                y.dim()
            )));
        }
    }
    if pref.len() != views {
        return Err(Error::Shape(format!(
            "worker preference has {} entries for {views} views",
            pref.len()
        )));
    }

    let mut logits = Vec::with_capacity(views);
    let mut log_pair_probs = Vec::with_capacity(views);
    let mut entropy = Vec::with_capacity(views);
    let mut inherent = Vec::with_capacity(views);
    for v in 0..views {
        let a = pair_logits(yi.view(v), yj.view(v), yk.view(v));
        let lse = log_sum_exp(&a);
        let lp = a.map(|x| x - lse);
        let h = -lp.iter().map(|&l| l.exp() * l).sum::<f64>();
        logits.push(a);
        log_pair_probs.push(lp);
        entropy.push(h);
        inherent.push((LN_3 - h) / LN_3);
    }

    let combined_raw: Vec<f64> = (0..views)
        .map(|v| if use_entropy { inherent[v] + pref[v] } else { pref[v] })
        .collect();
    let lse_q = log_sum_exp(&combined_raw);
    let log_combined: Vec<f64> = combined_raw.iter().map(|q| q - lse_q).collect();

    // Mixed similarity per pair: log sum_v exp(log q~_v - d_v^2), factoring
    // out the largest exponent across views.
    let mut log_mixed = [0.0; 3];
    let mut terms = vec![0.0; views];
    for (c, slot) in log_mixed.iter_mut().enumerate() {
        for v in 0..views {
            terms[v] = log_combined[v] + logits[v][c];
        }
        *slot = log_sum_exp(&terms);
    }
    let lse_s = log_sum_exp(&log_mixed);
    let log_choice = log_mixed.map(|r| r - lse_s);
    if log_choice.iter().any(|x| x.is_nan()) {
        return Err(Error::Numeric("non-finite choice probability".into()));
    }
    Ok(TripletForward {
        logits,
        log_pair_probs,
        entropy,
        inherent,
        combined_raw,
        log_combined,
        log_mixed,
        log_choice,
    })
}

impl TripletForward {
    fn weights(&self) -> TripletWeights {
        TripletWeights {
            entropy: self.entropy.clone(),
            inherent: self.inherent.clone(),
            combined_raw: self.combined_raw.clone(),
            combined: self.log_combined.iter().map(|x| x.exp()).collect(),
        }
    }

    fn choice(&self) -> WorkerChoiceProbs {
        let p = self.log_choice.map(f64::exp);
        WorkerChoiceProbs {
            ij: p[0],
            ik: p[1],
            jk: p[2],
        }
    }

    /// Gradients of `scale * (-log P_ij)` with respect to the `[view][pair]`
    /// logits and the worker preference row.
    fn backward(&self, scale: f64, opts: ObjectiveOptions) -> (Vec<[f64; 3]>, Vec<f64>) {
        let views = self.logits.len();
        let p_choice = self.log_choice.map(f64::exp);
        let g_mixed = [
            scale * (p_choice[0] - 1.0),
            scale * p_choice[1],
            scale * p_choice[2],
        ];
        let mut g_logits = vec![[0.0; 3]; views];
        let mut g_log_combined = vec![0.0; views];
        for v in 0..views {
            for c in 0..3 {
                // Posterior share of view v in the mixed similarity of pair c.
                let share = (self.log_combined[v] + self.logits[v][c] - self.log_mixed[c]).exp();
                let g = g_mixed[c] * share;
                g_logits[v][c] += g;
                g_log_combined[v] += g;
            }
        }
        let total: f64 = g_log_combined.iter().sum();
        let g_raw: Vec<f64> = (0..views)
            .map(|v| g_log_combined[v] - self.log_combined[v].exp() * total)
            .collect();

        if opts.use_entropy && !opts.entropy_stop_gradient {
            for v in 0..views {
                let g_entropy = -g_raw[v] / LN_3;
                let h = self.entropy[v];
                for c in 0..3 {
                    let lp = self.log_pair_probs[v][c];
                    // dH/da_c = -p_c (log p_c + H)
                    g_logits[v][c] += g_entropy * (-lp.exp() * (lp + h));
                }
            }
        }
        (g_logits, g_raw)
    }
}

/// Choice probabilities and view weights of one worker on one triplet.
pub fn worker_choice_probs(
    yi: &MultiviewEmbedding,
    yj: &MultiviewEmbedding,
    yk: &MultiviewEmbedding,
    worker_pref: &[f64],
    use_entropy: bool,
) -> Result<(WorkerChoiceProbs, TripletWeights)> {
    let fwd = triplet_forward(yi, yj, yk, worker_pref.into(), use_entropy)?;
    Ok((fwd.choice(), fwd.weights()))
}

/// Log choice probabilities `(log P_ij, log P_ik, log P_jk)`.
pub fn worker_choice_log_probs(
    yi: &MultiviewEmbedding,
    yj: &MultiviewEmbedding,
    yk: &MultiviewEmbedding,
    worker_pref: ArrayView1<f64>,
    use_entropy: bool,
) -> Result<[f64; 3]> {
    Ok(triplet_forward(yi, yj, yk, worker_pref, use_entropy)?.log_choice)
}

/// Result of [`loss_gradients`].
#[derive(Debug, Clone)]
pub struct LossGradients {
    /// Mean negative log-likelihood.
    pub loss: f64,
    /// `-log P` of each triplet, in input order.
    pub per_triplet: Vec<f64>,
    pub grads: ModelParams,
}

/// Resolves worker rows and the distinct items of `triplets`, in first-seen
/// order, returning `(items, slot of each triplet's i/j/k, worker rows)`.
type Resolved = (Vec<u32>, Vec<[usize; 3]>, Vec<usize>);

fn resolve(params: &ModelParams, items: &ItemStore, triplets: &[TripletAnnotation]) -> Result<Resolved> {
    let mut order = Vec::new();
    let mut slot_of = std::collections::HashMap::new();
    let mut slots = Vec::with_capacity(triplets.len());
    let mut rows = Vec::with_capacity(triplets.len());
    for t in triplets {
        let row = params
            .workers
            .index_of(&t.worker)
            .ok_or_else(|| Error::Reference(format!("unknown worker `{}`", t.worker)))?;
        rows.push(row);
        let mut s = [0; 3];
        for (n, id) in t.items().into_iter().enumerate() {
            items.resolve(id)?;
            s[n] = *slot_of.entry(id).or_insert_with(|| {
                order.push(id);
                order.len() - 1
            });
        }
        slots.push(s);
    }
    Ok((order, slots, rows))
}

fn run(
    params: &ModelParams,
    config: &EncoderConfig,
    items: &ItemStore,
    triplets: &[TripletAnnotation],
    opts: ObjectiveOptions,
    want_grads: bool,
) -> Result<LossGradients> {
    if triplets.is_empty() {
        return Err(Error::Argument("no triplets".into()));
    }
    let (order, slots, rows) = resolve(params, items, triplets)?;
    let batch = model::stack_items(config, order.iter().map(|&id| items.get(id).expect("resolved")))?;
    let cache = model::forward_batch(params, config, batch)?;
    let embeds: Vec<MultiviewEmbedding> = (0..order.len()).map(|n| cache.embedding(n)).collect();

    let scale = 1.0 / triplets.len() as f64;
    let views = params.num_views();
    let mut grads = params.zeros_like();
    let mut g_out: Vec<Array2<f64>> = (0..views)
        .map(|_| Array2::zeros((order.len(), config.embed_dim)))
        .collect();
    let mut per_triplet = Vec::with_capacity(triplets.len());
    let mut total = 0.0;
    for (s, &row) in slots.iter().zip(&rows) {
        let pref = params.workers.row(row);
        let fwd = triplet_forward(&embeds[s[0]], &embeds[s[1]], &embeds[s[2]], pref, opts.use_entropy)?;
        let loss = -fwd.log_choice[0];
        per_triplet.push(loss);
        total += loss;
        if !want_grads {
            continue;
        }
        let (g_logits, g_pref) = fwd.backward(scale, opts);
        for (v, g) in g_pref.iter().enumerate() {
            grads.workers.weights_mut()[[row, v]] += g;
        }
        // Pair c joins slots (a, b); logit = -||y_a - y_b||^2.
        const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];
        for (v, gv) in g_logits.iter().enumerate() {
            for (c, &(a, b)) in PAIRS.iter().enumerate() {
                let (sa, sb) = (s[a], s[b]);
                for d in 0..config.embed_dim {
                    let diff = embeds[sa].view(v)[d] - embeds[sb].view(v)[d];
                    let g = -2.0 * gv[c] * diff;
                    g_out[v][[sa, d]] += g;
                    g_out[v][[sb, d]] -= g;
                }
            }
        }
    }
    if want_grads {
        model::backward_batch(params, config, &cache, &g_out, &mut grads);
    }
    Ok(LossGradients {
        loss: total * scale,
        per_triplet,
        grads,
    })
}

/// Mean negative log-likelihood of the annotated pairs.
pub fn batch_loss(
    params: &ModelParams,
    config: &EncoderConfig,
    items: &ItemStore,
    triplets: &[TripletAnnotation],
    use_entropy: bool,
) -> Result<f64> {
    let opts = ObjectiveOptions {
        use_entropy,
        entropy_stop_gradient: false,
    };
    Ok(run(params, config, items, triplets, opts, false)?.loss)
}

/// Loss together with exact gradients for every parameter.
pub fn loss_gradients(
    params: &ModelParams,
    config: &EncoderConfig,
    items: &ItemStore,
    triplets: &[TripletAnnotation],
    opts: ObjectiveOptions,
) -> Result<LossGradients> {
    run(params, config, items, triplets, opts, true)
}
