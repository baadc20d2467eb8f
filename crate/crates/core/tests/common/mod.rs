//! Reference implementations used as independent oracles by the integration
//! tests. Nothing here calls into the optimised code paths it checks.
#![allow(dead_code)]

use mvtriplet::crowdsim::{Answer, ColorId, ItemLabel, PairChoice};
use mvtriplet::model::{init_params, Activation, ModelParams};
use mvtriplet::objective::{loss_gradients, ObjectiveOptions};
use mvtriplet::{EncoderConfig, ItemStore, ItemTensor, TripletAnnotation};

/// Straight transcription of the choice model with raw exponentials and no
/// stabilisation. Valid for small distances only.
#[derive(Debug, Clone)]
pub struct NaiveTriplet {
    /// `[view][pair]` probabilities.
    pub pair_probs: Vec<[f64; 3]>,
    pub entropy: Vec<f64>,
    pub inherent: Vec<f64>,
    pub combined_raw: Vec<f64>,
    pub combined: Vec<f64>,
    pub choice: [f64; 3],
}

pub fn naive_triplet(
    yi: &[Vec<f64>],
    yj: &[Vec<f64>],
    yk: &[Vec<f64>],
    w: &[f64],
    use_entropy: bool,
) -> NaiveTriplet {
    let views = yi.len();
    let sim = |a: &Vec<f64>, b: &Vec<f64>| {
        let mut d = 0.0;
        for t in 0..a.len() {
            d += (a[t] - b[t]) * (a[t] - b[t]);
        }
        (-d).exp()
    };
    let mut sims = Vec::new();
    let mut pair_probs = Vec::new();
    let mut entropy = Vec::new();
    let mut inherent = Vec::new();
    for v in 0..views {
        let s_ij = sim(&yi[v], &yj[v]);
        let s_ik = sim(&yi[v], &yk[v]);
        let s_jk = sim(&yj[v], &yk[v]);
        let total = s_ij + s_ik + s_jk;
        let p = [s_ij / total, s_ik / total, s_jk / total];
        let h = -(p[0] * p[0].ln() + p[1] * p[1].ln() + p[2] * p[2].ln());
        let ln3 = 3f64.ln();
        sims.push([s_ij, s_ik, s_jk]);
        pair_probs.push(p);
        entropy.push(h);
        inherent.push((ln3 - h) / ln3);
    }
    let mut combined_raw = Vec::new();
    for v in 0..views {
        if use_entropy {
            combined_raw.push(inherent[v] + w[v]);
        } else {
            combined_raw.push(w[v]);
        }
    }
    let mut denom = 0.0;
    for v in 0..views {
        denom += combined_raw[v].exp();
    }
    let combined: Vec<f64> = combined_raw.iter().map(|q| q.exp() / denom).collect();
    let mut mixed = [0.0; 3];
    for c in 0..3 {
        for v in 0..views {
            mixed[c] += combined[v] * sims[v][c];
        }
    }
    let total = mixed[0] + mixed[1] + mixed[2];
    NaiveTriplet {
        pair_probs,
        entropy,
        inherent,
        combined_raw,
        combined,
        choice: [mixed[0] / total, mixed[1] / total, mixed[2] / total],
    }
}

/// Minimal PCG64-MCG (128-bit multiplicative LCG, XSL-RR output) written
/// from the published algorithm.
pub struct HandPcg {
    state: u128,
}

impl HandPcg {
    const MULTIPLIER: u128 = 0x2360_ED05_1FC6_5DA4_4385_DF64_9FCC_F645;

    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            state: (((seed as u128) << 64) | stream as u128) | 1,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_mul(Self::MULTIPLIER);
        let rot = (self.state >> 122) as u32;
        let xsl = ((self.state >> 64) as u64) ^ (self.state as u64);
        xsl.rotate_right(rot)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Small random instance for gradient checks.
pub struct Instance {
    pub config: EncoderConfig,
    pub params: ModelParams,
    pub items: ItemStore,
    pub triplets: Vec<TripletAnnotation>,
}

pub fn random_instance(seed: u64, embed_dim: usize, activation: Activation) -> Instance {
    let mut r = HandPcg::new(seed, 77);
    let config = EncoderConfig {
        height: 2,
        width: 2,
        channels: 3,
        hidden: vec![6, 5],
        embed_dim,
        num_views: 2,
        activation,
        seed,
    };
    let workers: Vec<String> = (0..3).map(|m| format!("worker{m}")).collect();
    let mut params = init_params(&config, &workers).unwrap();
    // Nonzero biases exercise every gradient path.
    for t in params.network_tensors_mut() {
        for x in t.iter_mut() {
            *x += 0.1 * (r.next_f64() - 0.5);
        }
    }
    let items: ItemStore = (0..8)
        .map(|id| {
            let px = (0..config.input_len()).map(|_| r.next_f64()).collect();
            (id, ItemTensor::new(2, 2, 3, px).unwrap())
        })
        .collect();
    let mut triplets = Vec::new();
    while triplets.len() < 5 {
        let ids = [0, 1, 2].map(|_| (r.next_u64() % 8) as u32);
        if ids[0] == ids[1] || ids[0] == ids[2] || ids[1] == ids[2] {
            continue;
        }
        let worker = &workers[(r.next_u64() % 3) as usize];
        triplets.push(TripletAnnotation::new(worker.clone(), ids[0], ids[1], ids[2]).unwrap());
    }
    Instance {
        config,
        params,
        items,
        triplets,
    }
}

fn loss_at(inst: &Instance, params: &ModelParams, opts: ObjectiveOptions) -> f64 {
    loss_gradients(params, &inst.config, &inst.items, &inst.triplets, opts)
        .unwrap()
        .loss
}

/// Relative error with a floor on the denominator, so entries that are
/// zero up to rounding compare on an absolute scale of `1e-6 * tol`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central finite differences over every parameter. Returns the worst
/// relative error and the number of entries checked.
pub fn max_fd_error(inst: &Instance, opts: ObjectiveOptions, step: f64) -> (f64, usize) {
    let analytic = loss_gradients(&inst.params, &inst.config, &inst.items, &inst.triplets, opts)
        .unwrap()
        .grads;
    let mut worst = 0.0f64;
    let mut count = 0;
    let grads: Vec<Vec<f64>> = analytic.network_tensors().iter().map(|t| t.to_vec()).collect();
    for (ti, g) in grads.iter().enumerate() {
        for e in 0..g.len() {
            let mut plus = inst.params.clone();
            plus.network_tensors_mut()[ti][e] += step;
            let mut minus = inst.params.clone();
            minus.network_tensors_mut()[ti][e] -= step;
            let fd = (loss_at(inst, &plus, opts) - loss_at(inst, &minus, opts)) / (2.0 * step);
            worst = worst.max(relative_error(fd, g[e]));
            count += 1;
        }
    }
    let (rows, cols) = analytic.workers.weights().dim();
    for m in 0..rows {
        for v in 0..cols {
            let mut plus = inst.params.clone();
            plus.workers.weights_mut()[[m, v]] += step;
            let mut minus = inst.params.clone();
            minus.workers.weights_mut()[[m, v]] -= step;
            let fd = (loss_at(inst, &plus, opts) - loss_at(inst, &minus, opts)) / (2.0 * step);
            worst = worst.max(relative_error(fd, analytic.workers.weights()[[m, v]]));
            count += 1;
        }
    }
    (worst, count)
}

/// `(setting, worker index, distances on query 1, answer 1, distances on
/// query 2, answer 2)`; distances are `None` for exact-match workers.
pub type TableRow = (u8, usize, Option<[f64; 3]>, Answer, Option<[f64; 3]>, Answer);

/// The two worked queries and the expected outcome for every simulated
/// worker of settings 1 to 3.
pub fn worked_query_table() -> ([ItemLabel; 3], [ItemLabel; 3], Vec<TableRow>) {
    use PairChoice::*;
    let l = |d, c| ItemLabel::new(d, c).unwrap();
    let first = [l(1, ColorId::Red), l(2, ColorId::Red), l(2, ColorId::Green)];
    let second = [l(1, ColorId::Red), l(2, ColorId::Orange), l(3, ColorId::Green)];
    let rows = vec![
        (1, 0, None, Answer::Pair(FirstSecond), None, Answer::Invalid),
        (1, 1, None, Answer::Pair(SecondThird), None, Answer::Invalid),
        (2, 0, Some([0.0, 4.0, 4.0]), Answer::Pair(FirstSecond), Some([1.0, 4.0, 3.0]), Answer::Pair(FirstSecond)),
        (2, 1, Some([1.0, 1.0, 0.0]), Answer::Pair(SecondThird), Some([1.0, 2.0, 1.0]), Answer::Invalid),
        (3, 0, Some([0.0, 4.0, 4.0]), Answer::Pair(FirstSecond), Some([1.0, 4.0, 3.0]), Answer::Pair(FirstSecond)),
        (3, 1, Some([0.3, 3.1, 2.8]), Answer::Pair(FirstSecond), Some([1.0, 3.4, 2.4]), Answer::Pair(FirstSecond)),
        (3, 2, Some([0.7, 1.9, 1.2]), Answer::Pair(FirstSecond), Some([1.0, 2.6, 1.6]), Answer::Pair(FirstSecond)),
        (3, 3, Some([1.0, 1.0, 0.0]), Answer::Pair(SecondThird), Some([1.0, 2.0, 1.0]), Answer::Invalid),
    ];
    (first, second, rows)
}

