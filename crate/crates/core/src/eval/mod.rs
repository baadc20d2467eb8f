//! Evaluation metrics for trained encoders.
//!
//! Clustering, the linear probe and the anchor probe work on the
//! concatenation of all view embeddings of an item; the class of an item is
//! its (digit, color) category.

mod cluster;
mod probe;

pub use cluster::{agglomerative, kmeans, nmi, purity};
pub use probe::{k_anchors_eval, linear_eval};

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::crowdsim::{DatasetManifest, Split};
use crate::data::{ItemId, ItemStore, TripletAnnotation};
use crate::error::{Error, Result};
use crate::model::{forward_batch, stack_items, EncoderConfig, ModelParams, MultiviewEmbedding, WorkerPrefs};
use crate::objective::worker_choice_log_probs;

const EMBED_CHUNK: usize = 256;

/// Embeds `ids` in order.
pub fn embed_items(
    params: &ModelParams,
    config: &EncoderConfig,
    items: &ItemStore,
    ids: &[ItemId],
) -> Result<Vec<MultiviewEmbedding>> {
    let mut out = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(EMBED_CHUNK) {
        let tensors = chunk.iter().map(|&id| items.resolve(id)).collect::<Result<Vec<_>>>()?;
        let cache = forward_batch(params, config, stack_items(config, tensors)?)?;
        out.extend((0..chunk.len()).map(|n| cache.embedding(n)));
    }
    Ok(out)
}

/// Fraction of triplets whose annotated pair gets strictly the highest
/// choice probability. Ties count as wrong.
pub fn triplet_accuracy(
    params: &ModelParams,
    config: &EncoderConfig,
    items: &ItemStore,
    triplets: &[TripletAnnotation],
    use_entropy: bool,
) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::Argument("no triplets to score".into()));
    }
    let ids: Vec<ItemId> = triplets
        .iter()
        .flat_map(|t| t.items())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let embeds = embed_items(params, config, items, &ids)?;
    let index: HashMap<ItemId, usize> = ids.iter().enumerate().map(|(n, &id)| (id, n)).collect();
    let mut correct = 0usize;
    for t in triplets {
        let row = params
            .workers
            .index_of(&t.worker)
            .ok_or_else(|| Error::Reference(format!("unknown worker `{}`", t.worker)))?;
        let [i, j, k] = t.items().map(|id| &embeds[index[&id]]);
        let lp = worker_choice_log_probs(i, j, k, params.workers.row(row), use_entropy)?;
        if lp[0] > lp[1] && lp[0] > lp[2] {
            correct += 1;
        }
    }
    Ok(correct as f64 / triplets.len() as f64)
}

/// Softmax of every worker's preference row, in worker order.
pub fn preference_report(workers: &WorkerPrefs) -> Vec<(String, Vec<f64>)> {
    workers
        .ids()
        .iter()
        .enumerate()
        .map(|(m, id)| {
            let row = workers.row(m);
            let top = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let exps: Vec<f64> = row.iter().map(|w| (w - top).exp()).collect();
            let total: f64 = exps.iter().sum();
            (id.clone(), exps.iter().map(|e| e / total).collect())
        })
        .collect()
}

/// Writes `id,digit,color,view,values...` for every item of the manifest
/// (or of one split) and every view.
pub fn export_embeddings(
    params: &ModelParams,
    config: &EncoderConfig,
    manifest: &DatasetManifest,
    split: Option<Split>,
    path: &Path,
) -> Result<()> {
    let items = manifest.render_all(split)?;
    let ids = items.ids();
    let embeds = embed_items(params, config, &items, &ids)?;
    let mut out = String::new();
    for (id, e) in ids.iter().zip(&embeds) {
        let label = manifest.label(*id)?;
        for v in 0..e.num_views() {
            let _ = write!(out, "{id},{},{},{v}", label.digit, label.color.index());
            for x in e.view(v) {
                let _ = write!(out, ",{x}");
            }
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    TripletAccuracy,
    Kmeans,
    Agglomerative,
    Linear,
    KAnchors,
    Preferences,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::TripletAccuracy,
        Metric::Kmeans,
        Metric::Agglomerative,
        Metric::Linear,
        Metric::KAnchors,
        Metric::Preferences,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::TripletAccuracy => "accuracy",
            Metric::Kmeans => "kmeans",
            Metric::Agglomerative => "agglomerative",
            Metric::Linear => "linear",
            Metric::KAnchors => "anchors",
            Metric::Preferences => "preferences",
        }
    }

    /// Parses `all` or a comma-separated list of metric names.
    pub fn parse_list(s: &str) -> Result<Vec<Metric>> {
        if s.trim() == "all" {
            return Ok(Self::ALL.to_vec());
        }
        let set: BTreeSet<Metric> = s.split(',').map(|p| p.trim().parse()).collect::<Result<_>>()?;
        if set.is_empty() {
            return Err(Error::Argument("empty metric list".into()));
        }
        Ok(set.into_iter().collect())
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|m| m.name()).collect();
            Error::Argument(format!("unknown metric {s:?}, expected one of {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub metrics: Vec<Metric>,
    pub anchors_k: usize,
    pub seed: u64,
    pub use_entropy: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            metrics: Metric::ALL.to_vec(),
            anchors_k: 1,
            seed: 0,
            use_entropy: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkerShares {
    pub worker: String,
    pub shares: Vec<f64>,
}

/// Scores of one model. Metrics that were not requested are `None`;
/// preference shares are omitted for single-view models.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub triplet_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kmeans_purity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kmeans_nmi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agglomerative_purity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agglomerative_nmi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linear_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_anchors_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preference_shares: Option<Vec<WorkerShares>>,
}

impl EvalReport {
    /// `key value` lines; preference shares as `preference <worker> <v0> <v1> ...`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let scalars = [
            ("triplet_accuracy", self.triplet_accuracy),
            ("kmeans_purity", self.kmeans_purity),
            ("kmeans_nmi", self.kmeans_nmi),
            ("agglomerative_purity", self.agglomerative_purity),
            ("agglomerative_nmi", self.agglomerative_nmi),
            ("linear_accuracy", self.linear_accuracy),
            ("k_anchors_accuracy", self.k_anchors_accuracy),
        ];
        for (k, v) in scalars {
            if let Some(v) = v {
                let _ = writeln!(out, "{k} {v:.6}");
            }
        }
        for w in self.preference_shares.iter().flatten() {
            let _ = write!(out, "preference {}", w.worker);
            for s in &w.shares {
                let _ = write!(out, " {s:.6}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `<stem>.txt` and `<stem>.json`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let txt = dir.join(format!("{stem}.txt"));
        fs::write(&txt, self.to_text()).map_err(|e| Error::io(&txt, e))?;
        let json = dir.join(format!("{stem}.json"));
        fs::write(&json, self.to_json()).map_err(|e| Error::io(&json, e))
    }
}

fn split_points(
    params: &ModelParams,
    config: &EncoderConfig,
    manifest: &DatasetManifest,
    items: &ItemStore,
    split: Split,
) -> Result<(Vec<ItemId>, Vec<Vec<f64>>, Vec<usize>)> {
    let ids: Vec<ItemId> = manifest.split_items(split).iter().map(|m| m.id).collect();
    if ids.is_empty() {
        return Err(Error::Argument(format!("manifest has no {split} items")));
    }
    let points = embed_items(params, config, items, &ids)?
        .iter()
        .map(MultiviewEmbedding::concatenated)
        .collect();
    let labels = ids
        .iter()
        .map(|&id| manifest.label(id).map(|l| l.category()))
        .collect::<Result<_>>()?;
    Ok((ids, points, labels))
}

/// Runs the requested metrics. Triplet accuracy uses `triplets`; clustering
/// and the anchor probe use the test split; the linear probe trains on the
/// train split and scores the test split.
pub fn evaluate(
    params: &ModelParams,
    config: &EncoderConfig,
    manifest: &DatasetManifest,
    items: &ItemStore,
    triplets: &[TripletAnnotation],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let want = |m: Metric| opts.metrics.contains(&m);
    let mut report = EvalReport::default();
    if want(Metric::TripletAccuracy) {
        report.triplet_accuracy = Some(triplet_accuracy(params, config, items, triplets, opts.use_entropy)?);
    }
    let needs_test = [Metric::Kmeans, Metric::Agglomerative, Metric::Linear, Metric::KAnchors]
        .into_iter()
        .any(want);
    if needs_test {
        let (ids, points, labels) = split_points(params, config, manifest, items, Split::Test)?;
        let k = labels.iter().collect::<BTreeSet<_>>().len();
        if want(Metric::Kmeans) {
            let a = kmeans(&points, k, opts.seed)?;
            report.kmeans_purity = Some(purity(&a, &labels)?);
            report.kmeans_nmi = Some(nmi(&a, &labels)?);
        }
        if want(Metric::Agglomerative) {
            let a = agglomerative(&points, k)?;
            report.agglomerative_purity = Some(purity(&a, &labels)?);
            report.agglomerative_nmi = Some(nmi(&a, &labels)?);
        }
        if want(Metric::Linear) {
            let (_, train, train_labels) = split_points(params, config, manifest, items, Split::Train)?;
            report.linear_accuracy = Some(linear_eval(&train, &train_labels, &points, &labels)?);
        }
        if want(Metric::KAnchors) {
            report.k_anchors_accuracy =
                Some(k_anchors_eval(&ids, &points, &labels, opts.anchors_k, opts.seed)?);
        }
    }
    if want(Metric::Preferences) && params.num_views() > 1 {
        report.preference_shares = Some(
            preference_report(&params.workers)
                .into_iter()
                .map(|(worker, shares)| WorkerShares { worker, shares })
                .collect(),
        );
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn preference_examples() {
        let w = WorkerPrefs::new(
            vec!["a".into(), "b".into(), "c".into()],
            array![[0.0, 0.0], [1.0, 0.0], [4.0, 3.0]],
        )
        .unwrap();
        let r = preference_report(&w);
        assert_eq!(r[0].1, vec![0.5, 0.5]);
        let e = std::f64::consts::E;
        assert!((r[1].1[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((r[1].1[0] - 0.7311).abs() < 5e-5);
        assert!((r[1].1[1] - 0.2689).abs() < 5e-5);
        for (x, y) in r[1].1.iter().zip(&r[2].1) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn metric_lists() {
        assert_eq!(Metric::parse_list("all").unwrap().len(), 6);
        assert_eq!(
            Metric::parse_list("kmeans,accuracy").unwrap(),
            vec![Metric::TripletAccuracy, Metric::Kmeans]
        );
        assert!(Metric::parse_list("kmeans,bogus").is_err());
    }

    #[test]
    fn report_text_skips_missing() {
        let r = EvalReport {
            triplet_accuracy: Some(0.5),
            ..EvalReport::default()
        };
        assert_eq!(r.to_text(), "triplet_accuracy 0.500000\n");
        assert!(!r.to_json().contains("kmeans"));
    }
}
