//! Synthetic colored-digit corpus and simulated crowd workers.

mod dataset;
mod labels;
mod workers;

pub use dataset::{
    encode_png, generate_dataset, glyph_bit, render_item, write_png, DatasetManifest,
    ManifestItem, RenderParams, Split,
};
pub use labels::{color_distance, digit_distance, ColorId, ItemLabel};
pub use workers::{
    pair_distances, setting_workers, simulate_answer, Answer, Attribute, PairChoice,
    SimWorkerSpec,
};

use rand::Rng;

use crate::data::TripletAnnotation;
use crate::error::{Error, Result};
use crate::rng::{seeded, STREAM_TRIPLETS};

/// Draw budget after which a low valid-answer rate aborts sampling.
const RATE_CHECK_DRAWS: u64 = 1_000_000;
const MIN_VALID_RATE: f64 = 0.001;

/// Draws uniformly random distinct triples from `items` and keeps each
/// worker's valid answers until it has `n_per_worker` of them. Worker `m`
/// samples from its own stream, so adding workers does not change the
/// triplets of earlier ones.
pub fn sample_triplets(
    items: &[ManifestItem],
    workers: &[(String, SimWorkerSpec)],
    n_per_worker: usize,
    seed: u64,
) -> Result<Vec<TripletAnnotation>> {
    let mut out = Vec::with_capacity(workers.len() * n_per_worker);
    if n_per_worker == 0 {
        return Ok(out);
    }
    if items.len() < 3 {
        return Err(Error::Sampling(format!(
            "need at least 3 items to form a triple, have {}",
            items.len()
        )));
    }
    for (m, (name, spec)) in workers.iter().enumerate() {
        let mut rng = seeded(seed, STREAM_TRIPLETS + m as u64);
        let mut draws = 0u64;
        let mut kept = 0usize;
        while kept < n_per_worker {
            let a = rng.random_range(0..items.len());
            let b = rng.random_range(0..items.len());
            let c = rng.random_range(0..items.len());
            if a == b || a == c || b == c {
                continue;
            }
            draws += 1;
            let triple = [items[a], items[b], items[c]];
            if let Answer::Pair(choice) = simulate_answer(spec, &triple.map(|t| t.label)) {
                let (x, y, z) = choice.slots();
                out.push(TripletAnnotation::new(
                    name.clone(),
                    triple[x].id,
                    triple[y].id,
                    triple[z].id,
                )?);
                kept += 1;
            }
            if draws >= RATE_CHECK_DRAWS && (kept as f64) < MIN_VALID_RATE * draws as f64 {
                return Err(Error::Sampling(format!(
                    "worker {name} ({spec}) answered only {kept} of {draws} triples"
                )));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_requested_is_empty() {
        let m = generate_dataset(1, 1, RenderParams::default()).unwrap();
        let w = setting_workers(1).unwrap();
        assert!(sample_triplets(m.items(), &w, 0, 1).unwrap().is_empty());
    }

    #[test]
    fn too_few_items() {
        let m = generate_dataset(1, 1, RenderParams::default()).unwrap();
        let w = setting_workers(2).unwrap();
        assert!(matches!(
            sample_triplets(&m.items()[..2], &w, 1, 1),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn unanswerable_worker_is_diagnosed() {
        // Every item has the same color, so an exact color matcher never
        // finds exactly one matching pair.
        let m = generate_dataset(1, 1, RenderParams::default()).unwrap();
        let reds: Vec<ManifestItem> = m
            .items()
            .iter()
            .filter(|i| i.label.color == ColorId::Red)
            .copied()
            .collect();
        let w = vec![("w".to_string(), SimWorkerSpec::ExactMatch(Attribute::Color))];
        assert!(matches!(
            sample_triplets(&reds, &w, 1, 1),
            Err(Error::Sampling(_))
        ));
    }
}
