mod common;

use common::worked_query_table;
use mvtriplet::crowdsim::{
    generate_dataset, pair_distances, sample_triplets, setting_workers, simulate_answer, Answer,
    Attribute, ColorId, ItemLabel, RenderParams, SimWorkerSpec, Split,
};

fn l(digit: u8, color: ColorId) -> ItemLabel {
    ItemLabel::new(digit, color).unwrap()
}

fn all_labels() -> Vec<ItemLabel> {
    (0..10)
        .flat_map(|d| ColorId::ALL.into_iter().map(move |c| l(d, c)))
        .collect()
}

#[test]
fn worked_queries_reproduce_every_cell() {
    let (first, second, rows) = worked_query_table();
    let mut cells = 0;
    for (setting, worker, d1, a1, d2, a2) in rows {
        let spec = setting_workers(setting).unwrap()[worker].1;
        for (labels, dist, answer) in [(&first, d1, a1), (&second, d2, a2)] {
            assert_eq!(simulate_answer(&spec, labels), answer, "setting {setting} worker {worker}");
            cells += 1;
            if let Some(want) = dist {
                let got = pair_distances(&spec, labels);
                for (g, w) in got.iter().zip(want) {
                    assert!((g - w).abs() < 1e-12, "setting {setting} worker {worker}: {got:?}");
                }
            }
        }
    }
    assert_eq!(cells, 16);
}

#[test]
fn exact_match_answers_agree_with_distance_answers() {
    let labels = all_labels();
    for attr in [Attribute::Color, Attribute::Number] {
        let exact = SimWorkerSpec::ExactMatch(attr);
        let dist = SimWorkerSpec::Distance(attr);
        let mut valid = 0;
        for a in &labels {
            for b in &labels {
                for c in &labels {
                    let t = [*a, *b, *c];
                    if let Answer::Pair(p) = simulate_answer(&exact, &t) {
                        valid += 1;
                        assert_eq!(simulate_answer(&dist, &t), Answer::Pair(p), "{t:?}");
                    }
                }
            }
        }
        assert!(valid > 0);
    }
}

#[test]
fn degenerate_weights_match_single_attribute_workers() {
    let labels = all_labels();
    let pairs = [
        (SimWorkerSpec::weighted(1.0, 0.0).unwrap(), SimWorkerSpec::Distance(Attribute::Color)),
        (SimWorkerSpec::weighted(0.0, 1.0).unwrap(), SimWorkerSpec::Distance(Attribute::Number)),
    ];
    for a in &labels {
        for b in &labels {
            for c in &labels {
                let t = [*a, *b, *c];
                for (w, d) in &pairs {
                    assert_eq!(simulate_answer(w, &t), simulate_answer(d, &t));
                }
            }
        }
    }
}

#[test]
fn setting_one_triplets_share_the_attribute() {
    let m = generate_dataset(1, 2, RenderParams::default()).unwrap();
    let workers = setting_workers(1).unwrap();
    let train = m.split_items(Split::Train);
    let trip = sample_triplets(&train, &workers, 300, 5).unwrap();
    assert_eq!(trip.len(), 600);
    for t in &trip {
        let [i, j, k] = [t.i, t.j, t.k].map(|id| m.label(id).unwrap());
        for id in t.items() {
            assert_eq!(m.get(id).unwrap().split, Split::Train);
        }
        match t.worker.as_str() {
            "worker1" => {
                assert_eq!(i.color, j.color);
                assert_ne!(i.color, k.color);
            }
            "worker2" => {
                assert_eq!(i.digit, j.digit);
                assert_ne!(i.digit, k.digit);
            }
            other => panic!("unexpected worker {other}"),
        }
    }
    // Same inputs, same output.
    assert_eq!(trip, sample_triplets(&train, &workers, 300, 5).unwrap());
    assert_ne!(trip, sample_triplets(&train, &workers, 300, 6).unwrap());
}

#[test]
fn red_items_look_red() {
    let m = generate_dataset(2, 3, RenderParams::default()).unwrap();
    let reds: Vec<u32> = m
        .items()
        .iter()
        .filter(|i| i.label.color == ColorId::Red)
        .map(|i| i.id)
        .take(50)
        .collect();
    assert_eq!(reds.len(), 50);
    let mut sum = [0.0; 3];
    let mut n = 0.0;
    for id in reds {
        let t = m.render(id).unwrap();
        for y in 0..t.height() {
            for x in 0..t.width() {
                let px = [0, 1, 2].map(|c| t.get(y, x, c));
                if px.iter().cloned().fold(0.0, f64::max) > 0.5 {
                    for c in 0..3 {
                        sum[c] += px[c];
                    }
                    n += 1.0;
                }
            }
        }
    }
    let mean = sum.map(|s| s / n);
    let dist = |c: ColorId| {
        let a = c.rgb();
        (0..3).map(|k| (a[k] - mean[k]).powi(2)).sum::<f64>()
    };
    let nearest = ColorId::ALL
        .into_iter()
        .min_by(|a, b| dist(*a).total_cmp(&dist(*b)))
        .unwrap();
    assert_eq!(nearest, ColorId::Red);
}
