use std::fmt;

use serde::{Deserialize, Serialize};

use super::labels::{color_distance, digit_distance, ItemLabel};
use crate::error::{Error, Result};

/// Weighted distances closer than this are treated as tied.
const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Attribute {
    Color,
    Number,
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Attribute::Color => "color",
            Attribute::Number => "number",
        })
    }
}

/// A simulated annotator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SimWorkerSpec {
    /// Answers only when exactly one pair shares the attribute.
    ExactMatch(Attribute),
    /// Answers with the pair of strictly smallest attribute distance.
    Distance(Attribute),
    /// Like `Distance` on a convex mix of the two attribute distances.
    Weighted { color: f64, number: f64 },
}

impl SimWorkerSpec {
    pub fn weighted(color: f64, number: f64) -> Result<Self> {
        let ok = color >= 0.0 && number >= 0.0 && ((color + number) - 1.0).abs() < 1e-12;
        if !ok {
            return Err(Error::Argument(format!(
                "worker weights must be nonnegative and sum to 1, got ({color}, {number})"
            )));
        }
        Ok(SimWorkerSpec::Weighted { color, number })
    }

    /// Weight this worker puts on color, used to order preference reports.
    pub fn color_weight(&self) -> f64 {
        match *self {
            SimWorkerSpec::ExactMatch(a) | SimWorkerSpec::Distance(a) => {
                if a == Attribute::Color {
                    1.0
                } else {
                    0.0
                }
            }
            SimWorkerSpec::Weighted { color, .. } => color,
        }
    }
}

impl fmt::Display for SimWorkerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimWorkerSpec::ExactMatch(a) => write!(f, "exact-match {a}"),
            SimWorkerSpec::Distance(a) => write!(f, "distance {a}"),
            SimWorkerSpec::Weighted { color, number } => {
                write!(f, "weighted color={color} number={number}")
            }
        }
    }
}

/// Which two of the three presented items were picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairChoice {
    FirstSecond,
    FirstThird,
    SecondThird,
}

impl PairChoice {
    pub const ALL: [PairChoice; 3] = [
        PairChoice::FirstSecond,
        PairChoice::FirstThird,
        PairChoice::SecondThird,
    ];

    /// Slot order `(pair a, pair b, odd one out)`.
    pub fn slots(self) -> (usize, usize, usize) {
        match self {
            PairChoice::FirstSecond => (0, 1, 2),
            PairChoice::FirstThird => (0, 2, 1),
            PairChoice::SecondThird => (1, 2, 0),
        }
    }

    fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Answer {
    Pair(PairChoice),
    Invalid,
}

const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

fn attribute_distance(attr: Attribute, a: &ItemLabel, b: &ItemLabel) -> u32 {
    match attr {
        Attribute::Color => color_distance(a.color, b.color),
        Attribute::Number => digit_distance(a.digit, b.digit),
    }
}

/// Per-pair distances in the order (1,2), (1,3), (2,3). Exact-match workers
/// report 0 for a matching pair and 1 otherwise.
pub fn pair_distances(spec: &SimWorkerSpec, labels: &[ItemLabel; 3]) -> [f64; 3] {
    PAIRS.map(|(a, b)| {
        let (x, y) = (&labels[a], &labels[b]);
        match *spec {
            SimWorkerSpec::ExactMatch(attr) => {
                if attribute_distance(attr, x, y) == 0 {
                    0.0
                } else {
                    1.0
                }
            }
            SimWorkerSpec::Distance(attr) => attribute_distance(attr, x, y) as f64,
            SimWorkerSpec::Weighted { color, number } => {
                color * color_distance(x.color, y.color) as f64
                    + number * digit_distance(x.digit, y.digit) as f64
            }
        }
    })
}

pub fn simulate_answer(spec: &SimWorkerSpec, labels: &[ItemLabel; 3]) -> Answer {
    let d = pair_distances(spec, labels);
    if let SimWorkerSpec::ExactMatch(_) = spec {
        let matches: Vec<usize> = (0..3).filter(|&c| d[c] == 0.0).collect();
        return match matches.as_slice() {
            [c] => Answer::Pair(PairChoice::from_index(*c)),
            _ => Answer::Invalid,
        };
    }
    let best = (0..3)
        .min_by(|&a, &b| d[a].total_cmp(&d[b]))
        .expect("three pairs");
    let unique = (0..3).all(|c| c == best || d[c] - d[best] > TIE_TOLERANCE);
    if unique {
        Answer::Pair(PairChoice::from_index(best))
    } else {
        Answer::Invalid
    }
}

/// Worker roster for simulation settings 1 to 3, named `worker1`, `worker2`, ...
pub fn setting_workers(setting: u8) -> Result<Vec<(String, SimWorkerSpec)>> {
    let specs = match setting {
        1 => vec![
            SimWorkerSpec::ExactMatch(Attribute::Color),
            SimWorkerSpec::ExactMatch(Attribute::Number),
        ],
        2 => vec![
            SimWorkerSpec::Distance(Attribute::Color),
            SimWorkerSpec::Distance(Attribute::Number),
        ],
        3 => vec![
            SimWorkerSpec::Distance(Attribute::Color),
            SimWorkerSpec::weighted(0.7, 0.3)?,
            SimWorkerSpec::weighted(0.3, 0.7)?,
            SimWorkerSpec::Distance(Attribute::Number),
        ],
        other => {
            return Err(Error::Argument(format!(
                "unknown simulation setting {other}, expected 1, 2 or 3"
            )))
        }
    };
    Ok(specs
        .into_iter()
        .enumerate()
        .map(|(m, s)| (format!("worker{}", m + 1), s))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crowdsim::labels::ColorId;

    fn l(digit: u8, color: ColorId) -> ItemLabel {
        ItemLabel::new(digit, color).unwrap()
    }

    #[test]
    fn weights_must_be_convex() {
        assert!(SimWorkerSpec::weighted(0.5, 0.5).is_ok());
        assert!(SimWorkerSpec::weighted(0.6, 0.5).is_err());
        assert!(SimWorkerSpec::weighted(-0.1, 1.1).is_err());
        assert!(setting_workers(4).is_err());
    }

    #[test]
    fn three_way_match_is_invalid() {
        let t = [l(1, ColorId::Red), l(2, ColorId::Red), l(3, ColorId::Red)];
        assert_eq!(
            simulate_answer(&SimWorkerSpec::ExactMatch(Attribute::Color), &t),
            Answer::Invalid
        );
    }

    #[test]
    fn permutation_equivariance() {
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let specs = setting_workers(3)
            .unwrap()
            .into_iter()
            .chain(setting_workers(1).unwrap())
            .map(|(_, s)| s)
            .collect::<Vec<_>>();
        for a in 0..100usize {
            for b in (0..100usize).step_by(7) {
                for c in (0..100usize).step_by(11) {
                    let labels = [a, b, c].map(|x| {
                        l((x / 10) as u8, ColorId::from_index((x % 10) as u8).unwrap())
                    });
                    for spec in &specs {
                        let base = simulate_answer(spec, &labels);
                        for p in perms {
                            let permuted = p.map(|s| labels[s]);
                            let got = simulate_answer(spec, &permuted);
                            match base {
                                Answer::Invalid => assert_eq!(got, Answer::Invalid),
                                Answer::Pair(choice) => {
                                    let (x, y, _) = choice.slots();
                                    let Answer::Pair(g) = got else {
                                        panic!("lost answer under permutation")
                                    };
                                    let (gx, gy, _) = g.slots();
                                    let mut want = [x, y];
                                    let mut have = [p[gx], p[gy]];
                                    want.sort();
                                    have.sort();
                                    assert_eq!(want, have);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
