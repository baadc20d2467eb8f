use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The ten hues of a twelve-colour wheel with red-orange and yellow-orange
/// removed, in wheel order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ColorId {
    Red,
    Orange,
    Yellow,
    YellowGreen,
    Green,
    BlueGreen,
    Blue,
    BluePurple,
    Purple,
    RedPurple,
}

impl ColorId {
    pub const ALL: [ColorId; 10] = [
        ColorId::Red,
        ColorId::Orange,
        ColorId::Yellow,
        ColorId::YellowGreen,
        ColorId::Green,
        ColorId::BlueGreen,
        ColorId::Blue,
        ColorId::BluePurple,
        ColorId::Purple,
        ColorId::RedPurple,
    ];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Result<Self> {
        Self::ALL
            .get(i as usize)
            .copied()
            .ok_or_else(|| Error::Argument(format!("color index {i} out of range 0..10")))
    }

    /// Display anchor in RGB.
    pub fn rgb(self) -> [f64; 3] {
        match self {
            ColorId::Red => [1.0, 0.0, 0.0],
            ColorId::Orange => [1.0, 0.5, 0.0],
            ColorId::Yellow => [1.0, 1.0, 0.0],
            ColorId::YellowGreen => [0.5, 1.0, 0.0],
            ColorId::Green => [0.0, 1.0, 0.0],
            ColorId::BlueGreen => [0.0, 0.75, 0.75],
            ColorId::Blue => [0.0, 0.0, 1.0],
            ColorId::BluePurple => [0.29, 0.0, 0.51],
            ColorId::Purple => [0.5, 0.0, 0.5],
            ColorId::RedPurple => [0.78, 0.0, 0.38],
        }
    }
}

impl fmt::Display for ColorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ColorId::Red => "red",
            ColorId::Orange => "orange",
            ColorId::Yellow => "yellow",
            ColorId::YellowGreen => "yellow-green",
            ColorId::Green => "green",
            ColorId::BlueGreen => "blue-green",
            ColorId::Blue => "blue",
            ColorId::BluePurple => "blue-purple",
            ColorId::Purple => "purple",
            ColorId::RedPurple => "red-purple",
        };
        f.write_str(name)
    }
}

/// Ground-truth attributes of one item. Two items belong to the same
/// category when both digit and color agree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ItemLabel {
    pub digit: u8,
    pub color: ColorId,
}

impl ItemLabel {
    pub fn new(digit: u8, color: ColorId) -> Result<Self> {
        if digit > 9 {
            return Err(Error::Argument(format!("digit {digit} out of range 0..10")));
        }
        Ok(Self { digit, color })
    }

    /// Category index in `0..100`.
    pub fn category(&self) -> usize {
        self.digit as usize * 10 + self.color.index() as usize
    }
}

/// Circular distance on the ten-colour wheel.
pub fn color_distance(a: ColorId, b: ColorId) -> u32 {
    let d = (a.index() as i32 - b.index() as i32).unsigned_abs();
    d.min(10 - d)
}

/// `|a - b|`; digits do not wrap.
pub fn digit_distance(a: u8, b: u8) -> u32 {
    (a as i32 - b as i32).unsigned_abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wheel_examples() {
        assert_eq!(color_distance(ColorId::Red, ColorId::YellowGreen), 3);
        assert_eq!(color_distance(ColorId::Red, ColorId::Red), 0);
        assert_eq!(color_distance(ColorId::Red, ColorId::RedPurple), 1);
        assert_eq!(color_distance(ColorId::Red, ColorId::Blue), 4);
    }

    #[test]
    fn wheel_is_a_metric() {
        for a in ColorId::ALL {
            for b in ColorId::ALL {
                let d = color_distance(a, b);
                assert_eq!(d, color_distance(b, a));
                assert_eq!(d == 0, a == b);
                assert!(d <= 5);
                for c in ColorId::ALL {
                    assert!(d <= color_distance(a, c) + color_distance(c, b));
                }
            }
        }
    }

    #[test]
    fn digit_examples() {
        assert_eq!(digit_distance(9, 0), 9);
        assert_eq!(digit_distance(0, 9), 9);
        assert_eq!(digit_distance(5, 5), 0);
        assert_eq!(digit_distance(2, 7), 5);
    }

    #[test]
    fn categories_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for d in 0..10 {
            for c in ColorId::ALL {
                assert!(seen.insert(ItemLabel::new(d, c).unwrap().category()));
            }
        }
        assert_eq!(seen.len(), 100);
        assert!(ItemLabel::new(10, ColorId::Red).is_err());
        assert!(ColorId::from_index(10).is_err());
    }
}
