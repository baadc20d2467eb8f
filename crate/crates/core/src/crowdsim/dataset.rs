//! Colored-digit corpus: manifest, deterministic rendering and the manifest
//! text format.
//!
//! Manifest files start with `#` header lines carrying the generation
//! parameters, followed by one `id,digit,color,split` record per item.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::labels::{ColorId, ItemLabel};
use crate::data::{ItemId, ItemStore};
use crate::error::{Error, Result};
use crate::model::ItemTensor;
use crate::rng::{seeded, STREAM_RENDER};

const MANIFEST_MAGIC: &str = "mvtriplet-manifest 1";

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;

const GLYPHS: [[&str; GLYPH_H]; 10] = [
    ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
    ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
];

/// Whether glyph cell `(row, col)` of `digit` is lit.
pub fn glyph_bit(digit: u8, row: usize, col: usize) -> bool {
    GLYPHS[digit as usize][row].as_bytes()[col] == b'1'
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Argument(format!(
                "unknown split {other:?}, expected train or test"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderParams {
    pub height: usize,
    pub width: usize,
    pub noise_sigma: f64,
    /// Maximum glyph offset in pixels along each axis.
    pub jitter: usize,
    /// Side of the square pixel block drawn for each glyph cell.
    pub scale: usize,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            noise_sigma: 0.02,
            jitter: 1,
            scale: 2,
        }
    }
}

impl RenderParams {
    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 {
            return Err(Error::Config("glyph scale must be at least 1".into()));
        }
        let (gh, gw) = (GLYPH_H * self.scale, GLYPH_W * self.scale);
        if self.height < gh + 2 * self.jitter || self.width < gw + 2 * self.jitter {
            return Err(Error::Config(format!(
                "image {}x{} too small for a {gw}x{gh} glyph with jitter {}",
                self.height, self.width, self.jitter
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise sigma must be finite and nonnegative, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ManifestItem {
    pub id: ItemId,
    pub label: ItemLabel,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub render: RenderParams,
    items: Vec<ManifestItem>,
    index: HashMap<ItemId, usize>,
}

impl DatasetManifest {
    pub fn new(seed: u64, render: RenderParams, items: Vec<ManifestItem>) -> Result<Self> {
        render.validate()?;
        let mut index = HashMap::with_capacity(items.len());
        for (n, item) in items.iter().enumerate() {
            if index.insert(item.id, n).is_some() {
                return Err(Error::Argument(format!("duplicate item id {}", item.id)));
            }
        }
        Ok(Self {
            seed,
            render,
            items,
            index,
        })
    }

    pub fn items(&self) -> &[ManifestItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: ItemId) -> Option<&ManifestItem> {
        self.index.get(&id).map(|&n| &self.items[n])
    }

    pub fn label(&self, id: ItemId) -> Result<ItemLabel> {
        self.get(id)
            .map(|m| m.label)
            .ok_or_else(|| Error::Reference(format!("item {id} is not in the manifest")))
    }

    pub fn split_items(&self, split: Split) -> Vec<ManifestItem> {
        self.items.iter().filter(|m| m.split == split).copied().collect()
    }

    pub fn render(&self, id: ItemId) -> Result<ItemTensor> {
        let item = self
            .get(id)
            .ok_or_else(|| Error::Reference(format!("item {id} is not in the manifest")))?;
        render_item(self.seed, &self.render, item)
    }

    /// Renders every item, optionally restricted to one split.
    pub fn render_all(&self, split: Option<Split>) -> Result<ItemStore> {
        let mut store = ItemStore::default();
        for item in &self.items {
            if split.is_none_or(|s| s == item.split) {
                store.insert(item.id, render_item(self.seed, &self.render, item)?);
            }
        }
        Ok(store)
    }

    pub fn to_text(&self) -> String {
        let r = &self.render;
        let mut out = format!(
            "# {MANIFEST_MAGIC}\n# seed {}\n# image {} {}\n# noise {}\n# jitter {}\n# scale {}\n",
            self.seed, r.height, r.width, r.noise_sigma, r.jitter, r.scale
        );
        for m in &self.items {
            out.push_str(&format!(
                "{},{},{},{}\n",
                m.id,
                m.label.digit,
                m.label.color.index(),
                m.split
            ));
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let mut seed = None;
        let mut render = RenderParams::default();
        let mut items = Vec::new();
        let mut saw_magic = false;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('#') {
                let header = header.trim();
                if header == MANIFEST_MAGIC {
                    saw_magic = true;
                    continue;
                }
                let mut parts = header.split_whitespace();
                let key = parts.next().unwrap_or("");
                let values: Vec<&str> = parts.collect();
                let bad = |what: &str| err(n + 1, format!("bad {what} header"));
                match (key, values.as_slice()) {
                    ("seed", [v]) => seed = Some(v.parse().map_err(|_| bad("seed"))?),
                    ("image", [h, w]) => {
                        render.height = h.parse().map_err(|_| bad("image"))?;
                        render.width = w.parse().map_err(|_| bad("image"))?;
                    }
                    ("noise", [v]) => render.noise_sigma = v.parse().map_err(|_| bad("noise"))?,
                    ("jitter", [v]) => render.jitter = v.parse().map_err(|_| bad("jitter"))?,
                    ("scale", [v]) => render.scale = v.parse().map_err(|_| bad("scale"))?,
                    // Other comments are free text.
                    _ => {}
                }
                continue;
            }
            if !saw_magic {
                return Err(err(n + 1, format!("missing `# {MANIFEST_MAGIC}` header")));
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [id, digit, color, split] = fields[..] else {
                return Err(err(
                    n + 1,
                    format!("expected 4 comma-separated fields, found {}", fields.len()),
                ));
            };
            let id: ItemId = id.parse().map_err(|_| err(n + 1, format!("bad item id {id:?}")))?;
            let digit: u8 = digit
                .parse()
                .map_err(|_| err(n + 1, format!("bad digit {digit:?}")))?;
            let color: u8 = color
                .parse()
                .map_err(|_| err(n + 1, format!("bad color index {color:?}")))?;
            let label = ColorId::from_index(color)
                .and_then(|c| ItemLabel::new(digit, c))
                .map_err(|e| err(n + 1, e.to_string()))?;
            let split = split.parse().map_err(|e: Error| err(n + 1, e.to_string()))?;
            items.push(ManifestItem { id, label, split });
        }
        if !saw_magic {
            return Err(err(0, format!("missing `# {MANIFEST_MAGIC}` header")));
        }
        let seed = seed.ok_or_else(|| err(0, "missing `# seed` header".into()))?;
        Self::new(seed, render, items)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Deterministic rendering of one item from `(seed, id)`.
pub fn render_item(seed: u64, params: &RenderParams, item: &ManifestItem) -> Result<ItemTensor> {
    params.validate()?;
    let (h, w) = (params.height, params.width);
    let mut rng = seeded(seed, STREAM_RENDER | item.id as u64);
    let j = params.jitter as i64;
    let dy = rng.random_range(-j..=j);
    let dx = rng.random_range(-j..=j);
    let s = params.scale as i64;
    let (gh, gw) = (GLYPH_H as i64 * s, GLYPH_W as i64 * s);
    let top = (h as i64 - gh) / 2 + dy;
    let left = (w as i64 - gw) / 2 + dx;
    let rgb = item.label.color.rgb();
    let noise = Normal::new(0.0, params.noise_sigma)
        .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
    let mut pixels = Vec::with_capacity(h * w * 3);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let (gy, gx) = (y - top, x - left);
            let lit = (0..gh).contains(&gy)
                && (0..gw).contains(&gx)
                && glyph_bit(item.label.digit, (gy / s) as usize, (gx / s) as usize);
            for base in rgb {
                let v = if lit { base } else { 0.0 };
                pixels.push((v + noise.sample(&mut rng)).clamp(0.0, 1.0));
            }
        }
    }
    ItemTensor::new(h, w, 3, pixels)
}

/// Builds a corpus with `items_per_category` items for every (digit, color)
/// pair in each split. Ids are assigned sequentially, train split first.
pub fn generate_dataset(
    seed: u64,
    items_per_category: usize,
    render: RenderParams,
) -> Result<DatasetManifest> {
    if items_per_category == 0 {
        return Err(Error::Argument("items per category must be at least 1".into()));
    }
    let mut items = Vec::with_capacity(200 * items_per_category);
    let mut next: ItemId = 0;
    for split in [Split::Train, Split::Test] {
        for digit in 0..10 {
            for color in ColorId::ALL {
                for _ in 0..items_per_category {
                    items.push(ManifestItem {
                        id: next,
                        label: ItemLabel::new(digit, color)?,
                        split,
                    });
                    next += 1;
                }
            }
        }
    }
    DatasetManifest::new(seed, render, items)
}

/// PNG encoding of an item (values quantised to 8 bits).
pub fn encode_png(item: &ItemTensor) -> Result<Vec<u8>> {
    if item.channels() != 3 {
        return Err(Error::Shape(format!(
            "PNG export needs 3 channels, item has {}",
            item.channels()
        )));
    }
    let bytes: Vec<u8> = item
        .pixels()
        .iter()
        .map(|v| (v * 255.0).round() as u8)
        .collect();
    let img = image::RgbImage::from_raw(item.width() as u32, item.height() as u32, bytes)
        .ok_or_else(|| Error::Shape("pixel buffer does not match image size".into()))?;
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn write_png(item: &ItemTensor, path: &Path) -> Result<()> {
    let bytes = encode_png(item)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glyphs_are_well_formed() {
        for g in GLYPHS {
            for row in g {
                assert_eq!(row.len(), GLYPH_W);
                assert!(row.bytes().all(|b| b == b'0' || b == b'1'));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for g in GLYPHS {
            assert!(seen.insert(g));
        }
    }

    #[test]
    fn counts_per_split() {
        let m = generate_dataset(1, 2, RenderParams::default()).unwrap();
        assert_eq!(m.len(), 400);
        for split in [Split::Train, Split::Test] {
            let items = m.split_items(split);
            assert_eq!(items.len(), 200);
            for d in 0..10 {
                assert_eq!(items.iter().filter(|i| i.label.digit == d).count(), 20);
            }
            for c in ColorId::ALL {
                assert_eq!(items.iter().filter(|i| i.label.color == c).count(), 20);
            }
        }
        assert!(generate_dataset(1, 0, RenderParams::default()).is_err());
    }

    #[test]
    fn rendering_is_deterministic_and_seed_dependent() {
        let m = generate_dataset(3, 1, RenderParams::default()).unwrap();
        let a = m.render(17).unwrap();
        let b = m.render(17).unwrap();
        assert_eq!(a, b);
        let other = generate_dataset(4, 1, RenderParams::default()).unwrap();
        assert_ne!(a, other.render(17).unwrap());
        assert!(m.render(10_000).is_err());
    }

    #[test]
    fn noiseless_render_is_exact_glyph() {
        let render = RenderParams {
            noise_sigma: 0.0,
            jitter: 0,
            scale: 1,
            ..RenderParams::default()
        };
        let item = ManifestItem {
            id: 0,
            label: ItemLabel::new(1, ColorId::Blue).unwrap(),
            split: Split::Train,
        };
        let t = render_item(0, &render, &item).unwrap();
        // "1" has 10 lit cells; top-left corner at (4, 5).
        let lit: usize = (0..16)
            .flat_map(|y| (0..16).map(move |x| (y, x)))
            .filter(|&(y, x)| t.get(y, x, 2) == 1.0)
            .count();
        assert_eq!(lit, 10);
        assert_eq!(t.get(4, 7, 2), 1.0);
        assert_eq!(t.get(4, 7, 0), 0.0);
        assert_eq!(t.get(0, 0, 2), 0.0);
    }

    #[test]
    fn manifest_round_trip() {
        let m = generate_dataset(9, 1, RenderParams::default()).unwrap();
        let back = DatasetManifest::parse(&m.to_text(), "mem").unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn manifest_errors_carry_line_numbers() {
        let text = "# mvtriplet-manifest 1\n# seed 1\n0,1,2,train\n1,1,12,train\n";
        match DatasetManifest::parse(text, "m.txt") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        let dup = "# mvtriplet-manifest 1\n# seed 1\n0,1,2,train\n0,1,3,test\n";
        assert!(DatasetManifest::parse(dup, "m.txt").is_err());
        assert!(DatasetManifest::parse("0,1,2,train\n", "m.txt").is_err());
    }

    #[test]
    fn png_encodes() {
        let m = generate_dataset(1, 1, RenderParams::default()).unwrap();
        let png = encode_png(&m.render(0).unwrap()).unwrap();
        assert_eq!(&png[1..4], b"PNG");
    }
}
