//! Item storage and the shared triplet file format.
//!
//! A triplet file has one annotation per line, `worker,i,j,k`, meaning the
//! worker judged items `i` and `j` the most similar pair of the three. Blank
//! lines and lines starting with `#` are ignored.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{validate_worker_id, ItemTensor};

pub type ItemId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TripletAnnotation {
    pub worker: String,
    pub i: ItemId,
    pub j: ItemId,
    pub k: ItemId,
}

impl TripletAnnotation {
    pub fn new(worker: impl Into<String>, i: ItemId, j: ItemId, k: ItemId) -> Result<Self> {
        let worker = worker.into();
        validate_worker_id(&worker)?;
        if i == j || i == k || j == k {
            return Err(Error::Argument(format!(
                "triplet items must be distinct, got ({i}, {j}, {k})"
            )));
        }
        Ok(Self { worker, i, j, k })
    }

    pub fn items(&self) -> [ItemId; 3] {
        [self.i, self.j, self.k]
    }
}

impl fmt::Display for TripletAnnotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.worker, self.i, self.j, self.k)
    }
}

/// Parses one triplet line (without the trailing newline).
pub fn parse_triplet_line(line: &str) -> std::result::Result<TripletAnnotation, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    let [worker, i, j, k] = fields[..] else {
        return Err(format!("expected 4 comma-separated fields, found {}", fields.len()));
    };
    let id = |s: &str| s.parse::<ItemId>().map_err(|_| format!("bad item id {s:?}"));
    TripletAnnotation::new(worker, id(i)?, id(j)?, id(k)?).map_err(|e| e.to_string())
}

pub fn parse_triplets(text: &str, origin: &str) -> Result<Vec<TripletAnnotation>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(n, l)| {
            parse_triplet_line(l).map_err(|message| Error::Parse {
                path: origin.to_string(),
                line: n + 1,
                message,
            })
        })
        .collect()
}

pub fn read_triplets(path: &Path) -> Result<Vec<TripletAnnotation>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_triplets(&text, &path.display().to_string())
}

pub fn write_triplets(path: &Path, triplets: &[TripletAnnotation]) -> Result<()> {
    let mut out = Vec::new();
    for t in triplets {
        writeln!(out, "{t}").expect("write to vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Item tensors keyed by id.
#[derive(Debug, Clone, Default)]
pub struct ItemStore {
    items: HashMap<ItemId, ItemTensor>,
}

impl ItemStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: ItemId, item: ItemTensor) {
        self.items.insert(id, item);
    }

    pub fn get(&self, id: ItemId) -> Option<&ItemTensor> {
        self.items.get(&id)
    }

    pub fn resolve(&self, id: ItemId) -> Result<&ItemTensor> {
        self.get(id)
            .ok_or_else(|| Error::Reference(format!("unknown item id {id}")))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Ids in ascending order.
    pub fn ids(&self) -> Vec<ItemId> {
        let mut ids: Vec<_> = self.items.keys().copied().collect();
        ids.sort_unstable();
        ids
    }
}

impl FromIterator<(ItemId, ItemTensor)> for ItemStore {
    fn from_iter<T: IntoIterator<Item = (ItemId, ItemTensor)>>(iter: T) -> Self {
        Self {
            items: iter.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_formats_lines() {
        let t = parse_triplet_line("alice,3,10,7").unwrap();
        assert_eq!(t, TripletAnnotation::new("alice", 3, 10, 7).unwrap());
        assert_eq!(t.to_string(), "alice,3,10,7");
    }

    #[test]
    fn rejects_bad_lines() {
        for bad in ["a,1,2", "a,1,1,2", "a,1,2,x", ",1,2,3", "a b,1,2,3"] {
            assert!(parse_triplet_line(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn parse_reports_line_numbers() {
        let err = parse_triplets("# header\nw,1,2,3\n\nw,1,2\n", "mem").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
    }
}
