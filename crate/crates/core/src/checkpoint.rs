//! Versioned plain-text checkpoints.
//!
//! ```text
//! mvtriplet-checkpoint 1
//! seed 7
//! input 16 16 3
//! hidden 256 64
//! embed_dim 8
//! views 2
//! activation relu
//! meta use_entropy true
//! workers 2
//! worker color
//! worker number
//! tensor trunk.0.weight 256 768
//! 0x1.2p-3 -0x1.8p-4 ...
//! ...
//! end
//! ```
//!
//! Tensor values are row-major hex floats, eight per line, so a round trip
//! is bit-exact. `meta` lines are free-form key/value pairs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::hexfloat;
use crate::model::{Activation, Dense, EncoderConfig, ModelParams, ViewHead, WorkerPrefs};

const MAGIC: &str = "mvtriplet-checkpoint";
const VERSION: u32 = 1;
const VALUES_PER_LINE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config: EncoderConfig,
    pub meta: BTreeMap<String, String>,
}

pub fn save_checkpoint(params: &ModelParams, config: &EncoderConfig, path: &Path) -> Result<()> {
    save_checkpoint_with_meta(params, config, &BTreeMap::new(), path)
}

pub fn save_checkpoint_with_meta(
    params: &ModelParams,
    config: &EncoderConfig,
    meta: &BTreeMap<String, String>,
    path: &Path,
) -> Result<()> {
    let text = encode(params, config, meta)?;
    let tmp = path.with_extension("partial");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, EncoderConfig)> {
    let ck = load_checkpoint_full(path)?;
    Ok((ck.params, ck.config))
}

pub fn load_checkpoint_full(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode(&text)
}

/// Loads a checkpoint and checks that its architecture equals `expected`
/// (the seed is not compared).
pub fn load_checkpoint_for(path: &Path, expected: &EncoderConfig) -> Result<Checkpoint> {
    let ck = load_checkpoint_full(path)?;
    let c = &ck.config;
    let mismatch = |field: &str, found: String, want: String| {
        Err(Error::Shape(format!("{field}: checkpoint has {found}, requested {want}")))
    };
    if c.num_views != expected.num_views {
        return mismatch("views", c.num_views.to_string(), expected.num_views.to_string());
    }
    if c.embed_dim != expected.embed_dim {
        return mismatch("embed_dim", c.embed_dim.to_string(), expected.embed_dim.to_string());
    }
    if c.hidden != expected.hidden {
        return mismatch("hidden", format!("{:?}", c.hidden), format!("{:?}", expected.hidden));
    }
    if (c.height, c.width, c.channels) != (expected.height, expected.width, expected.channels) {
        return mismatch(
            "input",
            format!("{}x{}x{}", c.height, c.width, c.channels),
            format!("{}x{}x{}", expected.height, expected.width, expected.channels),
        );
    }
    if c.activation != expected.activation {
        return mismatch("activation", c.activation.to_string(), expected.activation.to_string());
    }
    Ok(ck)
}

fn encode(
    params: &ModelParams,
    config: &EncoderConfig,
    meta: &BTreeMap<String, String>,
) -> Result<String> {
    params.check_shapes(config)?;
    let mut out = String::new();
    let join = |xs: &[usize]| xs.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
    writeln!(out, "{MAGIC} {VERSION}").unwrap();
    writeln!(out, "seed {}", config.seed).unwrap();
    writeln!(out, "input {} {} {}", config.height, config.width, config.channels).unwrap();
    writeln!(out, "hidden {}", join(&config.hidden)).unwrap();
    writeln!(out, "embed_dim {}", config.embed_dim).unwrap();
    writeln!(out, "views {}", config.num_views).unwrap();
    writeln!(out, "activation {}", config.activation).unwrap();
    for (k, v) in meta {
        if k.is_empty() || k.contains(char::is_whitespace) || v.contains('\n') {
            return Err(Error::Config(format!("invalid checkpoint meta entry {k:?}")));
        }
        writeln!(out, "meta {k} {v}").unwrap();
    }
    writeln!(out, "workers {}", params.workers.len()).unwrap();
    for id in params.workers.ids() {
        writeln!(out, "worker {id}").unwrap();
    }
    for (name, dims, values) in tensor_list(params) {
        writeln!(out, "tensor {name} {}", join(&dims)).unwrap();
        for chunk in values.chunks(VALUES_PER_LINE) {
            let line: Vec<String> = chunk
                .iter()
                .map(|&v| {
                    hexfloat::format(v)
                        .ok_or_else(|| Error::Numeric(format!("non-finite value in {name}")))
                })
                .collect::<Result<_>>()?;
            writeln!(out, "{}", line.join(" ")).unwrap();
        }
    }
    writeln!(out, "end").unwrap();
    Ok(out)
}

type NamedTensor<'a> = (String, Vec<usize>, &'a [f64]);

fn dense_tensors<'a>(name: &str, d: &'a Dense, out: &mut Vec<NamedTensor<'a>>) {
    let (o, i) = d.weight.dim();
    out.push((format!("{name}.weight"), vec![o, i], d.weight.as_slice().expect("standard layout")));
    out.push((format!("{name}.bias"), vec![o], d.bias.as_slice().expect("standard layout")));
}

fn tensor_list(params: &ModelParams) -> Vec<NamedTensor<'_>> {
    let mut list = Vec::new();
    for (l, d) in params.trunk.iter().enumerate() {
        dense_tensors(&format!("trunk.{l}"), d, &mut list);
    }
    for (v, h) in params.heads.iter().enumerate() {
        dense_tensors(&format!("head.{v}.hidden"), &h.hidden, &mut list);
        dense_tensors(&format!("head.{v}.output"), &h.output, &mut list);
    }
    let wp = params.workers.weights();
    list.push((
        "worker_prefs".to_string(),
        vec![wp.nrows(), wp.ncols()],
        wp.as_slice().expect("standard layout"),
    ));
    list
}

struct Lines<'a> {
    inner: std::iter::Peekable<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self, field: &str) -> Result<&'a str> {
        self.inner
            .next()
            .ok_or_else(|| Error::checkpoint(field, "unexpected end of file (truncated checkpoint)"))
    }

    /// Reads `key value...` and returns the value part.
    fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next(key)?;
        match line.split_once(' ') {
            Some((k, rest)) if k == key => Ok(rest),
            _ => Err(Error::checkpoint(key, format!("expected `{key} ...`, found {line:?}"))),
        }
    }

    fn peek_key(&mut self) -> Option<&'a str> {
        self.inner.peek().map(|l| l.split(' ').next().unwrap_or(""))
    }
}

fn parse_num<T: std::str::FromStr>(field: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::checkpoint(field, format!("cannot parse {s:?}")))
}

fn parse_list(field: &str, s: &str) -> Result<Vec<usize>> {
    s.split_whitespace().map(|t| parse_num(field, t)).collect()
}

fn decode(text: &str) -> Result<Checkpoint> {
    let mut lines = Lines {
        inner: text.lines().peekable(),
    };
    let header = lines.next("version")?;
    let version = header
        .strip_prefix(MAGIC)
        .ok_or_else(|| Error::checkpoint("version", "not a checkpoint file"))?;
    let version: u32 = parse_num("version", version)?;
    if version != VERSION {
        return Err(Error::checkpoint(
            "version",
            format!("unsupported format version {version} (this build reads {VERSION})"),
        ));
    }
    let seed = parse_num("seed", lines.keyed("seed")?)?;
    let input = parse_list("input", lines.keyed("input")?)?;
    let [height, width, channels] = input[..] else {
        return Err(Error::checkpoint("input", "expected three dimensions"));
    };
    let hidden = parse_list("hidden", lines.keyed("hidden")?)?;
    let embed_dim = parse_num("embed_dim", lines.keyed("embed_dim")?)?;
    let num_views = parse_num("views", lines.keyed("views")?)?;
    let activation: Activation = lines
        .keyed("activation")?
        .parse()
        .map_err(|e: Error| Error::checkpoint("activation", e.to_string()))?;
    let config = EncoderConfig {
        height,
        width,
        channels,
        hidden,
        embed_dim,
        num_views,
        activation,
        seed,
    };
    config
        .validate()
        .map_err(|e| Error::checkpoint("config", e.to_string()))?;

    let mut meta = BTreeMap::new();
    while lines.peek_key() == Some("meta") {
        let rest = lines.keyed("meta")?;
        let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
        meta.insert(k.to_string(), v.to_string());
    }

    let num_workers: usize = parse_num("workers", lines.keyed("workers")?)?;
    let mut worker_ids = Vec::with_capacity(num_workers);
    for _ in 0..num_workers {
        worker_ids.push(lines.keyed("worker")?.to_string());
    }

    let mut read_tensor = |name: &str, dims: &[usize]| -> Result<Vec<f64>> {
        let got = parse_list(name, lines.keyed("tensor").map_err(|_| {
            Error::checkpoint(name, "missing tensor (truncated or corrupt checkpoint)")
        })?.strip_prefix(name).ok_or_else(|| {
            Error::checkpoint(name, "tensor out of order or missing")
        })?)?;
        if got != dims {
            return Err(Error::Shape(format!("{name}: stored shape {got:?}, expected {dims:?}")));
        }
        let count: usize = dims.iter().product();
        let mut values = Vec::with_capacity(count);
        while values.len() < count {
            let line = lines.next(name)?;
            for tok in line.split_whitespace() {
                let v = hexfloat::parse(tok)
                    .ok_or_else(|| Error::checkpoint(name, format!("bad value {tok:?}")))?;
                values.push(v);
            }
        }
        if values.len() != count {
            return Err(Error::checkpoint(name, "too many values"));
        }
        Ok(values)
    };
    let mut read_dense = |name: &str, inputs: usize, outputs: usize| -> Result<Dense> {
        let w = read_tensor(&format!("{name}.weight"), &[outputs, inputs])?;
        let b = read_tensor(&format!("{name}.bias"), &[outputs])?;
        Ok(Dense {
            weight: Array2::from_shape_vec((outputs, inputs), w).expect("checked length"),
            bias: Array1::from(b),
        })
    };

    let mut fan_in = config.input_len();
    let mut trunk = Vec::new();
    for (l, &width) in config.trunk_widths().iter().enumerate() {
        trunk.push(read_dense(&format!("trunk.{l}"), fan_in, width)?);
        fan_in = width;
    }
    let mut heads = Vec::new();
    for v in 0..config.num_views {
        let hidden = read_dense(&format!("head.{v}.hidden"), fan_in, config.head_width())?;
        let output = read_dense(&format!("head.{v}.output"), config.head_width(), config.embed_dim)?;
        heads.push(ViewHead { hidden, output });
    }
    let prefs = read_tensor("worker_prefs", &[num_workers, num_views])?;
    let workers = WorkerPrefs::new(
        worker_ids,
        Array2::from_shape_vec((num_workers, num_views), prefs).expect("checked length"),
    )
    .map_err(|e| Error::checkpoint("worker", e.to_string()))?;
    match lines.next("end")? {
        "end" => {}
        other => return Err(Error::checkpoint("end", format!("unexpected trailing line {other:?}"))),
    }
    Ok(Checkpoint {
        params: ModelParams {
            trunk,
            heads,
            workers,
        },
        config,
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn sample() -> (ModelParams, EncoderConfig) {
        let config = EncoderConfig {
            height: 3,
            width: 2,
            channels: 3,
            hidden: vec![6, 5, 4],
            embed_dim: 3,
            num_views: 3,
            seed: 5,
            ..EncoderConfig::default()
        };
        let ids = vec!["a".to_string(), "b".to_string()];
        (init_params(&config, &ids).unwrap(), config)
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck");
        let (p, c) = sample();
        let mut meta = BTreeMap::new();
        meta.insert("use_entropy".to_string(), "false".to_string());
        save_checkpoint_with_meta(&p, &c, &meta, &path).unwrap();
        let ck = load_checkpoint_full(&path).unwrap();
        assert_eq!(ck.config, c);
        assert_eq!(ck.meta, meta);
        let bits = |p: &ModelParams| -> Vec<u64> {
            p.network_tensors()
                .into_iter()
                .flatten()
                .chain(p.workers.weights().iter())
                .map(|v| v.to_bits())
                .collect()
        };
        assert_eq!(bits(&ck.params), bits(&p));
        assert_eq!(ck.params.workers.ids(), p.workers.ids());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck");
        let (p, c) = sample();
        save_checkpoint(&p, &c, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        for cut in [text.len() / 3, text.len() / 2, text.len() - 5] {
            fs::write(&path, &text[..cut]).unwrap();
            let err = load_checkpoint(&path).unwrap_err();
            assert!(matches!(err, Error::Checkpoint { .. }), "{err}");
        }
    }

    #[test]
    fn view_count_mismatch_is_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck");
        let (p, c) = sample();
        save_checkpoint(&p, &c, &path).unwrap();
        let want = EncoderConfig {
            num_views: 2,
            ..c
        };
        let err = load_checkpoint_for(&path, &want).unwrap_err();
        assert!(matches!(&err, Error::Shape(m) if m.starts_with("views")), "{err}");
    }

    #[test]
    fn version_mismatch_names_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck");
        let (p, c) = sample();
        save_checkpoint(&p, &c, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap().replacen("checkpoint 1", "checkpoint 9", 1);
        fs::write(&path, text).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(&err, Error::Checkpoint { field, .. } if field == "version"));
    }

    #[test]
    fn inconsistent_tensor_shape_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck");
        let (p, c) = sample();
        save_checkpoint(&p, &c, &path).unwrap();
        let text = fs::read_to_string(&path)
            .unwrap()
            .replacen("tensor trunk.0.weight 6 18", "tensor trunk.0.weight 6 17", 1);
        fs::write(&path, text).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(&err, Error::Shape(m) if m.contains("trunk.0.weight")), "{err}");
    }
}
