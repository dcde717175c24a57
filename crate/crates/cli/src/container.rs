//! Weight container and topology manifest.
//!
//! Container layout (little-endian):
//!
//! ```text
//! magic "NNWC" | version u32 = 1 | layer count u32
//! per layer: kind tag u8
//!            per parameter tensor of that kind (conv/dense: weights, bias):
//!                rank u8 | extents u32 * rank | f32 * product(extents)
//! ```
//!
//! Kind tags: 0 conv, 1 relu, 2 maxpool, 3 flatten, 4 dense, 5 output.
//! Strides, padding and pool windows live in the manifest, a `key=value`
//! text file:
//!
//! ```text
//! version=1
//! input=3x32x32
//! layers=3
//! layer.0=conv out=16 kernel=3x3 stride=1 pad=1
//! layer.1=relu
//! layer.2=maxpool window=2 stride=2
//! ```

use std::fmt::Write as _;
use std::path::Path;

use patchscope_core::network::{LayerKind, LayerPlan, NetworkSpec};
use patchscope_core::Tensor;

use crate::error::{Error, Result};
use crate::{read_file, write_file};

pub const MAGIC: &[u8; 4] = b"NNWC";
pub const VERSION: u32 = 1;

/// One decoded container record.
#[derive(Clone, Debug, PartialEq)]
pub struct ContainerLayer {
    pub kind: LayerKind,
    pub tensors: Vec<Tensor>,
}

pub fn encode(net: &NetworkSpec) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for layer in net.layers() {
        out.push(layer.kind().tag());
        for t in layer.params() {
            out.push(t.shape().len() as u8);
            for &e in t.shape() {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<ContainerLayer>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4) != Some(MAGIC.as_slice()) {
        return Err(Error::Format("bad magic: not an NNWC weight container".into()));
    }
    let version = r.u32().ok_or_else(|| Error::Format("truncated header".into()))?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let count = r.u32().ok_or_else(|| Error::Format("truncated header".into()))? as usize;
    let mut layers = Vec::with_capacity(count.min(4096));
    for layer in 0..count {
        let tag = r.u8().ok_or(Error::Truncated { layer, kind: "tag" })?;
        let kind = LayerKind::from_tag(tag).ok_or_else(|| Error::Format(format!("layer {layer}: unknown kind tag {tag}")))?;
        let truncated = || Error::Truncated {
            layer,
            kind: kind.name(),
        };
        let mut tensors = Vec::new();
        for _ in 0..kind.param_count() {
            let rank = r.u8().ok_or_else(truncated)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32().ok_or_else(truncated)? as usize);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |a, &e| a.checked_mul(e))
                .ok_or_else(|| Error::Format(format!("layer {layer}: tensor extents overflow")))?;
            let raw = r.take(len.checked_mul(4).ok_or_else(truncated)?).ok_or_else(truncated)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push(Tensor::new(shape, data)?);
        }
        layers.push(ContainerLayer { kind, tensors });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after last layer", bytes.len() - r.pos)));
    }
    Ok(layers)
}

/// Topology declared by a manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub input: [usize; 3],
    pub layers: Vec<LayerPlan>,
}

impl Manifest {
    pub fn of(net: &NetworkSpec) -> Self {
        Self {
            input: net.input_shape(),
            layers: net.plans(),
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::from("# patchscope network manifest\n");
        let [c, h, w] = self.input;
        writeln!(s, "version={VERSION}").unwrap();
        writeln!(s, "input={c}x{h}x{w}").unwrap();
        writeln!(s, "layers={}", self.layers.len()).unwrap();
        for (i, p) in self.layers.iter().enumerate() {
            let desc = match *p {
                LayerPlan::Conv {
                    out_channels,
                    kernel: (kh, kw),
                    stride,
                    pad,
                } => format!("conv out={out_channels} kernel={kh}x{kw} stride={stride} pad={pad}"),
                LayerPlan::Relu => "relu".into(),
                LayerPlan::MaxPool { window, stride } => format!("maxpool window={window} stride={stride}"),
                LayerPlan::Flatten => "flatten".into(),
                LayerPlan::Dense { out_features } => format!("dense out={out_features}"),
                LayerPlan::Output { classes } => format!("output classes={classes} squash=softmax"),
            };
            writeln!(s, "layer.{i}={desc}").unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Format(format!("manifest: {msg}"));
        let mut input = None;
        let mut declared = None;
        let mut layers: Vec<Option<LayerPlan>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected key=value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "version" => {
                    if value != VERSION.to_string() {
                        return Err(bad(format!("unsupported version {value}")));
                    }
                }
                "input" => input = Some(parse_dims3(value).ok_or_else(|| bad(format!("bad input shape {value:?}")))?),
                "layers" => declared = Some(value.parse::<usize>().map_err(|_| bad(format!("bad layer count {value:?}")))?),
                _ => {
                    let idx = key
                        .strip_prefix("layer.")
                        .and_then(|i| i.parse::<usize>().ok())
                        .ok_or_else(|| bad(format!("unknown key {key:?}")))?;
                    if idx >= 100_000 {
                        return Err(bad(format!("layer index {idx} too large")));
                    }
                    if layers.len() <= idx {
                        layers.resize(idx + 1, None);
                    }
                    if layers[idx].is_some() {
                        return Err(bad(format!("layer.{idx} declared twice")));
                    }
                    layers[idx] = Some(parse_layer(value).map_err(|m| bad(format!("layer.{idx}: {m}")))?);
                }
            }
        }
        let input = input.ok_or_else(|| bad("missing input".into()))?;
        let layers = layers
            .into_iter()
            .enumerate()
            .map(|(i, l)| l.ok_or_else(|| bad(format!("missing layer.{i}"))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(n) = declared {
            if n != layers.len() {
                return Err(bad(format!("declares {n} layers but lists {}", layers.len())));
            }
        }
        Ok(Self { input, layers })
    }
}

fn parse_dims3(s: &str) -> Option<[usize; 3]> {
    let v: Vec<usize> = s.split('x').map(|p| p.trim().parse().ok()).collect::<Option<_>>()?;
    v.try_into().ok()
}

fn parse_layer(s: &str) -> std::result::Result<LayerPlan, String> {
    let mut parts = s.split_whitespace();
    let kind = parts.next().ok_or("empty layer description")?;
    let mut opts = std::collections::BTreeMap::new();
    for p in parts {
        let (k, v) = p.split_once('=').ok_or_else(|| format!("bad option {p:?}"))?;
        opts.insert(k, v);
    }
    let num = |k: &str| -> std::result::Result<usize, String> {
        opts.get(k)
            .ok_or_else(|| format!("{kind}: missing {k}"))?
            .parse()
            .map_err(|_| format!("{kind}: bad {k}"))
    };
    Ok(match kind {
        "conv" => {
            let (kh, kw) = opts
                .get("kernel")
                .and_then(|k| k.split_once('x'))
                .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
                .ok_or("conv: bad kernel")?;
            LayerPlan::Conv {
                out_channels: num("out")?,
                kernel: (kh, kw),
                stride: num("stride")?,
                pad: num("pad")?,
            }
        }
        "relu" => LayerPlan::Relu,
        "maxpool" => LayerPlan::MaxPool {
            window: num("window")?,
            stride: num("stride")?,
        },
        "flatten" => LayerPlan::Flatten,
        "dense" => LayerPlan::Dense { out_features: num("out")? },
        "output" => {
            if let Some(sq) = opts.get("squash") {
                if *sq != "softmax" {
                    return Err(format!("output: unsupported squash {sq:?}"));
                }
            }
            LayerPlan::Output { classes: num("classes")? }
        }
        other => return Err(format!("unknown layer kind {other:?}")),
    })
}

/// Builds a network from a manifest and container, checking that both
/// describe the same layers and shapes.
pub fn assemble(manifest: &Manifest, layers: Vec<ContainerLayer>) -> Result<NetworkSpec> {
    if manifest.layers.len() != layers.len() {
        return Err(Error::Format(format!(
            "manifest lists {} layers, container holds {}",
            manifest.layers.len(),
            layers.len()
        )));
    }
    let mut params = Vec::new();
    for (i, (plan, rec)) in manifest.layers.iter().zip(layers).enumerate() {
        if plan.kind() != rec.kind {
            return Err(Error::Format(format!(
                "layer {i}: manifest says {}, container says {}",
                plan.kind().name(),
                rec.kind.name()
            )));
        }
        params.extend(rec.tensors);
    }
    NetworkSpec::from_plans(manifest.input, &manifest.layers, params).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_weights(net: &NetworkSpec, path: &Path) -> Result<()> {
    write_file(path, &encode(net))
}

pub fn save_manifest(net: &NetworkSpec, path: &Path) -> Result<()> {
    write_file(path, Manifest::of(net).render().as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Format(format!("{}: manifest is not UTF-8", path.display())))?;
    Manifest::parse(&text)
}

pub fn load_weights(weights: &Path, manifest: &Path) -> Result<NetworkSpec> {
    let m = read_manifest(manifest)?;
    load_with_manifest(weights, &m)
}

pub fn load_with_manifest(weights: &Path, manifest: &Manifest) -> Result<NetworkSpec> {
    assemble(manifest, decode(&read_file(weights)?)?)
}
