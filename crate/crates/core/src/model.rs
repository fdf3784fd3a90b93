//! Network topology, integer parameters and feature-map geometry.
//!
//! A [`NetworkModel`] is loaded from a JSON manifest (see `docs/model-format.md`)
//! and is immutable afterwards. Weight layouts are fixed:
//!
//! * conv: `(out_channels, in_channels, K, K)`, indexed `[o][i][ky][kx]`
//! * dense: `(out_features, in_features)`, where the input feature index of
//!   map position `(x, y, c)` is `(y * W + x) * C + c` (row-major, channel-minor).

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("empty network")]
    EmptyNetwork,
    #[error("unknown layer kind `{0}`")]
    UnknownLayerKind(String),
    #[error("layer {layer}: shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch {
        layer: usize,
        expected: String,
        found: String,
    },
    #[error("layer {layer}: weight {value} not representable in {bits} signed bits")]
    WeightOutOfRange { layer: usize, value: i64, bits: u32 },
    #[error("layer {layer}: {reason}")]
    InvalidLayer { layer: usize, reason: String },
    #[error("layer {layer}: output dimension would be {width}x{height}")]
    NonPositiveOutput { layer: usize, width: i64, height: i64 },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("weight blob: {0}")]
    Blob(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Geometry {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl Geometry {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Geometry {
            width,
            height,
            channels,
        }
    }

    pub fn neurons(&self) -> usize {
        self.width * self.height * self.channels
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.width, self.height, self.channels)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    #[default]
    Valid,
    Same,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        kernel: usize,
        padding: Padding,
        threshold: i32,
    },
    MaxPool {
        window: usize,
    },
    Dense {
        threshold: i32,
    },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "conv",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::Dense { .. } => "dense",
        }
    }

    /// Firing threshold V_t; pooling layers have none.
    pub fn threshold(&self) -> Option<i32> {
        match *self {
            LayerKind::Conv { threshold, .. } | LayerKind::Dense { threshold } => Some(threshold),
            LayerKind::MaxPool { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub input: Geometry,
    /// Output channels for conv/pool, output features for dense.
    pub out_channels: usize,
    pub weights: Vec<i32>,
    pub bias: Vec<i32>,
}

impl LayerSpec {
    pub fn in_channels(&self) -> usize {
        self.input.channels
    }

    /// Expected weight tensor shape.
    pub fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Conv { kernel, .. } => {
                vec![self.out_channels, self.input.channels, kernel, kernel]
            }
            LayerKind::Dense { .. } => vec![self.out_channels, self.input.neurons()],
            LayerKind::MaxPool { .. } => vec![],
        }
    }

    pub fn conv_weight(&self, out_c: usize, in_c: usize, ky: usize, kx: usize) -> i32 {
        let LayerKind::Conv { kernel, .. } = self.kind else {
            panic!("conv_weight on {} layer", self.kind.name());
        };
        self.weights[((out_c * self.input.channels + in_c) * kernel + ky) * kernel + kx]
    }

    pub fn dense_weight(&self, out_f: usize, x: usize, y: usize, c: usize) -> i32 {
        let in_features = self.input.neurons();
        let f = (y * self.input.width + x) * self.input.channels + c;
        self.weights[out_f * in_features + f]
    }

    pub fn bias_for(&self, out_c: usize) -> i32 {
        self.bias.get(out_c).copied().unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn output_geometry(&self) -> Result<Geometry, ModelError> {
        output_geometry(self, 0)
    }
}

/// Output geometry of `layer`; `index` is only used in error messages.
///
/// Conv uses stride 1 with valid (`W-K+1`) or same (`W`) padding, pooling uses
/// non-overlapping windows (`floor(W/n)`), dense is `1x1xF`.
pub fn output_geometry(layer: &LayerSpec, index: usize) -> Result<Geometry, ModelError> {
    let (w, h) = (layer.input.width as i64, layer.input.height as i64);
    let (ow, oh) = match layer.kind {
        LayerKind::Conv { kernel, padding, .. } => match padding {
            Padding::Valid => (w - kernel as i64 + 1, h - kernel as i64 + 1),
            Padding::Same => (w, h),
        },
        LayerKind::MaxPool { window } => (w / window as i64, h / window as i64),
        LayerKind::Dense { .. } => (1, 1),
    };
    if ow <= 0 || oh <= 0 {
        return Err(ModelError::NonPositiveOutput {
            layer: index,
            width: ow,
            height: oh,
        });
    }
    let channels = match layer.kind {
        LayerKind::MaxPool { .. } => layer.input.channels,
        _ => layer.out_channels,
    };
    Ok(Geometry::new(ow as usize, oh as usize, channels))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkModel {
    pub name: String,
    pub input: Geometry,
    pub timesteps: usize,
    pub weight_bits: u32,
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkModel {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    pub fn output_geometries(&self) -> Vec<Geometry> {
        self.layers
            .iter()
            .map(|l| l.output_geometry().expect("validated at load"))
            .collect()
    }

    pub fn output_geometry(&self) -> Geometry {
        *self.output_geometries().last().expect("non-empty network")
    }

    /// Kernel size K used to interlace queues and membrane memories.
    ///
    /// The accelerator is instantiated for a single K, so every conv layer
    /// must share it. Networks without conv layers use K = 1.
    pub fn interlace_factor(&self) -> Result<usize, ModelError> {
        let mut k = None;
        for (i, layer) in self.layers.iter().enumerate() {
            if let LayerKind::Conv { kernel, .. } = layer.kind {
                match k {
                    None => k = Some(kernel),
                    Some(prev) if prev != kernel => {
                        return Err(ModelError::InvalidLayer {
                            layer: i,
                            reason: format!(
                                "kernel size {kernel} differs from {prev}; one accelerator instance supports a single K"
                            ),
                        })
                    }
                    _ => {}
                }
            }
        }
        Ok(k.unwrap_or(1))
    }

    /// Conv/pool/dense counts, e.g. for summaries.
    pub fn layer_counts(&self) -> (usize, usize, usize) {
        let mut counts = (0, 0, 0);
        for l in &self.layers {
            match l.kind {
                LayerKind::Conv { .. } => counts.0 += 1,
                LayerKind::MaxPool { .. } => counts.1 += 1,
                LayerKind::Dense { .. } => counts.2 += 1,
            }
        }
        counts
    }

    /// Compact architecture string in the `32C3-32C3-P3-10C3-10` notation.
    pub fn architecture(&self) -> String {
        self.layers
            .iter()
            .map(|l| match l.kind {
                LayerKind::Conv { kernel, .. } => format!("{}C{}", l.out_channels, kernel),
                LayerKind::MaxPool { window } => format!("P{window}"),
                LayerKind::Dense { .. } => format!("{}", l.out_channels),
            })
            .collect::<Vec<_>>()
            .join("-")
    }

    /// Re-checks every structural invariant.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layers.is_empty() {
            return Err(ModelError::EmptyNetwork);
        }
        if self.timesteps == 0 {
            return Err(ModelError::Invalid("timesteps must be >= 1".into()));
        }
        if !(2..=32).contains(&self.weight_bits) {
            return Err(ModelError::Invalid(format!(
                "weight_bits {} outside [2, 32]",
                self.weight_bits
            )));
        }
        if self.input.neurons() == 0 {
            return Err(ModelError::Invalid("input geometry is empty".into()));
        }
        let (lo, hi) = weight_range(self.weight_bits);
        let mut geom = self.input;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.input != geom {
                return Err(ModelError::ShapeMismatch {
                    layer: i,
                    expected: geom.to_string(),
                    found: layer.input.to_string(),
                });
            }
            match layer.kind {
                LayerKind::Conv { kernel, .. } => {
                    if kernel == 0 || kernel % 2 == 0 {
                        return Err(ModelError::InvalidLayer {
                            layer: i,
                            reason: format!("kernel size {kernel} must be odd and >= 1"),
                        });
                    }
                }
                LayerKind::MaxPool { window } => {
                    if window < 2 {
                        return Err(ModelError::InvalidLayer {
                            layer: i,
                            reason: format!("pool window {window} must be >= 2"),
                        });
                    }
                    if layer.out_channels != layer.input.channels {
                        return Err(ModelError::ShapeMismatch {
                            layer: i,
                            expected: format!("{} channels", layer.input.channels),
                            found: format!("{} channels", layer.out_channels),
                        });
                    }
                }
                LayerKind::Dense { .. } => {}
            }
            if let Some(vt) = layer.kind.threshold() {
                if vt <= 0 {
                    return Err(ModelError::InvalidLayer {
                        layer: i,
                        reason: format!("threshold {vt} must be > 0"),
                    });
                }
            }
            if layer.out_channels == 0 {
                return Err(ModelError::InvalidLayer {
                    layer: i,
                    reason: "zero output channels".into(),
                });
            }
            let expected: usize = layer.weight_shape().iter().product();
            let expected = if layer.weight_shape().is_empty() { 0 } else { expected };
            if layer.weights.len() != expected {
                return Err(ModelError::ShapeMismatch {
                    layer: i,
                    expected: format!("{expected} weights {:?}", layer.weight_shape()),
                    found: format!("{} weights", layer.weights.len()),
                });
            }
            let bias_len = match layer.kind {
                LayerKind::MaxPool { .. } => 0,
                _ => layer.out_channels,
            };
            if !layer.bias.is_empty() && layer.bias.len() != bias_len {
                return Err(ModelError::ShapeMismatch {
                    layer: i,
                    expected: format!("{bias_len} biases"),
                    found: format!("{} biases", layer.bias.len()),
                });
            }
            if let Some(&w) = layer.weights.iter().find(|&&w| (w as i64) < lo || (w as i64) > hi) {
                return Err(ModelError::WeightOutOfRange {
                    layer: i,
                    value: w as i64,
                    bits: self.weight_bits,
                });
            }
            geom = output_geometry(layer, i)?;
        }
        if geom.neurons() != self.num_classes {
            return Err(ModelError::Invalid(format!(
                "num_classes {} does not match final layer size {}",
                self.num_classes,
                geom.neurons()
            )));
        }
        Ok(())
    }

    /// Serialises to a manifest with inline nested weight arrays.
    pub fn to_manifest(&self) -> Value {
        let layers: Vec<Value> = self
            .layers
            .iter()
            .map(|l| match l.kind {
                LayerKind::Conv {
                    kernel,
                    padding,
                    threshold,
                } => json!({
                    "kind": "conv",
                    "in_channels": l.input.channels,
                    "out_channels": l.out_channels,
                    "kernel": kernel,
                    "padding": padding,
                    "threshold": threshold,
                    "weights": nest(&l.weights, &l.weight_shape()),
                    "bias": l.bias,
                }),
                LayerKind::MaxPool { window } => json!({ "kind": "maxpool", "window": window }),
                LayerKind::Dense { threshold } => json!({
                    "kind": "dense",
                    "in_features": l.input.neurons(),
                    "out_features": l.out_channels,
                    "threshold": threshold,
                    "weights": nest(&l.weights, &l.weight_shape()),
                    "bias": l.bias,
                }),
            })
            .collect();
        json!({
            "name": self.name,
            "input": self.input,
            "timesteps": self.timesteps,
            "weight_bits": self.weight_bits,
            "num_classes": self.num_classes,
            "layers": layers,
        })
    }

    pub fn to_manifest_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_manifest()).expect("manifest serialises")
    }
}

/// Inclusive signed range of a `bits`-wide two's-complement integer.
pub fn weight_range(bits: u32) -> (i64, i64) {
    let half = 1i64 << (bits - 1);
    (-half, half - 1)
}

fn nest(flat: &[i32], shape: &[usize]) -> Value {
    match shape {
        [] | [_] => json!(flat),
        [first, rest @ ..] => {
            let stride: usize = rest.iter().product();
            Value::Array(
                (0..*first)
                    .map(|i| nest(&flat[i * stride..(i + 1) * stride], rest))
                    .collect(),
            )
        }
    }
}

#[derive(Deserialize)]
struct ManifestDoc {
    #[serde(default)]
    name: Option<String>,
    input: Geometry,
    timesteps: usize,
    weight_bits: u32,
    #[serde(default)]
    num_classes: Option<usize>,
    layers: Vec<Value>,
}

#[derive(Deserialize)]
struct ConvDoc {
    #[serde(default)]
    in_channels: Option<usize>,
    out_channels: usize,
    kernel: usize,
    #[serde(default)]
    padding: Padding,
    threshold: i32,
    weights: Value,
    #[serde(default)]
    bias: Option<Value>,
}

#[derive(Deserialize)]
struct PoolDoc {
    window: usize,
}

#[derive(Deserialize)]
struct DenseDoc {
    #[serde(default)]
    in_features: Option<usize>,
    out_features: usize,
    threshold: i32,
    weights: Value,
    #[serde(default)]
    bias: Option<Value>,
}

/// Parses and validates a manifest. `blob` supplies the sidecar weight file
/// when tensors are given as `{"offset": bytes, "length": elements}`.
pub fn load_model(manifest: &str, blob: Option<&[u8]>) -> Result<NetworkModel, ModelError> {
    let doc: ManifestDoc = serde_json::from_str(manifest)?;
    if doc.layers.is_empty() {
        return Err(ModelError::EmptyNetwork);
    }
    if !(2..=32).contains(&doc.weight_bits) {
        return Err(ModelError::Invalid(format!(
            "weight_bits {} outside [2, 32]",
            doc.weight_bits
        )));
    }
    let reader = TensorReader {
        blob,
        weight_bits: doc.weight_bits,
    };
    let mut geom = doc.input;
    let mut layers = Vec::with_capacity(doc.layers.len());
    for (i, raw) in doc.layers.iter().enumerate() {
        let kind = raw
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| ModelError::Invalid(format!("layer {i} has no `kind`")))?;
        let layer = match kind {
            "conv" => {
                let d: ConvDoc = serde_json::from_value(raw.clone())?;
                if let Some(ic) = d.in_channels {
                    if ic != geom.channels {
                        return Err(ModelError::ShapeMismatch {
                            layer: i,
                            expected: format!("{} input channels", geom.channels),
                            found: format!("{ic} input channels"),
                        });
                    }
                }
                let shape = [d.out_channels, geom.channels, d.kernel, d.kernel];
                LayerSpec {
                    kind: LayerKind::Conv {
                        kernel: d.kernel,
                        padding: d.padding,
                        threshold: d.threshold,
                    },
                    input: geom,
                    out_channels: d.out_channels,
                    weights: reader.read(i, &d.weights, &shape)?,
                    bias: reader.read_bias(i, d.bias.as_ref(), d.out_channels)?,
                }
            }
            "maxpool" | "pool" => {
                let d: PoolDoc = serde_json::from_value(raw.clone())?;
                LayerSpec {
                    kind: LayerKind::MaxPool { window: d.window },
                    input: geom,
                    out_channels: geom.channels,
                    weights: Vec::new(),
                    bias: Vec::new(),
                }
            }
            "dense" => {
                let d: DenseDoc = serde_json::from_value(raw.clone())?;
                if let Some(f) = d.in_features {
                    if f != geom.neurons() {
                        return Err(ModelError::ShapeMismatch {
                            layer: i,
                            expected: format!("{} input features", geom.neurons()),
                            found: format!("{f} input features"),
                        });
                    }
                }
                let shape = [d.out_features, geom.neurons()];
                LayerSpec {
                    kind: LayerKind::Dense { threshold: d.threshold },
                    input: geom,
                    out_channels: d.out_features,
                    weights: reader.read(i, &d.weights, &shape)?,
                    bias: reader.read_bias(i, d.bias.as_ref(), d.out_features)?,
                }
            }
            other => return Err(ModelError::UnknownLayerKind(other.to_string())),
        };
        geom = output_geometry(&layer, i)?;
        layers.push(layer);
    }
    let model = NetworkModel {
        name: doc.name.unwrap_or_else(|| "unnamed".into()),
        input: doc.input,
        timesteps: doc.timesteps,
        weight_bits: doc.weight_bits,
        num_classes: doc.num_classes.unwrap_or(geom.neurons()),
        layers,
    };
    model.validate()?;
    Ok(model)
}

/// Loads a manifest from disk, resolving its `blob` relative to the manifest.
pub fn load_model_file(path: impl AsRef<Path>) -> Result<NetworkModel, ModelError> {
    let path = path.as_ref();
    let io_err = |p: &Path| {
        let p = p.display().to_string();
        move |source| ModelError::Io { path: p, source }
    };
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let blob_name = serde_json::from_str::<Value>(&text)?
        .get("blob")
        .and_then(Value::as_str)
        .map(str::to_owned);
    let blob = match blob_name {
        Some(name) => {
            let blob_path = path.parent().unwrap_or(Path::new(".")).join(name);
            Some(std::fs::read(&blob_path).map_err(io_err(&blob_path))?)
        }
        None => None,
    };
    load_model(&text, blob.as_deref())
}

struct TensorReader<'a> {
    blob: Option<&'a [u8]>,
    weight_bits: u32,
}

impl TensorReader<'_> {
    fn read(&self, layer: usize, value: &Value, shape: &[usize]) -> Result<Vec<i32>, ModelError> {
        let expected: usize = shape.iter().product();
        let flat = match value {
            Value::Array(_) => {
                let mut out = Vec::with_capacity(expected);
                flatten_nested(layer, value, shape, &mut out)?;
                out
            }
            Value::Object(map) => {
                let field = |name: &str| {
                    map.get(name)
                        .and_then(Value::as_u64)
                        .ok_or_else(|| ModelError::Blob(format!("layer {layer}: blob reference lacks `{name}`")))
                };
                let offset = field("offset")? as usize;
                let length = field("length")? as usize;
                if length != expected {
                    return Err(ModelError::ShapeMismatch {
                        layer,
                        expected: format!("{expected} elements {shape:?}"),
                        found: format!("{length} elements"),
                    });
                }
                self.read_blob(layer, offset, length)?
            }
            _ => {
                return Err(ModelError::Invalid(format!(
                    "layer {layer}: tensor must be an array or a blob reference"
                )))
            }
        };
        flat.into_iter()
            .map(|v| {
                i32::try_from(v).map_err(|_| ModelError::WeightOutOfRange {
                    layer,
                    value: v,
                    bits: self.weight_bits,
                })
            })
            .collect()
    }

    fn read_bias(&self, layer: usize, value: Option<&Value>, len: usize) -> Result<Vec<i32>, ModelError> {
        match value {
            None | Some(Value::Null) => Ok(vec![0; len]),
            Some(v) => self.read(layer, v, &[len]),
        }
    }

    fn read_blob(&self, layer: usize, offset: usize, length: usize) -> Result<Vec<i64>, ModelError> {
        let blob = self
            .blob
            .ok_or_else(|| ModelError::Blob(format!("layer {layer} references a blob but none was given")))?;
        let width = blob_element_bytes(self.weight_bits);
        let end = offset + length * width;
        let bytes = blob.get(offset..end).ok_or_else(|| {
            ModelError::Blob(format!(
                "layer {layer}: range {offset}..{end} exceeds blob of {} bytes",
                blob.len()
            ))
        })?;
        Ok(bytes
            .chunks_exact(width)
            .map(|c| match width {
                1 => c[0] as i8 as i64,
                2 => i16::from_le_bytes([c[0], c[1]]) as i64,
                _ => i32::from_le_bytes([c[0], c[1], c[2], c[3]]) as i64,
            })
            .collect())
    }
}

/// Bytes per little-endian element in a sidecar blob.
pub fn blob_element_bytes(weight_bits: u32) -> usize {
    match weight_bits {
        0..=8 => 1,
        9..=16 => 2,
        _ => 4,
    }
}

fn flatten_nested(layer: usize, value: &Value, shape: &[usize], out: &mut Vec<i64>) -> Result<(), ModelError> {
    let mismatch = |found: String| ModelError::ShapeMismatch {
        layer,
        expected: format!("tensor dims {shape:?}"),
        found,
    };
    match shape {
        [] => {
            let v = value
                .as_i64()
                .ok_or_else(|| mismatch(format!("non-integer element {value}")))?;
            out.push(v);
            Ok(())
        }
        [n, rest @ ..] => {
            let arr = value
                .as_array()
                .ok_or_else(|| mismatch(format!("scalar where a list of {n} was expected")))?;
            if arr.len() != *n {
                return Err(mismatch(format!("a list of {} where {n} was expected", arr.len())));
            }
            arr.iter().try_for_each(|v| flatten_nested(layer, v, rest, out))
        }
    }
}

/// Binary occupancy grid of one timestep: `bits[(c * H + y) * W + x]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpikePlane {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    bits: Vec<bool>,
}

/// One [`SpikePlane`] per algorithmic timestep.
pub type SpikeTrain = Vec<SpikePlane>;

impl SpikePlane {
    pub fn new(geom: Geometry) -> Self {
        SpikePlane {
            width: geom.width,
            height: geom.height,
            channels: geom.channels,
            bits: vec![false; geom.neurons()],
        }
    }

    pub fn geometry(&self) -> Geometry {
        Geometry::new(self.width, self.height, self.channels)
    }

    #[inline]
    fn index(&self, x: usize, y: usize, c: usize) -> usize {
        debug_assert!(x < self.width && y < self.height && c < self.channels);
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> bool {
        self.bits[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, spike: bool) {
        let i = self.index(x, y, c);
        self.bits[i] = spike;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Spike coordinates `(x, y, c)` in channel, row, column order.
    pub fn spikes(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let (w, h) = (self.width, self.height);
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % w, (i / w) % h, i / (w * h)))
    }
}
