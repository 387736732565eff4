//! Network description: neuron models, layer chain, weights and the
//! structural quantities (neuron count, fan-in, recurrent fan-in) every
//! energy estimate is built on.

pub mod builder;
pub mod manifest;
pub mod weights;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use builder::{NetworkBuilder, WeightInit};
pub use manifest::{parse_network, serialize_network};
pub use weights::WeightStore;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetSpecError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("shape mismatch in layer '{layer}': {detail}")]
    ShapeMismatch { layer: String, detail: String },
    #[error("mask violation in layer '{layer}': neuron {neuron} has nonzero weight for input {input} outside its receptive field")]
    MaskViolation {
        layer: String,
        neuron: usize,
        input: usize,
    },
    #[error("unknown reference '{reference}' in layer '{layer}'")]
    UnknownRef { layer: String, reference: String },
}

impl NetSpecError {
    fn shape(layer: &LayerSpec, detail: impl Into<String>) -> Self {
        NetSpecError::ShapeMismatch {
            layer: layer.name.clone(),
            detail: detail.into(),
        }
    }

    fn schema(layer: &LayerSpec, detail: impl fmt::Display) -> Self {
        NetSpecError::Schema(format!("layer '{}': {}", layer.name, detail))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NeuronKind {
    #[serde(rename = "lif")]
    Lif,
    #[serde(rename = "ifl")]
    Ifl,
    #[serde(rename = "ann_relu")]
    AnnRelu,
}

impl NeuronKind {
    pub fn is_spiking(self) -> bool {
        !matches!(self, NeuronKind::AnnRelu)
    }

    pub fn label(self) -> &'static str {
        match self {
            NeuronKind::Lif => "lif",
            NeuronKind::Ifl => "ifl",
            NeuronKind::AnnRelu => "ann_relu",
        }
    }
}

fn default_dt() -> f64 {
    1e-3
}

fn default_v_th() -> f64 {
    1.0
}

/// Dynamics of one layer's neurons.
///
/// For IFL the weights and `bias` are the time-scaled quantities
/// (`w·dt`, `b·dt`); `tau_syn` and `tau_mem` are only read for LIF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronModelSpec {
    pub kind: NeuronKind,
    #[serde(default)]
    pub tau_syn: f64,
    #[serde(default)]
    pub tau_mem: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_v_th")]
    pub v_th: f64,
    #[serde(default)]
    pub bias: f64,
    #[serde(default)]
    pub spike_once: bool,
}

impl NeuronModelSpec {
    pub fn lif(tau_syn: f64, tau_mem: f64, dt: f64, v_th: f64) -> Self {
        NeuronModelSpec {
            kind: NeuronKind::Lif,
            tau_syn,
            tau_mem,
            dt,
            v_th,
            bias: 0.0,
            spike_once: false,
        }
    }

    pub fn ifl(v_th: f64) -> Self {
        NeuronModelSpec {
            kind: NeuronKind::Ifl,
            tau_syn: 0.0,
            tau_mem: 0.0,
            dt: default_dt(),
            v_th,
            bias: 0.0,
            spike_once: false,
        }
    }

    pub fn ann_relu() -> Self {
        NeuronModelSpec {
            kind: NeuronKind::AnnRelu,
            tau_syn: 0.0,
            tau_mem: 0.0,
            dt: default_dt(),
            v_th: default_v_th(),
            bias: 0.0,
            spike_once: false,
        }
    }

    pub fn with_bias(mut self, bias: f64) -> Self {
        self.bias = bias;
        self
    }

    pub fn with_spike_once(mut self, spike_once: bool) -> Self {
        self.spike_once = spike_once;
        self
    }

    /// `dt / tau_syn`.
    pub fn syn_decay(&self) -> f64 {
        self.dt / self.tau_syn
    }

    /// `dt / tau_mem`.
    pub fn mem_decay(&self) -> f64 {
        self.dt / self.tau_mem
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(format!("dt must be positive, got {}", self.dt));
        }
        if !self.bias.is_finite() {
            return Err("bias must be finite".into());
        }
        match self.kind {
            NeuronKind::Lif => {
                if !(self.tau_syn > 0.0) || !(self.tau_mem > 0.0) {
                    return Err("LIF requires tau_syn > 0 and tau_mem > 0".into());
                }
                if !(self.dt < self.tau_syn) || !(self.dt < self.tau_mem) {
                    return Err(format!(
                        "LIF requires dt < tau_syn and dt < tau_mem (dt={}, tau_syn={}, tau_mem={})",
                        self.dt, self.tau_syn, self.tau_mem
                    ));
                }
            }
            NeuronKind::Ifl => {}
            NeuronKind::AnnRelu => {
                if self.spike_once {
                    return Err("spike_once is only valid for spiking neurons".into());
                }
                return Ok(());
            }
        }
        if !(self.v_th > 0.0) || !self.v_th.is_finite() {
            return Err(format!("v_th must be positive, got {}", self.v_th));
        }
        Ok(())
    }
}

/// Tensor shape of a layer's input or output: `(N,)` or `(C, H, W)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub enum Shape {
    Flat(usize),
    Spatial(usize, usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Flat(n) => n,
            Shape::Spatial(c, h, w) => c * h * w,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spatial(&self) -> Option<(usize, usize, usize)> {
        match *self {
            Shape::Spatial(c, h, w) => Some((c, h, w)),
            Shape::Flat(_) => None,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        (*self).into()
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = String;

    fn try_from(v: Vec<usize>) -> Result<Self, Self::Error> {
        match v.as_slice() {
            [n] => Ok(Shape::Flat(*n)),
            [c, h, w] => Ok(Shape::Spatial(*c, *h, *w)),
            other => Err(format!("shape must have 1 or 3 dims, got {:?}", other)),
        }
    }
}

impl From<Shape> for Vec<usize> {
    fn from(s: Shape) -> Self {
        match s {
            Shape::Flat(n) => vec![n],
            Shape::Spatial(c, h, w) => vec![c, h, w],
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Flat(n) => write!(f, "({})", n),
            Shape::Spatial(c, h, w) => write!(f, "({},{},{})", c, h, w),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    #[default]
    Valid,
    Zero(usize),
}

impl Padding {
    pub fn amount(self) -> usize {
        match self {
            Padding::Valid => 0,
            Padding::Zero(p) => p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Dense,
    Conv2d,
    LocallyConnected,
    RecurrentDense,
    MaxPool2d,
    Flatten,
}

impl LayerKind {
    /// Layers that own neurons with state (and therefore weights).
    pub fn has_neurons(self) -> bool {
        !matches!(self, LayerKind::MaxPool2d | LayerKind::Flatten)
    }

    pub fn label(self) -> &'static str {
        match self {
            LayerKind::Dense => "dense",
            LayerKind::Conv2d => "conv2d",
            LayerKind::LocallyConnected => "locallyconnected",
            LayerKind::RecurrentDense => "recurrentdense",
            LayerKind::MaxPool2d => "maxpool2d",
            LayerKind::Flatten => "flatten",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coding {
    Rate,
    Roc,
}

fn default_stride() -> (usize, usize) {
    (1, 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub input_shape: Shape,
    pub output_shape: Shape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<(usize, usize)>,
    #[serde(default = "default_stride")]
    pub stride: (usize, usize),
    #[serde(default)]
    pub padding: Padding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neuron_model: Option<NeuronModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recurrent_weights_ref: Option<String>,
}

/// Per-layer structural counts: neurons `n_n`, fan-in `n_s`, recurrent
/// fan-in `n_sr`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LayerCounts {
    pub n_n: usize,
    pub n_s: usize,
    pub n_sr: usize,
}

/// Receptive-field layout of a locally connected layer: the input plane is
/// tiled by `grid_h × grid_w` windows and each window feeds `units` neurons.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub grid_h: usize,
    pub grid_w: usize,
    pub units: usize,
}

impl LocalGeometry {
    /// Window (row, col) feeding output neuron `neuron`.
    pub fn window_of(&self, neuron: usize) -> (usize, usize) {
        let patch = neuron / self.units;
        (patch / self.grid_w, patch % self.grid_w)
    }

    pub fn contains(&self, neuron: usize, input: usize) -> bool {
        let (gy, gx) = self.window_of(neuron);
        let plane = self.height * self.width;
        let y = (input % plane) / self.width;
        let x = input % self.width;
        let y0 = gy * self.stride.0;
        let x0 = gx * self.stride.1;
        y >= y0 && y < y0 + self.kernel.0 && x >= x0 && x < x0 + self.kernel.1
    }

    pub fn field_size(&self) -> usize {
        self.channels * self.kernel.0 * self.kernel.1
    }
}

/// Output length of a strided window along one axis, or `None` when the
/// (padded) input is shorter than the kernel.
pub fn window_out(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || input + 2 * pad < kernel {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

/// Number of kernel taps of all output positions that land inside the
/// unpadded input, summed along one axis.
fn realized_taps_1d(input: usize, out: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (0..out)
        .map(|o| {
            (0..kernel)
                .filter(|&k| {
                    let pos = (o * stride + k) as isize - pad as isize;
                    pos >= 0 && (pos as usize) < input
                })
                .count()
        })
        .sum()
}

impl LayerSpec {
    pub fn model(&self) -> Option<&NeuronModelSpec> {
        self.neuron_model.as_ref()
    }

    pub fn neuron_kind(&self) -> Option<NeuronKind> {
        self.neuron_model.as_ref().map(|m| m.kind)
    }

    pub fn kernel_or_unit(&self) -> (usize, usize) {
        self.kernel.unwrap_or((1, 1))
    }

    /// Structural counts following the layer-type rules: dense fan-in is the
    /// input length, convolution fan-in is `k_h·k_w·C_in`, a locally
    /// connected neuron sees its receptive field, pooling sees its window,
    /// and flatten has no synapses.
    pub fn counts(&self) -> LayerCounts {
        let n_out = self.output_shape.len();
        let (kh, kw) = self.kernel_or_unit();
        match self.kind {
            LayerKind::Dense => LayerCounts {
                n_n: n_out,
                n_s: self.input_shape.len(),
                n_sr: 0,
            },
            LayerKind::RecurrentDense => LayerCounts {
                n_n: n_out,
                n_s: self.input_shape.len(),
                n_sr: n_out,
            },
            LayerKind::Conv2d => {
                let c_in = self.input_shape.spatial().map(|s| s.0).unwrap_or(0);
                LayerCounts {
                    n_n: n_out,
                    n_s: kh * kw * c_in,
                    n_sr: 0,
                }
            }
            LayerKind::LocallyConnected => {
                let c_in = self.input_shape.spatial().map(|s| s.0).unwrap_or(0);
                LayerCounts {
                    n_n: n_out,
                    n_s: kh * kw * c_in,
                    n_sr: 0,
                }
            }
            LayerKind::MaxPool2d => LayerCounts {
                n_n: n_out,
                n_s: kh * kw,
                n_sr: 0,
            },
            LayerKind::Flatten => LayerCounts {
                n_n: n_out,
                n_s: 0,
                n_sr: 0,
            },
        }
    }

    /// Exact number of (postsynaptic, presynaptic) connections that touch a
    /// real input element. Equals `n_n·n_s` unless zero padding makes
    /// kernels overhang the border.
    pub fn realized_connections(&self) -> u64 {
        let counts = self.counts();
        match self.kind {
            LayerKind::Conv2d => {
                let (Some((c_in, h, w)), Some((c_out, oh, ow))) =
                    (self.input_shape.spatial(), self.output_shape.spatial())
                else {
                    return 0;
                };
                let (kh, kw) = self.kernel_or_unit();
                let p = self.padding.amount();
                let ty = realized_taps_1d(h, oh, kh, self.stride.0, p);
                let tx = realized_taps_1d(w, ow, kw, self.stride.1, p);
                (c_out * c_in * ty * tx) as u64
            }
            _ => (counts.n_n * counts.n_s) as u64,
        }
    }

    pub fn local_geometry(&self) -> Option<LocalGeometry> {
        if self.kind != LayerKind::LocallyConnected {
            return None;
        }
        let (channels, height, width) = self.input_shape.spatial()?;
        let kernel = self.kernel?;
        let grid_h = window_out(height, kernel.0, self.stride.0, 0)?;
        let grid_w = window_out(width, kernel.1, self.stride.1, 0)?;
        let windows = grid_h * grid_w;
        let n = self.output_shape.len();
        if windows == 0 || !n.is_multiple_of(windows) {
            return None;
        }
        Some(LocalGeometry {
            channels,
            height,
            width,
            kernel,
            stride: self.stride,
            grid_h,
            grid_w,
            units: n / windows,
        })
    }

    fn check_geometry(&self) -> Result<(), NetSpecError> {
        match self.kind {
            LayerKind::Dense | LayerKind::RecurrentDense => {
                if !matches!(self.input_shape, Shape::Flat(_))
                    || !matches!(self.output_shape, Shape::Flat(_))
                {
                    return Err(NetSpecError::shape(self, "dense layers take and produce flat (N,) shapes"));
                }
            }
            LayerKind::Conv2d | LayerKind::MaxPool2d => {
                let (Some((c_in, h, w)), Some((c_out, oh, ow))) =
                    (self.input_shape.spatial(), self.output_shape.spatial())
                else {
                    return Err(NetSpecError::shape(self, "expected (C,H,W) input and output shapes"));
                };
                let Some((kh, kw)) = self.kernel else {
                    return Err(NetSpecError::schema(self, "kernel is required"));
                };
                if self.kind == LayerKind::MaxPool2d {
                    if self.padding != Padding::Valid {
                        return Err(NetSpecError::schema(self, "pooling supports valid padding only"));
                    }
                    if c_in != c_out {
                        return Err(NetSpecError::shape(
                            self,
                            format!("pooling keeps channels, got {} -> {}", c_in, c_out),
                        ));
                    }
                }
                let p = self.padding.amount();
                let eh = window_out(h, kh, self.stride.0, p);
                let ew = window_out(w, kw, self.stride.1, p);
                if eh != Some(oh) || ew != Some(ow) || c_out == 0 {
                    return Err(NetSpecError::shape(
                        self,
                        format!(
                            "output {} inconsistent with input {} kernel ({},{}) stride ({},{}) padding {}",
                            self.output_shape, self.input_shape, kh, kw, self.stride.0, self.stride.1, p
                        ),
                    ));
                }
            }
            LayerKind::LocallyConnected => {
                if self.input_shape.spatial().is_none() || !matches!(self.output_shape, Shape::Flat(_)) {
                    return Err(NetSpecError::shape(self, "locally connected layers map (C,H,W) to (N,)"));
                }
                if self.kernel.is_none() {
                    return Err(NetSpecError::schema(self, "kernel is required"));
                }
                if self.padding != Padding::Valid {
                    return Err(NetSpecError::schema(self, "locally connected layers use valid padding"));
                }
                if self.local_geometry().is_none() {
                    return Err(NetSpecError::shape(
                        self,
                        format!(
                            "output {} is not a whole number of units per receptive-field window",
                            self.output_shape
                        ),
                    ));
                }
            }
            LayerKind::Flatten => {
                if !matches!(self.output_shape, Shape::Flat(_))
                    || self.input_shape.len() != self.output_shape.len()
                {
                    return Err(NetSpecError::shape(
                        self,
                        format!("flatten {} -> {} changes element count", self.input_shape, self.output_shape),
                    ));
                }
            }
        }
        if self.output_shape.is_empty() {
            return Err(NetSpecError::shape(self, "empty output"));
        }
        Ok(())
    }

    /// Expected weight lengths: (feedforward, recurrent).
    pub fn expected_weight_len(&self) -> (usize, usize) {
        let n_out = self.output_shape.len();
        match self.kind {
            LayerKind::Dense => (n_out * self.input_shape.len(), 0),
            LayerKind::LocallyConnected => (n_out * self.input_shape.len(), 0),
            LayerKind::RecurrentDense => (n_out * self.input_shape.len(), n_out * n_out),
            LayerKind::Conv2d => {
                let c_in = self.input_shape.spatial().map(|s| s.0).unwrap_or(0);
                let c_out = self.output_shape.spatial().map(|s| s.0).unwrap_or(0);
                let (kh, kw) = self.kernel_or_unit();
                (c_out * c_in * kh * kw, 0)
            }
            LayerKind::MaxPool2d | LayerKind::Flatten => (0, 0),
        }
    }
}

/// A validated, immutable chain of layers plus their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub coding: Coding,
    pub max_timesteps: usize,
    pub layers: Vec<LayerSpec>,
    pub weights: WeightStore,
}

impl NetworkSpec {
    pub fn new(
        coding: Coding,
        max_timesteps: usize,
        layers: Vec<LayerSpec>,
        weights: WeightStore,
    ) -> Result<Self, NetSpecError> {
        let net = NetworkSpec {
            coding,
            max_timesteps,
            layers,
            weights,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn input_shape(&self) -> Option<Shape> {
        self.layers.first().map(|l| l.input_shape)
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map(|l| l.output_shape.len()).unwrap_or(0)
    }

    /// True when every neuron layer is a ReLU layer.
    pub fn is_ann(&self) -> bool {
        self.layers
            .iter()
            .filter_map(|l| l.neuron_kind())
            .all(|k| k == NeuronKind::AnnRelu)
            && self.layers.iter().any(|l| l.neuron_model.is_some())
    }

    pub fn has_zero_padding(&self) -> bool {
        self.layers.iter().any(|l| matches!(l.padding, Padding::Zero(p) if p > 0))
    }

    pub fn structural_counts(&self) -> Vec<LayerCounts> {
        structural_counts(self)
    }

    pub fn layer_weights(&self, layer: &LayerSpec) -> Option<&[f32]> {
        layer.weights_ref.as_deref().and_then(|r| self.weights.get(r))
    }

    pub fn layer_recurrent_weights(&self, layer: &LayerSpec) -> Option<&[f32]> {
        layer
            .recurrent_weights_ref
            .as_deref()
            .and_then(|r| self.weights.get(r))
    }

    pub fn validate(&self) -> Result<(), NetSpecError> {
        if self.max_timesteps == 0 {
            return Err(NetSpecError::Schema("max_timesteps must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(NetSpecError::Schema("network has no layers".into()));
        }
        let mut spiking = 0usize;
        let mut ann = 0usize;
        for (idx, layer) in self.layers.iter().enumerate() {
            layer.check_geometry()?;
            if idx > 0 {
                let prev = &self.layers[idx - 1];
                if prev.output_shape != layer.input_shape {
                    return Err(NetSpecError::shape(
                        layer,
                        format!(
                            "input {} does not match output {} of '{}'",
                            layer.input_shape, prev.output_shape, prev.name
                        ),
                    ));
                }
            }
            match (layer.kind.has_neurons(), &layer.neuron_model) {
                (true, None) => return Err(NetSpecError::schema(layer, "neuron_model is required")),
                (false, Some(_)) => {
                    return Err(NetSpecError::schema(layer, "pooling/flatten layers take no neuron_model"))
                }
                (true, Some(m)) => {
                    m.validate().map_err(|e| NetSpecError::schema(layer, e))?;
                    if m.kind.is_spiking() {
                        spiking += 1;
                    } else {
                        ann += 1;
                    }
                }
                (false, None) => {}
            }
            self.check_weights(layer)?;
        }
        if spiking > 0 && ann > 0 {
            return Err(NetSpecError::Schema(
                "network mixes ReLU and spiking layers; use one family per network".into(),
            ));
        }
        let last = self.layers.last().expect("nonempty");
        if !last.kind.has_neurons() {
            return Err(NetSpecError::schema(last, "the output layer must contain neurons"));
        }
        Ok(())
    }

    fn resolve<'a>(&'a self, layer: &LayerSpec, r: Option<&str>) -> Result<Option<&'a [f32]>, NetSpecError> {
        match r {
            None => Ok(None),
            Some(name) => self
                .weights
                .get(name)
                .map(Some)
                .ok_or_else(|| NetSpecError::UnknownRef {
                    layer: layer.name.clone(),
                    reference: name.to_string(),
                }),
        }
    }

    fn check_weights(&self, layer: &LayerSpec) -> Result<(), NetSpecError> {
        let (ff_len, rec_len) = layer.expected_weight_len();
        let ff = self.resolve(layer, layer.weights_ref.as_deref())?;
        let rec = self.resolve(layer, layer.recurrent_weights_ref.as_deref())?;
        match (ff_len, ff) {
            (0, Some(_)) => return Err(NetSpecError::schema(layer, "layer takes no weights")),
            (0, None) => {}
            (_, None) => return Err(NetSpecError::schema(layer, "weights_ref is required")),
            (n, Some(w)) if w.len() != n => {
                return Err(NetSpecError::shape(
                    layer,
                    format!("expected {} weights, found {}", n, w.len()),
                ))
            }
            _ => {}
        }
        match (rec_len, rec) {
            (0, Some(_)) => return Err(NetSpecError::schema(layer, "only recurrent layers take recurrent weights")),
            (0, None) => {}
            (_, None) => return Err(NetSpecError::schema(layer, "recurrent_weights_ref is required")),
            (n, Some(w)) if w.len() != n => {
                return Err(NetSpecError::shape(
                    layer,
                    format!("expected {} recurrent weights, found {}", n, w.len()),
                ))
            }
            _ => {}
        }
        if let (Some(geo), Some(w)) = (layer.local_geometry(), ff) {
            let n_in = layer.input_shape.len();
            for (idx, &value) in w.iter().enumerate() {
                let (neuron, input) = (idx / n_in, idx % n_in);
                if value != 0.0 && !geo.contains(neuron, input) {
                    return Err(NetSpecError::MaskViolation {
                        layer: layer.name.clone(),
                        neuron,
                        input,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Per-layer `(n_n, n_s, n_sr)` for a validated network.
pub fn structural_counts(net: &NetworkSpec) -> Vec<LayerCounts> {
    net.layers.iter().map(LayerSpec::counts).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(input: Shape, filters: usize, k: usize, s: usize, p: usize) -> LayerSpec {
        let (_, h, w) = input.spatial().unwrap();
        let oh = window_out(h, k, s, p).unwrap();
        let ow = window_out(w, k, s, p).unwrap();
        LayerSpec {
            name: "conv".into(),
            kind: LayerKind::Conv2d,
            input_shape: input,
            output_shape: Shape::Spatial(filters, oh, ow),
            kernel: Some((k, k)),
            stride: (s, s),
            padding: if p == 0 { Padding::Valid } else { Padding::Zero(p) },
            neuron_model: Some(NeuronModelSpec::ifl(1.0)),
            weights_ref: Some("w".into()),
            recurrent_weights_ref: None,
        }
    }

    #[test]
    fn conv_counts_follow_shape_formula() {
        let l = conv(Shape::Spatial(3, 64, 64), 16, 3, 1, 0);
        assert_eq!(l.output_shape, Shape::Spatial(16, 62, 62));
        let c = l.counts();
        assert_eq!((c.n_n, c.n_s, c.n_sr), (61504, 27, 0));
    }

    #[test]
    fn strided_conv_halves_and_doubles() {
        let l = conv(Shape::Spatial(16, 32, 32), 32, 5, 2, 2);
        assert_eq!(l.output_shape, Shape::Spatial(32, 16, 16));
        assert_eq!(l.counts().n_s, 400);
    }

    #[test]
    fn pool_counts() {
        let l = LayerSpec {
            name: "pool".into(),
            kind: LayerKind::MaxPool2d,
            input_shape: Shape::Spatial(16, 62, 62),
            output_shape: Shape::Spatial(16, 31, 31),
            kernel: Some((2, 2)),
            stride: (2, 2),
            padding: Padding::Valid,
            neuron_model: None,
            weights_ref: None,
            recurrent_weights_ref: None,
        };
        l.check_geometry().unwrap();
        assert_eq!(l.counts().n_s, 4);
        assert_eq!(l.counts().n_n, 16 * 31 * 31);
    }

    #[test]
    fn zero_padding_overhang_loses_connections() {
        let valid = conv(Shape::Spatial(2, 5, 5), 3, 3, 1, 0);
        let c = valid.counts();
        assert_eq!(valid.realized_connections(), (c.n_n * c.n_s) as u64);
        let padded = conv(Shape::Spatial(2, 5, 5), 3, 3, 1, 1);
        let c = padded.counts();
        assert!(padded.realized_connections() < (c.n_n * c.n_s) as u64);
    }

    #[test]
    fn lif_stability_is_checked() {
        let mut m = NeuronModelSpec::lif(5e-3, 1e-2, 1e-3, 1.0);
        assert!(m.validate().is_ok());
        m.dt = 6e-3;
        assert!(m.validate().is_err());
        let ann = NeuronModelSpec::ann_relu().with_spike_once(true);
        assert!(ann.validate().is_err());
    }

    #[test]
    fn local_geometry_windows() {
        let l = LayerSpec {
            name: "lcl".into(),
            kind: LayerKind::LocallyConnected,
            input_shape: Shape::Spatial(1, 4, 4),
            output_shape: Shape::Flat(8),
            kernel: Some((2, 2)),
            stride: (2, 2),
            padding: Padding::Valid,
            neuron_model: Some(NeuronModelSpec::ifl(1.0)),
            weights_ref: Some("w".into()),
            recurrent_weights_ref: None,
        };
        let g = l.local_geometry().unwrap();
        assert_eq!((g.grid_h, g.grid_w, g.units), (2, 2, 2));
        assert_eq!(l.counts().n_s, 4);
        // neuron 2 sits in window (0,1): columns 2..4 of rows 0..2
        assert!(g.contains(2, 2));
        assert!(g.contains(2, 7));
        assert!(!g.contains(2, 0));
        assert!(!g.contains(2, 10));
    }
}
