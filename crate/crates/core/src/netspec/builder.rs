//! Programmatic construction of layer chains with seeded weight init.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    window_out, Coding, LayerKind, LayerSpec, NetSpecError, NetworkSpec, NeuronModelSpec, Padding,
    Shape, WeightStore,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightInit {
    Constant(f32),
    Uniform { low: f32, high: f32 },
}

pub struct NetworkBuilder {
    coding: Coding,
    max_timesteps: usize,
    current: Shape,
    layers: Vec<LayerSpec>,
    weights: WeightStore,
    init: WeightInit,
    rng: ChaCha8Rng,
}

impl NetworkBuilder {
    pub fn new(input: Shape, coding: Coding, max_timesteps: usize) -> Self {
        NetworkBuilder {
            coding,
            max_timesteps,
            current: input,
            layers: Vec::new(),
            weights: WeightStore::new(),
            init: WeightInit::Uniform { low: -1.0, high: 1.0 },
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    /// Weight init for layers added after this call.
    pub fn init(mut self, init: WeightInit) -> Self {
        self.init = init;
        self
    }

    pub fn output_shape(&self) -> Shape {
        self.current
    }

    fn draw(&mut self, n: usize) -> Vec<f32> {
        match self.init {
            WeightInit::Constant(c) => vec![c; n],
            WeightInit::Uniform { low, high } => (0..n).map(|_| self.rng.random_range(low..=high)).collect(),
        }
    }

    fn push(mut self, layer: LayerSpec) -> Self {
        let (ff, rec) = layer.expected_weight_len();
        if ff > 0 {
            let mut w = self.draw(ff);
            if let Some(geo) = layer.local_geometry() {
                let n_in = layer.input_shape.len();
                for (idx, v) in w.iter_mut().enumerate() {
                    if !geo.contains(idx / n_in, idx % n_in) {
                        *v = 0.0;
                    }
                }
            }
            self.weights.insert(layer.weights_ref.clone().expect("ref"), w);
        }
        if rec > 0 {
            let w = self.draw(rec);
            self.weights
                .insert(layer.recurrent_weights_ref.clone().expect("ref"), w);
        }
        self.current = layer.output_shape;
        self.layers.push(layer);
        self
    }

    fn base(&self, name: &str, kind: LayerKind, output: Shape) -> LayerSpec {
        LayerSpec {
            name: name.to_string(),
            kind,
            input_shape: self.current,
            output_shape: output,
            kernel: None,
            stride: (1, 1),
            padding: Padding::Valid,
            neuron_model: None,
            weights_ref: None,
            recurrent_weights_ref: None,
        }
    }

    pub fn dense(self, name: &str, neurons: usize, model: NeuronModelSpec) -> Self {
        let mut l = self.base(name, LayerKind::Dense, Shape::Flat(neurons));
        l.neuron_model = Some(model);
        l.weights_ref = Some(format!("{}.w", name));
        self.push(l)
    }

    pub fn recurrent(self, name: &str, neurons: usize, model: NeuronModelSpec) -> Self {
        let mut l = self.base(name, LayerKind::RecurrentDense, Shape::Flat(neurons));
        l.neuron_model = Some(model);
        l.weights_ref = Some(format!("{}.w", name));
        l.recurrent_weights_ref = Some(format!("{}.rec", name));
        self.push(l)
    }

    /// Square-kernel convolution. Panics if the current shape is not
    /// spatial or the kernel does not fit.
    pub fn conv2d(
        self,
        name: &str,
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        model: NeuronModelSpec,
    ) -> Self {
        let (_, h, w) = self.current.spatial().expect("conv2d needs a (C,H,W) input");
        let p = padding.amount();
        let oh = window_out(h, kernel, stride, p).expect("kernel fits input");
        let ow = window_out(w, kernel, stride, p).expect("kernel fits input");
        let mut l = self.base(name, LayerKind::Conv2d, Shape::Spatial(filters, oh, ow));
        l.kernel = Some((kernel, kernel));
        l.stride = (stride, stride);
        l.padding = padding;
        l.neuron_model = Some(model);
        l.weights_ref = Some(format!("{}.w", name));
        self.push(l)
    }

    /// Locally connected layer: `units` neurons per `kernel` window, windows
    /// tiled with `stride`.
    pub fn locally_connected(
        self,
        name: &str,
        kernel: usize,
        stride: usize,
        units: usize,
        model: NeuronModelSpec,
    ) -> Self {
        let (_, h, w) = self.current.spatial().expect("locally connected needs a (C,H,W) input");
        let gh = window_out(h, kernel, stride, 0).expect("kernel fits input");
        let gw = window_out(w, kernel, stride, 0).expect("kernel fits input");
        let mut l = self.base(name, LayerKind::LocallyConnected, Shape::Flat(gh * gw * units));
        l.kernel = Some((kernel, kernel));
        l.stride = (stride, stride);
        l.neuron_model = Some(model);
        l.weights_ref = Some(format!("{}.w", name));
        self.push(l)
    }

    /// Non-overlapping square max pooling (stride = kernel).
    pub fn maxpool(self, name: &str, kernel: usize) -> Self {
        let (c, h, w) = self.current.spatial().expect("maxpool needs a (C,H,W) input");
        let oh = window_out(h, kernel, kernel, 0).expect("pool fits input");
        let ow = window_out(w, kernel, kernel, 0).expect("pool fits input");
        let mut l = self.base(name, LayerKind::MaxPool2d, Shape::Spatial(c, oh, ow));
        l.kernel = Some((kernel, kernel));
        l.stride = (kernel, kernel);
        self.push(l)
    }

    pub fn flatten(self, name: &str) -> Self {
        let n = self.current.len();
        let l = self.base(name, LayerKind::Flatten, Shape::Flat(n));
        self.push(l)
    }

    /// Replaces a weight tensor created by an earlier layer.
    pub fn set_weights(mut self, reference: &str, values: Vec<f32>) -> Self {
        self.weights.insert(reference, values);
        self
    }

    pub fn build(self) -> Result<NetworkSpec, NetSpecError> {
        NetworkSpec::new(self.coding, self.max_timesteps, self.layers, self.weights)
    }
}
