//! EMAC energy accounting.
//!
//! Two estimators share the same per-layer pricing:
//!
//! * analytic: `E_syn(l) = n_s·n_n·f(l-1)·e_syn`, `E_rec(l) = n_sr·n_n·f(l)·e_syn`,
//!   `E_upd(l) = T·n_n·e_upd`, with `f` the spikes per neuron per inference;
//! * exact: realized synaptic events from the simulator times `e_syn`.
//!
//! A first layer fed by a static analog input is priced as `n_s·n_n` MACs
//! once per inference (or every step with `encoder_per_step`). Max pooling
//! costs one accumulate per routed input spike and no update; flatten is
//! free. ReLU networks use `f = 1`, `e_syn = 1`, `e_upd = 0`.

use serde::Serialize;
use thiserror::Error;

use crate::engine::SpikeTrace;
use crate::netspec::{LayerKind, NetworkSpec};
use crate::neuron::{energy_params, AC_EMAC, MAC_EMAC};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmacError {
    #[error("missing firing rates: expected {expected} layers, got {found}")]
    MissingRates { expected: usize, found: usize },
    #[error("trace does not match network: {0}")]
    TraceNetMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    Analytic,
    ExactEvents,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EnergyOptions {
    pub encoder_per_step: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerEnergy {
    pub name: String,
    pub kind: String,
    pub e_syn: f64,
    pub e_upd: f64,
    pub e_rec: f64,
}

/// Per-layer and total EMAC. `e_syn_pool` is the part of `e_syn` spent in
/// pooling layers; `e_syn_plus_rec` is the total synaptic work.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyReport {
    pub method: Method,
    pub t_used: usize,
    pub layers: Vec<LayerEnergy>,
    pub e_syn: f64,
    pub e_upd: f64,
    pub e_rec: f64,
    pub e_syn_pool: f64,
    pub e_syn_plus_rec: f64,
    pub e_tot: f64,
    /// Set when zero padding makes the analytic fan-in an overestimate.
    pub approximate: bool,
}

impl EnergyReport {
    fn assemble(method: Method, t_used: usize, net: &NetworkSpec, layers: Vec<LayerEnergy>) -> EnergyReport {
        let e_syn = layers.iter().map(|l| l.e_syn).sum::<f64>();
        let e_upd = layers.iter().map(|l| l.e_upd).sum::<f64>();
        let e_rec = layers.iter().map(|l| l.e_rec).sum::<f64>();
        let e_syn_pool = layers
            .iter()
            .zip(&net.layers)
            .filter(|(_, spec)| spec.kind == LayerKind::MaxPool2d)
            .map(|(l, _)| l.e_syn)
            .sum();
        EnergyReport {
            method,
            t_used,
            layers,
            e_syn,
            e_upd,
            e_rec,
            e_syn_pool,
            e_syn_plus_rec: e_syn + e_rec,
            e_tot: e_syn + e_upd + e_rec,
            approximate: net.has_zero_padding(),
        }
    }

    /// Long-form `layer,component,emac` rows, with a `total` block.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,component,emac\n");
        for l in &self.layers {
            s += &format!("{},syn,{}\n{},upd,{}\n{},rec,{}\n", l.name, l.e_syn, l.name, l.e_upd, l.name, l.e_rec);
        }
        s += &format!(
            "total,syn,{}\ntotal,upd,{}\ntotal,rec,{}\ntotal,syn_pool,{}\ntotal,syn_plus_rec,{}\ntotal,tot,{}\n",
            self.e_syn, self.e_upd, self.e_rec, self.e_syn_pool, self.e_syn_plus_rec, self.e_tot
        );
        s
    }
}

/// Average spikes per neuron per inference, per layer, plus the input
/// rate when the input is a spike train.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerRates {
    pub input: Option<f64>,
    pub layers: Vec<f64>,
}

pub fn rates_from_trace(trace: &SpikeTrace, net: &NetworkSpec) -> LayerRates {
    let layers = net
        .layers
        .iter()
        .enumerate()
        .map(|(l, spec)| {
            let n = spec.output_shape.len();
            if l < trace.counts.len() && n > 0 {
                trace.layer_spikes(l) as f64 / n as f64
            } else {
                0.0
            }
        })
        .collect();
    let input = (!trace.analog_input && trace.input_len > 0).then(|| trace.input_spikes as f64 / trace.input_len as f64);
    LayerRates { input, layers }
}

/// `(e_syn, e_upd)` used for layer `l`.
pub fn layer_pricing(net: &NetworkSpec, l: usize, analog_input: bool) -> (f64, f64) {
    let layer = &net.layers[l];
    let ann = net.is_ann();
    match layer.kind {
        LayerKind::Flatten => (0.0, 0.0),
        LayerKind::MaxPool2d => (if ann { MAC_EMAC } else { AC_EMAC }, 0.0),
        _ => {
            let p = energy_params(layer.neuron_kind().expect("neuron layer"));
            if l == 0 && analog_input {
                (MAC_EMAC, p.e_upd)
            } else {
                (p.e_syn, p.e_upd)
            }
        }
    }
}

pub fn emac_analytic(
    net: &NetworkSpec,
    rates: &LayerRates,
    t_used: usize,
    opts: EnergyOptions,
) -> Result<EnergyReport, EmacError> {
    if rates.layers.len() != net.layers.len() {
        return Err(EmacError::MissingRates {
            expected: net.layers.len(),
            found: rates.layers.len(),
        });
    }
    let ann = net.is_ann();
    let analog = rates.input.is_none();
    let t = t_used as f64;
    let layers = net
        .layers
        .iter()
        .enumerate()
        .map(|(l, spec)| {
            let c = spec.counts();
            let (e_syn_unit, e_upd_unit) = layer_pricing(net, l, analog);
            let (n_n, n_s, n_sr) = (c.n_n as f64, c.n_s as f64, c.n_sr as f64);
            let (e_syn, e_rec, e_upd) = if ann {
                (n_s * n_n * e_syn_unit, n_sr * n_n * e_syn_unit, 0.0)
            } else {
                let syn = match (l, rates.input) {
                    (0, None) => {
                        let per_pass = n_s * n_n * e_syn_unit;
                        if opts.encoder_per_step {
                            per_pass * t
                        } else {
                            per_pass
                        }
                    }
                    (0, Some(f_in)) => n_s * n_n * f_in * e_syn_unit,
                    (_, _) => n_s * n_n * rates.layers[l - 1] * e_syn_unit,
                };
                let upd = if spec.kind.has_neurons() { t * n_n * e_upd_unit } else { 0.0 };
                (syn, n_sr * n_n * rates.layers[l] * e_syn_unit, upd)
            };
            LayerEnergy {
                name: spec.name.clone(),
                kind: spec.kind.label().to_string(),
                e_syn,
                e_upd,
                e_rec,
            }
        })
        .collect();
    Ok(EnergyReport::assemble(Method::Analytic, t_used, net, layers))
}

pub fn emac_exact(net: &NetworkSpec, trace: &SpikeTrace) -> Result<EnergyReport, EmacError> {
    let n = net.layers.len();
    if trace.feedforward_events.len() != n || trace.recurrent_events.len() != n || trace.counts.len() != n {
        return Err(EmacError::TraceNetMismatch(format!(
            "network has {} layers, trace has {}",
            n,
            trace.feedforward_events.len()
        )));
    }
    if let Some(shape) = net.input_shape() {
        if shape.len() != trace.input_len {
            return Err(EmacError::TraceNetMismatch(format!(
                "input length {} vs {}",
                shape.len(),
                trace.input_len
            )));
        }
    }
    let ann = net.is_ann();
    let t = trace.t_used as f64;
    let layers = net
        .layers
        .iter()
        .enumerate()
        .map(|(l, spec)| {
            let (e_syn_unit, e_upd_unit) = layer_pricing(net, l, trace.analog_input);
            let n_n = spec.output_shape.len() as f64;
            let upd = if ann || !spec.kind.has_neurons() { 0.0 } else { t * n_n * e_upd_unit };
            LayerEnergy {
                name: spec.name.clone(),
                kind: spec.kind.label().to_string(),
                e_syn: trace.feedforward_events[l] as f64 * e_syn_unit,
                e_upd: upd,
                e_rec: trace.recurrent_events[l] as f64 * e_syn_unit,
            }
        })
        .collect();
    Ok(EnergyReport::assemble(Method::ExactEvents, trace.t_used, net, layers))
}

/// Classical MAC count, treating every layer as a ReLU layer:
/// `Σ_l n_s·n_n` (plus recurrent `n_sr·n_n`).
pub fn ann_mac_count(net: &NetworkSpec) -> u64 {
    net.layers
        .iter()
        .map(|l| {
            let c = l.counts();
            (c.n_s * c.n_n + c.n_sr * c.n_n) as u64
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netspec::{Coding, NetworkBuilder, NeuronModelSpec, Shape};

    fn ann_chain() -> NetworkSpec {
        NetworkBuilder::new(Shape::Flat(4), Coding::Rate, 1)
            .dense("a", 3, NeuronModelSpec::ann_relu())
            .dense("b", 2, NeuronModelSpec::ann_relu())
            .build()
            .unwrap()
    }

    #[test]
    fn ann_special_case() {
        let net = ann_chain();
        let rates = LayerRates {
            input: None,
            layers: vec![1.0, 1.0],
        };
        let r = emac_analytic(&net, &rates, 1, EnergyOptions::default()).unwrap();
        assert_eq!(r.e_tot, 18.0);
        assert_eq!(r.e_upd, 0.0);
        assert_eq!(ann_mac_count(&net), 18);
    }

    #[test]
    fn single_ifl_layer_arithmetic() {
        let net = NetworkBuilder::new(Shape::Flat(10), Coding::Rate, 8)
            .dense("a", 5, NeuronModelSpec::ifl(1.0))
            .build()
            .unwrap();
        let rates = LayerRates {
            input: Some(0.2),
            layers: vec![0.0],
        };
        let r = emac_analytic(&net, &rates, 8, EnergyOptions::default()).unwrap();
        assert!((r.e_syn - 10.0 * 5.0 * 0.2 * 2.0 / 3.0).abs() < 1e-12);
        assert!((r.e_upd - 8.0 * 5.0 * 4.0 / 3.0).abs() < 1e-12);
        assert!((r.e_tot - 60.0).abs() < 1e-12);
        assert!((r.e_syn - 6.667).abs() < 1e-3);
        assert!((r.e_upd - 53.333).abs() < 1e-3);
    }

    #[test]
    fn recurrent_term() {
        let lif = NeuronModelSpec::lif(5e-3, 1e-2, 1e-3, 1.0);
        let net = NetworkBuilder::new(Shape::Flat(8), Coding::Rate, 10)
            .recurrent("rec", 100, lif)
            .build()
            .unwrap();
        let rates = LayerRates {
            input: Some(0.0),
            layers: vec![0.5],
        };
        let r = emac_analytic(&net, &rates, 10, EnergyOptions::default()).unwrap();
        assert!((r.e_rec - 100.0 * 100.0 * 0.5 * 2.0 / 3.0).abs() < 1e-9);
        assert!((r.e_rec - 3333.3).abs() < 0.1);
        assert_eq!(r.e_syn, 0.0);
        assert!((r.e_syn_plus_rec - r.e_rec).abs() < 1e-12);
    }

    #[test]
    fn missing_rates() {
        let net = ann_chain();
        let rates = LayerRates {
            input: None,
            layers: vec![1.0],
        };
        assert!(matches!(
            emac_analytic(&net, &rates, 1, EnergyOptions::default()),
            Err(EmacError::MissingRates { .. })
        ));
    }

    #[test]
    fn mac_counts() {
        let conv = NetworkBuilder::new(Shape::Spatial(3, 64, 64), Coding::Rate, 1)
            .conv2d("c", 16, 3, 1, crate::netspec::Padding::Valid, NeuronModelSpec::ann_relu())
            .build()
            .unwrap();
        assert_eq!(ann_mac_count(&conv), 1_660_608);
        let empty = NetworkSpec {
            coding: Coding::Rate,
            max_timesteps: 1,
            layers: Vec::new(),
            weights: Default::default(),
        };
        assert_eq!(ann_mac_count(&empty), 0);
    }

    #[test]
    fn rates_definition() {
        let net = NetworkBuilder::new(Shape::Flat(3), Coding::Rate, 4)
            .dense("a", 10, NeuronModelSpec::ifl(1.0))
            .build()
            .unwrap();
        let trace = SpikeTrace {
            counts: vec![vec![2, 0, 3, 0]],
            feedforward_events: vec![0],
            recurrent_events: vec![0],
            t_used: 4,
            input_spikes: 0,
            input_len: 3,
            analog_input: false,
            encoder_per_step: false,
            raster: None,
        };
        let r = rates_from_trace(&trace, &net);
        assert_eq!(r.layers, vec![0.5]);
        assert_eq!(r.input, Some(0.0));
    }

    #[test]
    fn csv_rows() {
        let net = ann_chain();
        let rates = LayerRates {
            input: None,
            layers: vec![1.0, 1.0],
        };
        let csv = emac_analytic(&net, &rates, 1, EnergyOptions::default()).unwrap().to_csv();
        assert!(csv.starts_with("layer,component,emac\na,syn,12\n"));
        assert!(csv.contains("total,tot,18\n"));
    }
}
