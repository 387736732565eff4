//! Time-stepped inference over the layer chain.
//!
//! Within a timestep layer `l` consumes the spikes layer `l-1` emitted in
//! the same step; recurrent layers additionally receive their own spikes
//! from the previous step. Every realized synaptic event is counted.
//! Recurrent events are counted when the spike is routed (the step it is
//! emitted), so spikes emitted on the last simulated step are included.

mod connect;
pub mod stats;

use serde::Serialize;
use thiserror::Error;

use crate::codec::{decode_max_membrane, decode_roc, CodecError, Decision, EncodedInput, EncodingMode};
use crate::emac::{self, EmacError, EnergyOptions, EnergyReport};
use crate::netspec::{Coding, NetworkSpec, NeuronModelSpec};
use crate::neuron::{self, NeuronState};
use connect::Connect;

pub use stats::{run_dataset, AggregateStats, SampleFailure, Summary};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("input shape mismatch: network expects {expected}, input is {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("non-finite state in layer '{layer}' at timestep {t}")]
    NonFiniteState { layer: String, t: usize },
    #[error("unsupported input: {0}")]
    UnsupportedInput(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{} sample(s) failed: {}", .0.len(), .0.iter().map(|f| format!("#{} {}", f.index, f.error)).collect::<Vec<_>>().join("; "))]
    SampleFailures(Vec<SampleFailure>),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Energy(#[from] EmacError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EngineOptions {
    /// Price (and count) the analog first layer's MACs every timestep
    /// instead of once per inference.
    pub encoder_per_step: bool,
    /// Keep the full per-neuron spike raster in the trace.
    pub record_raster: bool,
}

/// Spike counts and synaptic-event counters of one inference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpikeTrace {
    /// `counts[l][t-1]`: spikes emitted by layer `l` at step `t`.
    pub counts: Vec<Vec<u32>>,
    pub feedforward_events: Vec<u64>,
    pub recurrent_events: Vec<u64>,
    pub t_used: usize,
    /// Total input spikes (Poisson input only).
    pub input_spikes: u64,
    pub input_len: usize,
    pub analog_input: bool,
    pub encoder_per_step: bool,
    /// `raster[l]`: `(neuron, t)` for every spike, when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raster: Option<Vec<Vec<(u32, u32)>>>,
}

impl SpikeTrace {
    pub fn layer_spikes(&self, l: usize) -> u64 {
        self.counts[l].iter().map(|&c| c as u64).sum()
    }

    pub fn total_spikes(&self) -> u64 {
        (0..self.counts.len()).map(|l| self.layer_spikes(l)).sum()
    }
}

/// Energy of one sample under both estimators.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleEnergy {
    pub analytic: EnergyReport,
    pub exact: EnergyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceResult {
    pub decision: Decision,
    pub trace: SpikeTrace,
    pub energy: SampleEnergy,
}

struct CompiledLayer {
    connect: Connect,
    recurrent_t: Option<Vec<f64>>,
    model: Option<NeuronModelSpec>,
    n_out: usize,
}

/// A network compiled for repeated inference. Read-only while running, so
/// one instance can serve many concurrent samples.
pub struct Simulator<'a> {
    net: &'a NetworkSpec,
    layers: Vec<CompiledLayer>,
    opts: EngineOptions,
    ann: bool,
}

impl<'a> Simulator<'a> {
    pub fn new(net: &'a NetworkSpec, opts: EngineOptions) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| {
                let n_out = l.output_shape.len();
                let recurrent_t = net.layer_recurrent_weights(l).map(|w| {
                    let mut t = vec![0.0; n_out * n_out];
                    for i in 0..n_out {
                        for j in 0..n_out {
                            t[j * n_out + i] = w[i * n_out + j] as f64;
                        }
                    }
                    t
                });
                let connect = Connect::compile(net, l);
                debug_assert_eq!(connect.n_out(), n_out);
                CompiledLayer {
                    connect,
                    recurrent_t,
                    model: l.neuron_model.clone(),
                    n_out,
                }
            })
            .collect();
        Simulator {
            net,
            layers,
            opts,
            ann: net.is_ann(),
        }
    }

    pub fn network(&self) -> &NetworkSpec {
        self.net
    }

    pub fn options(&self) -> EngineOptions {
        self.opts
    }

    /// Prepares a stepwise run for one encoded sample.
    pub fn start<'s>(&'s self, input: &'s EncodedInput) -> Result<Run<'s, 'a>, EngineError> {
        let expected = self.net.input_shape().expect("validated net has layers");
        if input.shape != expected || input.values.len() != expected.len() {
            return Err(EngineError::ShapeMismatch {
                expected: expected.to_string(),
                found: input.shape.to_string(),
            });
        }
        let analog = input.mode == EncodingMode::AnalogCurrent;
        if self.ann && !analog {
            return Err(EngineError::UnsupportedInput(
                "ReLU networks take analog input, not spike trains".into(),
            ));
        }
        if analog && !self.ann && !self.net.layers[0].kind.has_neurons() {
            return Err(EngineError::UnsupportedInput(
                "analog input needs a weighted first layer".into(),
            ));
        }
        let l_count = self.layers.len();
        let drive = if analog && !self.ann {
            let mut d = vec![0.0; self.layers[0].n_out];
            self.layers[0].connect.forward(&input.values, &mut d);
            Some(d)
        } else {
            None
        };
        Ok(Run {
            sim: self,
            input,
            drive,
            states: self
                .layers
                .iter()
                .map(|l| vec![NeuronState::default(); if l.model.is_some() { l.n_out } else { 0 }])
                .collect(),
            rec_prev: vec![Vec::new(); l_count],
            counts: vec![Vec::new(); l_count],
            ff_events: vec![0; l_count],
            rec_events: vec![0; l_count],
            input_spikes: 0,
            raster: self.opts.record_raster.then(|| vec![Vec::new(); l_count]),
            out_spikes: Vec::new(),
            out_volts: Vec::new(),
            t: 0,
            done: false,
        })
    }

    pub fn run(&self, input: &EncodedInput) -> Result<InferenceResult, EngineError> {
        let mut run = self.start(input)?;
        while run.step()? == StepStatus::Running {}
        run.finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Running,
    Done,
}

/// Mutable state of one inference in progress.
pub struct Run<'s, 'a> {
    sim: &'s Simulator<'a>,
    input: &'s EncodedInput,
    drive: Option<Vec<f64>>,
    states: Vec<Vec<NeuronState>>,
    rec_prev: Vec<Vec<usize>>,
    counts: Vec<Vec<u32>>,
    ff_events: Vec<u64>,
    rec_events: Vec<u64>,
    input_spikes: u64,
    raster: Option<Vec<Vec<(u32, u32)>>>,
    out_spikes: Vec<Vec<bool>>,
    out_volts: Vec<Vec<f64>>,
    t: usize,
    done: bool,
}

impl<'s, 'a> Run<'s, 'a> {
    pub fn timestep(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn feedforward_events(&self) -> &[u64] {
        &self.ff_events
    }

    pub fn recurrent_events(&self) -> &[u64] {
        &self.rec_events
    }

    pub fn spike_counts(&self) -> &[Vec<u32>] {
        &self.counts
    }

    /// Advances one timestep. Once the run is done this is a no-op.
    pub fn step(&mut self) -> Result<StepStatus, EngineError> {
        if self.done {
            return Ok(StepStatus::Done);
        }
        if self.sim.ann {
            self.forward_ann()?;
            self.done = true;
            return Ok(StepStatus::Done);
        }
        self.t += 1;
        let t = self.t;
        let net = self.sim.net;
        let last = self.sim.layers.len() - 1;

        let mut presyn = Vec::new();
        self.input.spikes_at(t, &mut presyn);
        self.input_spikes += presyn.len() as u64;

        for (l, layer) in self.sim.layers.iter().enumerate() {
            let mut acc = vec![0.0; layer.n_out];
            match (&self.drive, l) {
                (Some(drive), 0) => {
                    acc.copy_from_slice(drive);
                    if t == 1 || self.sim.opts.encoder_per_step {
                        self.ff_events[0] += net.layers[0].realized_connections();
                    }
                }
                _ => {
                    for &j in &presyn {
                        self.ff_events[l] += layer.connect.scatter(j, &mut acc);
                    }
                }
            }
            let out: Vec<usize> = match &layer.model {
                None => (0..layer.n_out).filter(|&i| acc[i] > 0.0).collect(),
                Some(model) => {
                    if let Some(rec) = &layer.recurrent_t {
                        for &j in &self.rec_prev[l] {
                            for (a, w) in acc.iter_mut().zip(&rec[j * layer.n_out..(j + 1) * layer.n_out]) {
                                *a += w;
                            }
                        }
                    }
                    let mut spikes = Vec::new();
                    let mut volts = if l == last { Vec::with_capacity(layer.n_out) } else { Vec::new() };
                    for (i, st) in self.states[l].iter_mut().enumerate() {
                        let s = neuron::step(*st, acc[i], model);
                        if !s.state.current.is_finite() || !s.state.voltage.is_finite() {
                            return Err(EngineError::NonFiniteState {
                                layer: net.layers[l].name.clone(),
                                t,
                            });
                        }
                        *st = s.state;
                        if s.spike {
                            spikes.push(i);
                        }
                        if l == last {
                            volts.push(s.v_half);
                        }
                    }
                    if layer.recurrent_t.is_some() {
                        self.rec_events[l] += (spikes.len() * layer.n_out) as u64;
                        self.rec_prev[l] = spikes.clone();
                    }
                    if l == last {
                        let mut row = vec![false; layer.n_out];
                        for &i in &spikes {
                            row[i] = true;
                        }
                        self.out_spikes.push(row);
                        self.out_volts.push(volts);
                    }
                    spikes
                }
            };
            self.counts[l].push(out.len() as u32);
            if let Some(r) = &mut self.raster {
                r[l].extend(out.iter().map(|&i| (i as u32, t as u32)));
            }
            presyn = out;
        }

        let stop_roc = net.coding == Coding::Roc && !presyn.is_empty();
        if stop_roc || t >= net.max_timesteps {
            self.done = true;
            return Ok(StepStatus::Done);
        }
        Ok(StepStatus::Running)
    }

    fn forward_ann(&mut self) -> Result<(), EngineError> {
        let net = self.sim.net;
        self.t = 1;
        let mut x = self.input.values.clone();
        for (l, layer) in self.sim.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.n_out];
            layer.connect.forward(&x, &mut out);
            // A single pass: recurrent input from the zero initial activation
            // vanishes, but its MACs are still counted below.
            if let Some(model) = &layer.model {
                for v in out.iter_mut() {
                    *v = neuron::step(NeuronState::default(), *v, model).v_half;
                }
            }
            if out.iter().any(|v| !v.is_finite()) {
                return Err(EngineError::NonFiniteState {
                    layer: net.layers[l].name.clone(),
                    t: 1,
                });
            }
            let c = net.layers[l].counts();
            self.ff_events[l] = (c.n_n * c.n_s) as u64;
            self.rec_events[l] = (c.n_n * c.n_sr) as u64;
            self.counts[l].push(0);
            x = out;
        }
        self.out_volts.push(x);
        self.out_spikes.push(vec![false; self.sim.layers.last().map(|l| l.n_out).unwrap_or(0)]);
        Ok(())
    }

    /// Decodes the output and prices the trace.
    pub fn finish(self) -> Result<InferenceResult, EngineError> {
        let net = self.sim.net;
        let decision = if self.sim.ann || net.coding == Coding::Rate {
            decode_max_membrane(&self.out_volts)?
        } else {
            decode_roc(&self.out_spikes, &self.out_volts, net.max_timesteps)?
        };
        let trace = SpikeTrace {
            counts: self.counts,
            feedforward_events: self.ff_events,
            recurrent_events: self.rec_events,
            t_used: self.t,
            input_spikes: self.input_spikes,
            input_len: self.input.values.len(),
            analog_input: self.input.mode == EncodingMode::AnalogCurrent,
            encoder_per_step: self.sim.opts.encoder_per_step,
            raster: self.raster,
        };
        let opts = EnergyOptions {
            encoder_per_step: self.sim.opts.encoder_per_step,
        };
        let rates = emac::rates_from_trace(&trace, net);
        let analytic = emac::emac_analytic(net, &rates, trace.t_used, opts)?;
        let exact = emac::emac_exact(net, &trace)?;
        Ok(InferenceResult {
            decision,
            trace,
            energy: SampleEnergy { analytic, exact },
        })
    }
}

/// Runs one sample to completion.
pub fn run_inference(net: &NetworkSpec, input: &EncodedInput, opts: EngineOptions) -> Result<InferenceResult, EngineError> {
    Simulator::new(net, opts).run(input)
}
