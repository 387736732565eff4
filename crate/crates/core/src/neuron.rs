//! Discrete-time LIF / IFL neuron updates and the operation classification
//! that prices them in EMAC.

use serde::Serialize;

use crate::netspec::{NeuronKind, NeuronModelSpec};

/// Cost of one multiply-accumulate, in EMAC.
pub const MAC_EMAC: f64 = 1.0;
/// Cost of one accumulate (two operands instead of three), in EMAC.
pub const AC_EMAC: f64 = 2.0 / 3.0;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NeuronState {
    pub current: f64,
    pub voltage: f64,
    pub has_spiked: bool,
}

/// Result of one timestep: the new state, whether a spike was emitted and
/// the membrane value before reset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: NeuronState,
    pub spike: bool,
    pub v_half: f64,
}

fn fire(state: NeuronState, current: f64, v_half: f64, model: &NeuronModelSpec) -> Step {
    let suppressed = model.spike_once && state.has_spiked;
    let spike = v_half >= model.v_th && !suppressed;
    let voltage = if spike { v_half - model.v_th } else { v_half };
    Step {
        state: NeuronState {
            current,
            voltage,
            has_spiked: state.has_spiked || spike,
        },
        spike,
        v_half,
    }
}

/// Leaky integrate-and-fire, explicit Euler:
///
/// ```text
/// i' = i - i·dt/tau_syn + input + b
/// v½ = v + (i' - v)·dt/tau_mem
/// v' = v½ - v_th·[v½ >= v_th]
/// ```
pub fn lif_step(state: NeuronState, weighted_input: f64, model: &NeuronModelSpec) -> Step {
    let current = state.current - state.current * model.syn_decay() + weighted_input + model.bias;
    let v_half = state.voltage + (current - state.voltage) * model.mem_decay();
    fire(state, current, v_half, model)
}

/// Non-leaky integrate-and-fire on time-scaled current:
///
/// ```text
/// ĩ' = ĩ + input + b̃
/// v½ = v + ĩ'
/// ```
pub fn ifl_step(state: NeuronState, weighted_input: f64, model: &NeuronModelSpec) -> Step {
    let current = state.current + weighted_input + model.bias;
    let v_half = state.voltage + current;
    fire(state, current, v_half, model)
}

/// Dispatches on the model kind. ReLU neurons are stateless: the returned
/// `v_half` is the activation and `spike` is always false.
pub fn step(state: NeuronState, weighted_input: f64, model: &NeuronModelSpec) -> Step {
    match model.kind {
        NeuronKind::Lif => lif_step(state, weighted_input, model),
        NeuronKind::Ifl => ifl_step(state, weighted_input, model),
        NeuronKind::AnnRelu => {
            let a = (weighted_input + model.bias).max(0.0);
            Step {
                state: NeuronState {
                    current: 0.0,
                    voltage: a,
                    has_spiked: false,
                },
                spike: false,
                v_half: a,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OpKind {
    Mac,
    Ac,
}

impl OpKind {
    pub fn emac(self) -> f64 {
        match self {
            OpKind::Mac => MAC_EMAC,
            OpKind::Ac => AC_EMAC,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OpCount {
    pub op: OpKind,
    pub count: u32,
}

fn ops(list: &[(OpKind, u32)]) -> Vec<OpCount> {
    list.iter().map(|&(op, count)| OpCount { op, count }).collect()
}

/// Operations executed every timestep by one neuron.
///
/// LIF: the two `dt/tau` products fold into accumulations (2 MAC) plus the
/// input and bias accumulations (2 AC). IFL: the current and voltage
/// accumulations (2 AC). Spike generation and reset are free.
pub fn classify_update_ops(kind: NeuronKind) -> Vec<OpCount> {
    match kind {
        NeuronKind::Lif => ops(&[(OpKind::Mac, 2), (OpKind::Ac, 2)]),
        NeuronKind::Ifl => ops(&[(OpKind::Ac, 2)]),
        NeuronKind::AnnRelu => Vec::new(),
    }
}

/// Operations executed per synaptic event. A binary spike only needs the
/// weight accumulated; an analog activation needs a multiply.
pub fn classify_synaptic_ops(kind: NeuronKind) -> Vec<OpCount> {
    match kind {
        NeuronKind::Lif | NeuronKind::Ifl => ops(&[(OpKind::Ac, 1)]),
        NeuronKind::AnnRelu => ops(&[(OpKind::Mac, 1)]),
    }
}

pub fn price(ops: &[OpCount]) -> f64 {
    ops.iter().map(|o| o.count as f64 * o.op.emac()).sum()
}

/// EMAC per synaptic event and per neuron update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyParams {
    pub e_syn: f64,
    pub e_upd: f64,
}

pub fn energy_params(kind: NeuronKind) -> EnergyParams {
    EnergyParams {
        e_syn: price(&classify_synaptic_ops(kind)),
        e_upd: price(&classify_update_ops(kind)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lif(syn: f64, mem: f64, v_th: f64) -> NeuronModelSpec {
        // dt = 1 so the ratios are the decay factors
        NeuronModelSpec::lif(1.0 / syn, 1.0 / mem, 1.0, v_th)
    }

    #[test]
    fn lif_substitution() {
        let m = lif(0.1, 0.1, 1.0);
        let s = lif_step(
            NeuronState {
                current: 1.0,
                voltage: 0.0,
                has_spiked: false,
            },
            0.0,
            &m,
        );
        assert!((s.state.current - 0.9).abs() < 1e-15);
        assert!((s.state.voltage - 0.09).abs() < 1e-15);
        assert!(!s.spike);
    }

    #[test]
    fn zero_fixed_point() {
        let m = lif(0.1, 0.1, 1.0);
        let s = lif_step(NeuronState::default(), 0.0, &m);
        assert_eq!(s.state, NeuronState::default());
        assert!(!s.spike);
        let m = NeuronModelSpec::ifl(1.0);
        let mut st = NeuronState::default();
        for _ in 0..100 {
            let s = ifl_step(st, 0.0, &m);
            assert!(!s.spike);
            st = s.state;
        }
        assert_eq!(st, NeuronState::default());
    }

    // Oracle: v_{k+1} = v_k + (1 - v_k)·0.5 with a pinned unit current.
    fn constant_drive_oracle(v_th: f64, steps: usize) -> Option<usize> {
        let mut v = 0.0f64;
        for k in 1..=steps {
            v += (1.0 - v) * 0.5;
            if v >= v_th {
                return Some(k);
            }
        }
        None
    }

    fn constant_drive_lif(v_th: f64, steps: usize) -> (Option<usize>, Vec<f64>) {
        // tau_syn huge: the current stays pinned at the injected unit value
        let m = NeuronModelSpec::lif(1e300, 2.0, 1.0, v_th);
        let mut st = NeuronState {
            current: 1.0,
            voltage: 0.0,
            has_spiked: false,
        };
        let mut first = None;
        let mut vs = Vec::new();
        for k in 1..=steps {
            let s = lif_step(st, 0.0, &m);
            vs.push(s.state.voltage);
            if s.spike && first.is_none() {
                first = Some(k);
            }
            st = s.state;
        }
        (first, vs)
    }

    #[test]
    fn constant_drive_never_reaches_unit_threshold() {
        let (first, vs) = constant_drive_lif(1.0, 30);
        assert_eq!(first, None);
        assert_eq!(constant_drive_oracle(1.0, 30), None);
        assert_eq!(&vs[..6], &[0.5, 0.75, 0.875, 0.9375, 0.96875, 0.984375]);
    }

    #[test]
    fn constant_drive_spikes_at_step_four() {
        let (first, vs) = constant_drive_lif(0.9, 4);
        assert_eq!(first, Some(4));
        assert_eq!(constant_drive_oracle(0.9, 10), Some(4));
        assert!((vs[3] - 0.0375).abs() < 1e-15);
    }

    #[test]
    fn ifl_repeated_drive_spikes_at_step_three() {
        let m = NeuronModelSpec::ifl(1.0);
        let mut st = NeuronState::default();
        let mut currents = Vec::new();
        let mut spikes = Vec::new();
        for _ in 0..3 {
            let s = ifl_step(st, 0.3, &m);
            currents.push(s.state.current);
            spikes.push(s.spike);
            st = s.state;
        }
        assert!((currents[2] - 0.9).abs() < 1e-12);
        assert_eq!(spikes, vec![false, false, true]);
        assert!((st.voltage - 0.8).abs() < 1e-12);
    }

    #[test]
    fn spike_once_suppresses_later_spikes() {
        let m = NeuronModelSpec::ifl(1.0).with_spike_once(true);
        let mut st = NeuronState::default();
        let mut n = 0;
        for _ in 0..50 {
            let s = ifl_step(st, 0.5, &m);
            n += s.spike as usize;
            if st.has_spiked {
                assert!(!s.spike && s.v_half >= m.v_th);
            }
            st = s.state;
        }
        assert_eq!(n, 1);
    }

    #[test]
    fn equality_hits_threshold() {
        let m = NeuronModelSpec::ifl(1.0);
        let s = ifl_step(NeuronState::default(), 1.0, &m);
        assert!(s.spike);
        assert_eq!(s.state.voltage, 0.0);
    }

    #[test]
    fn energy_parameters() {
        let lif = energy_params(NeuronKind::Lif);
        assert!((lif.e_syn - 2.0 / 3.0).abs() < 1e-12);
        assert!((lif.e_upd - 10.0 / 3.0).abs() < 1e-12);
        let ifl = energy_params(NeuronKind::Ifl);
        assert!((ifl.e_syn - 2.0 / 3.0).abs() < 1e-12);
        assert!((ifl.e_upd - 4.0 / 3.0).abs() < 1e-12);
        let ann = energy_params(NeuronKind::AnnRelu);
        assert_eq!((ann.e_syn, ann.e_upd), (1.0, 0.0));
        assert_eq!(format!("{:.3}", lif.e_upd), "3.333");
        assert_eq!(format!("{:.3}", ifl.e_upd), "1.333");
        assert_eq!(format!("{:.3}", ifl.e_syn), "0.667");
    }

    proptest! {
        #[test]
        fn reset_by_subtraction(inputs in proptest::collection::vec(-0.5f64..1.5, 1..200),
                                lif_kind in any::<bool>(), v_th in 0.1f64..2.0) {
            let m = if lif_kind {
                NeuronModelSpec::lif(0.02, 0.01, 0.001, v_th)
            } else {
                NeuronModelSpec::ifl(v_th)
            };
            let mut st = NeuronState::default();
            for x in inputs {
                let s = step(st, x, &m);
                if s.spike {
                    prop_assert_eq!(s.state.voltage, s.v_half - v_th);
                } else {
                    prop_assert_eq!(s.state.voltage, s.v_half);
                }
                st = s.state;
            }
        }

        #[test]
        fn lif_current_decays_geometrically(i0 in -10.0f64..10.0, ratio in 0.001f64..0.9) {
            let m = NeuronModelSpec::lif(1.0 / ratio, 2.0, 1.0, 1e9);
            let mut st = NeuronState { current: i0, voltage: 0.0, has_spiked: false };
            for k in 1..=1000i32 {
                st = lif_step(st, 0.0, &m).state;
                let expected = i0 * (1.0 - ratio).powi(k);
                let tol = 8.0 * f64::EPSILON * (k as f64) * i0.abs();
                prop_assert!((st.current - expected).abs() <= tol,
                    "k={} got {} expected {}", k, st.current, expected);
            }
        }

        #[test]
        fn ifl_conserves_current(i0 in -5.0f64..5.0, steps in 1usize..500) {
            let m = NeuronModelSpec::ifl(1e12);
            let mut st = NeuronState { current: i0, voltage: 0.0, has_spiked: false };
            for _ in 0..steps {
                st = ifl_step(st, 0.0, &m).state;
            }
            prop_assert_eq!(st.current, i0);
        }

        #[test]
        fn spike_once_bounds_spikes(inputs in proptest::collection::vec(0.0f64..2.0, 1..300)) {
            let m = NeuronModelSpec::ifl(1.0).with_spike_once(true);
            let mut st = NeuronState::default();
            let mut n = 0;
            for x in inputs {
                let s = ifl_step(st, x, &m);
                n += s.spike as u32;
                st = s.state;
            }
            prop_assert!(n <= 1);
        }
    }

    #[test]
    fn params_are_classification_dot_products() {
        for kind in [NeuronKind::Lif, NeuronKind::Ifl, NeuronKind::AnnRelu] {
            let p = energy_params(kind);
            let upd: f64 = classify_update_ops(kind)
                .iter()
                .map(|o| o.count as f64 * if o.op == OpKind::Mac { 1.0 } else { 2.0 / 3.0 })
                .sum();
            assert_eq!(p.e_upd, upd);
        }
    }
}
