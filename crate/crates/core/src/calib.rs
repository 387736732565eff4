//! Hardware energy-model identification.
//!
//! Measured per-inference energies are fitted to `E ≈ S·e_syn_J + U·e_upd_J`
//! by least squares (no intercept), where `S` counts synaptic events and
//! `U` neuron updates. The fitted model predicts energy with a first-order
//! 1σ band for networks that were never measured.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emac::layer_pricing;
use crate::engine::{AggregateStats, SpikeTrace};
use crate::netspec::{NetworkSpec, NeuronKind};
use crate::neuron::{energy_params, AC_EMAC};

/// Largest accepted condition number of the column-equilibrated design
/// matrix.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("rank deficient: {0}")]
    RankDeficient(String),
    #[error("ill conditioned: condition number {0:.3e} >= 1e12")]
    IllConditioned(f64),
    #[error("invalid observation '{name}': {detail}")]
    InvalidObservation { name: String, detail: String },
    #[error("no measured energy supplied")]
    MissingMeasurement,
    #[error("observations file: {0}")]
    Csv(#[from] csv::Error),
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub name: String,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "U")]
    pub u: f64,
    #[serde(rename = "E_joules")]
    pub e_joules: f64,
    /// Inference latency, only needed to subtract floor power.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_s: Option<f64>,
}

impl Observation {
    pub fn new(name: impl Into<String>, s: f64, u: f64, e_joules: f64) -> Self {
        Observation {
            name: name.into(),
            s,
            u,
            e_joules,
            latency_s: None,
        }
    }

    fn check(&self) -> Result<(), CalibError> {
        let bad = |detail: &str| CalibError::InvalidObservation {
            name: self.name.clone(),
            detail: detail.to_string(),
        };
        if !(self.s >= 0.0) || !self.s.is_finite() {
            return Err(bad("S must be finite and >= 0"));
        }
        if !(self.u > 0.0) || !self.u.is_finite() {
            return Err(bad("U must be finite and > 0"));
        }
        if !(self.e_joules > 0.0) || !self.e_joules.is_finite() {
            return Err(bad("E_joules must be finite and > 0"));
        }
        Ok(())
    }
}

/// Fitted dimensional energy parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    #[serde(rename = "e_syn_J")]
    pub e_syn_j: f64,
    #[serde(rename = "e_upd_J")]
    pub e_upd_j: f64,
    /// Row-major 2×2 covariance of `(e_syn_J, e_upd_J)`, joules².
    pub cov: [f64; 4],
    pub residual_rms: f64,
    pub n_obs: usize,
}

impl EnergyModel {
    /// A negative parameter means the linear model does not describe the
    /// measurements well.
    pub fn has_negative_parameter(&self) -> bool {
        self.e_syn_j < 0.0 || self.e_upd_j < 0.0
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CalibError> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub e_joules: f64,
    pub sigma_joules: f64,
}

pub fn fit_energy_model(observations: &[Observation]) -> Result<EnergyModel, CalibError> {
    fit_energy_model_weighted(observations, &vec![1.0; observations.len()])
}

/// Weighted least squares; `weights[k]` is the inverse variance of
/// observation `k` up to a common factor.
pub fn fit_energy_model_weighted(observations: &[Observation], weights: &[f64]) -> Result<EnergyModel, CalibError> {
    let n = observations.len();
    if n < 2 {
        return Err(CalibError::RankDeficient(format!("need at least 2 observations, got {}", n)));
    }
    assert_eq!(weights.len(), n, "one weight per observation");
    for o in observations {
        o.check()?;
    }
    if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(CalibError::InvalidObservation {
            name: "weights".into(),
            detail: "weights must be positive".into(),
        });
    }

    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let x = DMatrix::from_fn(n, 2, |r, c| sw[r] * if c == 0 { observations[r].s } else { observations[r].u });
    let y = DVector::from_fn(n, |r, _| sw[r] * observations[r].e_joules);

    let scale = [x.column(0).norm(), x.column(1).norm()];
    if scale[0] == 0.0 || scale[1] == 0.0 {
        return Err(CalibError::RankDeficient("a regressor column is identically zero".into()));
    }
    let xs = DMatrix::from_fn(n, 2, |r, c| x[(r, c)] / scale[c]);
    let svd = xs.clone().svd(true, true);
    let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
    if smin <= smax * (n as f64) * f64::EPSILON {
        return Err(CalibError::RankDeficient("observations are collinear in (S, U)".into()));
    }
    let cond = smax / smin;
    if cond >= MAX_CONDITION {
        return Err(CalibError::IllConditioned(cond));
    }

    let beta = if n == 2 {
        // square system: Cramer's rule keeps exact data exact
        let (a, b, c, d) = (x[(0, 0)], x[(0, 1)], x[(1, 0)], x[(1, 1)]);
        let det = a * d - b * c;
        [(y[0] * d - b * y[1]) / det, (a * y[1] - y[0] * c) / det]
    } else {
        let z = svd.solve(&y, 0.0).expect("svd has u and v");
        [z[0] / scale[0], z[1] / scale[1]]
    };

    let fitted = |o: &Observation| o.s * beta[0] + o.u * beta[1];
    let resid: Vec<f64> = observations.iter().map(|o| o.e_joules - fitted(o)).collect();
    let rss_w: f64 = resid.iter().zip(weights).map(|(r, w)| w * r * r).sum();
    let residual_rms = (resid.iter().map(|r| r * r).sum::<f64>() / n as f64).sqrt();

    let cov = if n == 2 {
        [0.0; 4]
    } else {
        let sigma2 = rss_w / (n - 2) as f64;
        let v = svd.v_t.as_ref().expect("v_t").transpose();
        let s = &svd.singular_values;
        let mut m = [0.0; 4];
        for i in 0..2 {
            for j in 0..2 {
                let inv = (0..2).map(|k| v[(i, k)] * v[(j, k)] / (s[k] * s[k])).sum::<f64>();
                m[i * 2 + j] = sigma2 * inv / (scale[i] * scale[j]);
            }
        }
        // enforce exact symmetry
        let off = 0.5 * (m[1] + m[2]);
        m[1] = off;
        m[2] = off;
        m
    };

    let model = EnergyModel {
        e_syn_j: beta[0],
        e_upd_j: beta[1],
        cov,
        residual_rms,
        n_obs: n,
    };
    if model.has_negative_parameter() {
        log::warn!(
            "fitted energy model has a negative parameter (e_syn_J={:e}, e_upd_J={:e}); the linear model may not fit these measurements",
            model.e_syn_j,
            model.e_upd_j
        );
    }
    Ok(model)
}

/// `E = S·e_syn_J + U·e_upd_J`, `sigma = sqrt([S U]·cov·[S U]ᵀ)`.
pub fn predict_energy(model: &EnergyModel, s: f64, u: f64) -> Prediction {
    let c = &model.cov;
    let var = s * s * c[0] + s * u * (c[1] + c[2]) + u * u * c[3];
    Prediction {
        e_joules: s * model.e_syn_j + u * model.e_upd_j,
        sigma_joules: var.max(0.0).sqrt(),
    }
}

/// Synaptic events `S` and neuron updates `U` of one inference.
///
/// Events are weighted by their EMAC price relative to an accumulate, so a
/// MAC-priced analog encoder event counts 1.5. Updates are weighted by the
/// layer's `e_upd` relative to the reference kind; with a single neuron
/// kind `U = Σ n_n·T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Workload {
    pub s: f64,
    pub u: f64,
}

/// Kind of the first spiking layer; the unit in which `U` is expressed.
pub fn reference_kind(net: &NetworkSpec) -> Option<NeuronKind> {
    net.layers
        .iter()
        .filter_map(|l| l.neuron_kind())
        .find(|k| k.is_spiking())
}

pub fn workload(net: &NetworkSpec, trace: &SpikeTrace) -> Workload {
    let upd_ref = reference_kind(net).map(|k| energy_params(k).e_upd).unwrap_or(1.0);
    let mut s = 0.0;
    let mut u = 0.0;
    for (l, spec) in net.layers.iter().enumerate() {
        let (e_syn, e_upd) = layer_pricing(net, l, trace.analog_input);
        let events = (trace.feedforward_events[l] + trace.recurrent_events[l]) as f64;
        s += events * e_syn / AC_EMAC;
        if spec.kind.has_neurons() && e_upd > 0.0 {
            u += (spec.output_shape.len() * trace.t_used) as f64 * e_upd / upd_ref;
        }
    }
    Workload { s, u }
}

/// Dataset means of `S` and `U`, mergeable across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunTotals {
    pub n_samples: usize,
    pub s_mean: f64,
    pub u_mean: f64,
}

impl RunTotals {
    pub fn from_stats(net: &NetworkSpec, stats: &AggregateStats) -> RunTotals {
        let w: Vec<Workload> = stats.results.iter().map(|r| workload(net, &r.trace)).collect();
        let n = w.len().max(1) as f64;
        RunTotals {
            n_samples: w.len(),
            s_mean: w.iter().map(|x| x.s).sum::<f64>() / n,
            u_mean: w.iter().map(|x| x.u).sum::<f64>() / n,
        }
    }

    /// Combines two runs of the same network, weighting by sample count.
    pub fn merge(&self, other: &RunTotals) -> RunTotals {
        let n = self.n_samples + other.n_samples;
        if n == 0 {
            return *self;
        }
        let (a, b) = (self.n_samples as f64, other.n_samples as f64);
        RunTotals {
            n_samples: n,
            s_mean: (a * self.s_mean + b * other.s_mean) / n as f64,
            u_mean: (a * self.u_mean + b * other.u_mean) / n as f64,
        }
    }
}

/// Packages a dataset run with its measured per-inference energy.
pub fn observation_from_run(
    name: &str,
    net: &NetworkSpec,
    stats: &AggregateStats,
    measured_joules: Option<f64>,
) -> Result<Observation, CalibError> {
    observation_from_totals(name, &RunTotals::from_stats(net, stats), measured_joules)
}

pub fn observation_from_totals(name: &str, totals: &RunTotals, measured_joules: Option<f64>) -> Result<Observation, CalibError> {
    let e = measured_joules.ok_or(CalibError::MissingMeasurement)?;
    let o = Observation::new(name, totals.s_mean, totals.u_mean, e);
    o.check()?;
    Ok(o)
}

/// Removes idle consumption: `E - floor_watts·latency_s`.
pub fn subtract_floor(observations: &mut [Observation], floor_watts: f64) -> Result<(), CalibError> {
    for o in observations.iter_mut() {
        let lat = o.latency_s.ok_or_else(|| CalibError::InvalidObservation {
            name: o.name.clone(),
            detail: "floor-power subtraction needs a latency_s column".into(),
        })?;
        o.e_joules -= floor_watts * lat;
    }
    Ok(())
}

pub fn read_observations<R: Read>(reader: R) -> Result<Vec<Observation>, CalibError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for required in ["name", "S", "U", "E_joules"] {
        if !headers.iter().any(|h| h == required) {
            return Err(CalibError::InvalidObservation {
                name: "header".into(),
                detail: format!("missing column '{}' (expected name,S,U,E_joules)", required),
            });
        }
    }
    rdr.deserialize().map(|r| r.map_err(CalibError::from)).collect()
}

pub fn write_observations<W: Write>(writer: W, observations: &[Observation]) -> Result<(), CalibError> {
    let with_latency = observations.iter().any(|o| o.latency_s.is_some());
    let mut w = csv::Writer::from_writer(writer);
    if with_latency {
        w.write_record(["name", "S", "U", "E_joules", "latency_s"])?;
    } else {
        w.write_record(["name", "S", "U", "E_joules"])?;
    }
    for o in observations {
        let mut rec = vec![o.name.clone(), o.s.to_string(), o.u.to_string(), o.e_joules.to_string()];
        if with_latency {
            rec.push(o.latency_s.map(|l| l.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point() -> Vec<Observation> {
        vec![Observation::new("a", 10.0, 4.0, 32.0), Observation::new("b", 5.0, 8.0, 34.0)]
    }

    #[test]
    fn two_by_two_solve_is_exact() {
        let m = fit_energy_model(&two_point()).unwrap();
        assert_eq!((m.e_syn_j, m.e_upd_j), (2.0, 3.0));
        assert_eq!(m.cov, [0.0; 4]);
        let p = predict_energy(&m, 7.0, 6.0);
        assert_eq!((p.e_joules, p.sigma_joules), (32.0, 0.0));
        for o in two_point() {
            assert_eq!(predict_energy(&m, o.s, o.u).e_joules, o.e_joules);
        }
    }

    #[test]
    fn planted_recovery() {
        let (es, eu) = (1e-9, 5e-10);
        let obs: Vec<_> = [(1e6, 2e5), (3e6, 1e5), (2e5, 7e5)]
            .iter()
            .enumerate()
            .map(|(i, &(s, u))| Observation::new(format!("n{}", i), s, u, s * es + u * eu))
            .collect();
        let m = fit_energy_model(&obs).unwrap();
        assert!(((m.e_syn_j - es) / es).abs() < 1e-9);
        assert!(((m.e_upd_j - eu) / eu).abs() < 1e-9);
    }

    #[test]
    fn collinear_and_short_inputs() {
        let obs = vec![Observation::new("a", 1.0, 2.0, 1.0), Observation::new("b", 2.0, 4.0, 2.0)];
        let err = fit_energy_model(&obs).unwrap_err();
        assert!(matches!(err, CalibError::RankDeficient(_)));
        assert!(err.to_string().contains("rank deficient"));
        assert!(matches!(
            fit_energy_model(&obs[..1]),
            Err(CalibError::RankDeficient(_))
        ));
    }

    #[test]
    fn pure_update_prediction() {
        let m = fit_energy_model(&two_point()).unwrap();
        assert_eq!(predict_energy(&m, 0.0, 5.0).e_joules, 15.0);
    }

    #[test]
    fn covariance_is_symmetric_psd() {
        let obs: Vec<_> = (0..6)
            .map(|i| {
                let (s, u) = (1.0 + i as f64, 3.0 - 0.3 * i as f64);
                Observation::new(format!("{i}"), s, u, 2.0 * s + u + 0.01 * ((i % 3) as f64 - 1.0))
            })
            .collect();
        let m = fit_energy_model(&obs).unwrap();
        assert_eq!(m.cov[1], m.cov[2]);
        assert!(m.cov[0] >= 0.0 && m.cov[3] >= 0.0);
        assert!(m.cov[0] * m.cov[3] - m.cov[1] * m.cov[2] >= -1e-30);
    }

    #[test]
    fn merge_weights_by_samples() {
        let a = RunTotals { n_samples: 1, s_mean: 10.0, u_mean: 4.0 };
        let b = RunTotals { n_samples: 3, s_mean: 2.0, u_mean: 8.0 };
        let m = a.merge(&b);
        assert_eq!((m.n_samples, m.s_mean, m.u_mean), (4, 4.0, 7.0));
    }

    #[test]
    fn missing_measurement() {
        let t = RunTotals { n_samples: 1, s_mean: 0.0, u_mean: 6400.0 };
        assert!(matches!(observation_from_totals("x", &t, None), Err(CalibError::MissingMeasurement)));
        assert_eq!(observation_from_totals("x", &t, Some(1e-3)).unwrap().u, 6400.0);
    }

    #[test]
    fn csv_and_json_formats() {
        let text = "name,S,U,E_joules\na,10,4,32\nb,5,8,34\n";
        let obs = read_observations(text.as_bytes()).unwrap();
        assert_eq!(obs, two_point());
        let mut out = Vec::new();
        write_observations(&mut out, &obs).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
        let m = fit_energy_model(&obs).unwrap();
        let json = m.to_json();
        assert!(json.contains("\"e_syn_J\": 2.0"));
        assert!(json.contains("\"cov\""));
        assert_eq!(EnergyModel::from_json(&json).unwrap(), m);
        assert!(read_observations("name,S,E_joules\na,1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn floor_subtraction() {
        let mut obs = vec![Observation {
            latency_s: Some(0.5),
            ..Observation::new("a", 1.0, 1.0, 2.0)
        }];
        subtract_floor(&mut obs, 1.0).unwrap();
        assert_eq!(obs[0].e_joules, 1.5);
        let mut no_lat = two_point();
        assert!(subtract_floor(&mut no_lat, 1.0).is_err());
    }
}
