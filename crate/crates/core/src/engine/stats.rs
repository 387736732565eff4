//! Dataset runs and their summary statistics (mean and population standard
//! deviation, accumulated in sample-index order).

use rayon::prelude::*;
use serde::Serialize;

use super::{EngineError, EngineOptions, InferenceResult, Simulator};
use crate::codec::EncodedInput;
use crate::emac::EnergyReport;
use crate::netspec::NetworkSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    /// Population statistics (divide by N). Empty input gives zeros.
    pub fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Summary { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerEnergyStats {
    pub name: String,
    pub kind: String,
    pub e_syn: Summary,
    pub e_upd: Summary,
    pub e_rec: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyStats {
    pub e_tot: Summary,
    pub e_syn: Summary,
    pub e_upd: Summary,
    pub e_rec: Summary,
    pub e_syn_pool: Summary,
    pub e_syn_plus_rec: Summary,
    pub layers: Vec<LayerEnergyStats>,
}

impl EnergyStats {
    fn from_reports(reports: &[&EnergyReport]) -> EnergyStats {
        let col = |f: &dyn Fn(&EnergyReport) -> f64| Summary::of(&reports.iter().map(|r| f(r)).collect::<Vec<_>>());
        let n_layers = reports.first().map(|r| r.layers.len()).unwrap_or(0);
        let layers = (0..n_layers)
            .map(|l| LayerEnergyStats {
                name: reports[0].layers[l].name.clone(),
                kind: reports[0].layers[l].kind.clone(),
                e_syn: col(&|r| r.layers[l].e_syn),
                e_upd: col(&|r| r.layers[l].e_upd),
                e_rec: col(&|r| r.layers[l].e_rec),
            })
            .collect();
        EnergyStats {
            e_tot: col(&|r| r.e_tot),
            e_syn: col(&|r| r.e_syn),
            e_upd: col(&|r| r.e_upd),
            e_rec: col(&|r| r.e_rec),
            e_syn_pool: col(&|r| r.e_syn_pool),
            e_syn_plus_rec: col(&|r| r.e_syn_plus_rec),
            layers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSpikeStats {
    pub name: String,
    pub spikes: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleFailure {
    pub index: usize,
    pub error: String,
    /// The sample hit a non-finite neuron state.
    pub non_finite: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateStats {
    pub n_samples: usize,
    #[serde(skip)]
    pub results: Vec<InferenceResult>,
    pub analytic: EnergyStats,
    pub exact: EnergyStats,
    pub spikes: Vec<LayerSpikeStats>,
    pub total_spikes: Summary,
    pub t_used: Summary,
    pub fallbacks: usize,
}

impl AggregateStats {
    pub fn from_results(net: &NetworkSpec, results: Vec<InferenceResult>) -> Result<AggregateStats, EngineError> {
        if results.is_empty() {
            return Err(EngineError::EmptyDataset);
        }
        let analytic: Vec<&EnergyReport> = results.iter().map(|r| &r.energy.analytic).collect();
        let exact: Vec<&EnergyReport> = results.iter().map(|r| &r.energy.exact).collect();
        let spikes = net
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| LayerSpikeStats {
                name: layer.name.clone(),
                spikes: Summary::of(&results.iter().map(|r| r.trace.layer_spikes(l) as f64).collect::<Vec<_>>()),
            })
            .collect();
        Ok(AggregateStats {
            n_samples: results.len(),
            analytic: EnergyStats::from_reports(&analytic),
            exact: EnergyStats::from_reports(&exact),
            spikes,
            total_spikes: Summary::of(&results.iter().map(|r| r.trace.total_spikes() as f64).collect::<Vec<_>>()),
            t_used: Summary::of(&results.iter().map(|r| r.trace.t_used as f64).collect::<Vec<_>>()),
            fallbacks: results.iter().filter(|r| r.decision.fallback_used).count(),
            results,
        })
    }
}

/// Runs every sample and aggregates. With `jobs > 1` samples run on a
/// bounded worker pool; results are still aggregated in input order so the
/// statistics do not depend on scheduling.
pub fn run_dataset(
    net: &NetworkSpec,
    samples: &[EncodedInput],
    opts: EngineOptions,
    jobs: usize,
) -> Result<AggregateStats, EngineError> {
    if samples.is_empty() {
        return Err(EngineError::EmptyDataset);
    }
    let sim = Simulator::new(net, opts);
    let outcomes: Vec<Result<InferenceResult, EngineError>> = if jobs <= 1 {
        samples.iter().map(|s| sim.run(s)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .expect("thread pool");
        pool.install(|| samples.par_iter().map(|s| sim.run(s)).collect())
    };
    let mut results = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for (index, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => results.push(r),
            Err(e) => failures.push(SampleFailure {
                index,
                non_finite: matches!(e, EngineError::NonFiniteState { .. }),
                error: e.to_string(),
            }),
        }
    }
    if !failures.is_empty() {
        return Err(EngineError::SampleFailures(failures));
    }
    AggregateStats::from_results(net, results)
}
