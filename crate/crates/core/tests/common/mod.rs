#![allow(dead_code)]

use std::path::{Path, PathBuf};

use emacprof::codec::{EncodedInput, EncodingMode};
use emacprof::netspec::{serialize_network, NetworkSpec, Shape};

/// Spike-train input with every element at rate `p` (1.0 pins it on).
pub fn poisson(shape: Shape, rates: Vec<f64>, seed: u64) -> EncodedInput {
    assert_eq!(shape.len(), rates.len());
    EncodedInput {
        mode: EncodingMode::PoissonSpikes,
        shape,
        values: rates,
        seed,
    }
}

pub fn analog(shape: Shape, values: Vec<f64>) -> EncodedInput {
    EncodedInput {
        mode: EncodingMode::AnalogCurrent,
        shape,
        values,
        seed: 0,
    }
}

/// Writes `net` as `<dir>/<stem>.json` plus `<dir>/<stem>.emwt`.
pub fn write_network(dir: &Path, stem: &str, net: &NetworkSpec) -> PathBuf {
    let (manifest, weights) = serialize_network(net);
    let path = dir.join(format!("{stem}.json"));
    std::fs::write(&path, manifest).unwrap();
    std::fs::write(dir.join(format!("{stem}.emwt")), weights).unwrap();
    path
}
