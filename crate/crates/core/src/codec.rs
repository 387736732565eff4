//! Input encoding and output decoding.
//!
//! Inputs are either injected as a static analog drive into the first
//! layer, or turned into Bernoulli spike trains by a counter-based
//! generator keyed on `(seed, element, timestep)`. Outputs are decoded by
//! first spike (rank order) or by peak membrane voltage.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netspec::Shape;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("input shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("spike probability {value} at element {index} is outside [0, 1]")]
    RateOutOfRange { index: usize, value: f64 },
    #[error("input value at element {0} is not finite")]
    NonFinite(usize),
    #[error("output spike raster is empty")]
    EmptyRaster,
    #[error("voltage history is empty")]
    EmptyHistory,
    #[error("tensor file {path}: {detail}")]
    Format { path: String, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingMode {
    AnalogCurrent,
    PoissonSpikes,
}

/// A raw input tensor, as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Option<Shape>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedInput {
    pub mode: EncodingMode,
    pub shape: Shape,
    pub values: Vec<f64>,
    pub seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw in `[0, 1)` that depends only on its key.
pub fn keyed_uniform(seed: u64, element: u64, t: u64) -> f64 {
    let h = splitmix64(seed ^ splitmix64(element ^ splitmix64(t.wrapping_mul(0xd1b5_4a32_d192_ed03))));
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

impl EncodedInput {
    /// Whether element `index` spikes at timestep `t` (1-based).
    pub fn poisson_spike(&self, index: usize, t: usize) -> bool {
        keyed_uniform(self.seed, index as u64, t as u64) < self.values[index]
    }

    /// Indices of input elements spiking at `t`; empty for analog input.
    pub fn spikes_at(&self, t: usize, out: &mut Vec<usize>) {
        out.clear();
        if self.mode == EncodingMode::PoissonSpikes {
            out.extend((0..self.values.len()).filter(|&i| self.poisson_spike(i, t)));
        }
    }
}

/// Validates `tensor` against the network input shape and wraps it.
pub fn encode(tensor: &Tensor, expected: Shape, mode: EncodingMode, seed: u64) -> Result<EncodedInput, CodecError> {
    let shape_ok = match tensor.shape {
        Some(s) => s == expected,
        None => tensor.data.len() == expected.len(),
    };
    if !shape_ok || tensor.data.len() != expected.len() {
        return Err(CodecError::ShapeMismatch {
            expected: expected.to_string(),
            found: tensor
                .shape
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("{} values", tensor.data.len())),
        });
    }
    let mut values = Vec::with_capacity(tensor.data.len());
    for (i, &v) in tensor.data.iter().enumerate() {
        let v = v as f64;
        if !v.is_finite() {
            return Err(CodecError::NonFinite(i));
        }
        if mode == EncodingMode::PoissonSpikes && !(0.0..=1.0).contains(&v) {
            return Err(CodecError::RateOutOfRange { index: i, value: v });
        }
        values.push(v);
    }
    Ok(EncodedInput {
        mode,
        shape: expected,
        values,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Decision {
    pub class_index: usize,
    pub latency_t: usize,
    pub fallback_used: bool,
}

fn argmax_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Class with the highest peak voltage over the history (`[t][neuron]`);
/// ties go to the lowest index.
pub fn decode_max_membrane(voltages: &[Vec<f64>]) -> Result<Decision, CodecError> {
    let n = voltages.first().map(Vec::len).unwrap_or(0);
    if n == 0 {
        return Err(CodecError::EmptyHistory);
    }
    let peaks = (0..n).map(|j| voltages.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max));
    Ok(Decision {
        class_index: argmax_first(peaks),
        latency_t: voltages.len(),
        fallback_used: false,
    })
}

/// Rank-order decoding: the earliest-spiking output neuron wins, ties to
/// the lowest index. A silent raster falls back to peak voltage with
/// latency `t_max`.
pub fn decode_roc(spikes: &[Vec<bool>], voltages: &[Vec<f64>], t_max: usize) -> Result<Decision, CodecError> {
    if spikes.is_empty() || spikes[0].is_empty() {
        return Err(CodecError::EmptyRaster);
    }
    for (t, row) in spikes.iter().enumerate() {
        if let Some(j) = row.iter().position(|&s| s) {
            return Ok(Decision {
                class_index: j,
                latency_t: t + 1,
                fallback_used: false,
            });
        }
    }
    let d = decode_max_membrane(voltages)?;
    Ok(Decision {
        class_index: d.class_index,
        latency_t: t_max,
        fallback_used: true,
    })
}

fn format_err(path: &Path, detail: impl Into<String>) -> CodecError {
    CodecError::Format {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

/// Reads a tensor from `.bin` (`shape=C,H,W` header line, then binary32
/// little-endian values) or `.csv` (flattened values).
pub fn read_tensor(path: &Path) -> Result<Tensor, CodecError> {
    let bytes = fs::read(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => parse_bin_tensor(&bytes).map_err(|d| format_err(path, d)),
        Some("csv") => parse_csv_tensor(&bytes).map_err(|d| format_err(path, d)),
        _ => Err(format_err(path, "expected a .bin or .csv extension")),
    }
}

pub fn parse_bin_tensor(bytes: &[u8]) -> Result<Tensor, String> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or("missing header line")?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| "header is not UTF-8")?;
    let dims = header
        .trim()
        .strip_prefix("shape=")
        .ok_or("header must start with 'shape='")?;
    let dims: Vec<usize> = dims
        .split(',')
        .map(|d| d.trim().parse::<usize>().map_err(|e| format!("bad dim '{}': {}", d, e)))
        .collect::<Result<_, _>>()?;
    let shape = Shape::try_from(dims)?;
    let payload = &bytes[nl + 1..];
    if payload.len() != shape.len() * 4 {
        return Err(format!(
            "shape {} needs {} bytes, found {}",
            shape,
            shape.len() * 4,
            payload.len()
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor {
        shape: Some(shape),
        data,
    })
}

pub fn parse_csv_tensor(bytes: &[u8]) -> Result<Tensor, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut data = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        for field in rec.iter().filter(|f| !f.is_empty()) {
            data.push(field.parse::<f32>().map_err(|e| format!("bad value '{}': {}", field, e))?);
        }
    }
    Ok(Tensor { shape: None, data })
}

pub fn write_bin_tensor(path: &Path, shape: Shape, data: &[f32]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    let dims: Vec<String> = shape.dims().iter().map(|d| d.to_string()).collect();
    writeln!(f, "shape={}", dims.join(","))?;
    for v in data {
        f.write_all(&v.to_le_bytes())?;
    }
    f.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat(values: Vec<f32>) -> Tensor {
        Tensor { shape: None, data: values }
    }

    #[test]
    fn analog_passes_through() {
        let e = encode(&flat(vec![0.0; 6]), Shape::Spatial(1, 2, 3), EncodingMode::AnalogCurrent, 0).unwrap();
        assert_eq!(e.values, vec![0.0; 6]);
        let mut buf = Vec::new();
        e.spikes_at(1, &mut buf);
        assert!(buf.is_empty());
    }

    #[test]
    fn shape_and_range_errors() {
        let err = encode(&flat(vec![0.0; 5]), Shape::Flat(6), EncodingMode::AnalogCurrent, 0);
        assert!(matches!(err, Err(CodecError::ShapeMismatch { .. })));
        let t = Tensor {
            shape: Some(Shape::Spatial(1, 3, 2)),
            data: vec![0.0; 6],
        };
        assert!(encode(&t, Shape::Spatial(1, 2, 3), EncodingMode::AnalogCurrent, 0).is_err());
        let err = encode(&flat(vec![0.5, 1.5]), Shape::Flat(2), EncodingMode::PoissonSpikes, 0);
        assert!(matches!(err, Err(CodecError::RateOutOfRange { index: 1, .. })));
    }

    #[test]
    fn certain_rate_spikes_every_step() {
        let e = encode(&flat(vec![1.0, 0.0]), Shape::Flat(2), EncodingMode::PoissonSpikes, 7).unwrap();
        for t in 1..=500 {
            assert!(e.poisson_spike(0, t));
            assert!(!e.poisson_spike(1, t));
        }
    }

    #[test]
    fn half_rate_concentrates() {
        let e = encode(&flat(vec![0.5]), Shape::Flat(1), EncodingMode::PoissonSpikes, 42).unwrap();
        let n = (1..=10_000).filter(|&t| e.poisson_spike(0, t)).count();
        let rate = n as f64 / 10_000.0;
        assert!((rate - 0.5).abs() <= 0.02, "rate {rate}");
    }

    #[test]
    fn roc_first_spike() {
        let mut spikes = vec![vec![false; 4]; 10];
        spikes[6][3] = true;
        spikes[8][1] = true;
        let d = decode_roc(&spikes, &[], 10).unwrap();
        assert_eq!((d.class_index, d.latency_t, d.fallback_used), (3, 7, false));
    }

    #[test]
    fn roc_tie_breaks_low() {
        let mut spikes = vec![vec![false; 6]; 5];
        spikes[3][5] = true;
        spikes[3][2] = true;
        assert_eq!(decode_roc(&spikes, &[], 5).unwrap().class_index, 2);
    }

    #[test]
    fn roc_silent_falls_back() {
        let spikes = vec![vec![false; 3]; 4];
        let volts = vec![vec![0.3, 0.1, 0.2]; 4];
        let d = decode_roc(&spikes, &volts, 16).unwrap();
        assert_eq!(d, Decision { class_index: 0, latency_t: 16, fallback_used: true });
        assert!(matches!(decode_roc(&[], &volts, 4), Err(CodecError::EmptyRaster)));
    }

    #[test]
    fn max_membrane_cases() {
        let d = decode_max_membrane(&[vec![0.2, 0.9, 0.1]]).unwrap();
        assert_eq!(d.class_index, 1);
        let d = decode_max_membrane(&[vec![0.5, 0.5, 0.5], vec![0.1, 0.2, 0.3]]).unwrap();
        assert_eq!((d.class_index, d.latency_t), (0, 2));
        let d = decode_max_membrane(&[vec![-3.0], vec![7.0]]).unwrap();
        assert_eq!(d.class_index, 0);
        assert!(matches!(decode_max_membrane(&[]), Err(CodecError::EmptyHistory)));
    }

    #[test]
    fn tensor_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        write_bin_tensor(&p, Shape::Spatial(1, 2, 2), &[1.0, 2.0, 3.0, 4.5]).unwrap();
        let t = read_tensor(&p).unwrap();
        assert_eq!(t.shape, Some(Shape::Spatial(1, 2, 2)));
        assert_eq!(t.data, vec![1.0, 2.0, 3.0, 4.5]);
        let c = dir.path().join("x.csv");
        std::fs::write(&c, "1, 2\n3,4.5\n").unwrap();
        assert_eq!(read_tensor(&c).unwrap().data, vec![1.0, 2.0, 3.0, 4.5]);
        let bad = dir.path().join("x.txt");
        std::fs::write(&bad, "1").unwrap();
        assert!(read_tensor(&bad).is_err());
    }

    proptest! {
        #[test]
        fn roc_ignores_raster_after_first_spike(
            n in 1usize..8, t in 1usize..20, first in 0usize..20, who in 0usize..8, seed in any::<u64>()
        ) {
            let first = first % t;
            let who = who % n;
            let mut spikes = vec![vec![false; n]; t];
            spikes[first][who] = true;
            let base = decode_roc(&spikes, &vec![vec![0.0; n]; t], t).unwrap();
            for (k, row) in spikes.iter_mut().enumerate().skip(first + 1) {
                for (j, s) in row.iter_mut().enumerate() {
                    *s = keyed_uniform(seed, j as u64, k as u64) < 0.5;
                }
            }
            prop_assert_eq!(decode_roc(&spikes, &vec![vec![0.0; n]; t], t).unwrap(), base);
        }

        #[test]
        fn max_membrane_scale_invariant(
            v in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 4), 1..10),
            c in 0.01f64..100.0
        ) {
            let scaled: Vec<Vec<f64>> = v.iter().map(|r| r.iter().map(|x| x * c).collect()).collect();
            prop_assert_eq!(
                decode_max_membrane(&v).unwrap().class_index,
                decode_max_membrane(&scaled).unwrap().class_index
            );
        }

        #[test]
        fn poisson_is_reproducible(seed in any::<u64>(), p in 0.0f64..1.0) {
            let e = encode(&flat(vec![p as f32; 16]), Shape::Flat(16), EncodingMode::PoissonSpikes, seed).unwrap();
            let mut a = Vec::new();
            let mut b = Vec::new();
            for t in 1..20 {
                e.spikes_at(t, &mut a);
                e.clone().spikes_at(t, &mut b);
                prop_assert_eq!(&a, &b);
            }
        }
    }
}
