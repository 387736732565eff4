//! JSON manifest (version 1).
//!
//! ```json
//! {
//!   "version": 1,
//!   "coding": "roc",
//!   "max_timesteps": 64,
//!   "neuron_models": { "ifl": { "kind": "ifl", "v_th": 1.0, "spike_once": true } },
//!   "layers": [
//!     { "name": "fc", "kind": "dense", "input_shape": [4], "output_shape": [3],
//!       "neuron_model": "ifl", "weights_ref": "fc.w" }
//!   ]
//! }
//! ```
//!
//! `neuron_model` is either a key into `neuron_models` or an inline object.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    Coding, LayerKind, LayerSpec, NetSpecError, NetworkSpec, NeuronModelSpec, Padding, Shape,
    WeightStore,
};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    version: u32,
    coding: Coding,
    max_timesteps: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    neuron_models: BTreeMap<String, NeuronModelSpec>,
    layers: Vec<LayerDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum ModelRef {
    Named(String),
    Inline(NeuronModelSpec),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    kind: LayerKind,
    input_shape: Shape,
    output_shape: Shape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    padding: Option<Padding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    neuron_model: Option<ModelRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    recurrent_weights_ref: Option<String>,
}

/// Parses and validates a manifest together with its weights container.
pub fn parse_network(manifest_bytes: &[u8], weights_bytes: &[u8]) -> Result<NetworkSpec, NetSpecError> {
    let doc: ManifestDoc = serde_json::from_slice(manifest_bytes)
        .map_err(|e| NetSpecError::Schema(format!("manifest: {}", e)))?;
    if doc.version != MANIFEST_VERSION {
        return Err(NetSpecError::Schema(format!(
            "unsupported manifest version {} (expected {})",
            doc.version, MANIFEST_VERSION
        )));
    }
    let weights = WeightStore::from_bytes(weights_bytes)?;
    let mut layers = Vec::with_capacity(doc.layers.len());
    for (idx, l) in doc.layers.into_iter().enumerate() {
        let name = l.name.unwrap_or_else(|| format!("layer{}", idx));
        let neuron_model = match l.neuron_model {
            None => None,
            Some(ModelRef::Inline(m)) => Some(m),
            Some(ModelRef::Named(key)) => Some(
                doc.neuron_models
                    .get(&key)
                    .cloned()
                    .ok_or_else(|| NetSpecError::UnknownRef {
                        layer: name.clone(),
                        reference: key.clone(),
                    })?,
            ),
        };
        layers.push(LayerSpec {
            name,
            kind: l.kind,
            input_shape: l.input_shape,
            output_shape: l.output_shape,
            kernel: l.kernel,
            stride: l.stride.unwrap_or((1, 1)),
            padding: l.padding.unwrap_or_default(),
            neuron_model,
            weights_ref: l.weights_ref,
            recurrent_weights_ref: l.recurrent_weights_ref,
        });
    }
    NetworkSpec::new(doc.coding, doc.max_timesteps, layers, weights)
}

/// Writes a network back out as `(manifest JSON, weights container)`.
/// Neuron models are emitted inline.
pub fn serialize_network(net: &NetworkSpec) -> (Vec<u8>, Vec<u8>) {
    let doc = ManifestDoc {
        version: MANIFEST_VERSION,
        coding: net.coding,
        max_timesteps: net.max_timesteps,
        neuron_models: BTreeMap::new(),
        layers: net
            .layers
            .iter()
            .map(|l| LayerDoc {
                name: Some(l.name.clone()),
                kind: l.kind,
                input_shape: l.input_shape,
                output_shape: l.output_shape,
                kernel: l.kernel,
                stride: Some(l.stride),
                padding: Some(l.padding),
                neuron_model: l.neuron_model.clone().map(ModelRef::Inline),
                weights_ref: l.weights_ref.clone(),
                recurrent_weights_ref: l.recurrent_weights_ref.clone(),
            })
            .collect(),
    };
    let mut manifest = serde_json::to_vec_pretty(&doc).expect("manifest serializes");
    manifest.push(b'\n');
    (manifest, net.weights.to_bytes())
}
