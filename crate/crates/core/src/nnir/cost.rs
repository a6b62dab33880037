use serde::{Deserialize, Serialize};

use super::{param_shape, LayerKind, ModelGraph};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub macs: u64,
    pub params: u64,
}

/// Multiply-accumulate and parameter totals for a graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub total_macs: u64,
    pub total_params: u64,
    pub per_layer: Vec<LayerCost>,
}

pub fn count_macs(g: &ModelGraph) -> CostReport {
    let per_layer: Vec<LayerCost> = g
        .layers()
        .iter()
        .map(|l| {
            let input = g.shape_of(&l.inputs[0]).unwrap();
            let out = g.shape_of(&l.name).unwrap();
            let macs = match &l.kind {
                LayerKind::Conv1D { kernel, .. } => out.elements() * kernel * input.channels(),
                LayerKind::Conv2D { kernel, .. } => out.elements() * kernel[0] * kernel[1] * input.channels(),
                LayerKind::Dense { units } => input.elements() * units,
                _ => 0,
            } as u64;
            let (k, b) = param_shape(&l.kind, input);
            LayerCost { name: l.name.clone(), macs, params: (k + b) as u64 }
        })
        .collect();
    CostReport {
        total_macs: per_layer.iter().map(|c| c.macs).sum(),
        total_params: per_layer.iter().map(|c| c.params).sum(),
        per_layer,
    }
}
