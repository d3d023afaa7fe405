use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use super::{LayerKind, LayerSpec};
use crate::error::{Error, Result};

/// One tensor inside a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSlot {
    /// 1-based layer id.
    pub layer: usize,
    /// `[out, in]` for weights, `[out]` for biases.
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSlot {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// All parameters of a network, flattened in canonical layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<TensorSlot>,
}

pub(super) fn layout_for(layers: &[LayerSpec]) -> Vec<TensorSlot> {
    let mut slots = Vec::new();
    let mut offset = 0;
    for (i, l) in layers.iter().enumerate() {
        let maps = match l.kind {
            LayerKind::Linear | LayerKind::LinearRelu => 1,
            LayerKind::Residual { inner_layers } => inner_layers,
        };
        for _ in 0..maps {
            let shape = vec![l.out_dim, l.in_dim];
            let n = l.out_dim * l.in_dim;
            slots.push(TensorSlot { layer: i + 1, shape, offset });
            offset += n;
            if l.has_bias {
                slots.push(TensorSlot { layer: i + 1, shape: vec![l.out_dim], offset });
                offset += l.out_dim;
            }
        }
    }
    slots
}

impl ParamVector {
    pub(super) fn zeros(layout: Vec<TensorSlot>) -> Self {
        let n = layout.last().map_or(0, |s| s.offset + s.numel());
        Self { values: vec![0.0; n], layout }
    }

    /// Assembles a vector from raw parts, checking that the slots tile the
    /// values contiguously in non-decreasing layer order.
    pub fn from_parts(layout: Vec<TensorSlot>, values: Vec<f64>) -> Result<Self> {
        let mut expected = 0;
        let mut last_layer = 0;
        for (i, s) in layout.iter().enumerate() {
            if s.offset != expected {
                return Err(Error::Format {
                    offset: 0,
                    msg: format!("tensor {i} starts at {} instead of {expected}", s.offset),
                });
            }
            if s.layer < last_layer || s.layer == 0 {
                return Err(Error::Format {
                    offset: 0,
                    msg: format!("tensor {i} has out-of-order layer id {}", s.layer),
                });
            }
            last_layer = s.layer;
            expected += s.numel();
        }
        if expected != values.len() {
            return Err(Error::Format {
                offset: 0,
                msg: format!("layout covers {expected} values, payload has {}", values.len()),
            });
        }
        Ok(Self { values, layout })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &[TensorSlot] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Highest layer id in the layout.
    pub fn num_layers(&self) -> usize {
        self.layout.last().map_or(0, |s| s.layer)
    }

    pub fn layer_slots(&self, layer: usize) -> Vec<TensorSlot> {
        self.layout.iter().filter(|s| s.layer == layer).cloned().collect()
    }

    /// Contiguous value range holding every tensor of `layer`.
    pub fn layer_range(&self, layer: usize) -> Range<usize> {
        let mut slots = self.layout.iter().filter(|s| s.layer == layer);
        match slots.next() {
            None => 0..0,
            Some(first) => {
                let end = slots.next_back().unwrap_or(first);
                first.offset..end.offset + end.numel()
            }
        }
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.layout == other.layout
    }

    pub(crate) fn check_layout(&self, other: &ParamVector) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Format {
                offset: 0,
                msg: format!(
                    "parameter layout mismatch ({} tensors / {} values vs {} tensors / {} values)",
                    self.layout.len(),
                    self.values.len(),
                    other.layout.len(),
                    other.values.len()
                ),
            })
        }
    }

    /// Same layout, every value set to `v`.
    pub fn filled(&self, v: f64) -> ParamVector {
        ParamVector { values: vec![v; self.values.len()], layout: self.layout.clone() }
    }
}
