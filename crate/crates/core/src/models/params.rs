use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    Weight,
    Bias,
}

/// One contiguous block of the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub layer: usize,
    pub kind: BlockKind,
    /// `(rows, cols)`; biases are `(out, 1)`.
    pub shape: (usize, usize),
    pub offset: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.shape.0 * self.shape.1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Layer structure of a flat parameter vector: for every layer the weight
/// block (`out x in`, row-major) followed by its bias block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    widths: Vec<usize>,
    blocks: Vec<ParamBlock>,
    len: usize,
}

impl ParamLayout {
    pub fn for_widths(widths: &[usize]) -> Self {
        let mut blocks = Vec::with_capacity(2 * widths.len());
        let mut offset = 0;
        for (layer, w) in widths.windows(2).enumerate() {
            let weight = ParamBlock {
                layer,
                kind: BlockKind::Weight,
                shape: (w[1], w[0]),
                offset,
            };
            offset += weight.len();
            let bias = ParamBlock {
                layer,
                kind: BlockKind::Bias,
                shape: (w[1], 1),
                offset,
            };
            offset += bias.len();
            blocks.push(weight);
            blocks.push(bias);
        }
        ParamLayout {
            widths: widths.to_vec(),
            blocks,
            len: offset,
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn depth(&self) -> usize {
        self.widths.len().saturating_sub(1)
    }

    pub fn weight_block(&self, layer: usize) -> ParamBlock {
        self.blocks[2 * layer]
    }

    pub fn bias_block(&self, layer: usize) -> ParamBlock {
        self.blocks[2 * layer + 1]
    }
}

/// Flat view of all weights and biases of an MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    layout: Arc<ParamLayout>,
    values: Array1<f64>,
}

impl ParamVector {
    pub fn from_vec(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        Self::from_array(Arc::new(layout), Array1::from(values))
    }

    pub fn from_array(layout: Arc<ParamLayout>, values: Array1<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::config(format!(
                "parameter vector has {} entries, layout expects {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(ParamVector { layout, values })
    }

    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let values = Array1::zeros(layout.len());
        ParamVector { layout, values }
    }

    pub fn zeros_like(&self) -> Self {
        ParamVector::zeros(self.layout.clone())
    }

    /// Same layout, new values. Panics on a length mismatch.
    pub fn with_values(&self, values: Array1<f64>) -> Self {
        assert_eq!(values.len(), self.layout.len(), "parameter length mismatch");
        ParamVector {
            layout: self.layout.clone(),
            values,
        }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn shared_layout(&self) -> Arc<ParamLayout> {
        self.layout.clone()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array1<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> Array1<f64> {
        self.values
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice().expect("contiguous")
    }

    pub fn weight(&self, layer: usize) -> ArrayView2<'_, f64> {
        let b = self.layout.weight_block(layer);
        ArrayView2::from_shape(b.shape, &self.as_slice()[b.range()]).expect("layout shape")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let b = self.layout.bias_block(layer);
        ArrayView1::from(&self.as_slice()[b.range()])
    }

    /// Per-layer `(weight, bias)` copies.
    pub fn unflatten(&self) -> Vec<(Array2<f64>, Array1<f64>)> {
        (0..self.layout.depth())
            .map(|l| (self.weight(l).to_owned(), self.bias(l).to_owned()))
            .collect()
    }

    /// Inverse of [`ParamVector::unflatten`].
    pub fn flatten(layout: ParamLayout, layers: &[(Array2<f64>, Array1<f64>)]) -> Result<Self> {
        if layers.len() != layout.depth() {
            return Err(Error::config("layer count does not match layout"));
        }
        let mut values = Vec::with_capacity(layout.len());
        for (l, (w, b)) in layers.iter().enumerate() {
            if w.dim() != layout.weight_block(l).shape || b.len() != layout.bias_block(l).len() {
                return Err(Error::config(format!("layer {l} has the wrong shape")));
            }
            values.extend(w.iter().copied());
            values.extend(b.iter().copied());
        }
        ParamVector::from_vec(layout, values)
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.values.dot(&other.values)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) {
        self.values.scaled_add(alpha, &other.values);
    }

    pub fn scale_in_place(&mut self, factor: f64) {
        self.values.mapv_inplace(|v| v * factor);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same_layout(&self, other: &ParamVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::config(format!(
                "parameter length {} does not match {}",
                other.len(),
                self.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_extents_sum_to_len() {
        let layout = ParamLayout::for_widths(&[3, 5, 2]);
        assert_eq!(layout.len(), 3 * 5 + 5 + 5 * 2 + 2);
        let total: usize = layout.blocks().iter().map(ParamBlock::len).sum();
        assert_eq!(total, layout.len());
        assert_eq!(layout.bias_block(1).offset, 3 * 5 + 5 + 10);
    }

    proptest! {
        #[test]
        fn flatten_unflatten_round_trip(
            widths in proptest::collection::vec(1usize..6, 2..5),
            seed in any::<u64>(),
        ) {
            let layout = ParamLayout::for_widths(&widths);
            let values: Vec<f64> = (0..layout.len())
                .map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64 * 1e-3 - 0.5)
                .collect();
            let p = ParamVector::from_vec(layout.clone(), values).unwrap();
            let q = ParamVector::flatten(layout, &p.unflatten()).unwrap();
            prop_assert_eq!(p, q);
        }
    }
}
