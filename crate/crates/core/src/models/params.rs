use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named, contiguous slice of a flat parameter vector, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub blocks: Vec<ParamBlock>,
    /// Range of the output-layer parameters (W₀, b₀), used by the approximate rank test.
    pub output: std::ops::Range<usize>,
}

impl ParamLayout {
    pub fn total(&self) -> usize {
        self.blocks.last().map(|b| b.offset + b.len()).unwrap_or(0)
    }
}

/// A flat parameter vector θ together with the layout that maps it onto a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: ParamLayout,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: ParamLayout) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::Dimension(format!(
                "parameter vector has {} values, layout expects {}",
                values.len(),
                layout.total()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .blocks
            .iter()
            .find(|b| b.name == name)
            .map(|b| &self.values[b.range()])
    }

    /// The output-layer view of θ.
    pub fn output_layer(&self) -> &[f64] {
        &self.values[self.layout.output.clone()]
    }
}
