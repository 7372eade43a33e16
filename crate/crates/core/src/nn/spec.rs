use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

/// One convolution stage: same-padded `kernel_rows x kernel_time` kernels,
/// activation, then non-overlapping max pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvStage {
    pub maps: usize,
    pub kernel_rows: usize,
    pub kernel_time: usize,
    pub pool_rows: usize,
    pub pool_time: usize,
}

impl ConvStage {
    pub fn new(maps: usize, pool_rows: usize, pool_time: usize) -> Self {
        ConvStage {
            maps,
            kernel_rows: 4,
            kernel_time: 16,
            pool_rows,
            pool_time,
        }
    }
}

/// Architecture of the regressor. Input is `input_rows x input_len` (one
/// real/imaginary row per channel component), output is a single unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_rows: usize,
    pub input_len: usize,
    pub conv: Vec<ConvStage>,
    pub dense: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self::with_maps(128, 64)
    }
}

impl NetworkSpec {
    fn with_maps(input_len: usize, maps: usize) -> Self {
        let mut conv = vec![ConvStage::new(maps, 2, 2); 2];
        conv.extend([ConvStage::new(maps, 1, 2); 3]);
        NetworkSpec {
            input_rows: 4,
            input_len,
            conv,
            dense: vec![128, 32],
            hidden_activation: Activation::Relu,
            output_activation: Activation::Tanh,
        }
    }

    /// Full architecture at a different input length.
    pub fn with_input_len(mut self, input_len: usize) -> Self {
        self.input_len = input_len;
        self
    }

    /// Same topology with 4 maps per stage and `T = 64`; cheap enough for
    /// finite-difference checks.
    pub fn reduced() -> Self {
        let mut s = Self::with_maps(64, 4);
        s.dense = vec![8, 4];
        s
    }

    /// No convolutions, identity activations and a single dense layer.
    pub fn linear_toy(input_rows: usize, input_len: usize) -> Self {
        NetworkSpec {
            input_rows,
            input_len,
            conv: Vec::new(),
            dense: Vec::new(),
            hidden_activation: Activation::Identity,
            output_activation: Activation::Identity,
        }
    }

    /// Validates the pooling schedule and returns the per-stage geometry.
    pub(crate) fn geometry(&self) -> Result<Vec<StageGeom>> {
        if self.input_rows == 0 || self.input_len == 0 {
            return Err(Error::InvalidConfig("network input must be non-empty".into()));
        }
        if self.dense.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig("dense widths must be >= 1".into()));
        }
        let (mut rows, mut len, mut cin) = (self.input_rows, self.input_len, 1);
        let mut out = Vec::with_capacity(self.conv.len());
        for (i, c) in self.conv.iter().enumerate() {
            if c.maps == 0 || c.kernel_rows == 0 || c.kernel_time == 0 || c.pool_rows == 0 || c.pool_time == 0 {
                return Err(Error::InvalidConfig(format!("conv stage {i} has a zero dimension")));
            }
            if rows % c.pool_rows != 0 || len % c.pool_time != 0 {
                return Err(Error::InvalidConfig(format!(
                    "conv stage {i}: pool {}x{} does not divide {}x{}",
                    c.pool_rows, c.pool_time, rows, len
                )));
            }
            out.push(StageGeom {
                rows,
                len,
                cin,
                cout: c.maps,
                kr: c.kernel_rows,
                kt: c.kernel_time,
                pad_top: (c.kernel_rows - 1) / 2,
                pad_left: (c.kernel_time - 1) / 2,
                pool_rows: c.pool_rows,
                pool_time: c.pool_time,
            });
            rows /= c.pool_rows;
            len /= c.pool_time;
            cin = c.maps;
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry().map(|_| ())
    }

    /// Length of the flattened feature vector after the last stage.
    pub fn flattened_size(&self) -> Result<usize> {
        let g = self.geometry()?;
        Ok(match g.last() {
            Some(s) => s.out_rows() * s.out_len() * s.cout,
            None => self.input_rows * self.input_len,
        })
    }

    pub(crate) fn dense_dims(&self) -> Result<Vec<usize>> {
        let mut dims = vec![self.flattened_size()?];
        dims.extend(&self.dense);
        dims.push(1);
        Ok(dims)
    }

    pub fn layout(&self) -> Result<ParamLayout> {
        ParamLayout::new(self)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.layout()?.total)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct StageGeom {
    pub rows: usize,
    pub len: usize,
    pub cin: usize,
    pub cout: usize,
    pub kr: usize,
    pub kt: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub pool_rows: usize,
    pub pool_time: usize,
}

impl StageGeom {
    pub fn padded_len(&self) -> usize {
        self.len + self.kt - 1
    }
    pub fn out_rows(&self) -> usize {
        self.rows / self.pool_rows
    }
    pub fn out_len(&self) -> usize {
        self.len / self.pool_time
    }
    /// Input row read by kernel row `i` for output row `r`, if inside.
    pub fn input_row(&self, r: usize, i: usize) -> Option<usize> {
        (r + i).checked_sub(self.pad_top).filter(|&q| q < self.rows)
    }
}

/// A named weight or bias block inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    /// Index of the conv stage or dense layer the block belongs to, counting
    /// conv stages first.
    pub layer: usize,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat parameter layout in declaration order: per conv stage a weight
/// `[kernel_rows][kernel_time][in_maps][out_maps]` then a bias, then per
/// dense layer a weight `[in][out]` then a bias.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub blocks: Vec<ParamBlock>,
    pub total: usize,
    pub layers: usize,
}

impl ParamLayout {
    fn new(spec: &NetworkSpec) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, layer: usize, shape: Vec<usize>| {
            let b = ParamBlock {
                name,
                layer,
                offset,
                shape,
            };
            offset += b.len();
            blocks.push(b);
        };
        let geom = spec.geometry()?;
        for (i, g) in geom.iter().enumerate() {
            push(format!("conv{i}.weight"), i, vec![g.kr, g.kt, g.cin, g.cout]);
            push(format!("conv{i}.bias"), i, vec![g.cout]);
        }
        let dims = spec.dense_dims()?;
        for (j, w) in dims.windows(2).enumerate() {
            let layer = geom.len() + j;
            let name = if j + 2 == dims.len() { "output".to_string() } else { format!("dense{j}") };
            push(format!("{name}.weight"), layer, vec![w[0], w[1]]);
            push(format!("{name}.bias"), layer, vec![w[1]]);
        }
        Ok(ParamLayout {
            blocks,
            total: offset,
            layers: geom.len() + dims.len() - 1,
        })
    }
}
