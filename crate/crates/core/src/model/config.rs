use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Every width and depth of the network. Widths the architecture leaves open
/// are free here; only the constraints needed for the element-wise fusion and
/// the x8 down/up-sampling budget are enforced.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// `(height, width)`, both divisible by 8.
    pub input_size: (usize, usize),
    /// Output channels of the six character-stream convolutions.
    pub cts_channels: [usize; 6],
    /// Internal layer count `n` of each feature-enhanced block.
    pub feb_layers: [usize; 3],
    /// Channel width carried through each feature-enhanced block.
    pub feb_channels: [usize; 3],
    /// Growth rate of every dense block (image stream and decoder).
    pub ddb_growth: usize,
    /// Layers per dense block.
    pub ddb_layers: usize,
    /// 1x1 output channels of the five image-stream transpose layers.
    pub its_transpose_channels: [usize; 5],
    /// 1x1 output channels of the two decoder transpose layers.
    pub fln_transpose_channels: [usize; 2],
    /// Output channels of the three decoder deconvolutions.
    pub fln_deconv_channels: [usize; 3],
    /// Channel width at which the two streams are added.
    pub fusion_channels: usize,
}

impl Default for ModelConfig {
    /// Desk-scale configuration: 64x64 input, fusion width 32.
    fn default() -> Self {
        Self {
            input_size: (64, 64),
            cts_channels: [16, 16, 32, 32, 32, 32],
            feb_layers: [3, 3, 3],
            feb_channels: [16, 16, 32],
            ddb_growth: 8,
            ddb_layers: 3,
            its_transpose_channels: [16, 32, 16, 16, 32],
            fln_transpose_channels: [16, 16],
            fln_deconv_channels: [32, 16, 16],
            fusion_channels: 32,
        }
    }
}

impl ModelConfig {
    /// Narrow configuration used for fast experiments and gradient checks.
    pub fn tiny() -> Self {
        Self {
            input_size: (64, 64),
            cts_channels: [8, 8, 8, 16, 32, 32],
            feb_layers: [2, 2, 2],
            feb_channels: [8, 8, 8],
            ddb_growth: 4,
            ddb_layers: 2,
            its_transpose_channels: [8, 8, 8, 16, 32],
            fln_transpose_channels: [8, 8],
            fln_deconv_channels: [16, 8, 8],
            fusion_channels: 32,
        }
    }

    pub fn with_input_size(mut self, height: usize, width: usize) -> Self {
        self.input_size = (height, width);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fields = self.to_fields();
        if fields.contains(&0) {
            return Err(Error::Config("every size, width and depth must be positive".into()));
        }
        let (h, w) = self.input_size;
        if h % 8 != 0 || w % 8 != 0 {
            return Err(Error::Config(format!("input size {h}x{w} is not divisible by 8")));
        }
        if self.cts_channels[5] != self.fusion_channels {
            return Err(Error::Config(format!(
                "character stream ends at {} channels but fusion width is {}",
                self.cts_channels[5], self.fusion_channels
            )));
        }
        if self.its_transpose_channels[4] != self.fusion_channels {
            return Err(Error::Config(format!(
                "image stream ends at {} channels but fusion width is {}",
                self.its_transpose_channels[4], self.fusion_channels
            )));
        }
        for i in 0..2 {
            if self.its_transpose_channels[i] != self.feb_channels[i + 1] {
                return Err(Error::Config(format!(
                    "transpose layer {} emits {} channels but feature-enhanced block {} carries {}",
                    i + 1,
                    self.its_transpose_channels[i],
                    i + 2,
                    self.feb_channels[i + 1]
                )));
            }
        }
        Ok(())
    }

    /// Flat field order used by the checkpoint header.
    pub fn to_fields(&self) -> Vec<usize> {
        let mut v = Vec::with_capacity(Self::FIELD_COUNT);
        v.push(self.input_size.0);
        v.push(self.input_size.1);
        v.extend_from_slice(&self.cts_channels);
        v.extend_from_slice(&self.feb_layers);
        v.extend_from_slice(&self.feb_channels);
        v.push(self.ddb_growth);
        v.push(self.ddb_layers);
        v.extend_from_slice(&self.its_transpose_channels);
        v.extend_from_slice(&self.fln_transpose_channels);
        v.extend_from_slice(&self.fln_deconv_channels);
        v.push(self.fusion_channels);
        v
    }

    pub const FIELD_COUNT: usize = 27;

    pub fn from_fields(f: &[usize]) -> Result<Self> {
        if f.len() != Self::FIELD_COUNT {
            return Err(Error::Config(format!("expected {} fields, got {}", Self::FIELD_COUNT, f.len())));
        }
        let arr = |at: usize, n: usize| -> Vec<usize> { f[at..at + n].to_vec() };
        let cfg = Self {
            input_size: (f[0], f[1]),
            cts_channels: arr(2, 6).try_into().expect("len 6"),
            feb_layers: arr(8, 3).try_into().expect("len 3"),
            feb_channels: arr(11, 3).try_into().expect("len 3"),
            ddb_growth: f[14],
            ddb_layers: f[15],
            its_transpose_channels: arr(16, 5).try_into().expect("len 5"),
            fln_transpose_channels: arr(21, 2).try_into().expect("len 2"),
            fln_deconv_channels: arr(23, 3).try_into().expect("len 3"),
            fusion_channels: f[26],
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
