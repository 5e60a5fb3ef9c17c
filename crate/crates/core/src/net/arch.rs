use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where the shortcut's pooling layer sits relative to its convolutional block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShortcutPool {
    /// Block runs at conv2 resolution, then pools down to conv5's size.
    #[default]
    AfterBlock,
    /// Pools conv2's output first; the block runs at conv5 resolution.
    BeforeBlock,
}

impl ShortcutPool {
    pub fn as_str(self) -> &'static str {
        match self {
            ShortcutPool::AfterBlock => "after",
            ShortcutPool::BeforeBlock => "before",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "after" => Some(Self::AfterBlock),
            "before" => Some(Self::BeforeBlock),
            _ => None,
        }
    }
}

/// Network shape: six 3x3 conv units, an optional shortcut from conv2 into
/// conv5 through a stack of conv units, and two dense layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub patch_size: usize,
    pub conv_channels: [usize; 6],
    pub residual_block_depth: usize,
    pub fc_width: usize,
    pub num_classes: usize,
    pub enable_residual: bool,
    pub shortcut_pool: ShortcutPool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            patch_size: 64,
            conv_channels: [32, 32, 64, 64, 128, 128],
            residual_block_depth: 15,
            fc_width: 256,
            num_classes: 2,
            enable_residual: true,
            shortcut_pool: ShortcutPool::AfterBlock,
        }
    }
}

pub const KERNEL_SIZE: usize = 3;
pub const INPUT_CHANNELS: usize = 3;
/// Spatial reduction between conv2 and conv5 (two 2x2 pools on the main path).
pub const SHORTCUT_POOL_WINDOW: usize = 4;

/// Shape of one named parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvKernel,
    BnScale,
    BnShift,
    DenseWeights,
    DenseBias,
}

impl ParamKind {
    /// Weight tensors, as opposed to biases and normalization affine terms.
    pub fn is_weight(self) -> bool {
        matches!(self, ParamKind::ConvKernel | ParamKind::DenseWeights)
    }
}

impl ArchConfig {
    /// The layout used by the gradient checks: narrow channels, shallow shortcut, 16px patches.
    pub fn reduced() -> Self {
        Self {
            patch_size: 16,
            conv_channels: [4, 4, 8, 8, 8, 8],
            residual_block_depth: 3,
            fc_width: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 8 || !self.patch_size.is_multiple_of(8) {
            return Err(Error::InvalidArch(format!(
                "patch size must be a positive multiple of 8 (three 2x2 pools), got {}",
                self.patch_size
            )));
        }
        if self.conv_channels.contains(&0) {
            return Err(Error::InvalidArch(format!("conv channels must be positive: {:?}", self.conv_channels)));
        }
        if self.enable_residual && self.residual_block_depth == 0 {
            return Err(Error::InvalidArch("residual block depth must be positive".into()));
        }
        if self.fc_width == 0 {
            return Err(Error::InvalidArch("fc width must be positive".into()));
        }
        if self.num_classes != 2 {
            return Err(Error::InvalidArch(format!("detector is binary, got {} classes", self.num_classes)));
        }
        Ok(())
    }

    /// Flattened width entering the first dense layer.
    pub fn flat_width(&self) -> usize {
        let s = self.patch_size / 8;
        s * s * self.conv_channels[5]
    }

    /// `(name, in_channels, out_channels)` for the main-path conv units.
    pub fn main_units(&self) -> Vec<(String, usize, usize)> {
        let mut prev = INPUT_CHANNELS;
        self.conv_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let unit = (format!("conv{}", i + 1), prev, c);
                prev = c;
                unit
            })
            .collect()
    }

    /// `(name, in_channels, out_channels)` for the shortcut block; empty when ablated.
    pub fn residual_units(&self) -> Vec<(String, usize, usize)> {
        if !self.enable_residual {
            return Vec::new();
        }
        let width = self.conv_channels[4];
        let mut prev = self.conv_channels[1];
        (0..self.residual_block_depth)
            .map(|i| {
                let unit = (format!("res{:02}", i + 1), prev, width);
                prev = width;
                unit
            })
            .collect()
    }

    /// Every parameter tensor in a fixed canonical order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        let conv_units = self.main_units().into_iter().chain(self.residual_units());
        for (unit, cin, cout) in conv_units {
            specs.push(ParamSpec {
                name: format!("{unit}.kernels"),
                shape: vec![KERNEL_SIZE, KERNEL_SIZE, cin, cout],
                kind: ParamKind::ConvKernel,
            });
            specs.push(ParamSpec { name: format!("{unit}.bn_scale"), shape: vec![cout], kind: ParamKind::BnScale });
            specs.push(ParamSpec { name: format!("{unit}.bn_shift"), shape: vec![cout], kind: ParamKind::BnShift });
        }
        let dense = [("fc1", self.flat_width(), self.fc_width), ("fc2", self.fc_width, self.num_classes)];
        for (layer, fan_in, fan_out) in dense {
            specs.push(ParamSpec {
                name: format!("{layer}.weights"),
                shape: vec![fan_in, fan_out],
                kind: ParamKind::DenseWeights,
            });
            specs.push(ParamSpec { name: format!("{layer}.bias"), shape: vec![fan_out], kind: ParamKind::DenseBias });
        }
        specs
    }

    pub fn param_count(&self) -> usize {
        self.param_specs().iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }

    /// Names of the conv units owning batch-norm running statistics.
    pub fn bn_units(&self) -> Vec<(String, usize)> {
        self.main_units().into_iter().chain(self.residual_units()).map(|(name, _, c)| (name, c)).collect()
    }
}
