use serde::{Deserialize, Serialize};

use crate::attention::KernelSpec;
use crate::error::{Error, Result};

/// Placement of the temporal sublayer relative to spatial attention in a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionOrder {
    TemporalFirst,
    SpatialFirst,
    /// No temporal sublayer.
    SpatialOnly,
    /// Temporal and spatial branches read the same input and are summed.
    Parallel,
}

/// Mechanism used by the temporal sublayer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalAdapter {
    /// Kernel-mixed keys and values from neighbouring frames.
    FusionAttention,
    /// Per-token attention across frames.
    TemporalAttention,
    /// Fixed 3-tap temporal mixing followed by a projection.
    TemporalConv,
    /// Keys and values from the first frame only.
    CrossFrame,
}

/// Input transform of the frequency branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FfmTransform {
    /// 2×2 space-to-depth without any frequency split.
    Raw,
    /// FFT quadrant band split, each band back-transformed and pooled 2×2.
    Fourier,
    Wavelet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactConfig {
    pub enabled: bool,
    pub rank: usize,
    /// One `(U, V)` pair for both projections; separate pairs when false.
    #[serde(default = "yes")]
    pub shared: bool,
}

fn yes() -> bool {
    true
}

impl Default for FactConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            rank: 4,
            shared: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub patch_size: usize,
    pub in_channels: usize,
    pub num_classes: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: KernelSpec,
    pub fact: FactConfig,
    pub ffm_enabled: bool,
    pub ffm_transform: FfmTransform,
    /// Channel width of the frequency-branch CNN.
    pub ffm_width: usize,
    /// Skip connections from shallower stages in the decoder.
    pub multiscale_fusion: bool,
    pub attention_order: AttentionOrder,
    pub temporal_adapter: TemporalAdapter,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            depth: 4,
            heads: 1,
            mlp_ratio: 4,
            patch_size: 8,
            in_channels: 1,
            num_classes: 3,
            frames: 8,
            height: 64,
            width: 64,
            kernel: KernelSpec::default(),
            fact: FactConfig::default(),
            ffm_enabled: true,
            ffm_transform: FfmTransform::Wavelet,
            ffm_width: 4,
            multiscale_fusion: true,
            attention_order: AttentionOrder::TemporalFirst,
            temporal_adapter: TemporalAdapter::FusionAttention,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let d = self.embed_dim;
        if self.depth == 0 || !self.depth.is_multiple_of(4) {
            return Err(Error::invalid(format!("depth {} must be a positive multiple of 4", self.depth)));
        }
        if self.patch_size == 0 || !self.height.is_multiple_of(self.patch_size) || !self.width.is_multiple_of(self.patch_size) {
            return Err(Error::invalid(format!(
                "image {}x{} is not divisible by patch size {}",
                self.height, self.width, self.patch_size
            )));
        }
        if d < 8 || !d.is_multiple_of(8) {
            return Err(Error::invalid(format!("embed_dim {d} must be a positive multiple of 8")));
        }
        if self.heads == 0 || !d.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!("{} heads do not divide embed_dim {d}", self.heads)));
        }
        if self.num_classes < 2 || self.in_channels == 0 || self.frames == 0 || self.mlp_ratio == 0 {
            return Err(Error::invalid("num_classes >= 2, in_channels, frames and mlp_ratio must be positive"));
        }
        if self.fact.enabled && (self.fact.rank == 0 || self.fact.rank > d) {
            return Err(Error::invalid(format!("FacT rank {} must be in 1..={d}", self.fact.rank)));
        }
        if self.ffm_enabled && (!self.height.is_multiple_of(32) || !self.width.is_multiple_of(32) || self.ffm_width == 0) {
            return Err(Error::invalid("the frequency branch needs H and W divisible by 32"));
        }
        self.upsample_factors()?;
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.patch_size, self.width / self.patch_size)
    }

    pub fn tokens(&self) -> usize {
        let (h, w) = self.grid();
        h * w
    }

    pub fn stage_len(&self) -> usize {
        self.depth / 4
    }

    pub fn has_temporal(&self) -> bool {
        self.attention_order != AttentionOrder::SpatialOnly
    }

    /// Per-step upsampling factors of the decoder: four powers of two whose
    /// product is the patch size, doubling as late as possible.
    pub fn upsample_factors(&self) -> Result<[usize; 4]> {
        let p = self.patch_size;
        if !p.is_power_of_two() || p > 16 {
            return Err(Error::invalid(format!("patch size {p} must be a power of two up to 16")));
        }
        let doublings = p.trailing_zeros() as usize;
        let mut f = [1; 4];
        for slot in f.iter_mut().rev().take(doublings) {
            *slot = 2;
        }
        Ok(f)
    }

    /// Output channels of the four decoder steps.
    pub fn decoder_widths(&self) -> [usize; 4] {
        let d = self.embed_dim;
        [d / 2, d / 4, d / 8, d / 8]
    }
}
