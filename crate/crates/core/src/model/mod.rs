//! ConvNeXt-style detector with an optional filter-stride-reduced stem.
//!
//! Layout is channels-last (`[batch, height, width, channels]`) throughout.
//! The stem is a valid (unpadded) `k×k` convolution followed by channel
//! LayerNorm; stride equals the kernel for the baseline and half the kernel
//! with FSR. Stride is not a weight dimension, so both variants share one
//! parameter layout and can load each other's weights.

mod archive;
mod convnext;
pub mod ops;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use archive::{
    decode_archive, encode_archive, load_checkpoint, read_archive, save_checkpoint, write_archive, Checkpoint, NamedTensor,
    CHECKPOINT_VERSION,
};
pub use convnext::{build_model, Cache, Detector, Grads, Param, StageTrace};
pub use ops::{Act, Real};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("input {size} too small: {reason}")]
    InputTooSmall { size: usize, reason: String },
    #[error("input has {got} channels, model expects {expected}")]
    ChannelMismatch { got: usize, expected: usize },
    #[error("weight archive mismatch: {0}")]
    WeightMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HeadMode {
    /// Two outputs: index 0 real, index 1 fake.
    Binary,
    /// One output per taxonomy class.
    MultiClass,
}

impl HeadMode {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadMode::Binary => "binary",
            HeadMode::MultiClass => "multi",
        }
    }
}

impl FromStr for HeadMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" => Ok(HeadMode::Binary),
            "multi" | "multiclass" => Ok(HeadMode::MultiClass),
            _ => Err(format!("unknown head mode `{s}` (binary|multi)")),
        }
    }
}

impl fmt::Display for HeadMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which detection scheme a run uses: head type, FSR stem, and whether
/// unseen-generator training images get their own class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scheme {
    pub head: HeadMode,
    pub fsr: bool,
    pub uf: bool,
}

impl Scheme {
    pub const fn new(head: HeadMode, fsr: bool, uf: bool) -> Self {
        Self { head, fsr, uf }
    }

    pub fn label(&self) -> String {
        let mut s = match self.head {
            HeadMode::Binary => "Binary-class".to_string(),
            HeadMode::MultiClass => "Multi-class".to_string(),
        };
        if self.fsr {
            s.push_str(" + FSR");
        }
        if self.uf {
            s.push_str(" + UF class");
        }
        s
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub fsr: bool,
    pub stage_depths: Vec<usize>,
    pub stage_widths: Vec<usize>,
    pub head_mode: HeadMode,
    pub num_classes: usize,
    pub input_size: usize,
    pub mlp_ratio: usize,
    pub dw_kernel: usize,
    /// Initial value of the per-channel residual scale.
    pub layer_scale_init: f64,
    pub ln_eps: f64,
}

impl ModelConfig {
    /// Desk-scale default: four stages, depths (1,1,2,1), widths
    /// (32,64,128,256), 4×4 patchify stem, GELU (tanh form), LayerNorm.
    pub fn toy(head_mode: HeadMode, num_classes: usize) -> Self {
        Self {
            in_channels: 3,
            stem_kernel: 4,
            stem_stride: 4,
            fsr: false,
            stage_depths: vec![1, 1, 2, 1],
            stage_widths: vec![32, 64, 128, 256],
            head_mode,
            num_classes,
            input_size: 200,
            mlp_ratio: 4,
            dw_kernel: 7,
            layer_scale_init: 1e-6,
            ln_eps: 1e-6,
        }
    }

    /// Toggle filter stride reduction: stride becomes `stem_kernel / 2`
    /// when on, `stem_kernel` when off. Kernel size is untouched.
    pub fn with_fsr(mut self, fsr: bool) -> Self {
        self.fsr = fsr;
        self.stem_stride = if fsr { self.stem_kernel / 2 } else { self.stem_kernel };
        self
    }

    pub fn with_stages(mut self, depths: &[usize], widths: &[usize]) -> Self {
        self.stage_depths = depths.to_vec();
        self.stage_widths = widths.to_vec();
        self
    }

    /// Head size and stem stride for a scheme; backbone shape unchanged.
    pub fn for_scheme(&self, scheme: Scheme, taxonomy_classes: usize) -> Self {
        let mut c = self.clone().with_fsr(scheme.fsr);
        c.head_mode = scheme.head;
        c.num_classes = match scheme.head {
            HeadMode::Binary => 2,
            HeadMode::MultiClass => taxonomy_classes,
        };
        c
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.stem_kernel == 0 || self.stem_stride == 0 {
            return bad("stem kernel and stride must be positive");
        }
        if self.fsr && self.stem_stride * 2 != self.stem_kernel {
            return bad("fsr requires stem_stride = stem_kernel / 2 exactly");
        }
        if !self.fsr && self.stem_stride != self.stem_kernel {
            return bad("baseline stem requires stem_stride = stem_kernel");
        }
        if self.stage_depths.is_empty() || self.stage_depths.len() != self.stage_widths.len() {
            return bad("stage_depths and stage_widths must have equal length >= 1");
        }
        if self.stage_widths.contains(&0) || self.in_channels == 0 {
            return bad("channel counts must be positive");
        }
        if self.dw_kernel.is_multiple_of(2) {
            return bad("depthwise kernel must be odd");
        }
        match self.head_mode {
            HeadMode::Binary if self.num_classes != 2 => bad("binary head requires num_classes = 2"),
            HeadMode::MultiClass if self.num_classes < 3 => bad("multi-class head requires at least 3 classes"),
            _ => Ok(()),
        }
    }
}

/// Spatial side after the stem: `floor((input - kernel) / stride) + 1`.
pub fn stem_output_shape(cfg: &ModelConfig, input: usize) -> Result<usize, ModelError> {
    conv_output(input, cfg.stem_kernel, cfg.stem_stride)
}

fn conv_output(input: usize, kernel: usize, stride: usize) -> Result<usize, ModelError> {
    if input < kernel {
        return Err(ModelError::InputTooSmall {
            size: input,
            reason: format!("smaller than kernel {kernel}"),
        });
    }
    Ok((input - kernel) / stride + 1)
}

/// Spatial side at the output of every stage for a square input.
pub fn stage_output_shapes(cfg: &ModelConfig, input: usize) -> Result<Vec<usize>, ModelError> {
    let mut side = stem_output_shape(cfg, input)?;
    let mut out = vec![side];
    for _ in 1..cfg.stage_depths.len() {
        side = conv_output(side, 2, 2).map_err(|_| ModelError::InputTooSmall {
            size: input,
            reason: "feature map vanishes before the last stage".into(),
        })?;
        out.push(side);
    }
    Ok(out)
}
