use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which feature map the deformable layer samples from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeformSource {
    /// Reference features: aligns reference content onto the current frame.
    #[default]
    #[serde(rename = "f_r")]
    RefFeatures,
    /// General features of the compressed frame itself.
    #[serde(rename = "f_g")]
    GeneralFeatures,
}

/// Architecture hyperparameters of the restoration network.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub channels: usize,
    /// Residual blocks (two convolutions each) after the encoder head.
    pub n_blocks_encoder: usize,
    /// Residual blocks before the decoder's output convolution.
    pub n_blocks_decoder: usize,
    pub n_blocks_ref_encoder: usize,
    /// Convolution layers in the offset/mask predictor.
    pub n_offset_layers: usize,
    pub n_blocks_refine: usize,
    pub kernel: usize,
    #[serde(default)]
    pub deform_source: DeformSource,
}

fn conv_params(cin: usize, cout: usize, k: usize) -> usize {
    cout * cin * k * k + cout
}

impl NetworkSpec {
    /// 16 channels, about 61 K parameters.
    pub fn desk() -> Self {
        NetworkSpec {
            channels: 16,
            n_blocks_encoder: 2,
            n_blocks_decoder: 2,
            n_blocks_ref_encoder: 2,
            n_offset_layers: 5,
            n_blocks_refine: 3,
            kernel: 3,
            deform_source: DeformSource::RefFeatures,
        }
    }

    /// 64 channels, about 3.7 M parameters.
    pub fn full() -> Self {
        NetworkSpec {
            channels: 64,
            n_blocks_encoder: 10,
            n_blocks_decoder: 10,
            n_blocks_ref_encoder: 10,
            n_offset_layers: 5,
            n_blocks_refine: 16,
            kernel: 3,
            deform_source: DeformSource::RefFeatures,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            other => Err(Error::validation(format!("unknown network preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("channels", self.channels),
            ("n_blocks_encoder", self.n_blocks_encoder),
            ("n_blocks_decoder", self.n_blocks_decoder),
            ("n_blocks_ref_encoder", self.n_blocks_ref_encoder),
            ("n_offset_layers", self.n_offset_layers),
            ("n_blocks_refine", self.n_blocks_refine),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::validation(format!("{name} must be at least 1")));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::validation(format!("kernel must be odd, got {}", self.kernel)));
        }
        Ok(())
    }

    /// Sampling taps of the deformable kernel.
    pub fn taps(&self) -> usize {
        self.kernel * self.kernel
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (c, k) = (self.channels, self.kernel);
        let cc = conv_params(c, c, k);
        let encoder = conv_params(3, c, k) + 2 * self.n_blocks_encoder * cc;
        let decoder = 2 * self.n_blocks_decoder * cc + conv_params(c, 3, k);
        let ref_encoder = conv_params(3, c, k) + 2 * self.n_blocks_ref_encoder * cc;
        let out = 3 * self.taps();
        let offset = if self.n_offset_layers == 1 {
            conv_params(2 * c, out, k)
        } else {
            conv_params(2 * c, c, k) + (self.n_offset_layers - 2) * cc + conv_params(c, out, k)
        };
        let deform = conv_params(c, c + 1, k);
        let refine = (2 * self.n_blocks_refine + 1) * cc;
        encoder + decoder + ref_encoder + offset + deform + refine
    }

    /// Parameters trained in the first step (encoder and decoder).
    pub fn step1_param_count(&self) -> usize {
        let (c, k) = (self.channels, self.kernel);
        let cc = conv_params(c, c, k);
        conv_params(3, c, k) + 2 * (self.n_blocks_encoder + self.n_blocks_decoder) * cc + conv_params(c, 3, k)
    }
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self::desk()
    }
}
