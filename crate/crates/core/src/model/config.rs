use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters of the two-branch classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub num_classes: usize,
    /// Output channels of the three convolution blocks.
    pub conv_filters: [usize; 3],
    /// Kernel widths (taps) of the three convolution blocks.
    pub conv_kernel_widths: [usize; 3],
    pub lstm_cells: usize,
    pub dropout_rate: f64,
    pub input_length: usize,
    pub use_batch_norm: bool,
    /// Standardize inputs with one mean/std fitted on the training split.
    /// Off keeps raw magnitudes.
    pub normalize_input: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_classes: 14,
            conv_filters: [128, 256, 128],
            conv_kernel_widths: [8, 5, 3],
            lstm_cells: 8,
            dropout_rate: 0.8,
            input_length: 1600,
            use_batch_norm: false,
            normalize_input: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        if self.num_classes < 2 {
            violations.push(format!("num_classes = {} (need >= 2)", self.num_classes));
        }
        for (i, &f) in self.conv_filters.iter().enumerate() {
            if f == 0 {
                violations.push(format!("conv_filters[{i}] = 0"));
            }
        }
        for (i, &k) in self.conv_kernel_widths.iter().enumerate() {
            if k == 0 {
                violations.push(format!("conv_kernel_widths[{i}] = 0"));
            }
        }
        if self.lstm_cells == 0 {
            violations.push("lstm_cells = 0".into());
        }
        if self.input_length == 0 {
            violations.push("input_length = 0".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            violations.push(format!("dropout_rate = {} (need 0 <= rate < 1)", self.dropout_rate));
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(violations.join("; ")))
        }
    }

    /// Width of the concatenated feature vector feeding the softmax head.
    pub fn head_inputs(&self) -> usize {
        self.conv_filters[2] + self.lstm_cells
    }

    /// Number of trainable scalars implied by this configuration.
    pub fn parameter_count(&self) -> usize {
        let mut channels_in = 1;
        let mut total = 0;
        for (&f, &k) in self.conv_filters.iter().zip(&self.conv_kernel_widths) {
            total += f * channels_in * k + f;
            if self.use_batch_norm {
                total += 2 * f;
            }
            channels_in = f;
        }
        let h = self.lstm_cells;
        total += 4 * h * (self.input_length + h) + 4 * h;
        total += self.num_classes * self.head_inputs() + self.num_classes;
        total
    }
}
