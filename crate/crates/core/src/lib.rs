//! Data-free weight-only quantization.
//!
//! Weight matrices are compressed to k-bit integer levels with one scale per
//! column. Outliers further than n standard deviations from the tensor mean
//! are kept in full precision, and each column's scale is tuned by gradient
//! descent (Adam) on the reconstruction error of the remaining entries.
//!
//! ```
//! use ezquant::{dequantize_tensor, easyquant_tensor, synthetic, QuantConfig};
//!
//! let (w, _) = synthetic::planted_matrix(64, 32, 0.005, 10.0, 50.0, 7);
//! let q = easyquant_tensor(&w, &QuantConfig::default()).unwrap();
//! let errors = q.errors.unwrap();
//! assert!(errors.final_error <= errors.rtn_error);
//!
//! let back = dequantize_tensor(&q).unwrap();
//! for e in q.outliers.entries() {
//!     assert_eq!(back.get(e.row, e.col), w.get(e.row, e.col));
//! }
//! ```

pub mod bench;
pub mod error;
pub mod format;
pub mod gradcheck;
pub mod manifest;
pub mod model;
pub mod optimizer;
pub mod outlier;
pub mod pack;
pub mod pipeline;
pub mod report;
pub mod rtn;
pub mod stats;
pub mod synthetic;
pub mod types;

pub use error::{Error, FormatError, Result};
pub use format::{read_quantized, write_quantized};
pub use manifest::{ModelManifest, TensorSpec};
pub use model::{dequantize_model, quantize_model, QuantizedManifest, QuantizedModel};
pub use optimizer::{
    adam_step, brute_force_optimal_scale, optimize_channel_range, range_gradient, AdamState,
    OptimizeTrace,
};
pub use outlier::{detect_outliers, normal_view, scatter_outliers};
pub use pack::{pack_levels, unpack_levels};
pub use pipeline::{
    dequantize_tensor, easyquant_tensor, outliers_only_tensor, quantize_tensor, rtn_tensor, Mode,
};
pub use rtn::{
    dequantize_channel, initial_scale, quantize_channel, reconstruction_error, LevelVector,
};
pub use stats::tensor_stats;
pub use types::{
    ChannelScales, DenseMatrix, ErrorSummary, OutlierEntry, OutlierSet, QuantConfig,
    QuantizedWeight, SelectPolicy, TensorStats,
};
