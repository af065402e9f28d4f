//! Brute-force references used only to verify the production paths: dense
//! grids and convolutions, exhaustive NMS and AP, and memory arithmetic.
//! Nothing outside verification code depends on this module.

mod battery;
mod dense;
mod memory;
mod reference;

pub use battery::{random_conv_case, run_conv_battery, BatteryReport, ConvCase};
pub use dense::{dense_conv3d, dense_support, densify, sparsify, DenseGrid, MAX_DENSE_ELEMENTS};
pub use memory::{memory_calculator, published_figures, MemoryEstimate, MemoryQuery, PublishedFigure};
pub use reference::{ap_bruteforce, nms_bruteforce};
