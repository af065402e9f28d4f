//! Neural operators over [`SparseTensor3D`](crate::tensor::SparseTensor3D).
//! All of them keep the tensor sparse; none materializes a dense grid.

mod attention;
pub mod conv;
mod elementwise;
mod norm;
mod squeeze;

pub use attention::{squeeze_excitation, SEParams};
pub use conv::{
    strided_conv3d, strided_conv3d_onto, subm_conv3d, transpose_conv3d, transpose_conv3d_to,
    ConvParams, ConvRegistry, ConvStrategy,
};
pub use elementwise::{linear_rows, sigmoid, sparse_add_union, sparse_relu};
pub use norm::{group_norm_row, sparse_layernorm, LAYERNORM_EPS};
pub use squeeze::temporal_max_squeeze;
