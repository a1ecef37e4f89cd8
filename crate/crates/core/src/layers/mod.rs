//! Complex-valued network layers.

pub mod activation;
pub mod batchnorm;
pub mod blocks;
pub mod conv;
pub mod pool;

pub use activation::{crelu, crelu_tensor};
pub use blocks::{
    cbr_block, residual_block1, residual_block2, separable_atrous_conv, CbrParams, Ctx, Residual1Params, Residual2Params,
};
pub use batchnorm::{batch_norm, batch_stats, complex_batch_norm, BatchNormParams, RunningStats};
pub use conv::{complex_conv2d, conv2d, ConvParams, ConvSpec, Padding};
pub use pool::{complex_max_pool2d, complex_max_unpool2d, max_pool, max_unpool, pool_score, PoolRecord};
