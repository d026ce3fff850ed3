//! Neural building blocks: linear layers, layer normalization, multi-head
//! self-attention, PPEG and the MLP risk head.

mod attention;
mod layers;
pub mod params;
mod ppeg;
#[cfg(test)]
mod tests;

pub use attention::{attention_block_forward, msa_forward, AttentionBlock, Msa};
pub use layers::{
    layer_norm_forward, linear_forward, mlp_forward, mlp_init, normal_init, xavier_uniform,
    LayerNorm, Linear, Mlp, LAYER_NORM_EPS,
};
pub use params::{bind_frozen, bind_trainable, collect_grads, parameter_count, ParamTree, Single};
pub use ppeg::{grid_side, ppeg_forward, Ppeg, PPEG_KERNEL_SIZES};
