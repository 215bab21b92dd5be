//! Differentiable primitives and the attention machinery.

pub mod attention;
pub mod encoder;
pub mod gradcheck;
pub mod graph;
pub mod mask;
pub mod pooling;
pub mod tensor;

pub use attention::{group_multi_head, masked_attention, multi_head, MultiHeadParams};
pub use encoder::{
    feed_forward, group_masenc_block, layer_norm, masenc_block, Dropout, FeedForwardParams, MasEncParams,
};
pub use gradcheck::grad_check;
pub use graph::{Graph, Var};
pub use mask::{AttentionMask, MaskKind, NEG};
pub use pooling::{
    attention_pooling, group_attention_pooling, group_sum_pooling, sum_pooling, PoolingParams,
};
pub use tensor::{Scalar, Tensor};

/// Named traversal over a parameter structure.
///
/// Visiting order is fixed, so two structures of the same shape visit their
/// leaves in the same sequence.
pub trait ParamTree<L> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a L));

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut L));
}
