//! Per-farm state embeddings: a dilated-convolution temporal encoder, a
//! message-passing pass over the farm graph, and a compressor for the pool's
//! recent loss history. The concatenation of the spatio-temporal part and
//! the loss part is the agent's state.

pub mod encoder;
pub mod gnn;
pub mod state;

pub use encoder::ConvEncoder;
pub use gnn::GnnLayer;
pub use state::{
    build_state, compute_mle, compute_stse, EmbeddingNet, EmbeddingSpec, MleEncoderKind,
    StateEmbedding,
};
