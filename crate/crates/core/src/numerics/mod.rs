//! Dense tensors, the reverse-mode tape, the encoder block and gradient checking.

mod block;
mod gradcheck;
mod graph;
mod init;
mod tensor;

pub use block::{bind_block, block_param_shape, encoder_block, init_block, BlockVars, BLOCK_PARAMS};
pub use gradcheck::{grad_check, grad_check_strided};
pub use graph::{Grads, Graph, Var};
pub use init::{rng_from_seed, rng_stream, uniform_fan_in, LabRng};
pub use tensor::{cosine, dot, l2_norm, log_add_exp, log_softmax_rows, logsumexp, matmul, Tensor};
