//! Frozen encoders.
//!
//! The text side is differentiable with respect to the learnable context;
//! everything else (prompt banks, images) is encoded once and never receives
//! gradients. Real vision-language models enter through embedding caches
//! exported offline.

mod context;
mod text;
mod tokenizer;
mod vision;

pub use context::{init_context, ContextVectors, CONTEXT_INIT_STD};
pub use text::{
    encode_text_bank, stack_bank, unstack_bank, ContextTape, EncodedText, SyntheticTextEncoder, TextEncoder,
    DEFAULT_TAU,
};
pub use tokenizer::tokenize;
pub use vision::{CachedVisionSource, SyntheticVisionEncoder};
