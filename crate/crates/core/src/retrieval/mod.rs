//! The retrieval branch: frozen key encoder, index lookup, label-text
//! assembly and bag-of-tokens text encoders, plus the plain k-NN
//! classifier and a per-query retrieval report.

mod encoder;
mod inspect;
mod knn;
mod module;
mod text;
mod text_encoder;
mod tokenizer;

pub use encoder::*;
pub use inspect::*;
pub use knn::*;
pub use module::*;
pub use text::*;
pub use text_encoder::*;
pub use tokenizer::*;
