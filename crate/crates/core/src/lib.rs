//! Monotonic alignment of long frame-embedding sequences to short token-embedding
//! sequences.
//!
//! The core aligner ([`dtw`]) builds a constrained DTW trellis over the cosine
//! similarities between frames and tokens and backtracks it into a path that is
//! monotonic, covers every token, and assigns exactly one token per frame. Around
//! it sit an entropic optimal-transport baseline ([`ot`]), mixup construction
//! ([`mixup`]), objective kernels ([`objectives`]), evaluation ([`eval`]), a timing
//! harness ([`bench`]) and the on-disk formats ([`io`]).

pub mod bench;
pub mod dtw;
pub mod error;
pub mod eval;
pub mod io;
pub mod mixup;
pub mod objectives;
pub mod ot;
pub mod tensor;

pub use dtw::{align, align_batch, align_batch_par, backtrack, brute_force_align, build_trellis};
pub use dtw::{AlignmentPath, Trellis};
pub use error::{AlignError, Result};
pub use tensor::{cosine_similarity_matrix, EmbeddingSequence, MixupSequence, SimilarityMatrix};
