//! Adaptive visual reinforcement for multimodal decoders.
//!
//! The engine condenses visual-token hidden states to the tokens farthest
//! from their prototype, scores candidate image patches by their entropic
//! optimal-transport distance to those tokens, keeps the patches under a
//! threshold and re-injects their embeddings through the FFN of selected
//! decoder layers. A small deterministic decoder in [`harness`] exercises
//! the whole path on synthetic scenes.

pub mod activation;
pub mod api;
pub mod config;
pub mod error;
pub mod ffn;
pub mod harness;
pub mod matrix;
pub mod npy;
pub mod ot;
pub mod patch;
pub mod reduction;

pub use activation::{apply_activation, Activation};
pub use config::ReinforcementConfig;
pub use error::{Error, Result};
pub use ffn::{
    air_ffn_forward, ffn_forward, reinject_full, FfnWeights, InjectionConfig, InjectionMode,
    LayerGate,
};
pub use matrix::{cosine_cost, Matrix};
pub use ot::{
    cosine_baseline, exact_matching_ot, ot_distance, sinkhorn, Epsilon, SinkhornParams,
    TransportPlan,
};
pub use patch::{
    fuse_patches, score_patch, score_patches, select_and_fuse, select_patches, CostSpace,
    PatchEmbedding, PatchScore, SelectionResult,
};
pub use reduction::{compute_prototype, select_top_q, ReducedTokens};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
