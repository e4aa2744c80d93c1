//! The network variants: single-task baselines, the plain multi-task
//! baseline, and the fusion network with semantic-to-depth and
//! depth-to-semantic units.

mod config;
mod net;
mod params;

pub use config::{Group, NetConfig, Variant};
pub use net::{
    aspp_branches, backbone_forward, backbone_forward_with, build_model, decoder_forward, depth_to_semantic, forward,
    semantic_to_depth, semantic_to_depth_with, BackboneOut, BranchScale, DepthLatents, FeatureBundle, Forward, Heads,
    LatentOverride, Mode, Model, ModelOutput, PathRequest, SemanticLatents,
};
pub use params::{Buffer, ParamStore, Parameter};
