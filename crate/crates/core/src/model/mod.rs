//! Network assembly: encoder of dilated residual blocks, bottleneck,
//! decoder with attention-refined skips and optional guided heads.

mod config;
mod layers;
mod network;
mod params;

pub use config::ModelConfig;
pub use layers::{AsfebBlock, AsfebParts, Conv, Ctx, DcrBlock, GuidedHead, Norm, UpConv};
pub use network::{forward_macs, parameter_count, shape_trace, AdNet, Outputs, TraceEntry};
pub use params::{BufferId, ParamBuilder, ParamId, ParamSet};
