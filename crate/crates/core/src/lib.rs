//! Forward-only Mask R-CNN text detector with a pyramid attention backbone.
//!
//! The crate is organized around a small dense tensor engine ([`tensor`]),
//! quadrilateral/rectangle geometry ([`geometry`]), anchor generation and
//! matching ([`anchors`]), greedy NMS ([`nms`]), RoIAlign pooling
//! ([`roialign`]), the attention pyramid network forward pass ([`network`]),
//! the multi-task losses with analytic gradients ([`losses`]) and the
//! end-to-end inference/evaluation pipeline ([`pipeline`]). Everything runs
//! on the CPU in f64 and is deterministic given a seed.

pub mod anchors;
pub mod geometry;
pub mod losses;
pub mod network;
pub mod nms;
pub mod pipeline;
pub mod roialign;
pub mod selftest;
pub mod tensor;
pub mod weights;

pub use anchors::{AnchorSpec, Label, MatchConfig, MatchResult, PyramidLevel, SampledBatch};
pub use geometry::{AxisRect, GeometryError, Quad, QuadDelta, RectDelta};
pub use nms::ScoredBox;
pub use pipeline::{Detection, EvalReport, GroundTruth, PipelineConfig, PipelineError};
pub use roialign::RoiSpec;
pub use tensor::{ConvParams, Tensor, TensorError};
pub use weights::{ModelWeights, WeightsError};

#[cfg(test)]
mod concurrency_contract {
    // values are immutable after construction and safe to share across
    // threads; keep that statically true
    fn assert_send_sync<T: Send + Sync>() {}

    #[test]
    fn core_types_are_send_and_sync() {
        assert_send_sync::<crate::Tensor>();
        assert_send_sync::<crate::ConvParams>();
        assert_send_sync::<crate::ModelWeights>();
        assert_send_sync::<crate::Quad>();
        assert_send_sync::<crate::AxisRect>();
        assert_send_sync::<crate::Detection>();
        assert_send_sync::<crate::PipelineConfig>();
        assert_send_sync::<crate::network::PyramidFeatures>();
        assert_send_sync::<crate::EvalReport>();
    }
}
