//! Dense tensors, layer-wise reverse-mode differentiation and the small
//! network architectures.

pub mod gradcheck;
pub mod loss;
pub mod network;
pub mod params;
pub mod spec;
pub mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_report, GradCheck, GradCheckReport};
pub use loss::LossKind;
pub use network::{LossGrad, Mode, Network, Pass};
pub use params::{BatchStat, ParamSet, RunningStats, Section, SectionMask};
pub use spec::{Layer, NetworkSpec};
pub use tensor::Tensor;
