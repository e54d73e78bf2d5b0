//! Tensors, a reverse-mode tape, differentiable ops and the optimizer used
//! to train the detector.

pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use error::{NumericsError, Result};
pub use ops::conv::Padding;
pub use ops::elementwise::sigmoid;
pub use ops::sample::bilinear_taps;
pub use optim::{Moments, OneCycleAdam, OneCycleSchedule, StepInfo};
pub use params::{Bound, Init, ParamSpec, ParamStore};
pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::{Scalar, Tensor};
