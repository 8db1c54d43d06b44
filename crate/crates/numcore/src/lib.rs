//! Numeric substrate: dense tensors, a reverse-mode tape, and a parameter
//! registry where several named slots may share one storage.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod params;
pub mod tape;
pub mod tensor;

pub use error::{NumError, Result};
pub use gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
pub use params::{Gradients, InitRule, ParamLayout, ParamRegistry, StorageId, StorageSpec};
pub use tape::{Tape, Var};
pub use tensor::{Scalar, Tensor};
