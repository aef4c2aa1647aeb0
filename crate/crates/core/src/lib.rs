pub mod checkpoint;
pub mod corpus;
pub mod ctc;
pub mod detect;
pub mod error;
pub mod match_loss;
pub mod mdlstm;
pub mod metrics;
pub mod numeric;
pub mod recog;
pub mod stack;
pub mod train;

pub use error::{Error, Result};
