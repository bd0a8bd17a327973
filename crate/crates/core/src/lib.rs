pub mod attacks;
pub mod charset;
pub mod ctc;
pub mod error;
pub mod harness;
mod font;
pub mod imaging;
pub mod model;
pub mod tensor;
pub mod textgen;

pub use charset::Charset;
pub use error::{Error, Result};
pub use imaging::{Image, Mask};
