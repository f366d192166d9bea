pub mod autodiff;
pub mod encoders;
pub mod error;
pub mod harness;
pub mod model;
pub mod ode;
pub mod params;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
pub struct BookIntroduction;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/autodiff.md")]
pub struct BookAutodiff;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/ode.md")]
pub struct BookOde;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/encoders.md")]
pub struct BookEncoders;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/model.md")]
pub struct BookModel;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/experiments.md")]
pub struct BookExperiments;
