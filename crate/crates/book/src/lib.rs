//! Compiles and runs the code blocks of the guide in `book/` as doctests,
//! one module per chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/sequences.md")]
pub mod sequences {}
#[doc = include_str!("../../../book/src/interpolant.md")]
pub mod interpolant {}
#[doc = include_str!("../../../book/src/oracle.md")]
pub mod oracle {}
#[doc = include_str!("../../../book/src/sampling.md")]
pub mod sampling {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/maze.md")]
pub mod maze {}
#[doc = include_str!("../../../book/src/verification.md")]
pub mod verification {}
