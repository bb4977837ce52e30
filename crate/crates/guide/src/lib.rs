//! Compiles the book chapters so that their snippets run as doc tests.

#[doc = include_str!("../../../README.md")]
pub mod readme {}

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/quickstart.md")]
pub mod quickstart {}

#[doc = include_str!("../../../book/src/signal-models.md")]
pub mod signal_models {}

#[doc = include_str!("../../../book/src/priors.md")]
pub mod priors {}

#[doc = include_str!("../../../book/src/estimators.md")]
pub mod estimators {}

#[doc = include_str!("../../../book/src/holdout.md")]
pub mod holdout {}

#[doc = include_str!("../../../book/src/analysis.md")]
pub mod analysis {}

#[doc = include_str!("../../../book/src/vpm.md")]
pub mod vpm {}

#[doc = include_str!("../../../book/src/phantoms.md")]
pub mod phantoms {}

#[doc = include_str!("../../../book/src/reproducibility.md")]
pub mod reproducibility {}
