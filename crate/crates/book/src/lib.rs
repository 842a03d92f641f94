//! Code listings of the guide under `book/`, compiled as doc-tests so the
//! book cannot drift from the library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/data-model.md")]
pub mod data_model {}
#[doc = include_str!("../../../book/src/pca.md")]
pub mod pca {}
#[doc = include_str!("../../../book/src/svm.md")]
pub mod svm {}
#[doc = include_str!("../../../book/src/gmm.md")]
pub mod gmm {}
#[doc = include_str!("../../../book/src/deer.md")]
pub mod deer {}
#[doc = include_str!("../../../book/src/scenarios.md")]
pub mod scenarios {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
