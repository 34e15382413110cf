//! Arabic speech/text encoder-decoder: text and audio front ends, the shared
//! model, joint pre-training, recognition, synthesis and dialect fine-tuning,
//! scoring, and the `sawt` command line.
//!
//! The guide under `book/` walks through each part; its listings run as
//! doc-tests.

pub mod audio;
pub mod cli;
pub mod corpus;
pub mod metrics;
pub mod model;
pub mod prep;
pub mod pretrain;
pub mod seed;
pub mod tasks;
pub mod text;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/text.md")]
    mod text {}
    #[doc = include_str!("../../../book/src/audio.md")]
    mod audio {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/pretraining.md")]
    mod pretraining {}
    #[doc = include_str!("../../../book/src/tasks.md")]
    mod tasks {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
