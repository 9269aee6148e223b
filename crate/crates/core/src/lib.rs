//! Range-restriction instrumentation and fault-injection campaigns for
//! neural-network inference graphs.
//!
//! The pipeline is: profile per-activation value bounds ([`profiler`]),
//! rewrite the graph to clamp activations and the operators that inherit
//! their range ([`ranger`]), then measure silent-data-corruption rates with
//! bit-flip injection ([`campaign`]). Everything runs on a small reference
//! engine ([`engine`]) over a JSON/binary model format ([`graph`]).

pub mod campaign;
pub mod cli;
pub mod engine;
pub mod graph;
pub mod modelzoo;
pub mod numerics;
pub mod profiler;
pub mod ranger;
pub mod tensor;

pub use graph::{Graph, NodeId, OpKind, TaskSpec};
pub use numerics::{CorrectionPolicy, NumericFormat};
pub use tensor::Tensor;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
    #[doc = include_str!("../../../book/src/numerics.md")]
    mod numerics {}
    #[doc = include_str!("../../../book/src/engine.md")]
    mod engine {}
    #[doc = include_str!("../../../book/src/ranger.md")]
    mod ranger {}
    #[doc = include_str!("../../../book/src/campaigns.md")]
    mod campaigns {}
    #[doc = include_str!("../../../book/src/modelzoo.md")]
    mod modelzoo {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/acceptance.md")]
    mod acceptance {}
}
