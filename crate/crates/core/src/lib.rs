//! Neural document ranking with the duet architecture.
//!
//! A duet model adds two scores: a *local* network over the exact-match
//! interaction matrix of query and document terms, and a *distributed*
//! network over character n-graph representations of both. The crate
//! covers the whole pipeline: reading judged collections, featurizing,
//! a small tape-based autodiff engine, the models, SGD training, BM25 and
//! query likelihood baselines, and NDCG evaluation.

pub mod autodiff;
pub mod baselines;
pub mod corpus;
pub mod eval;
pub mod featurize;
pub mod models;
pub mod run;
pub mod synth;
pub mod trainer;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
