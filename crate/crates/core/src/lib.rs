pub mod autodiff;
pub mod corpus;
pub mod model;
pub mod ngram;
pub mod rerank;
pub mod synthetic;
