pub mod corpus;
pub mod datagen;
pub mod eval;
pub mod normalize;
pub mod pipeline;
pub mod rerank;
pub mod shortlist;
