pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod crf;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod lexicon;
pub mod model;
pub mod nn;
pub mod parser;
pub mod trainer;
