pub mod numerics;
pub mod hetgraph;
pub mod metapath;
pub mod model;
pub mod eval;
pub mod training;
pub mod cli;
