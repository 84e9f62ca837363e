pub mod assignment;
pub mod clustering;
pub mod config;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod matching;
pub mod model;
pub mod pipeline;
pub mod recovery;
pub mod sim;
