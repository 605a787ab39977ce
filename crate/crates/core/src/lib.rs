pub mod agent;
pub mod bounds;
pub mod cli;
pub mod envs;
pub mod genmodel;
pub mod nqa;
pub mod numcore;
pub mod replay;
