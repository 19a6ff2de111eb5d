pub mod bench;
pub mod cluster;
pub mod config;
pub mod kernel;
pub mod lattice;
pub mod metadata;
pub mod monitor;
pub mod policy;
pub mod ring;
pub mod routing;
pub mod runtime;
pub mod sim;
