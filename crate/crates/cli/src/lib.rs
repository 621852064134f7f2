pub mod bundle;
pub mod config;
pub mod scenarios;
pub mod verify;
