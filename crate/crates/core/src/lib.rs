//! Voice-driven robot programming: transcribed commands become small
//! command-script programs that run against a simulated arm, and reusable
//! skills live in a policy bank that the generator can call into.

pub mod bench;
pub mod codegen;
pub mod config;
pub mod events;
pub mod listener;
pub mod policy;
pub mod pose;
pub mod scenario;
pub mod script;
pub mod session;
pub mod world;
