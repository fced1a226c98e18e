pub mod agents;
pub mod codec;
pub mod continuation;
pub mod judging;
pub mod plan;
pub mod proxy;
pub mod record;
pub mod seed;
pub mod service;
pub mod sim;
pub mod stats;
pub mod study;
pub mod suite;
pub mod task;
pub mod trajectory;
pub mod workspace;
