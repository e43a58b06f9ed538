pub mod analytics;
pub mod bench;
pub mod fixture;
pub mod gateway;
pub mod http;
pub mod index;
pub mod kb;
pub mod rag;
pub mod stats;
pub mod task;
pub mod verbalizer;
