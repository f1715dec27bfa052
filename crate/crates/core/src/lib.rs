pub mod bench;
pub mod brkga;
pub mod features;
pub mod guidance;
pub mod instance;
pub mod llm;
