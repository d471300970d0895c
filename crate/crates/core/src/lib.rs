#![no_std]

extern crate alloc;

pub mod category;
pub mod conversation;
pub mod diagram;
pub mod emulation;
pub mod fixture;
pub mod flow;
pub mod llm;
pub mod metrics;
pub mod prompts;
pub mod testbench;
