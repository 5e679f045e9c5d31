#![allow(dead_code)]

use std::path::PathBuf;

use ucode::container::UpdateFile;
use ucode::engine::{run_macroinstruction, ExecutionOutcome, MachineState, MicrocodeStore, RunConfig};
use ucode::rtl::assemble_source;
use ucode::toyrom::{build_toy_rom, toy_macro, toy_state};

pub const MAGIC: u32 = 0x0042_f00d;
pub const TROJAN_A: u32 = 0x1337;
pub const TROJAN_B: u32 = 0x42;

pub fn fixture(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn fixture_update(name: &str) -> UpdateFile {
    assemble_source(&fixture(name)).unwrap().to_update().unwrap()
}

pub fn toy_with(update: &UpdateFile) -> MicrocodeStore {
    build_toy_rom().with_update(update, true).unwrap()
}

pub fn run_div(store: &MicrocodeStore, mut state: MachineState, dividend: u32, divisor: u32) -> ExecutionOutcome {
    state.set_gpr("eax", dividend);
    state.set_gpr("ebx", divisor);
    run_macroinstruction(store, state, &toy_macro("div").unwrap().context(0), &RunConfig::default())
}

pub fn run_shrd(store: &MicrocodeStore, mut state: MachineState, op1: u32, op2: u32, count: u8) -> ExecutionOutcome {
    state.set_gpr("eax", op1);
    state.set_gpr("ebx", op2);
    run_macroinstruction(store, state, &toy_macro("shrd").unwrap().context(count), &RunConfig::default())
}

/// x86 `shrd op1, op2, count` for counts below 32.
pub fn shrd_oracle(op1: u32, op2: u32, count: u8) -> u32 {
    ((((op2 as u64) << 32) | op1 as u64) >> count) as u32
}

/// What the compare-and-condense gadget should leave in t1d.
pub fn condense_oracle(value: u32, magic: u32) -> u32 {
    (value == magic) as u32
}

pub fn default_state() -> MachineState {
    toy_state()
}
