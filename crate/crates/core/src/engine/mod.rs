//! Executable model of the microcode engine: triad fetch with match-register
//! interception, the sequencer, operand substitution and per-op semantics
//! over a 32-bit machine state.

pub mod alu;
mod exec;
mod state;
mod store;
mod trace;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use exec::{execute_insn, resolve_register, step_triad, Effect, Part, RegLocation, SeqOutcome, StepResult};
pub use state::{gpr_index, Flags, GuardPageError, MachineState, Memory, GPR_NAMES, PAGE_SIZE};
pub use store::{apply_update, MicrocodeStore, PATCH_BASE, ROM_TRIADS};
pub use trace::{MemDelta, RegDelta, TraceRecord};

use crate::uisa::SeqAction;

pub const DEFAULT_STEP_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Access {
    Read,
    Write,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum Fault {
    #[error("page fault on {access:?} at {address:#010x}")]
    PageFault { address: u32, access: Access },
    #[error("general protection fault")]
    GeneralProtection,
    #[error("step limit of {limit} triads exceeded")]
    StepLimit { limit: usize },
    #[error("fetch from unpopulated triad address {address:#x}")]
    FetchOutOfRange { address: u16 },
    #[error("invalid microinstruction: {reason}")]
    Invalid { reason: String },
}

impl Fault {
    pub(crate) fn invalid(reason: impl Into<String>) -> Self {
        Fault::Invalid { reason: reason.into() }
    }
}

/// Everything the microcode sees about the macroinstruction being decoded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacroContext {
    /// ROM triad address where decoding starts.
    pub entry_address: u16,
    /// x86 register numbers (0..8) substituted for `regm*` and `reg*`.
    pub operand_regs: [Option<u8>; 2],
    /// Raw instruction bytes, placed in memory so they end at `next_pc`.
    pub instruction_bytes: Vec<u8>,
    /// Address of the following macroinstruction, read through `pcd`.
    pub next_pc: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    pub step_limit: usize,
    pub trace: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { step_limit: DEFAULT_STEP_LIMIT, trace: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionOutcome {
    pub final_state: MachineState,
    /// `ctx.next_pc` unless a writePC ran (also on faulting runs).
    pub next_decode_pc: u32,
    pub fault: Option<Fault>,
    /// Requested triad addresses in fetch order, before redirection.
    pub fetched: Vec<u16>,
    /// Per-instruction records when tracing is enabled.
    pub trace: Vec<TraceRecord>,
}

impl ExecutionOutcome {
    pub fn completed(&self) -> bool {
        self.fault.is_none()
    }

    /// Trace as line-delimited JSON.
    pub fn trace_jsonl(&self) -> String {
        trace::to_jsonl(&self.trace)
    }
}

/// Runs one macroinstruction from `ctx.entry_address` until a triad
/// completes decoding, a fault occurs, or `config.step_limit` triads have
/// executed. Temporary registers are cleared first, and the instruction
/// bytes are written to memory (mapping their pages).
pub fn run_macroinstruction(
    store: &MicrocodeStore,
    state: MachineState,
    ctx: &MacroContext,
    config: &RunConfig,
) -> ExecutionOutcome {
    let mut state = state;
    state.temps = [0; 8];
    let mut outcome = ExecutionOutcome {
        final_state: MachineState::default(),
        next_decode_pc: ctx.next_pc,
        fault: None,
        fetched: Vec::new(),
        trace: Vec::new(),
    };
    let fault = run_loop(store, &mut state, ctx, config, &mut outcome).err();
    outcome.fault = fault;
    outcome.final_state = state;
    outcome
}

fn place_instruction_bytes(state: &mut MachineState, ctx: &MacroContext) -> Result<(), Fault> {
    let len = ctx.instruction_bytes.len() as u32;
    if len == 0 {
        return Ok(());
    }
    let start = ctx.next_pc.wrapping_sub(len);
    state
        .memory
        .map(start, len)
        .map_err(|_| Fault::PageFault { address: start, access: Access::Write })?;
    state.memory.write_bytes(start, &ctx.instruction_bytes)
}

fn run_loop(
    store: &MicrocodeStore,
    state: &mut MachineState,
    ctx: &MacroContext,
    config: &RunConfig,
    outcome: &mut ExecutionOutcome,
) -> Result<(), Fault> {
    place_instruction_bytes(state, ctx)?;
    let mut address = ctx.entry_address;
    let mut steps = 0;
    loop {
        if steps == config.step_limit {
            return Err(Fault::StepLimit { limit: config.step_limit });
        }
        steps += 1;
        outcome.fetched.push(address);
        let resolved = store.resolve(address)?;
        let triad = store.triad_at(resolved);
        let trace = config.trace.then_some(&mut outcome.trace);
        let result = step_triad(state, ctx, triad, resolved, trace);
        if let Some(pc) = result.write_pc {
            outcome.next_decode_pc = pc;
        }
        match result.seq? {
            SeqOutcome::Continue(next) => address = next,
            SeqOutcome::Complete => return Ok(()),
        }
    }
}

impl SeqOutcome {
    pub(crate) fn from_action(action: SeqAction, address: u16, resolved: u16) -> Result<Self, Fault> {
        match action {
            SeqAction::NextTriad => Ok(SeqOutcome::Continue(resolved.wrapping_add(1))),
            SeqAction::Branch => Ok(SeqOutcome::Continue(address)),
            SeqAction::Complete => Ok(SeqOutcome::Complete),
            SeqAction::Unknown(code) => Err(Fault::invalid(format!("unknown sequence action {code:03b}"))),
        }
    }
}
