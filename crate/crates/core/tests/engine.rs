mod common;

use proptest::prelude::*;

use common::*;
use ucode::engine::{
    execute_insn, run_macroinstruction, step_triad, Access, ExecutionOutcome, Fault, Flags, MachineState,
    MacroContext, MicrocodeStore, RunConfig, SeqOutcome, TraceRecord,
};
use ucode::rtl::assemble_source;
use ucode::toyrom::{build_toy_rom, toy_macro, toy_rom_triads, CODE_BASE};
use ucode::uisa::{nop_encoding, Microinstruction, Size, Triad};

fn ctx_at(entry: u16) -> MacroContext {
    MacroContext { entry_address: entry, operand_regs: [Some(0), Some(3)], instruction_bytes: vec![0x90], next_pc: CODE_BASE + 1 }
}

fn insn(text: &str) -> Microinstruction {
    assemble_source(text).unwrap().triads()[0].insns[0]
}

/// Toy ROM with `source` assembled over it.
fn rom_with(source: &str) -> MicrocodeStore {
    let mut rom = toy_rom_triads();
    let p = assemble_source(source).unwrap();
    for seg in &p.segments {
        for (i, t) in seg.triads.iter().enumerate() {
            rom[seg.start as usize + i] = *t;
        }
    }
    MicrocodeStore::new(rom)
}

fn run(store: &MicrocodeStore, state: MachineState, entry: u16) -> ExecutionOutcome {
    run_macroinstruction(store, state, &ctx_at(entry), &RunConfig::default())
}

fn arb_state() -> impl Strategy<Value = MachineState> {
    (any::<[u32; 8]>(), any::<[u32; 8]>(), any::<[bool; 4]>()).prop_map(|(gprs, temps, f)| {
        let mut s = default_state();
        s.gprs = gprs;
        s.temps = temps;
        s.flags = Flags { zf: f[0], cf: f[1], sf: f[2], of: f[3] };
        s
    })
}

proptest! {
    #[test]
    fn nop_changes_nothing(state in arb_state()) {
        let mut s = state.clone();
        execute_insn(&mut s, &ctx_at(0x900), &nop_encoding()).unwrap();
        prop_assert_eq!(s, state);
    }

    #[test]
    fn zero_register_reads_zero_and_ignores_writes(state in arb_state(), v in any::<u16>()) {
        let ctx = ctx_at(0x900);
        let mut s = state.clone();
        execute_insn(&mut s, &ctx, &insn(&format!("mov zerod, {v:#x}"))).unwrap();
        prop_assert_eq!(&s, &state);
        execute_insn(&mut s, &ctx, &insn("mov t1d, zerod")).unwrap();
        prop_assert_eq!(s.temps[0], 0);
    }

    #[test]
    fn flags_commit_only_when_requested(state in arb_state()) {
        let ctx = ctx_at(0x900);
        let mut s = state.clone();
        execute_insn(&mut s, &ctx, &insn("sub t1d, t1d")).unwrap();
        prop_assert_eq!(s.flags, state.flags);
        execute_insn(&mut s, &ctx, &insn("sub.f t1d, t1d")).unwrap();
        prop_assert!(s.flags.zf && !s.flags.cf && !s.flags.sf && !s.flags.of);
        let mut s = state.clone();
        execute_insn(&mut s, &ctx, &insn("cmp t1d, t1d")).unwrap();
        prop_assert!(s.flags.zf);
        prop_assert_eq!(s.temps, state.temps);
    }

    #[test]
    fn runs_are_deterministic(a in any::<u32>(), b in 1u32..) {
        let store = toy_with(&fixture_update("div_counter.rtl"));
        let config = RunConfig { trace: true, ..RunConfig::default() };
        let ctx = toy_macro("div").unwrap().context(0);
        let mut s = default_state();
        s.set_gpr("eax", a);
        s.set_gpr("ebx", b);
        let first = run_macroinstruction(&store, s.clone(), &ctx, &config);
        let second = run_macroinstruction(&store, s, &ctx, &config);
        prop_assert_eq!(first, second);
    }

    #[test]
    fn shrd_without_trigger_matches_the_shift(op1 in any::<u32>(), op2 in any::<u32>(), count in 0u8..32) {
        prop_assume!(op1 != MAGIC);
        let clean = run_shrd(&build_toy_rom(), default_state(), op1, op2, count);
        let hooked = run_shrd(&toy_with(&fixture_update("shrd_bug_op1.rtl")), default_state(), op1, op2, count);
        prop_assert_eq!(clean.final_state.gpr("eax"), Some(shrd_oracle(op1, op2, count)));
        prop_assert_eq!(hooked.final_state.gpr("eax"), Some(shrd_oracle(op1, op2, count)));
    }
}

#[test]
fn pc_reads_next_pc_and_cannot_be_written() {
    let ctx = ctx_at(0x900);
    let mut s = default_state();
    execute_insn(&mut s, &ctx, &insn("mov t1d, pcd")).unwrap();
    assert_eq!(s.temps[0], ctx.next_pc);
    let before = s.clone();
    assert!(matches!(execute_insn(&mut s, &ctx, &insn("mov pcd, 0x1")), Err(Fault::Invalid { .. })));
    assert_eq!(s, before);
}

#[test]
fn qword_operands_are_invalid() {
    let mut mi = insn("add t1d, t2d");
    mi.size = Size::Qword.code();
    assert!(matches!(execute_insn(&mut default_state(), &ctx_at(0x900), &mi), Err(Fault::Invalid { .. })));
}

#[test]
fn operand_substitution_follows_the_context() {
    let mut s = default_state();
    s.set_gpr("ecx", 7);
    let ctx = MacroContext { operand_regs: [Some(1), Some(2)], ..ctx_at(0x900) };
    execute_insn(&mut s, &ctx, &insn("add regmd4, 0x3")).unwrap();
    assert_eq!(s.gpr("ecx"), Some(10));
    execute_insn(&mut s, &ctx, &insn("mov regmd6, regmd4")).unwrap();
    assert_eq!(s.gpr("edx"), Some(10));
}

#[test]
fn faulting_load_keeps_earlier_slots() {
    let triad = assemble_source("add t1d, 0x1 | ld t2d, [zerod] | add t3d, 0x1").unwrap().triads()[0];
    let mut s = default_state();
    let r = step_triad(&mut s, &ctx_at(0x900), &triad, 0x900, None);
    assert_eq!(r.seq, Err(Fault::PageFault { address: 0, access: Access::Read }));
    assert_eq!(s.temps[..3], [1, 0, 0]);
}

#[test]
fn taken_branch_lets_the_triad_finish() {
    let triad = assemble_source("jcc T, 0x123 | add t1d, 0x1 | add t2d, 0x2\n.sw_complete").unwrap().triads()[0];
    let mut s = default_state();
    let r = step_triad(&mut s, &ctx_at(0x900), &triad, 0x900, None);
    assert_eq!(r.seq, Ok(SeqOutcome::Continue(0x123)));
    assert_eq!(s.temps[..2], [1, 2]);
}

#[test]
fn self_branching_hook_hits_the_step_limit() {
    let u = assemble_source("// set match register 0 to 0x972\nnop\n.sw_branch 0x972").unwrap().to_update().unwrap();
    let out = run_div(&toy_with(&u), default_state(), 10, 2);
    assert_eq!(out.fault, Some(Fault::StepLimit { limit: ucode::engine::DEFAULT_STEP_LIMIT }));
}

#[test]
fn redirection_targets_even_patch_slots() {
    let mut mrs = [0u32; 8];
    mrs[1] = 0x100;
    let patch: Vec<Triad> = (0..3u16).map(|i| Triad::nops(ucode::uisa::SequenceWord::branch(i))).collect();
    let store = build_toy_rom()
        .with_update(&ucode::container::UpdateFile::new(mrs, patch.clone()).unwrap(), true)
        .unwrap();
    assert_eq!(store.resolve(0x100), Ok(0xc02));
    assert_eq!(store.fetch_triad(0x100), Ok(patch[2]));
    assert_eq!(store.fetch_triad(0xc00), Ok(patch[0]));
    assert_eq!(store.fetch_triad(0xc03), Err(Fault::FetchOutOfRange { address: 0xc03 }));

    let mut mrs = [0u32; 8];
    mrs[3] = 0x200;
    let store = build_toy_rom().with_update(&ucode::container::UpdateFile::new(mrs, patch).unwrap(), true).unwrap();
    assert_eq!(store.fetch_triad(0x200), Err(Fault::FetchOutOfRange { address: 0xc06 }));
}

#[test]
fn lowest_matching_register_wins() {
    let mut mrs = [0u32; 8];
    mrs[2] = 0x300;
    mrs[0] = 0x300;
    let store = build_toy_rom()
        .with_update(&ucode::container::UpdateFile::new(mrs, vec![Triad::nops(Default::default()); 6]).unwrap(), true)
        .unwrap();
    assert_eq!(store.resolve(0x300), Ok(0xc00));
}

#[test]
fn counter_increments_from_five_to_six() {
    let store = toy_with(&fixture_update("div_counter.rtl"));
    let mut s = default_state();
    s.memory.write_u32(s.gpr("edi").unwrap(), 5).unwrap();
    s.set_gpr("esi", MAGIC);
    let out = run_div(&store, s.clone(), 100, 7);
    assert_eq!(out.fault, None);
    assert_eq!(out.final_state.memory.read_u32(s.gpr("edi").unwrap()), Ok(6));
    assert_eq!(out.final_state.gpr("eax"), Some(14));
    assert_eq!(out.final_state.gpr("edx"), Some(2));

    s.set_gpr("esi", MAGIC + 1);
    let out = run_div(&store, s.clone(), 100, 7);
    assert_eq!(out.final_state.memory.read_u32(s.gpr("edi").unwrap()), Ok(5));
}

#[test]
fn shrd_worked_example() {
    let out = run_shrd(&build_toy_rom(), default_state(), 0x8000_0000, 1, 0x1a);
    assert_eq!(out.final_state.gpr("eax"), Some(0x60));
    let hooked = toy_with(&fixture_update("shrd_bug_op1.rtl"));
    assert_eq!(run_shrd(&hooked, default_state(), 0x8000_0000, 1, 0x1a).final_state.gpr("eax"), Some(0x60));
    assert_eq!(
        run_shrd(&hooked, default_state(), MAGIC, 1, 0x1a).final_state.gpr("eax"),
        Some(shrd_oracle(MAGIC, 1, 0x1a) + 1)
    );
}

#[test]
fn trojan_skips_one_byte_on_the_trigger_pair() {
    let store = toy_with(&fixture_update("div_trojan.rtl"));
    let next_pc = toy_macro("div").unwrap().context(0).next_pc;
    assert_eq!(run_div(&store, default_state(), TROJAN_A, TROJAN_B).next_decode_pc, next_pc + 1);
    assert_eq!(run_div(&store, default_state(), TROJAN_A, TROJAN_B + 1).next_decode_pc, next_pc);
}

#[test]
fn division_by_zero_faults() {
    let out = run_div(&build_toy_rom(), default_state(), 1, 0);
    assert!(matches!(out.fault, Some(Fault::PageFault { address: 0, .. })));
}

#[test]
fn trace_lines_are_json_records() {
    let store = toy_with(&fixture_update("div_counter.rtl"));
    let mut s = default_state();
    s.set_gpr("eax", 9);
    s.set_gpr("ebx", 3);
    let ctx = toy_macro("div").unwrap().context(0);
    let out = run_macroinstruction(&store, s, &ctx, &RunConfig { trace: true, ..RunConfig::default() });
    let records: Vec<TraceRecord> =
        out.trace_jsonl().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records, out.trace);
    assert_eq!(records[0].address, 0x972);
    assert!(records.iter().any(|r| r.address == 0xc00 && r.mnemonic == "mov t1d, 0x42"));
    assert!(records.iter().any(|r| !r.memory.is_empty()));
    assert_eq!(out.fetched[..3], [0x972, 0x973, 0x7e5]);
}

#[test]
fn custom_rom_programs_run() {
    let store = rom_with(".start 0x10\nmov t1d, 0x5\nadd eax, t1d\n.sw_complete");
    let out = run(&store, default_state(), 0x10);
    assert_eq!(out.fault, None);
    assert_eq!(out.final_state.gpr("eax"), Some(5));
    assert_eq!(out.fetched, vec![0x10]);
}
