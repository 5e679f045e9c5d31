//! `ucode`: assembler, disassembler, update packer, engine runner, heat-map
//! sweeper and ROM-grid extractor.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ucode::container::{
    deobfuscate_triads, pack_verbatim, parse_update, UpdateFile, UpdateJson, XorKey, HEADER_BYTES,
};
use ucode::engine::{
    run_macroinstruction, ExecutionOutcome, MachineState, MacroContext, MicrocodeStore, RunConfig, DEFAULT_STEP_LIMIT,
    GPR_NAMES,
};
use ucode::heatmap::{
    combine, generate_raw_heatmap, locate_entrypoint, render_rows, subtract_reference, HeatMap, MacroRunner, Workload,
};
use ucode::romgrid::{grid_to_words, BitGrid, GridConfig, Parity};
use ucode::rtl::{assemble_source, disassemble, disassemble_triad, DisasmOptions};
use ucode::tables::export_json;
use ucode::toyrom::{build_toy_rom, pad_rom, reference_workload, toy_macro, toy_state, TOY_MACROS};
use ucode::uisa::{Triad, TRIAD_BYTES};

#[derive(Parser, Debug)]
#[command(name = "ucode", about = "Microcode toolchain: assemble, inspect, run and map microcode updates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Assemble RTL source into an update file (or raw triad bytes).
    Asm {
        /// RTL source, `-` for stdin.
        input: PathBuf,
        /// Output path, `-` for stdout.
        #[arg(short, long, default_value = "-")]
        output: PathBuf,
        /// Set a match register, overriding any pragma: `N=ADDR`.
        #[arg(long = "match", value_name = "N=ADDR", value_parser = parse_match)]
        matches: Vec<(usize, u32)>,
        /// Emit only the triad bytes, without a header.
        #[arg(long, conflicts_with = "json")]
        raw: bool,
        /// Emit the JSON dump instead of binary.
        #[arg(long)]
        json: bool,
    },
    /// Disassemble an update file (or raw triad bytes) to RTL.
    Disasm {
        input: PathBuf,
        /// Treat the input as raw triad bytes.
        #[arg(long)]
        raw: bool,
        /// Address of the first triad.
        #[arg(long, default_value = "0", value_parser = parse_u16)]
        start: u16,
        /// Annotate every triad with its address.
        #[arg(long)]
        addresses: bool,
    },
    /// Build an update file from a JSON dump; header values are kept verbatim.
    Pack {
        input: PathBuf,
        #[arg(short, long, default_value = "-")]
        output: PathBuf,
        /// Recompute the length and checksum fields.
        #[arg(long)]
        reseal: bool,
    },
    /// Show an update file's header, match registers and triads.
    Unpack {
        input: PathBuf,
        /// Print the JSON dump instead of text.
        #[arg(long)]
        json: bool,
        /// Reject a checksum mismatch.
        #[arg(long)]
        verify: bool,
        /// XOR the triad region with this hex key before parsing.
        #[arg(long, value_name = "HEX")]
        xor_key: Option<String>,
    },
    /// Execute one macroinstruction on the engine.
    Run(RunArgs),
    /// Sweep crash interceptions to find the triads macroinstructions execute.
    Heatmap(HeatmapArgs),
    /// Convert a ROM bit grid into 64-bit words.
    Romgrid {
        /// One row per line of `0`/`1`, `-` for stdin.
        input: PathBuf,
        #[arg(long, value_enum, default_value = "even")]
        parity: ParityArg,
        /// Column indices where inverted segments toggle, comma separated.
        #[arg(long, value_delimiter = ',')]
        segments: Vec<usize>,
        #[arg(long, default_value = "1")]
        subarrays: usize,
        /// Subarray interleave order, comma separated.
        #[arg(long, value_delimiter = ',')]
        order: Option<Vec<usize>>,
        /// Treat `1` as the opposite via reading.
        #[arg(long)]
        flip_convention: bool,
    },
    /// Print the instruction-set tables as JSON.
    Tables,
}

#[derive(Parser, Debug)]
struct RunArgs {
    /// `toy`, an RTL source or a binary triad image.
    #[arg(long, default_value = "toy")]
    rom: String,
    /// Update file to load (checksum verified).
    #[arg(long)]
    update: Option<PathBuf>,
    /// Toy-ROM macroinstruction to run.
    #[arg(long, required_unless_present = "context", conflicts_with = "context")]
    r#macro: Option<String>,
    /// Immediate byte for macros that take one.
    #[arg(long, default_value = "0", value_parser = parse_u8)]
    imm: u8,
    /// Macro context description (JSON).
    #[arg(long)]
    context: Option<PathBuf>,
    /// Initial state: `reg=value` or `[reg]=value` / `[addr]=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Report a dword of memory after the run: `[reg]` or `[addr]`.
    #[arg(long)]
    watch: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_STEP_LIMIT)]
    step_limit: usize,
    /// Write the execution trace as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Parser, Debug)]
struct HeatmapArgs {
    /// Toy macroinstructions to map; several are combined in text output.
    #[arg(long = "macro", required = true)]
    macros: Vec<String>,
    #[arg(long)]
    update: Option<PathBuf>,
    #[arg(long, default_value = "0", value_parser = parse_u16)]
    start: u16,
    /// Exclusive end address.
    #[arg(long, default_value = "0xc00", value_parser = parse_u16)]
    end: u16,
    /// Keep triads shared with the call/ret reference workload.
    #[arg(long)]
    no_reference: bool,
    #[arg(long, value_enum, default_value = "text")]
    format: MapFormat,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ParityArg {
    Even,
    Odd,
    None,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MapFormat {
    Text,
    Csv,
}

/// JSON description of a macro context.
#[derive(Debug, Serialize, Deserialize)]
struct ContextFile {
    entry: String,
    #[serde(default)]
    operand_regs: [Option<u8>; 2],
    /// Hex string.
    #[serde(default)]
    instruction_bytes: String,
    next_pc: String,
}

fn parse_int(s: &str) -> Result<u64, String> {
    let t = s.trim();
    let parsed = match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(h) => u64::from_str_radix(h, 16),
        None => t.parse(),
    };
    parsed.map_err(|_| format!("`{s}` is not a number"))
}

fn parse_u16(s: &str) -> Result<u16, String> {
    u16::try_from(parse_int(s)?).map_err(|_| format!("`{s}` does not fit in 16 bits"))
}

fn parse_u8(s: &str) -> Result<u8, String> {
    u8::try_from(parse_int(s)?).map_err(|_| format!("`{s}` does not fit in 8 bits"))
}

fn parse_u32(s: &str) -> Result<u32, String> {
    u32::try_from(parse_int(s)?).map_err(|_| format!("`{s}` does not fit in 32 bits"))
}

fn parse_match(s: &str) -> Result<(usize, u32), String> {
    let (n, addr) = s.split_once('=').ok_or("expected N=ADDR")?;
    let n = parse_int(n)? as usize;
    if n >= 8 {
        return Err(format!("match register {n} does not exist (0..7)"));
    }
    Ok((n, parse_u32(addr)?))
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    if path == Path::new("-") {
        let mut buf = Vec::new();
        std::io::stdin().read_to_end(&mut buf).context("reading stdin")?;
        Ok(buf)
    } else {
        std::fs::read(path).with_context(|| format!("reading {}", path.display()))
    }
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_input(path)?).with_context(|| format!("{} is not UTF-8", path.display()))
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<()> {
    if path == Path::new("-") {
        let mut out = std::io::stdout().lock();
        out.write_all(bytes)?;
        out.flush()?;
        Ok(())
    } else {
        std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
    }
}

fn raw_triads(bytes: &[u8]) -> Result<Vec<Triad>> {
    if !bytes.len().is_multiple_of(TRIAD_BYTES) {
        bail!("{} bytes is not a whole number of {TRIAD_BYTES}-byte triads", bytes.len());
    }
    Ok(bytes.chunks_exact(TRIAD_BYTES).map(|c| Triad::from_bytes(c.try_into().unwrap())).collect())
}

fn triad_bytes(triads: &[Triad]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(triads.len() * TRIAD_BYTES);
    for t in triads {
        out.extend_from_slice(&t.to_bytes()?);
    }
    Ok(out)
}

fn load_update(path: &Path) -> Result<UpdateFile> {
    Ok(parse_update(&read_input(path)?, true)?)
}

fn cmd_asm(input: &Path, output: &Path, matches: &[(usize, u32)], raw: bool, json: bool) -> Result<()> {
    let mut program = assemble_source(&read_text(input)?)?;
    for &(n, addr) in matches {
        program.match_registers[n] = addr;
    }
    let update = program.to_update()?;
    let bytes = if raw {
        triad_bytes(&update.triads)?
    } else if json {
        let dump = UpdateJson::from_update(&update, |t| Some(disassemble_triad(t)))?;
        (serde_json::to_string_pretty(&dump)? + "\n").into_bytes()
    } else {
        update.to_bytes()?
    };
    write_output(output, &bytes)
}

fn cmd_disasm(input: &Path, raw: bool, start: u16, addresses: bool) -> Result<String> {
    let bytes = read_input(input)?;
    let (triads, mrs) = if raw {
        (raw_triads(&bytes)?, None)
    } else {
        let u = parse_update(&bytes, false)?;
        (u.triads, Some(u.match_registers))
    };
    Ok(disassemble(&triads, &DisasmOptions { start, addresses, match_registers: mrs }))
}

fn cmd_pack(input: &Path, output: &Path, reseal: bool) -> Result<()> {
    let dump: UpdateJson = serde_json::from_str(&read_text(input)?).context("parsing JSON dump")?;
    let mut update = dump.to_update()?;
    let bytes = if reseal {
        update.seal()?;
        update.to_bytes()?
    } else {
        pack_verbatim(&update)?
    };
    write_output(output, &bytes)
}

fn unpack_text(u: &UpdateFile) -> String {
    let h = &u.header;
    let mut out = format!(
        "date            {:#010x}\npatch_id        {:#010x}\npatch_block     {:#06x}\nlen             {}\ninit            {:#04x}\n\
         checksum        {:#010x}\nnorthbridge_id  {:#010x}\nsouthbridge_id  {:#010x}\ncpuid           {:#010x}\n\
         magic           {:#010x}\n",
        h.date, h.patch_id, h.patch_block, h.len, h.init, h.checksum, h.northbridge_id, h.southbridge_id, h.cpuid,
        h.magic
    );
    for (i, m) in u.match_registers.iter().enumerate() {
        out.push_str(&format!("m{i}={m:#x}\n"));
    }
    out.push('\n');
    out.push_str(&disassemble(&u.triads, &DisasmOptions { start: 0, addresses: true, match_registers: None }));
    out
}

fn cmd_unpack(input: &Path, json: bool, verify: bool, xor_key: Option<&str>) -> Result<String> {
    let mut bytes = read_input(input)?;
    if let Some(key) = xor_key {
        let key = hex::decode(key.trim_start_matches("0x")).context("--xor-key is not hex")?;
        bytes = deobfuscate_triads(&bytes, &XorKey(key));
    }
    if bytes.len() < HEADER_BYTES {
        bail!("{} bytes is shorter than an update header", bytes.len());
    }
    let u = parse_update(&bytes, verify)?;
    if json {
        let dump = UpdateJson::from_update(&u, |t| Some(disassemble_triad(t)))?;
        Ok(serde_json::to_string_pretty(&dump)? + "\n")
    } else {
        Ok(unpack_text(&u))
    }
}

fn load_rom(spec: &str) -> Result<MicrocodeStore> {
    if spec == "toy" {
        return Ok(build_toy_rom());
    }
    let path = Path::new(spec);
    let triads = if path.extension().is_some_and(|e| e == "rtl") {
        assemble_source(&read_text(path)?)?.image(ucode::toyrom::trap_triad())?
    } else {
        raw_triads(&read_input(path)?)?
    };
    let rom = pad_rom(triads).ok_or_else(|| anyhow!("ROM image is larger than 0xc00 triads"))?;
    Ok(MicrocodeStore::new(rom))
}

fn load_context(path: &Path) -> Result<MacroContext> {
    let c: ContextFile = serde_json::from_str(&read_text(path)?).context("parsing context file")?;
    Ok(MacroContext {
        entry_address: parse_u16(&c.entry).map_err(|e| anyhow!(e))?,
        operand_regs: c.operand_regs,
        instruction_bytes: hex::decode(&c.instruction_bytes).context("instruction_bytes is not hex")?,
        next_pc: parse_u32(&c.next_pc).map_err(|e| anyhow!(e))?,
    })
}

/// Resolves `[reg]`, `[reg+off]` or `[addr]` against `state`.
fn memory_address(expr: &str, state: &MachineState) -> Result<u32> {
    let inner = expr
        .trim()
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| anyhow!("`{expr}` is not a memory reference"))?;
    let (base, offset) = match inner.split_once('+') {
        Some((b, o)) => (b.trim(), parse_u32(o).map_err(|e| anyhow!(e))?),
        None => (inner.trim(), 0),
    };
    let base = match state.gpr(base) {
        Some(v) => v,
        None => parse_u32(base).map_err(|_| anyhow!("`{base}` is neither a register nor an address"))?,
    };
    Ok(base.wrapping_add(offset))
}

fn apply_sets(state: &mut MachineState, sets: &[String]) -> Result<Vec<String>> {
    let pairs: Vec<(&str, u32)> = sets
        .iter()
        .map(|s| {
            let (k, v) = s.split_once('=').ok_or_else(|| anyhow!("`{s}` is not KEY=VALUE"))?;
            Ok((k.trim(), parse_u32(v).map_err(|e| anyhow!(e))?))
        })
        .collect::<Result<_>>()?;
    let mut watches = Vec::new();
    for &(k, v) in pairs.iter().filter(|(k, _)| !k.starts_with('[')) {
        if !state.set_gpr(k, v) {
            bail!("unknown register `{k}`");
        }
    }
    for &(k, v) in pairs.iter().filter(|(k, _)| k.starts_with('[')) {
        let address = memory_address(k, state)?;
        state.memory.map(address, 4).map_err(|_| anyhow!("{k} is in the unmappable zero page"))?;
        state.memory.write_u32(address, v)?;
        watches.push(k.to_string());
    }
    Ok(watches)
}

fn run_report(out: &ExecutionOutcome, watches: &[(String, u32)]) -> String {
    let s = &out.final_state;
    let mut report = String::new();
    for (name, v) in GPR_NAMES.iter().zip(s.gprs) {
        report.push_str(&format!("{name}={v:#010x}\n"));
    }
    report.push_str(&format!(
        "flags: zf={} cf={} sf={} of={}\n",
        s.flags.zf as u8, s.flags.cf as u8, s.flags.sf as u8, s.flags.of as u8
    ));
    report.push_str(&format!("next_decode_pc={:#010x}\n", out.next_decode_pc));
    report.push_str(&format!("triads={}\n", out.fetched.len()));
    for (expr, address) in watches {
        match s.memory.read_u32(*address) {
            Ok(v) => report.push_str(&format!("mem{expr}={v}\n")),
            Err(_) => report.push_str(&format!("mem{expr}=unmapped\n")),
        }
    }
    match &out.fault {
        Some(f) => report.push_str(&format!("fault: {f}\n")),
        None => report.push_str("fault: none\n"),
    }
    report
}

/// Runs a macroinstruction; returns the report and whether it faulted.
fn cmd_run(args: &RunArgs) -> Result<(String, bool)> {
    let mut store = load_rom(&args.rom)?;
    if let Some(path) = &args.update {
        store.apply_update(&load_update(path)?, true).map_err(|f| anyhow!("update rejected: {f}"))?;
    }
    let ctx = match (&args.r#macro, &args.context) {
        (Some(name), _) => toy_macro(name)
            .ok_or_else(|| anyhow!("unknown macro `{name}`; known: {}", macro_names()))?
            .context(args.imm),
        (None, Some(path)) => load_context(path)?,
        (None, None) => unreachable!("clap requires --macro or --context"),
    };
    let mut state = toy_state();
    let mut watch_exprs = apply_sets(&mut state, &args.sets)?;
    watch_exprs.extend(args.watch.iter().cloned());
    let watches = watch_exprs
        .into_iter()
        .map(|e| Ok((e.clone(), memory_address(&e, &state)?)))
        .collect::<Result<Vec<_>>>()?;
    let config = RunConfig { step_limit: args.step_limit, trace: args.trace.is_some() };
    let out = run_macroinstruction(&store, state, &ctx, &config);
    if let Some(path) = &args.trace {
        write_output(path, out.trace_jsonl().as_bytes())?;
    }
    Ok((run_report(&out, &watches), out.fault.is_some()))
}

fn macro_names() -> String {
    TOY_MACROS.iter().map(|m| m.name).collect::<Vec<_>>().join(", ")
}

fn cmd_heatmap(args: &HeatmapArgs) -> Result<String> {
    let mut store = build_toy_rom();
    if let Some(path) = &args.update {
        store.apply_update(&load_update(path)?, true).map_err(|f| anyhow!("update rejected: {f}"))?;
    }
    let range = args.start..args.end;
    let reference = if args.no_reference {
        None
    } else {
        Some(generate_raw_heatmap(&store, &reference_workload(), range.clone())?)
    };
    let mut maps: Vec<HeatMap> = Vec::new();
    for name in &args.macros {
        let m = toy_macro(name).ok_or_else(|| anyhow!("unknown macro `{name}`; known: {}", macro_names()))?;
        let workload = Workload::new(name.as_str(), vec![(toy_state(), m.context(0))]);
        let raw = generate_raw_heatmap(&store, &workload, range.clone())?;
        let map = match &reference {
            Some(r) => subtract_reference(&raw, r)?,
            None => raw,
        };
        let fetched = workload.run(&store).into_iter().next().map(|o| o.fetched).unwrap_or_default();
        match locate_entrypoint(&map, Some(&fetched)) {
            Ok(entry) => eprintln!("{name}: entry {entry:#05x}"),
            Err(e) => eprintln!("{name}: {e}"),
        }
        maps.push(map);
    }
    match args.format {
        MapFormat::Text => Ok(render_rows(&combine(&maps, range))),
        MapFormat::Csv => {
            if maps.len() != 1 {
                bail!("CSV output takes exactly one --macro");
            }
            Ok(maps[0].to_csv())
        }
    }
}

fn cmd_romgrid(
    input: &Path,
    parity: ParityArg,
    segments: &[usize],
    subarrays: usize,
    order: Option<&[usize]>,
    flip: bool,
) -> Result<String> {
    let grid = BitGrid::parse_text(&read_text(input)?)?;
    let mut cfg = GridConfig::new(subarrays);
    cfg.parity = match parity {
        ParityArg::Even => Some(Parity::Even),
        ParityArg::Odd => Some(Parity::Odd),
        ParityArg::None => None,
    };
    cfg.segments = segments.to_vec();
    if let Some(order) = order {
        cfg.order = order.to_vec();
    }
    cfg.flip = flip;
    let words = grid_to_words(&grid, &cfg)?;
    Ok(words.iter().map(|w| format!("{w:#018x}\n")).collect())
}

fn tables_json() -> String {
    serde_json::to_string_pretty(&export_json()).expect("tables serialize") + "\n"
}

fn version() -> String {
    let digest = Sha256::digest(tables_json().as_bytes());
    format!("{} (tables sha256 {})", env!("CARGO_PKG_VERSION"), hex::encode(digest))
}

/// Runs a parsed command; `Ok(false)` reports a fault after printing.
fn dispatch(cli: Cli) -> Result<bool> {
    let text = match &cli.command {
        Command::Asm { input, output, matches, raw, json } => {
            cmd_asm(input, output, matches, *raw, *json)?;
            return Ok(true);
        }
        Command::Disasm { input, raw, start, addresses } => cmd_disasm(input, *raw, *start, *addresses)?,
        Command::Pack { input, output, reseal } => {
            cmd_pack(input, output, *reseal)?;
            return Ok(true);
        }
        Command::Unpack { input, json, verify, xor_key } => cmd_unpack(input, *json, *verify, xor_key.as_deref())?,
        Command::Run(args) => {
            let (report, faulted) = cmd_run(args)?;
            write_output(Path::new("-"), report.as_bytes())?;
            return Ok(!faulted);
        }
        Command::Heatmap(args) => cmd_heatmap(args)?,
        Command::Romgrid { input, parity, segments, subarrays, order, flip_convention } => {
            cmd_romgrid(input, *parity, segments, *subarrays, order.as_deref(), *flip_convention)?
        }
        Command::Tables => tables_json(),
    };
    write_output(Path::new("-"), text.as_bytes())?;
    Ok(true)
}

fn main() -> ExitCode {
    let version = version();
    let command = Cli::command().version(version);
    let cli = match command.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: execution faulted");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
