//! Heat maps: which ROM triads a macroinstruction executes, found by
//! intercepting each address in turn with a crashing patch.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;

use rayon::prelude::*;
use thiserror::Error;

use crate::container::UpdateFile;
use crate::engine::{run_macroinstruction, ExecutionOutcome, Fault, MachineState, MacroContext, MicrocodeStore, RunConfig, ROM_TRIADS};
use crate::toyrom::trap_triad;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HeatMapError {
    #[error("address range {start:#x}..{end:#x} leaves the ROM")]
    RangeOutsideRom { start: u16, end: u16 },
    #[error("`{label}` faults without any patch: {fault}")]
    BaselineFault { label: String, fault: Fault },
    #[error("heat maps cover different addresses")]
    DomainMismatch,
    #[error("heat map has no hit")]
    EmptyMap,
    #[error("no hit address was fetched by the traced run")]
    NotFetched,
}

/// Per-address crash result for one macroinstruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeatMap {
    pub label: String,
    pub entries: BTreeMap<u16, bool>,
}

impl HeatMap {
    pub fn hits(&self) -> impl Iterator<Item = u16> + '_ {
        self.entries.iter().filter(|(_, &hit)| hit).map(|(&a, _)| a)
    }

    /// `address,hit` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("address,hit\n");
        for (a, hit) in &self.entries {
            let _ = writeln!(out, "{a:#05x},{}", *hit as u8);
        }
        out
    }
}

/// A one-triad update that intercepts `address` with a triad storing to
/// page 0.
pub fn crash_patch(address: u16) -> UpdateFile {
    let mut mrs = [0u32; 8];
    mrs[0] = address as u32;
    UpdateFile::new(mrs, vec![trap_triad()]).expect("single triad update")
}

/// Executes one macroinstruction workload against a store.
pub trait MacroRunner: Sync {
    fn label(&self) -> &str;
    fn run(&self, store: &MicrocodeStore) -> Vec<ExecutionOutcome>;
}

/// A fixed list of (state, context) executions.
#[derive(Debug, Clone)]
pub struct Workload {
    pub label: String,
    pub runs: Vec<(MachineState, MacroContext)>,
    pub config: RunConfig,
}

impl Workload {
    pub fn new(label: impl Into<String>, runs: Vec<(MachineState, MacroContext)>) -> Self {
        Workload { label: label.into(), runs, config: RunConfig::default() }
    }
}

impl MacroRunner for Workload {
    fn label(&self) -> &str {
        &self.label
    }

    fn run(&self, store: &MicrocodeStore) -> Vec<ExecutionOutcome> {
        self.runs
            .iter()
            .map(|(state, ctx)| run_macroinstruction(store, state.clone(), ctx, &self.config))
            .collect()
    }
}

/// Sweeps `range`, recording for each address whether the workload faults
/// when that address is intercepted. Any fault counts as a crash,
/// including the step limit. The unpatched workload must not fault.
pub fn generate_raw_heatmap(
    store: &MicrocodeStore,
    runner: &dyn MacroRunner,
    range: Range<u16>,
) -> Result<HeatMap, HeatMapError> {
    if range.end as usize > ROM_TRIADS {
        return Err(HeatMapError::RangeOutsideRom { start: range.start, end: range.end });
    }
    if let Some(fault) = runner.run(store).into_iter().find_map(|o| o.fault) {
        return Err(HeatMapError::BaselineFault { label: runner.label().to_string(), fault });
    }
    let entries: Vec<(u16, bool)> = range
        .into_par_iter()
        .map(|address| {
            let patched = store.with_update(&crash_patch(address), false).expect("unverified update applies");
            let crashed = runner.run(&patched).iter().any(|o| o.fault.is_some());
            (address, crashed)
        })
        .collect();
    Ok(HeatMap { label: runner.label().to_string(), entries: entries.into_iter().collect() })
}

/// Hits of `raw` that are not hits of `reference`.
pub fn subtract_reference(raw: &HeatMap, reference: &HeatMap) -> Result<HeatMap, HeatMapError> {
    if !raw.entries.keys().eq(reference.entries.keys()) {
        return Err(HeatMapError::DomainMismatch);
    }
    let entries = raw
        .entries
        .iter()
        .map(|(a, &hit)| (*a, hit && !reference.entries[a]))
        .collect();
    Ok(HeatMap { label: raw.label.clone(), entries })
}

/// Entry point of a clean map: the first hit in `fetch_order` (a traced
/// run's fetched addresses), or the lowest hit without a trace.
pub fn locate_entrypoint(clean: &HeatMap, fetch_order: Option<&[u16]>) -> Result<u16, HeatMapError> {
    let lowest = clean.hits().next().ok_or(HeatMapError::EmptyMap)?;
    match fetch_order {
        None => Ok(lowest),
        Some(order) => order
            .iter()
            .copied()
            .find(|a| clean.entries.get(a).copied().unwrap_or(false))
            .ok_or(HeatMapError::NotFetched),
    }
}

/// Combines clean maps into `(range, label)` rows over `range`, merging
/// consecutive addresses with the same label. Unclaimed addresses are
/// labelled `-`; an address claimed by several maps joins their labels
/// with `,`.
pub fn combine(maps: &[HeatMap], range: Range<u16>) -> Vec<(u16, u16, String)> {
    let mut rows: Vec<(u16, u16, String)> = Vec::new();
    for address in range {
        let labels: Vec<&str> = maps
            .iter()
            .filter(|m| m.entries.get(&address).copied().unwrap_or(false))
            .map(|m| m.label.as_str())
            .collect();
        let label = if labels.is_empty() { "-".to_string() } else { labels.join(",") };
        match rows.last_mut() {
            Some((_, end, l)) if *l == label && *end + 1 == address => *end = address,
            _ => rows.push((address, address, label)),
        }
    }
    rows
}

/// Text table of combined rows, one `0x972 - 0x973 div` line per row.
pub fn render_rows(rows: &[(u16, u16, String)]) -> String {
    let mut out = String::new();
    for (start, end, label) in rows {
        let range = if start == end { format!("{start:#05x}") } else { format!("{start:#05x} - {end:#05x}") };
        let _ = writeln!(out, "{range:<13} {label}");
    }
    out
}

/// Range-compressed rendering of a single map.
pub fn render_text(map: &HeatMap, range: Range<u16>) -> String {
    render_rows(&combine(std::slice::from_ref(map), range))
}
