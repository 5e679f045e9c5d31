use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegDelta {
    pub name: String,
    pub old: u32,
    pub new: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemDelta {
    pub address: u32,
    pub size: u32,
    pub old: u32,
    pub new: u32,
}

/// One executed microinstruction. `address` is the triad address after
/// match-register redirection. Flag deltas use bits Z=0, C=1, S=2, O=3.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub address: u16,
    pub slot: usize,
    pub mnemonic: String,
    pub registers: Vec<RegDelta>,
    pub memory: Vec<MemDelta>,
}

pub(crate) fn to_jsonl(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
        out.push('\n');
    }
    out
}
