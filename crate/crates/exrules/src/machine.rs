//! JSON machine files.
//!
//! ```json
//! {"states": ["q1"], "delta": [{"from": "q1", "b1": 0, "b2": 0, "to": "q1", "d1": 1, "d2": 0}]}
//! ```
//!
//! `b1`/`b2` are the zero-test flags (1 when the counter is positive) and
//! `d1`/`d2` the counter updates in `-1..=1`. Rows missing from `delta` leave
//! the transition undefined. The first state is initial.

use exrules_core::{MachineError, ThreeCM};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineFile {
    pub states: Vec<String>,
    #[serde(default)]
    pub delta: Vec<DeltaRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaRow {
    pub from: String,
    pub b1: u8,
    pub b2: u8,
    pub to: String,
    pub d1: i8,
    pub d2: i8,
}

#[derive(Debug, thiserror::Error)]
pub enum MachineFileError {
    #[error("malformed machine file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid machine: {0}")]
    Machine(#[from] MachineError),
}

impl MachineFile {
    pub fn build(&self) -> Result<ThreeCM, MachineError> {
        let mut m = ThreeCM::new(self.states.iter().cloned())?;
        for row in &self.delta {
            m.define(&row.from, row.b1, row.b2, &row.to, row.d1, row.d2)?;
        }
        Ok(m)
    }

    /// Rows ordered by source state index, then flags.
    pub fn from_machine(m: &ThreeCM) -> MachineFile {
        let mut rows: Vec<_> = m.transitions().collect();
        rows.sort_by_key(|&((s, b1, b2), _)| (s, b1, b2));
        let delta = rows
            .into_iter()
            .map(|((s, b1, b2), tr)| DeltaRow {
                from: m.states()[s].clone(),
                b1: b1.into(),
                b2: b2.into(),
                to: m.states()[tr.to].clone(),
                d1: tr.d1,
                d2: tr.d2,
            })
            .collect();
        MachineFile { states: m.states().to_vec(), delta }
    }
}

pub fn parse_machine(text: &str) -> Result<ThreeCM, MachineFileError> {
    let file: MachineFile = serde_json::from_str(text)?;
    Ok(file.build()?)
}

/// Pretty-printed JSON with a trailing newline.
pub fn render_machine(m: &ThreeCM) -> String {
    let mut out = serde_json::to_string_pretty(&MachineFile::from_machine(m)).expect("plain data serializes");
    out.push('\n');
    out
}
