//! JSON model format: the graph fields plus a list of side constraints.

use serde::{Deserialize, Serialize};

use crate::model::{Edge, Graph};
use crate::sideconstraints::SideConstraint;

use super::ParseError;

pub const NATIVE_FORMAT: &str = "dwmap-model";
pub const NATIVE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NativeModel {
    pub format: String,
    pub version: u32,
    pub cardinalities: Vec<usize>,
    pub local: Vec<Vec<f64>>,
    pub edges: Vec<Edge>,
    #[serde(default)]
    pub constraints: Vec<SideConstraint>,
}

impl NativeModel {
    pub fn new(g: &Graph, constraints: Vec<SideConstraint>) -> Self {
        Self {
            format: NATIVE_FORMAT.to_string(),
            version: NATIVE_VERSION,
            cardinalities: g.cardinalities().to_vec(),
            local: g.locals().to_vec(),
            edges: g.edges().to_vec(),
            constraints,
        }
    }

    pub fn into_parts(self) -> Result<(Graph, Vec<SideConstraint>), ParseError> {
        let g = Graph::new(self.cardinalities, self.local, self.edges)?;
        for (i, c) in self.constraints.iter().enumerate() {
            c.validate(&g, i).map_err(|e| ParseError::Format(e.to_string()))?;
        }
        Ok((g, self.constraints))
    }
}

pub fn read_native(text: &str) -> Result<(Graph, Vec<SideConstraint>), ParseError> {
    let m: NativeModel = serde_json::from_str(text)?;
    if m.format != NATIVE_FORMAT {
        return Err(ParseError::Format(format!("format '{}', expected '{NATIVE_FORMAT}'", m.format)));
    }
    if m.version != NATIVE_VERSION {
        return Err(ParseError::Format(format!("version {}, expected {NATIVE_VERSION}", m.version)));
    }
    m.into_parts()
}

pub fn write_native(g: &Graph, constraints: &[SideConstraint]) -> String {
    serde_json::to_string_pretty(&NativeModel::new(g, constraints.to_vec())).expect("model serializes")
}
