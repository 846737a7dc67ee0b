//! Line-delimited JSON output.

use std::io::Write;

use serde::Serialize;

use crate::decomposition::TraceRecord;

/// One JSON object per line.
pub fn write_jsonl<T: Serialize>(mut w: impl Write, records: &[T]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_trace(w: impl Write, trace: &[TraceRecord]) -> std::io::Result<()> {
    write_jsonl(w, trace)
}
