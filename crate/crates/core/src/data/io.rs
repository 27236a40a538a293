//! JSON Lines dataset format.
//!
//! The first line is `{"meta": {"W":…, "T":…, "S":…, "classes":[…]}}`; every
//! following line is one sample:
//! `{"id": "...", "windows": [[[f;S];T];W], "label": int|null, "next": [[f;S];T]|null}`
//! with optional `"truth"` (generating cluster) and `"time"` fields.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Meta, Sample, SeriesDataset};
use crate::error::{GeneError, Result};
use crate::persistence::write_atomic;

#[derive(Serialize, Deserialize)]
struct Header {
    meta: Meta,
}

#[derive(Serialize, Deserialize)]
struct SampleLine {
    id: String,
    windows: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    label: Option<i64>,
    #[serde(default)]
    next: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    time: Option<f64>,
}

fn flatten_window(id: &str, what: &str, rows: &[Vec<f64>], meta: &Meta, out: &mut Vec<f64>) -> Result<()> {
    if rows.len() != meta.points {
        return Err(GeneError::data(format!(
            "sample {id:?}: {what} has {} time points, expected T = {}",
            rows.len(),
            meta.points
        )));
    }
    for row in rows {
        if row.len() != meta.variables {
            return Err(GeneError::data(format!(
                "sample {id:?}: {what} has a point with {} variables, expected S = {}",
                row.len(),
                meta.variables
            )));
        }
        out.extend_from_slice(row);
    }
    Ok(())
}

fn nest(meta: &Meta, flat: &[f64]) -> Vec<Vec<f64>> {
    flat.chunks(meta.variables).map(|r| r.to_vec()).collect()
}

pub fn read_dataset<R: Read>(reader: R) -> Result<SeriesDataset> {
    let mut lines = BufReader::new(reader).lines().enumerate();
    let meta = loop {
        match lines.next() {
            None => return Err(GeneError::data("empty dataset file")),
            Some((i, line)) => {
                let line = line.map_err(|e| GeneError::data(format!("line {}: {e}", i + 1)))?;
                if line.trim().is_empty() {
                    continue;
                }
                let h: Header = serde_json::from_str(&line)
                    .map_err(|e| GeneError::data(format!("line {}: bad header: {e}", i + 1)))?;
                break h.meta;
            }
        }
    };
    let mut samples = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| GeneError::data(format!("line {lineno}: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: SampleLine =
            serde_json::from_str(&line).map_err(|e| GeneError::data(format!("line {lineno}: {e}")))?;
        if s.windows.len() != meta.windows {
            return Err(GeneError::data(format!(
                "line {lineno}: sample {:?} has {} windows, expected W = {}",
                s.id,
                s.windows.len(),
                meta.windows
            )));
        }
        let mut windows = Vec::with_capacity(meta.windows * meta.window_len());
        for (n, w) in s.windows.iter().enumerate() {
            flatten_window(&s.id, &format!("window {n}"), w, &meta, &mut windows)
                .map_err(|e| e.context(format!("line {lineno}")))?;
        }
        let next = match &s.next {
            Some(rows) => {
                let mut out = Vec::with_capacity(meta.window_len());
                flatten_window(&s.id, "next window", rows, &meta, &mut out)
                    .map_err(|e| e.context(format!("line {lineno}")))?;
                Some(out)
            }
            None => None,
        };
        samples.push(Sample {
            id: s.id,
            windows,
            label: s.label,
            next,
            truth: s.truth,
            time: s.time,
        });
    }
    SeriesDataset::new(meta, samples)
}

pub fn write_dataset<W: Write>(ds: &SeriesDataset, mut w: W) -> Result<()> {
    let io_err = |e: std::io::Error| GeneError::data(format!("write failed: {e}"));
    let header = Header { meta: ds.meta.clone() };
    serde_json::to_writer(&mut w, &header).map_err(|e| GeneError::data(e.to_string()))?;
    w.write_all(b"\n").map_err(io_err)?;
    let m = &ds.meta;
    for s in &ds.samples {
        let line = SampleLine {
            id: s.id.clone(),
            windows: s.windows.chunks(m.window_len()).map(|win| nest(m, win)).collect(),
            label: s.label,
            next: s.next.as_ref().map(|n| nest(m, n)),
            truth: s.truth,
            time: s.time,
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| GeneError::data(e.to_string()))?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<SeriesDataset> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| GeneError::io(path, e))?;
    read_dataset(f).map_err(|e| e.context(path.display()))
}

pub fn save_dataset(ds: &SeriesDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(ds, &mut buf)?;
    write_atomic(path.as_ref(), &buf)
}
