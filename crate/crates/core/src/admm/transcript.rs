use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

/// One line of the iteration log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterRecord {
    pub stage: u8,
    pub t: usize,
    pub primal_res: f64,
    pub dual_res: f64,
    pub int_dist: f64,
    pub obj: f64,
}

/// Observer of the synchronous message rounds.
pub trait Transcript {
    /// Agent `from` sends its allocation to neighbor `to` during round `t`.
    fn message(&mut self, _t: usize, _from: usize, _to: usize, _w: &DVector<f64>) {}
    fn iteration(&mut self, _rec: &IterRecord) {}
}

/// Discards everything.
pub struct Silent;

impl Transcript for Silent {}

/// Keeps every message and record in memory.
#[derive(Clone, Debug, Default)]
pub struct Recorder {
    pub messages: Vec<(usize, usize, usize, Vec<f64>)>,
    pub records: Vec<IterRecord>,
}

impl Transcript for Recorder {
    fn message(&mut self, t: usize, from: usize, to: usize, w: &DVector<f64>) {
        self.messages
            .push((t, from, to, w.iter().copied().collect()));
    }

    fn iteration(&mut self, rec: &IterRecord) {
        self.records.push(rec.clone());
    }
}

/// Writes one JSON object per iteration.
pub struct JsonLines<W: Write> {
    out: W,
}

impl<W: Write> JsonLines<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> Transcript for JsonLines<W> {
    fn iteration(&mut self, rec: &IterRecord) {
        let line = serde_json::to_string(rec).expect("record serializes");
        if let Err(e) = writeln!(self.out, "{line}") {
            log::warn!("transcript write failed: {e}");
        }
    }
}
