use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

/// One exported step of an episode; `soc` is the value observed before the step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub soc: f64,
    pub load: f64,
    pub pv: f64,
    pub p_ch: f64,
    pub p_dis: f64,
    pub p_gen: f64,
    pub curt: f64,
    pub shed: f64,
    pub reward: f64,
}

pub fn write_trace(rows: &[TraceRow], out: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(input: impl Read) -> Result<Vec<TraceRow>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}
