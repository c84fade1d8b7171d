//! Sweep rows and their CSV encoding.

use std::io::{Read, Write};

use rdp_core::rdp_solver::FrameSolution;
use rdp_core::{PlfKind, Rate};

use crate::format::fmt_g;

pub const HEADER: [&str; 11] = [
    "plf",
    "frame",
    "R1",
    "R2",
    "R3",
    "rho",
    "sigma2",
    "distortion",
    "rate_used",
    "perception_residual",
    "solver_status",
];

/// Significant digits of every numeric CSV field.
pub const DIGITS: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub plf: PlfKind,
    pub frame: usize,
    /// `R_1..R_3`; `None` past the horizon.
    pub rates: [Option<Rate<f64>>; 3],
    pub rho: f64,
    pub sigma2: f64,
    pub distortion: f64,
    pub rate_used: Rate<f64>,
    pub perception_residual: f64,
    pub solver_status: String,
}

impl SweepRow {
    pub fn from_solution(sol: &FrameSolution<f64>, rates: &[Rate<f64>], rho: f64, sigma2: f64) -> Self {
        Self {
            plf: sol.kind,
            frame: sol.frame(),
            rates: [0, 1, 2].map(|i| rates.get(i).copied()),
            rho,
            sigma2,
            distortion: sol.distortion,
            rate_used: sol.rate_used,
            perception_residual: sol.perception_residual,
            solver_status: sol.solver_status.to_string(),
        }
    }

    pub fn record(&self) -> Vec<String> {
        let rate = |r: &Option<Rate<f64>>| r.map(fmt_rate).unwrap_or_default();
        vec![
            self.plf.tag().to_string(),
            self.frame.to_string(),
            rate(&self.rates[0]),
            rate(&self.rates[1]),
            rate(&self.rates[2]),
            fmt_g(self.rho, DIGITS),
            fmt_g(self.sigma2, DIGITS),
            fmt_g(self.distortion, DIGITS),
            fmt_rate(self.rate_used),
            fmt_g(self.perception_residual, DIGITS),
            self.solver_status.clone(),
        ]
    }

    pub fn parse(record: &csv::StringRecord) -> Result<Self, String> {
        if record.len() != HEADER.len() {
            return Err(format!("expected {} fields, got {}", HEADER.len(), record.len()));
        }
        let num = |i: usize| -> Result<f64, String> {
            record[i]
                .parse::<f64>()
                .map_err(|_| format!("{}: not a number: {:?}", HEADER[i], &record[i]))
        };
        let rate = |i: usize| -> Result<Option<Rate<f64>>, String> {
            match &record[i] {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|e| format!("{}: {e}", HEADER[i])),
            }
        };
        Ok(Self {
            plf: record[0].parse().map_err(|e| format!("plf: {e}"))?,
            frame: record[1].parse().map_err(|_| format!("frame: {:?}", &record[1]))?,
            rates: [rate(2)?, rate(3)?, rate(4)?],
            rho: num(5)?,
            sigma2: num(6)?,
            distortion: num(7)?,
            rate_used: rate(8)?.ok_or("rate_used is empty")?,
            perception_residual: num(9)?,
            solver_status: record[10].to_string(),
        })
    }
}

pub fn fmt_rate(r: Rate<f64>) -> String {
    match r {
        Rate::Infinite => "inf".into(),
        Rate::Finite(x) => fmt_g(x, DIGITS),
    }
}

pub fn write_rows<W: Write>(out: W, rows: &[SweepRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(input: R) -> Result<Vec<SweepRow>, String> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| e.to_string())?;
    if header.iter().ne(HEADER) {
        return Err(format!("unexpected header {header:?}"));
    }
    r.records()
        .map(|rec| SweepRow::parse(&rec.map_err(|e| e.to_string())?))
        .collect()
}
