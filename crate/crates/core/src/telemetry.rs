//! Telemetry CSV: a `# schema=1` line, a fixed header, then one row per
//! sample. Floats are written with nine significant digits so a parsed file
//! re-serialises to the same bytes.

use std::io::{self, Write};

use thiserror::Error;

use crate::docking::DockPhase;
use crate::powertrain::ActiveSource;

pub const SCHEMA_LINE: &str = "# schema=1";

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("telemetry io: {0}")]
    Io(#[from] io::Error),
    #[error("telemetry line {line}: {msg}")]
    Format { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FbSample {
    pub phase: DockPhase,
    pub position: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryRow {
    pub time: f64,
    pub bus_voltage: f64,
    pub current_total: f64,
    pub current_primary: f64,
    pub current_secondary: f64,
    /// Bus power delivered to the load, W.
    pub power: f64,
    /// Resistive loss inside the bus packs, W.
    pub loss: f64,
    pub active_source: ActiveSource,
    pub primary_ocv: f64,
    /// Zero when no secondary is connected.
    pub secondary_ocv: f64,
    pub main_position: [f64; 3],
    pub normal_force: f64,
    pub fbs: Vec<FbSample>,
    /// Events since the previous row, `;`-separated.
    pub events: String,
}

/// Canonical float formatting: nine significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.8e}")
}

fn parse_source(s: &str) -> Option<ActiveSource> {
    [ActiveSource::Primary, ActiveSource::Secondary, ActiveSource::Both, ActiveSource::None]
        .into_iter()
        .find(|a| a.as_str() == s)
}

pub fn header(fleet: usize) -> String {
    let mut cols: Vec<String> = [
        "time",
        "bus_voltage",
        "current_total",
        "current_primary",
        "current_secondary",
        "power",
        "loss",
        "active_source",
        "primary_ocv",
        "secondary_ocv",
        "main_x",
        "main_y",
        "main_z",
        "normal_force",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for i in 0..fleet {
        for c in ["phase", "x", "y", "z"] {
            cols.push(format!("fb{i}_{c}"));
        }
    }
    cols.push("events".into());
    cols.join(",")
}

impl TelemetryRow {
    pub fn to_csv(&self) -> String {
        let mut f: Vec<String> = vec![
            fmt_f64(self.time),
            fmt_f64(self.bus_voltage),
            fmt_f64(self.current_total),
            fmt_f64(self.current_primary),
            fmt_f64(self.current_secondary),
            fmt_f64(self.power),
            fmt_f64(self.loss),
            self.active_source.as_str().to_string(),
            fmt_f64(self.primary_ocv),
            fmt_f64(self.secondary_ocv),
        ];
        f.extend(self.main_position.iter().map(|v| fmt_f64(*v)));
        f.push(fmt_f64(self.normal_force));
        for fb in &self.fbs {
            f.push(fb.phase.as_str().to_string());
            f.extend(fb.position.iter().map(|v| fmt_f64(*v)));
        }
        f.push(self.events.clone());
        f.join(",")
    }

    pub fn parse(line: &str, fleet: usize, line_no: usize) -> Result<Self, TelemetryError> {
        let err = |msg: String| TelemetryError::Format { line: line_no, msg };
        let cols: Vec<&str> = line.split(',').collect();
        let expected = 15 + 4 * fleet;
        if cols.len() != expected {
            return Err(err(format!("expected {expected} columns, found {}", cols.len())));
        }
        let num = |i: usize| -> Result<f64, TelemetryError> {
            let v: f64 = cols[i].parse().map_err(|_| err(format!("column {i}: bad number `{}`", cols[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(format!("column {i}: non-finite value")))
            }
        };
        let mut fbs = Vec::with_capacity(fleet);
        for k in 0..fleet {
            let b = 14 + 4 * k;
            let phase = DockPhase::parse(cols[b]).ok_or_else(|| err(format!("unknown phase `{}`", cols[b])))?;
            fbs.push(FbSample { phase, position: [num(b + 1)?, num(b + 2)?, num(b + 3)?] });
        }
        Ok(Self {
            time: num(0)?,
            bus_voltage: num(1)?,
            current_total: num(2)?,
            current_primary: num(3)?,
            current_secondary: num(4)?,
            power: num(5)?,
            loss: num(6)?,
            active_source: parse_source(cols[7]).ok_or_else(|| err(format!("unknown source `{}`", cols[7])))?,
            primary_ocv: num(8)?,
            secondary_ocv: num(9)?,
            main_position: [num(10)?, num(11)?, num(12)?],
            normal_force: num(13)?,
            fbs,
            events: cols[expected - 1].to_string(),
        })
    }
}

/// Streams rows to any writer.
pub struct TelemetryWriter<W: Write> {
    out: W,
    fleet: usize,
    rows: u64,
}

impl<W: Write> TelemetryWriter<W> {
    pub fn new(mut out: W, fleet: usize) -> Result<Self, TelemetryError> {
        writeln!(out, "{SCHEMA_LINE}")?;
        writeln!(out, "{}", header(fleet))?;
        Ok(Self { out, fleet, rows: 0 })
    }

    pub fn write_row(&mut self, row: &TelemetryRow) -> Result<(), TelemetryError> {
        debug_assert_eq!(row.fbs.len(), self.fleet);
        writeln!(self.out, "{}", row.to_csv())?;
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn finish(mut self) -> Result<W, TelemetryError> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Parses a whole telemetry file.
pub fn parse_telemetry(text: &str) -> Result<Vec<TelemetryRow>, TelemetryError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l == SCHEMA_LINE => {}
        _ => return Err(TelemetryError::Format { line: 1, msg: format!("missing `{SCHEMA_LINE}`") }),
    }
    let (_, head) = lines.next().ok_or(TelemetryError::Format { line: 2, msg: "missing header".into() })?;
    let cols = head.split(',').count();
    if cols < 15 || (cols - 15) % 4 != 0 {
        return Err(TelemetryError::Format { line: 2, msg: format!("bad header with {cols} columns") });
    }
    let fleet = (cols - 15) / 4;
    if head != header(fleet) {
        return Err(TelemetryError::Format { line: 2, msg: "header does not match schema 1".into() });
    }
    lines.map(|(i, l)| TelemetryRow::parse(l, fleet, i + 1)).collect()
}

/// Trapezoidal integral of bus power plus pack losses over the rows, J.
pub fn integrate_energy(rows: &[TelemetryRow]) -> f64 {
    rows.windows(2)
        .map(|w| 0.5 * (w[0].power + w[0].loss + w[1].power + w[1].loss) * (w[1].time - w[0].time))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: f64) -> TelemetryRow {
        TelemetryRow {
            time: t,
            bus_voltage: 12.55,
            current_total: 9.87654321,
            current_primary: 9.87654321,
            current_secondary: 0.0,
            power: 123.456789012,
            loss: 2.5e-3,
            active_source: ActiveSource::Primary,
            primary_ocv: 12.6,
            secondary_ocv: 0.0,
            main_position: [1e-5, -2e-6, 1.5],
            normal_force: 0.0,
            fbs: vec![FbSample { phase: DockPhase::Descend, position: [0.01, 0.0, 1.7] }],
            events: "dock:0;switch:secondary".into(),
        }
    }

    #[test]
    fn write_parse_write_is_identical() {
        let mut w = TelemetryWriter::new(Vec::new(), 1).unwrap();
        w.write_row(&row(0.0)).unwrap();
        w.write_row(&row(0.01)).unwrap();
        let bytes = w.finish().unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let rows = parse_telemetry(&text).unwrap();
        assert_eq!(rows.len(), 2);
        let mut w2 = TelemetryWriter::new(Vec::new(), 1).unwrap();
        for r in &rows {
            w2.write_row(r).unwrap();
        }
        assert_eq!(String::from_utf8(w2.finish().unwrap()).unwrap(), text);
        assert_eq!(rows[1].events, "dock:0;switch:secondary");
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_f64(123.456789012), "1.23456789e2");
        assert_eq!(fmt_f64(0.0), "0.00000000e0");
    }

    #[test]
    fn rejects_missing_schema_and_bad_rows() {
        assert!(parse_telemetry("time\n").is_err());
        let text = format!("{SCHEMA_LINE}\n{}\n1,2\n", header(0));
        assert!(matches!(parse_telemetry(&text), Err(TelemetryError::Format { line: 3, .. })));
    }

    #[test]
    fn trapezoid_of_constant_power() {
        let rows: Vec<_> = (0..=100).map(|i| row(i as f64 * 0.01)).collect();
        let e = integrate_energy(&rows);
        assert!((e - (123.456789012 + 2.5e-3)).abs() < 1e-9);
    }
}
