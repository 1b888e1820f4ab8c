//! Per-run CSV files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use saddle_scale_core::optim::RunObserver;
use saddle_scale_core::{Error, RunRecord};

/// Exact header of every run CSV.
pub const CSV_HEADER: [&str; 8] = [
    "t",
    "r2_weighted",
    "dist2",
    "grad_norm2",
    "gap",
    "dhat_min",
    "dhat_max",
    "grad_calls",
];

/// Records are flushed to disk in blocks of this size, so an aborted run
/// still leaves a usable prefix.
pub const FLUSH_EVERY: usize = 1000;

/// 17 significant digits, enough to round-trip any double.
pub fn fmt_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

pub fn record_fields(r: &RunRecord) -> [String; 8] {
    [
        r.t.to_string(),
        fmt_float(r.r2_weighted),
        fmt_float(r.dist2),
        fmt_float(r.grad_norm2),
        r.gap.map(fmt_float).unwrap_or_default(),
        fmt_float(r.dhat_min),
        fmt_float(r.dhat_max),
        r.grad_calls.to_string(),
    ]
}

/// Streams records of one run to a CSV file.
pub struct CsvSink {
    writer: csv::Writer<BufWriter<File>>,
    pending: usize,
}

impl CsvSink {
    pub fn create(path: &Path) -> anyhow::Result<Self> {
        let file = File::create(path)?;
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(BufWriter::new(file));
        writer.write_record(CSV_HEADER)?;
        writer.flush()?;
        Ok(CsvSink { writer, pending: 0 })
    }

    pub fn finish(mut self) -> std::io::Result<()> {
        self.writer.flush()?;
        self.writer
            .into_inner()
            .map_err(|e| e.into_error())?
            .flush()
    }
}

fn io_error(e: impl std::fmt::Display) -> Error {
    Error::Internal(format!("writing run CSV: {e}"))
}

impl RunObserver for CsvSink {
    fn on_record(&mut self, record: &RunRecord) -> saddle_scale_core::Result<()> {
        self.writer
            .write_record(record_fields(record))
            .map_err(io_error)?;
        self.pending += 1;
        if self.pending >= FLUSH_EVERY {
            self.writer.flush().map_err(io_error)?;
            self.pending = 0;
        }
        Ok(())
    }
}

/// Writes `text` followed by a newline, replacing the file.
pub fn write_text(path: &Path, text: &str) -> std::io::Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(text.as_bytes())?;
    f.write_all(b"\n")?;
    f.flush()
}
