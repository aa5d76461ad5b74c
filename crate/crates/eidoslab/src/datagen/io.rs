//! Newline-delimited JSON dataset files: one object per series, streamed
//! record by record. serde_json's shortest-roundtrip float formatting keeps
//! the 64-bit values lossless.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{DatagenError, SeriesRecord};

/// Write records as JSONL, rejecting non-finite values.
pub fn write_jsonl<'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a SeriesRecord>,
) -> Result<usize, DatagenError> {
    let mut out = BufWriter::new(File::create(path)?);
    let mut n = 0;
    for rec in records {
        if !rec.is_finite() {
            return Err(DatagenError::NonFinite {
                context: format!("record '{}'", rec.id),
            });
        }
        let line = serde_json::to_string(rec).map_err(|e| DatagenError::Parse {
            line: n + 1,
            msg: e.to_string(),
        })?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
        n += 1;
    }
    out.flush()?;
    Ok(n)
}

/// Streaming JSONL reader; holds one record in memory at a time.
pub struct JsonlReader {
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
}

impl Iterator for JsonlReader {
    type Item = Result<SeriesRecord, DatagenError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.line_no += 1;
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Result<SeriesRecord, _> = serde_json::from_str(&line);
            return Some(match parsed {
                Ok(rec) => {
                    if rec.is_finite() {
                        Ok(rec)
                    } else {
                        Err(DatagenError::NonFinite {
                            context: format!("line {} (record '{}')", self.line_no, rec.id),
                        })
                    }
                }
                Err(e) => Err(DatagenError::Parse {
                    line: self.line_no,
                    msg: e.to_string(),
                }),
            });
        }
    }
}

pub fn read_jsonl(path: &Path) -> Result<JsonlReader, DatagenError> {
    let file = File::open(path)?;
    Ok(JsonlReader {
        lines: BufReader::new(file).lines(),
        line_no: 0,
    })
}

/// Convenience: stream the whole file into memory, failing on the first bad
/// record.
pub fn load_records(path: &Path) -> Result<Vec<SeriesRecord>, DatagenError> {
    read_jsonl(path)?.collect()
}
