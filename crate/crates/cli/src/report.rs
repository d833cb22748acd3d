//! Tab-separated reports with a header row.
//!
//! A report path that already holds a file with the same header is
//! appended to; a different header is refused rather than mixed in.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::failure::{Failure, Outcome};

pub struct Report {
    sink: Sink,
    columns: usize,
}

enum Sink {
    File { file: File, path: PathBuf },
    Stdout,
}

impl Report {
    /// Opens `path`, or standard output when `None`.
    pub fn open(path: Option<&Path>, header: &[&str]) -> Outcome<Self> {
        let line = header.join("\t");
        let sink = match path {
            None => {
                println!("{line}");
                Sink::Stdout
            }
            Some(path) => {
                let existing = match File::open(path) {
                    Ok(f) => BufReader::new(f).lines().next().transpose().map_err(|e| io_failure(path, e))?,
                    Err(e) if e.kind() == io::ErrorKind::NotFound => None,
                    Err(e) => return Err(io_failure(path, e)),
                };
                if let Some(first) = &existing {
                    if *first != line {
                        return Err(Failure::data(format!(
                            "{} already holds a report with columns {first:?}",
                            path.display()
                        )));
                    }
                }
                let mut file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| io_failure(path, e))?;
                if existing.is_none() {
                    writeln!(file, "{line}").map_err(|e| io_failure(path, e))?;
                }
                Sink::File {
                    file,
                    path: path.to_path_buf(),
                }
            }
        };
        Ok(Report {
            sink,
            columns: header.len(),
        })
    }

    /// Writes one row immediately.
    pub fn row(&mut self, fields: &[String]) -> Outcome {
        assert_eq!(fields.len(), self.columns, "report row width");
        debug_assert!(fields.iter().all(|f| !f.contains(['\t', '\n'])));
        let line = fields.join("\t");
        match &mut self.sink {
            Sink::Stdout => {
                println!("{line}");
                Ok(())
            }
            Sink::File { file, path } => writeln!(file, "{line}")
                .and_then(|_| file.flush())
                .map_err(|e| io_failure(path, e)),
        }
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::data(format!("report {}: {e}", path.display()))
}

/// Fixed six-decimal rendering used for every real-valued column.
pub fn real(v: f64) -> String {
    format!("{v:.6}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn appends_under_a_matching_header_only() {
        let dir = std::env::temp_dir().join(format!("crnn-report-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("r.tsv");
        let _ = std::fs::remove_file(&path);
        for v in ["1", "2"] {
            let mut r = Report::open(Some(&path), &["a", "b"]).unwrap();
            r.row(&[v.into(), "x".into()]).unwrap();
        }
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a\tb\n1\tx\n2\tx\n");
        let err = Report::open(Some(&path), &["a", "c"]).err().unwrap();
        assert_eq!(err.exit_code(), 3);
        std::fs::remove_dir_all(dir).unwrap();
    }
}
