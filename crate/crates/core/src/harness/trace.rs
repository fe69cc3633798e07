use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::run::{RunOutcome, RunTrace};

fn fmt(x: f64) -> String {
    // Debug formatting is the shortest string that round-trips.
    format!("{x:?}")
}

impl RunTrace {
    /// CSV header: `iteration` followed by `<prefix>_mean,<prefix>_dev` per algorithm.
    pub fn csv_header(&self) -> Vec<String> {
        let mut header = vec!["iteration".to_string()];
        for alg in &self.algorithms {
            header.push(format!("{}_mean", alg.column_prefix));
            header.push(format!("{}_dev", alg.column_prefix));
        }
        header
    }

    /// Aggregated trace. Algorithms with diverged runs are listed in `#` lines
    /// above the header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for alg in &self.algorithms {
            let n = alg.n_diverged();
            if n > 0 {
                writeln!(out, "# diverged {}: {n} of {} runs excluded", alg.name, self.n_runs)?;
            }
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.csv_header())?;
        for (i, n) in self.checkpoints.iter().enumerate() {
            let mut row = vec![n.to_string()];
            for alg in &self.algorithms {
                row.push(fmt(alg.mean[i]));
                row.push(fmt(alg.dev[i]));
            }
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
    }

    /// One row per (algorithm, finished run, checkpoint).
    pub fn write_runs_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for alg in &self.algorithms {
            for r in &alg.runs {
                if let RunOutcome::Diverged(n) = r.outcome {
                    writeln!(out, "# diverged {} run {} at iteration {n}", alg.name, r.run)?;
                }
            }
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["algorithm", "run", "seed", "iteration", "param", "value", "normalized"])?;
        for alg in &self.algorithms {
            for r in &alg.runs {
                if let RunOutcome::Finished(t) = &r.outcome {
                    for (n, e) in t.checkpoints.iter().zip(&t.errors) {
                        w.write_record([
                            alg.name.to_string(),
                            r.run.to_string(),
                            r.seed.to_string(),
                            n.to_string(),
                            fmt(e.param),
                            fmt(e.value),
                            fmt(e.normalized),
                        ])?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Write the aggregated CSV to `path`, and the per-run dump next to it when asked.
    pub fn write_files(&self, path: &Path, dump_runs: bool) -> Result<Vec<PathBuf>> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut written = vec![path.to_path_buf()];
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))?;
        if dump_runs {
            let runs = runs_path(path);
            self.write_runs_csv(std::io::BufWriter::new(std::fs::File::create(&runs)?))?;
            written.push(runs);
        }
        Ok(written)
    }
}

/// `out/trace.csv` -> `out/trace.runs.csv`.
pub fn runs_path(path: &Path) -> PathBuf {
    path.with_extension("runs.csv")
}

/// A numeric CSV table as written by this crate, with its `#` comment lines.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn from_reader<R: Read>(mut input: R) -> Result<Self> {
        let mut text = String::new();
        input.read_to_string(&mut text)?;
        let comments = text
            .lines()
            .filter_map(|l| l.strip_prefix('#').map(|c| c.trim().to_string()))
            .collect();
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let header = reader.headers()?.iter().map(str::to_string).collect();
        let rows = reader
            .records()
            .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
        Ok(CsvTable { comments, header, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_reader(file)
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("no column {name:?}")))
    }

    /// Parse a column as floats.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.column_index(name)?;
        self.rows
            .iter()
            .map(|r| {
                r[i].parse::<f64>()
                    .map_err(|e| Error::Parse(format!("column {name}: {:?}: {e}", r[i])))
            })
            .collect()
    }
}
