//! Append-only CSV tables keyed by run id, and the worker pool that feeds
//! them through a single writer.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use crate::error::{LabError, Result};

pub type Row = Vec<String>;

/// A CSV whose first column is the run id. Reopening an existing file
/// checks the header and remembers which runs are already present.
pub struct Table {
    path: PathBuf,
    columns: Vec<String>,
    done: BTreeSet<String>,
    writer: csv::Writer<File>,
}

impl Table {
    pub fn open(path: &Path, columns: &[&str]) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let columns: Vec<String> = columns.iter().map(|c| c.to_string()).collect();
        let mut done = BTreeSet::new();
        let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        if !fresh {
            let mut reader = csv::Reader::from_path(path)?;
            let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
            if header != columns {
                return Err(LabError::Format {
                    path: path.to_path_buf(),
                    msg: format!("header differs from the expected {} columns", columns.len()),
                });
            }
            for rec in reader.records() {
                done.insert(rec?.get(0).unwrap_or("").to_string());
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            writer.write_record(&columns)?;
            writer.flush()?;
        }
        Ok(Table { path: path.to_path_buf(), columns, done, writer })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn contains(&self, run_id: &str) -> bool {
        self.done.contains(run_id)
    }

    pub fn append(&mut self, rows: &[Row]) -> Result<()> {
        for row in rows {
            if row.len() != self.columns.len() {
                return Err(LabError::Format {
                    path: self.path.clone(),
                    msg: format!("row has {} fields, header has {}", row.len(), self.columns.len()),
                });
            }
            self.writer.write_record(row)?;
            self.done.insert(row[0].clone());
        }
        self.writer.flush()?;
        Ok(())
    }
}

/// Number of rows whose `status` column is `error`.
pub fn count_error_rows(path: &Path) -> Result<usize> {
    let mut reader = csv::Reader::from_path(path)?;
    let Some(col) = reader.headers()?.iter().position(|h| h == "status") else {
        return Ok(0);
    };
    let mut n = 0;
    for rec in reader.records() {
        n += usize::from(rec?.get(col) == Some("error"));
    }
    Ok(n)
}

/// Runs `work` on every job with up to `workers` threads. Results reach
/// `sink` on the calling thread in job order. A failing or panicking job
/// becomes `on_error(job, message)`.
pub fn run_pool<J, W, E, S>(jobs: &[J], workers: usize, work: W, on_error: E, mut sink: S) -> Result<()>
where
    J: Sync,
    W: Fn(&J) -> Result<Vec<Row>> + Sync,
    E: Fn(&J, String) -> Vec<Row> + Sync,
    S: FnMut(usize, Vec<Row>) -> Result<()>,
{
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, Vec<Row>)>();
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            let tx = tx.clone();
            let (next, abort, work, on_error) = (&next, &abort, &work, &on_error);
            scope.spawn(move || loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let rows = match panic::catch_unwind(AssertUnwindSafe(|| work(job))) {
                    Ok(Ok(rows)) => rows,
                    Ok(Err(e)) => on_error(job, e.to_string()),
                    Err(p) => {
                        let msg = p
                            .downcast_ref::<String>()
                            .cloned()
                            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                            .unwrap_or_else(|| "panic".into());
                        on_error(job, format!("panic: {msg}"))
                    }
                };
                if tx.send((i, rows)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        let mut expected = 0;
        let mut failure = None;
        for (i, rows) in rx {
            pending.insert(i, rows);
            while let Some(rows) = pending.remove(&expected) {
                if failure.is_none() {
                    if let Err(e) = sink(expected, rows) {
                        abort.store(true, Ordering::SeqCst);
                        failure = Some(e);
                    }
                }
                expected += 1;
            }
        }
        failure.map_or(Ok(()), Err)
    })
}
