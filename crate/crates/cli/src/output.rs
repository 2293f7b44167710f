use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::thread;

use serde::Serialize;

/// CSV sink on stdout or a file.
pub struct CsvOut {
    writer: csv::Writer<Box<dyn Write>>,
}

impl CsvOut {
    pub fn open(path: Option<&Path>) -> io::Result<Self> {
        let sink: Box<dyn Write> = match path {
            Some(p) => Box::new(BufWriter::new(File::create(p)?)),
            None => Box::new(io::stdout().lock()),
        };
        Ok(Self {
            writer: csv::Writer::from_writer(sink),
        })
    }

    pub fn row<T: Serialize>(&mut self, record: &T) -> csv::Result<()> {
        self.writer.serialize(record)
    }

    pub fn raw(&mut self, fields: &[String]) -> csv::Result<()> {
        self.writer.write_record(fields)
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.writer.flush()
    }
}

/// Worker count: `FLURKA_THREADS` if set, else the host's parallelism.
pub fn worker_count() -> usize {
    let host = thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("FLURKA_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
    {
        Some(n) if n >= 1 => n.min(host),
        _ => host,
    }
}

/// Maps `f` over `items` on up to `threads` workers, returning results in
/// input order.
pub fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                s.spawn(move || part.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}
