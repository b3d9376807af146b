//! Append-only log persistence.
//!
//! The log file is a flat concatenation of canonical tuple
//! serializations (signature included); records are self-delimiting, so
//! replay is a straight streaming parse. Add-only means no compaction
//! ever happens.

use crate::model::{canonical_serialize, read_tuple, Tuple7};
use std::fs::{File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

pub struct LogWriter {
    out: BufWriter<File>,
}

impl LogWriter {
    pub fn append(&mut self, t: &Tuple7) -> io::Result<()> {
        self.out.write_all(&canonical_serialize(t, true))?;
        self.out.flush()
    }
}

/// Replays every record in an existing log file.
pub fn replay_log(path: &Path) -> io::Result<Vec<Tuple7>> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    loop {
        match read_tuple(&mut reader) {
            Ok(Some(t)) => out.push(t),
            Ok(None) => break,
            Err(e) => {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("corrupt log record {}: {e}", out.len()),
                ))
            }
        }
    }
    Ok(out)
}

/// Opens (creating if needed) a log file for appending, returning any
/// replayed tuples plus the writer positioned at the end.
pub fn open_log(path: &Path) -> io::Result<(Vec<Tuple7>, LogWriter)> {
    let tuples = if path.exists() {
        replay_log(path)?
    } else {
        Vec::new()
    };
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    Ok((
        tuples,
        LogWriter {
            out: BufWriter::new(file),
        },
    ))
}

#[cfg(test)]
mod tests {
    use crate::model::{Tuple7, Uuid};
    use crate::store::TupleStore;

    fn t(n: u128) -> Tuple7 {
        Tuple7::new(
            Uuid::from_u128(n),
            Uuid::from_u128(n + 10),
            Uuid::from_u128(n + 20),
            Uuid::from_u128(n + 30),
            n as i64 * 7,
        )
    }

    #[test]
    fn reopen_rebuilds_store_and_keeps_appending() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tuples.log");
        {
            let mut store: TupleStore<()> = TupleStore::open(&path, 1).unwrap();
            for n in 0..5 {
                store.insert(&t(n)).unwrap();
            }
            store.insert(&t(0)).unwrap(); // duplicate, must not be re-written
        }
        let digest_before;
        {
            let store: TupleStore<()> = TupleStore::open(&path, 2).unwrap();
            assert_eq!(store.len(), 5);
            digest_before = store.digest();
        }
        {
            let mut store: TupleStore<()> = TupleStore::open(&path, 3).unwrap();
            store.insert(&t(99)).unwrap();
        }
        let store: TupleStore<()> = TupleStore::open(&path, 4).unwrap();
        assert_eq!(store.len(), 6);
        assert_ne!(store.digest(), digest_before);
        // Subscriptions are ephemeral: nothing to restore.
        assert_eq!(store.subscription_count(), 0);
    }
}
