//! Disk spool: an append-only file of canonical-encoded records plus a
//! sidecar replay cursor. The cursor only advances after the server
//! acknowledges a batch, so delivery is at-least-once and the server's
//! record-id dedup makes it exactly-once.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

const SPOOL_FILE: &str = "records.spool";
const CURSOR_FILE: &str = "cursor";
pub const RUN_INTENT_FILE: &str = "run.json";
pub const FINISH_INTENT_FILE: &str = "finish.json";

pub struct Spool {
    dir: PathBuf,
    writer: Mutex<File>,
}

impl Spool {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(dir.join("blobs"))?;
        let writer = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(SPOOL_FILE))?;
        Ok(Spool {
            dir,
            writer: Mutex::new(writer),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn blob_path(&self, digest: &str) -> PathBuf {
        self.dir.join("blobs").join(digest)
    }

    /// Appends pre-encoded record lines (no trailing newline) durably.
    pub fn append(&self, lines: &[Vec<u8>]) -> std::io::Result<()> {
        if lines.is_empty() {
            return Ok(());
        }
        let mut buffer = Vec::with_capacity(lines.iter().map(|l| l.len() + 1).sum());
        for line in lines {
            buffer.extend_from_slice(line);
            buffer.push(b'\n');
        }
        let mut writer = self.writer.lock().expect("spool writer lock");
        writer.write_all(&buffer)?;
        writer.sync_data()
    }

    pub fn cursor(&self) -> u64 {
        fs::read_to_string(self.dir.join(CURSOR_FILE))
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or(0)
    }

    pub fn set_cursor(&self, offset: u64) -> std::io::Result<()> {
        let tmp = self.dir.join("cursor.tmp");
        fs::write(&tmp, offset.to_string())?;
        fs::rename(tmp, self.dir.join(CURSOR_FILE))
    }

    pub fn len_bytes(&self) -> std::io::Result<u64> {
        Ok(fs::metadata(self.dir.join(SPOOL_FILE))?.len())
    }

    /// Reads up to `max_lines` complete lines starting at the cursor,
    /// returning the raw chunk (still newline-delimited), the number of
    /// lines and the offset just past them.
    pub fn read_pending(&self, max_lines: usize) -> std::io::Result<(Vec<u8>, usize, u64)> {
        let offset = self.cursor();
        let mut file = File::open(self.dir.join(SPOOL_FILE))?;
        file.seek(SeekFrom::Start(offset))?;
        let mut rest = Vec::new();
        file.read_to_end(&mut rest)?;

        let mut end = 0usize;
        let mut lines = 0usize;
        for (i, &b) in rest.iter().enumerate() {
            if b == b'\n' {
                end = i + 1;
                lines += 1;
                if lines >= max_lines {
                    break;
                }
            }
        }
        rest.truncate(end);
        Ok((rest, lines, offset + end as u64))
    }

    /// Number of complete undelivered lines.
    pub fn pending_lines(&self) -> std::io::Result<usize> {
        let (_, lines, _) = self.read_pending(usize::MAX)?;
        Ok(lines)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cursor_advances_only_when_told() {
        let dir = tempfile::tempdir().unwrap();
        let spool = Spool::open(dir.path()).unwrap();
        spool
            .append(&[b"alpha".to_vec(), b"beta".to_vec(), b"gamma".to_vec()])
            .unwrap();
        assert_eq!(spool.pending_lines().unwrap(), 3);

        let (chunk, lines, next) = spool.read_pending(2).unwrap();
        assert_eq!(lines, 2);
        assert_eq!(chunk, b"alpha\nbeta\n");
        assert_eq!(spool.pending_lines().unwrap(), 3, "cursor untouched");

        spool.set_cursor(next).unwrap();
        assert_eq!(spool.pending_lines().unwrap(), 1);
        let (chunk, lines, next) = spool.read_pending(10).unwrap();
        assert_eq!((lines, chunk.as_slice()), (1, &b"gamma\n"[..]));
        spool.set_cursor(next).unwrap();
        assert_eq!(spool.pending_lines().unwrap(), 0);
    }

    #[test]
    fn spool_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let spool = Spool::open(dir.path()).unwrap();
            spool.append(&[b"one".to_vec(), b"two".to_vec()]).unwrap();
            let (_, _, next) = spool.read_pending(1).unwrap();
            spool.set_cursor(next).unwrap();
        }
        let spool = Spool::open(dir.path()).unwrap();
        assert_eq!(spool.pending_lines().unwrap(), 1);
        let (chunk, _, _) = spool.read_pending(10).unwrap();
        assert_eq!(chunk, b"two\n");
    }

    #[test]
    fn partial_trailing_write_is_not_served() {
        let dir = tempfile::tempdir().unwrap();
        let spool = Spool::open(dir.path()).unwrap();
        spool.append(&[b"full".to_vec()]).unwrap();
        // Simulate a torn write with no terminating newline.
        {
            let mut f = OpenOptions::new()
                .append(true)
                .open(dir.path().join(SPOOL_FILE))
                .unwrap();
            f.write_all(b"torn-half").unwrap();
        }
        let (chunk, lines, _) = spool.read_pending(10).unwrap();
        assert_eq!(lines, 1);
        assert_eq!(chunk, b"full\n");
    }
}
