//! `EventSeq`: a single-file, append-only, totally ordered record log.
//!
//! File layout: an 8-byte header (`EVSQ`, u16 format version, u16 reserved)
//! followed by records, each a little-endian u32 payload length and the
//! canonical JSON of an [`EventRecord`].

pub mod client;
pub mod server;

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::model::EventRecord;

const MAGIC: &[u8; 4] = b"EVSQ";
const VERSION: u16 = 1;
pub const HEADER_LEN: u64 = 8;
/// Upper bound on one record's payload; anything larger is treated as corruption.
const MAX_RECORD: u32 = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SequenceNumber(pub u64);

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("event log I/O: {0}")]
    Io(#[from] io::Error),
    #[error("{path}: not an event log (bad header)")]
    BadHeader { path: PathBuf },
    #[error("{path}: unsupported log format version {version}")]
    UnsupportedVersion { path: PathBuf, version: u16 },
    #[error("event log truncated at byte offset {offset}")]
    Truncated { offset: u64 },
    #[error("corrupt record at byte offset {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
}

struct Inner {
    file: File,
    next_seq: u64,
    len: u64,
}

/// Handle shared by every appender. Appends are serialized by an internal lock
/// and written with a single `write` call each.
pub struct EventSeq {
    path: PathBuf,
    fsync: bool,
    inner: Mutex<Inner>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanSummary {
    pub records: u64,
    /// Offset just past the last complete record.
    pub valid_len: u64,
    /// Bytes after `valid_len`; non-zero means the tail is torn.
    pub trailing: u64,
}

fn write_header(file: &mut File) -> io::Result<()> {
    let mut header = [0u8; HEADER_LEN as usize];
    header[..4].copy_from_slice(MAGIC);
    header[4..6].copy_from_slice(&VERSION.to_le_bytes());
    file.write_all(&header)
}

fn check_header(path: &Path, file: &mut File) -> Result<(), LogError> {
    let mut header = [0u8; HEADER_LEN as usize];
    match file.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
            return Err(LogError::BadHeader { path: path.to_path_buf() })
        }
        Err(e) => return Err(e.into()),
    }
    if &header[..4] != MAGIC {
        return Err(LogError::BadHeader { path: path.to_path_buf() });
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(LogError::UnsupportedVersion { path: path.to_path_buf(), version });
    }
    Ok(())
}

/// Result of trying to read one record at the reader's position.
enum Frame {
    Record(EventRecord, u64),
    Eof,
    Partial,
}

fn read_frame<R: Read>(reader: &mut R, offset: u64) -> Result<Frame, LogError> {
    let mut len_buf = [0u8; 4];
    let got = read_up_to(reader, &mut len_buf)?;
    if got == 0 {
        return Ok(Frame::Eof);
    }
    if got < 4 {
        return Ok(Frame::Partial);
    }
    let len = u32::from_le_bytes(len_buf);
    if len > MAX_RECORD {
        return Err(LogError::Corrupt { offset, reason: format!("record length {len} exceeds limit") });
    }
    let mut payload = vec![0u8; len as usize];
    if read_up_to(reader, &mut payload)? < payload.len() {
        return Ok(Frame::Partial);
    }
    let text = std::str::from_utf8(&payload)
        .map_err(|e| LogError::Corrupt { offset, reason: e.to_string() })?;
    let record = EventRecord::from_json(text).map_err(|e| LogError::Corrupt { offset, reason: e.to_string() })?;
    Ok(Frame::Record(record, 4 + len as u64))
}

fn read_up_to<R: Read>(reader: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Walks the whole file and reports how many complete records it holds.
pub fn scan(path: &Path) -> Result<ScanSummary, LogError> {
    let mut file = File::open(path)?;
    check_header(path, &mut file)?;
    let total = file.metadata()?.len();
    let mut reader = io::BufReader::new(file);
    let mut offset = HEADER_LEN;
    let mut records = 0;
    while let Frame::Record(_, n) = read_frame(&mut reader, offset)? {
        offset += n;
        records += 1;
    }
    Ok(ScanSummary { records, valid_len: offset, trailing: total - offset })
}

/// Reads every record, failing with the byte offset of a torn tail.
pub fn read_all(path: &Path) -> Result<Vec<EventRecord>, LogError> {
    let mut file = File::open(path)?;
    check_header(path, &mut file)?;
    let mut reader = io::BufReader::new(file);
    let mut offset = HEADER_LEN;
    let mut out = Vec::new();
    loop {
        match read_frame(&mut reader, offset)? {
            Frame::Record(r, n) => {
                out.push(r);
                offset += n;
            }
            Frame::Eof => return Ok(out),
            Frame::Partial => return Err(LogError::Truncated { offset }),
        }
    }
}

impl EventSeq {
    /// Creates a fresh, empty log, replacing any file at `path`.
    pub fn create(path: &Path, fsync: bool) -> Result<Self, LogError> {
        let mut file = OpenOptions::new().read(true).write(true).create(true).truncate(true).open(path)?;
        write_header(&mut file)?;
        if fsync {
            file.sync_all()?;
        }
        Ok(Self::from_parts(path, fsync, file, 0, HEADER_LEN))
    }

    /// Opens an existing log for appending, or creates it. A torn tail is an error.
    pub fn open(path: &Path, fsync: bool) -> Result<Self, LogError> {
        if !path.exists() {
            return Self::create(path, fsync);
        }
        let summary = scan(path)?;
        if summary.trailing > 0 {
            return Err(LogError::Truncated { offset: summary.valid_len });
        }
        let file = OpenOptions::new().read(true).write(true).open(path)?;
        Ok(Self::from_parts(path, fsync, file, summary.records, summary.valid_len))
    }

    /// Like [`EventSeq::open`], but cuts a torn tail left by a crash mid-append.
    pub fn open_with_recovery(path: &Path, fsync: bool) -> Result<Self, LogError> {
        if !path.exists() {
            return Self::create(path, fsync);
        }
        let summary = scan(path)?;
        let file = OpenOptions::new().read(true).write(true).open(path)?;
        if summary.trailing > 0 {
            log::warn!(
                "{}: dropping {} torn bytes at offset {}",
                path.display(),
                summary.trailing,
                summary.valid_len
            );
            file.set_len(summary.valid_len)?;
        }
        Ok(Self::from_parts(path, fsync, file, summary.records, summary.valid_len))
    }

    fn from_parts(path: &Path, fsync: bool, file: File, next_seq: u64, len: u64) -> Self {
        Self { path: path.to_path_buf(), fsync, inner: Mutex::new(Inner { file, next_seq, len }) }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Number of records appended so far.
    pub fn len(&self) -> u64 {
        self.inner.lock().expect("log lock").next_seq
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn append(&self, record: &EventRecord) -> Result<SequenceNumber, LogError> {
        let payload = record.to_json();
        let mut frame = Vec::with_capacity(4 + payload.len());
        frame.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        frame.extend_from_slice(payload.as_bytes());

        let mut inner = self.inner.lock().expect("log lock");
        let at = inner.len;
        inner.file.seek(SeekFrom::Start(at))?;
        if let Err(e) = inner.file.write_all(&frame) {
            // Leave no partial frame behind for later appends to build on.
            let _ = inner.file.set_len(at);
            return Err(e.into());
        }
        if self.fsync {
            inner.file.sync_data()?;
        }
        inner.len += frame.len() as u64;
        let seq = inner.next_seq;
        inner.next_seq += 1;
        Ok(SequenceNumber(seq))
    }

    /// A new independent read cursor positioned at the first record.
    pub fn tailer(&self) -> Result<Tailer, LogError> {
        Tailer::open(&self.path)
    }
}

/// Non-destructive read cursor with its own file handle.
pub struct Tailer {
    file: File,
    offset: u64,
    next_seq: u64,
}

impl Tailer {
    pub fn open(path: &Path) -> Result<Self, LogError> {
        let mut file = File::open(path)?;
        check_header(path, &mut file)?;
        Ok(Self { file, offset: HEADER_LEN, next_seq: 0 })
    }

    /// Sequence number the next returned record will carry.
    pub fn position(&self) -> SequenceNumber {
        SequenceNumber(self.next_seq)
    }

    pub fn byte_offset(&self) -> u64 {
        self.offset
    }

    /// The next record, or `None` at the head of the log. A record still being
    /// written also reads as `None` and is returned by a later call.
    pub fn next_record(&mut self) -> Result<Option<(SequenceNumber, EventRecord)>, LogError> {
        self.file.seek(SeekFrom::Start(self.offset))?;
        match read_frame(&mut self.file, self.offset)? {
            Frame::Record(r, n) => {
                self.offset += n;
                let seq = SequenceNumber(self.next_seq);
                self.next_seq += 1;
                Ok(Some((seq, r)))
            }
            Frame::Eof | Frame::Partial => Ok(None),
        }
    }
}
