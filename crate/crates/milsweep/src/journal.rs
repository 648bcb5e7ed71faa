//! Append-only study journal.
//!
//! One record per line: `<crc32 as 8 hex digits> <json>\n`, the checksum
//! covering the JSON bytes. A final line that is unterminated or fails its
//! checksum is a torn write from a killed process and is dropped; a bad line
//! anywhere else is corruption and is reported.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use milsweep_core::trial::{compact_for_resume, replay, Event, JournalRecord, StudyMeta, StudyState};

use crate::error::{Error, Result};

pub const JOURNAL_FILE: &str = "journal.ndjson";

pub fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub fn encode_line(record: &JournalRecord) -> Result<String> {
    let json = serde_json::to_string(record)?;
    Ok(format!("{:08x} {json}\n", crc32fast::hash(json.as_bytes())))
}

/// Parses one line without its terminator.
pub fn decode_line(line: &str) -> std::result::Result<JournalRecord, String> {
    let (crc, json) = line.split_once(' ').ok_or("missing checksum separator")?;
    let want = u32::from_str_radix(crc, 16).map_err(|_| format!("bad checksum field `{crc}`"))?;
    if crc.len() != 8 || crc32fast::hash(json.as_bytes()) != want {
        return Err("checksum mismatch".into());
    }
    serde_json::from_str(json).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct JournalContents {
    pub records: Vec<JournalRecord>,
    /// Byte length of the intact prefix.
    pub valid_len: u64,
    /// The dropped torn tail, if any.
    pub torn_tail: Option<String>,
}

pub fn read_journal(path: &Path) -> Result<JournalContents> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(Error::io(path))?;
    let mut records = Vec::new();
    let mut offset = 0usize;
    let mut line_no = 0usize;
    while offset < bytes.len() {
        line_no += 1;
        let rest = &bytes[offset..];
        let (line, terminated) = match rest.iter().position(|&b| b == b'\n') {
            Some(i) => (&rest[..i], true),
            None => (rest, false),
        };
        let is_last = offset + line.len() + usize::from(terminated) >= bytes.len();
        let decoded = std::str::from_utf8(line)
            .map_err(|e| e.to_string())
            .and_then(decode_line);
        match decoded {
            Ok(record) if terminated => records.push(record),
            Ok(_) | Err(_) if is_last => {
                return Ok(JournalContents {
                    records,
                    valid_len: offset as u64,
                    torn_tail: Some(String::from_utf8_lossy(line).into_owned()),
                })
            }
            Ok(_) => unreachable!("unterminated line is always last"),
            Err(reason) => {
                return Err(Error::CorruptJournal {
                    path: path.to_path_buf(),
                    line: line_no,
                    reason,
                })
            }
        }
        offset += line.len() + 1;
    }
    Ok(JournalContents {
        records,
        valid_len: bytes.len() as u64,
        torn_tail: None,
    })
}

/// Reads and replays a journal, tolerating a torn tail. Used by readers that
/// run alongside a live writer.
pub fn load_snapshot(path: &Path) -> Result<(StudyState, Vec<JournalRecord>)> {
    let contents = read_journal(path)?;
    let state = replay(&contents.records)?;
    if state.meta.is_none() {
        return Err(Error::MissingHeader(path.to_path_buf()));
    }
    Ok((state, contents.records))
}

/// Single appender for one study's journal.
#[derive(Debug)]
pub struct JournalWriter {
    path: PathBuf,
    file: File,
    next_seq: u64,
    durable: bool,
}

impl JournalWriter {
    /// Starts a new journal whose first record is the study header.
    pub fn create(path: &Path, meta: &StudyMeta) -> Result<Self> {
        let file = OpenOptions::new()
            .append(true)
            .create_new(true)
            .open(path)
            .map_err(Error::io(path))?;
        let mut writer = JournalWriter {
            path: path.to_path_buf(),
            file,
            next_seq: 1,
            durable: false,
        };
        writer.append(Event::StudyOpened { meta: meta.clone() })?;
        Ok(writer)
    }

    /// Recovers a journal for resumption: drops a torn tail, compacts away the
    /// partial history of unfinished trials and atomically rewrites the file.
    pub fn recover(path: &Path) -> Result<(Self, StudyState, Recovery)> {
        let contents = read_journal(path)?;
        let state = replay(&contents.records)?;
        if state.meta.is_none() {
            return Err(Error::MissingHeader(path.to_path_buf()));
        }
        let compacted = compact_for_resume(&contents.records, &state);
        let recovery = Recovery {
            dropped_tail: contents.torn_tail.is_some(),
            dropped_events: contents.records.len() - compacted.len(),
        };
        let dir = path.parent().unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(Error::io(dir))?;
        for r in &compacted {
            tmp.write_all(encode_line(r)?.as_bytes()).map_err(Error::io(tmp.path()))?;
        }
        tmp.as_file().sync_all().map_err(Error::io(tmp.path()))?;
        tmp.persist(path).map_err(|e| Error::io(path)(e.error))?;
        let state = replay(&compacted)?;
        let file = OpenOptions::new().append(true).open(path).map_err(Error::io(path))?;
        let writer = JournalWriter {
            path: path.to_path_buf(),
            file,
            next_seq: compacted.last().map_or(1, |r| r.seq + 1),
            durable: false,
        };
        Ok((writer, state, recovery))
    }

    /// When set, every append is followed by `fdatasync`.
    pub fn set_durable(&mut self, durable: bool) {
        self.durable = durable;
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one record with a single `write` call so a kill leaves at most
    /// one torn line.
    pub fn append(&mut self, event: Event) -> Result<JournalRecord> {
        let record = JournalRecord {
            seq: self.next_seq,
            ts: now_millis(),
            event,
        };
        let line = encode_line(&record)?;
        self.file.write_all(line.as_bytes()).map_err(Error::io(&self.path))?;
        if self.durable {
            self.file.sync_data().map_err(Error::io(&self.path))?;
        }
        self.next_seq += 1;
        Ok(record)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Recovery {
    pub dropped_tail: bool,
    /// Events of unfinished trials removed by compaction.
    pub dropped_events: usize,
}

pub fn journal_exists(dir: &Path) -> bool {
    fs::metadata(dir.join(JOURNAL_FILE)).is_ok_and(|m| m.is_file())
}
