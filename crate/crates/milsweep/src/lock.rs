//! Single-owner lock on a study directory.
//!
//! The lock file holds the owner's pid and a heartbeat timestamp refreshed by
//! a background thread. A lock whose owner process is gone, or whose
//! heartbeat is older than the timeout, is taken over.

use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::journal::now_millis;

pub const LOCK_FILE: &str = ".lock";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockInfo {
    pub pid: u32,
    pub heartbeat_ms: u64,
}

#[derive(Clone, Copy, Debug)]
pub struct LockSettings {
    pub heartbeat: Duration,
    pub stale_after: Duration,
}

impl Default for LockSettings {
    fn default() -> Self {
        LockSettings {
            heartbeat: Duration::from_secs(2),
            stale_after: Duration::from_secs(30),
        }
    }
}

fn process_alive(pid: u32) -> bool {
    let proc_root = Path::new("/proc");
    if !proc_root.is_dir() {
        // No way to probe; rely on the heartbeat alone.
        return true;
    }
    // A zombie still has a /proc entry but will never write again.
    match fs::read_to_string(proc_root.join(pid.to_string()).join("stat")) {
        Ok(stat) => !stat
            .rsplit_once(')')
            .is_some_and(|(_, rest)| rest.trim_start().starts_with('Z')),
        Err(_) => false,
    }
}

pub fn read_lock(dir: &Path) -> Option<LockInfo> {
    let text = fs::read_to_string(dir.join(LOCK_FILE)).ok()?;
    serde_json::from_str(&text).ok()
}

fn write_info(path: &Path, info: LockInfo) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    fs::write(tmp.path(), serde_json::to_vec(&info)?)?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[derive(Debug)]
pub struct StudyLock {
    path: PathBuf,
    stop: Arc<AtomicBool>,
    heartbeat: Option<JoinHandle<()>>,
}

impl StudyLock {
    pub fn acquire(dir: &Path, settings: LockSettings) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        let me = LockInfo {
            pid: std::process::id(),
            heartbeat_ms: now_millis(),
        };
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    f.write_all(&serde_json::to_vec(&me)?).map_err(Error::io(&path))?;
                    return Ok(Self::start(path, settings));
                }
                Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                    let holder = read_lock(dir);
                    let stale = match holder {
                        Some(info) => {
                            let age = now_millis().saturating_sub(info.heartbeat_ms);
                            !process_alive(info.pid)
                                || age > settings.stale_after.as_millis() as u64
                        }
                        // Unreadable: a writer died between create and write.
                        None => true,
                    };
                    if !stale {
                        return Err(Error::Locked {
                            path: dir.to_path_buf(),
                            pid: holder.map_or(0, |h| h.pid),
                        });
                    }
                    match fs::remove_file(&path) {
                        Ok(()) => {}
                        Err(e) if e.kind() == ErrorKind::NotFound => {}
                        Err(e) => return Err(Error::io(&path)(e)),
                    }
                }
                Err(e) => return Err(Error::io(&path)(e)),
            }
        }
        Err(Error::Locked {
            path: dir.to_path_buf(),
            pid: read_lock(dir).map_or(0, |h| h.pid),
        })
    }

    fn start(path: PathBuf, settings: LockSettings) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let heartbeat = {
            let (path, stop) = (path.clone(), stop.clone());
            thread::spawn(move || {
                let tick = Duration::from_millis(50);
                let mut since = Duration::ZERO;
                while !stop.load(Ordering::Relaxed) {
                    thread::sleep(tick);
                    since += tick;
                    if since >= settings.heartbeat {
                        since = Duration::ZERO;
                        let info = LockInfo {
                            pid: std::process::id(),
                            heartbeat_ms: now_millis(),
                        };
                        let _ = write_info(&path, info);
                    }
                }
            })
        };
        StudyLock {
            path,
            stop,
            heartbeat: Some(heartbeat),
        }
    }
}

impl Drop for StudyLock {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.heartbeat.take() {
            let _ = h.join();
        }
        let _ = fs::remove_file(&self.path);
    }
}
