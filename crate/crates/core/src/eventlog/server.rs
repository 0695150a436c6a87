//! Line-oriented TCP ingestion: each request line is one EventRecord JSON
//! object, each reply line is one JSON acknowledgment.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{EventSeq, SequenceNumber};
use crate::model::{Event, EventRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub status: AckStatus,
    pub seq: Option<SequenceNumber>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AckStatus {
    Ok,
    Error,
}

impl Ack {
    pub fn ok(seq: SequenceNumber) -> Self {
        Self { status: AckStatus::Ok, seq: Some(seq), message: None }
    }

    pub fn error(message: impl Into<String>) -> Self {
        Self { status: AckStatus::Error, seq: None, message: Some(message.into()) }
    }

    pub fn is_ok(&self) -> bool {
        self.status == AckStatus::Ok
    }
}

/// Monotonic receipt instants by sequence number, read by the live dispatcher
/// for latency measurement.
pub type ReceiptClock = Arc<Mutex<HashMap<u64, Instant>>>;

#[derive(Debug, Default)]
pub struct IngestStats {
    pub accepted: AtomicU64,
    pub rejected: AtomicU64,
    pub connections: AtomicU64,
}

/// Validates and appends one request line.
pub fn ingest_line(log: &EventSeq, line: &str, receipts: Option<&ReceiptClock>) -> Ack {
    let received = Instant::now();
    let record = match EventRecord::from_json(line.trim()) {
        Ok(r) => r,
        Err(e) => return Ack::error(e.to_string()),
    };
    if let Err(e) = Event::decode(&record) {
        return Ack::error(e.to_string());
    }
    // Hold the receipt map across the append so the dispatcher never sees the
    // record before its receipt time is registered.
    let mut guard = receipts.map(|r| r.lock().expect("receipt lock"));
    match log.append(&record) {
        Ok(seq) => {
            if let Some(map) = guard.as_mut() {
                map.insert(seq.0, received);
            }
            Ack::ok(seq)
        }
        Err(e) => Ack::error(e.to_string()),
    }
}

pub struct IngestServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    stats: Arc<IngestStats>,
    streams: Arc<Mutex<Vec<TcpStream>>>,
    accept: Option<JoinHandle<()>>,
    workers: Arc<Mutex<Vec<JoinHandle<()>>>>,
}

impl IngestServer {
    pub fn start(listener: TcpListener, log: Arc<EventSeq>, receipts: Option<ReceiptClock>) -> std::io::Result<Self> {
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stats = Arc::new(IngestStats::default());
        let streams = Arc::new(Mutex::new(Vec::new()));
        let workers = Arc::new(Mutex::new(Vec::new()));

        let accept = {
            let (stop, stats, streams, workers) =
                (Arc::clone(&stop), Arc::clone(&stats), Arc::clone(&streams), Arc::clone(&workers));
            std::thread::Builder::new().name("ingest-accept".into()).spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let stream = match conn {
                        Ok(s) => s,
                        Err(e) => {
                            log::warn!("accept failed: {e}");
                            continue;
                        }
                    };
                    stats.connections.fetch_add(1, Ordering::Relaxed);
                    if let Ok(clone) = stream.try_clone() {
                        streams.lock().expect("stream list").push(clone);
                    }
                    let (log, stats, receipts) = (Arc::clone(&log), Arc::clone(&stats), receipts.clone());
                    let handle = std::thread::spawn(move || serve_connection(stream, &log, &stats, receipts.as_ref()));
                    workers.lock().expect("worker list").push(handle);
                }
            })?
        };
        Ok(Self { addr, stop, stats, streams, accept: Some(accept), workers })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> &IngestStats {
        &self.stats
    }

    /// Stops accepting, closes open connections and waits for their threads.
    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        for s in self.streams.lock().expect("stream list").drain(..) {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
        for h in self.workers.lock().expect("worker list").drain(..) {
            let _ = h.join();
        }
    }
}

impl Drop for IngestServer {
    fn drop(&mut self) {
        self.stop_inner();
    }
}

fn serve_connection(stream: TcpStream, log: &EventSeq, stats: &IngestStats, receipts: Option<&ReceiptClock>) {
    let peer = stream.peer_addr().ok();
    let mut writer = match stream.try_clone() {
        Ok(w) => w,
        Err(e) => {
            log::warn!("connection setup failed: {e}");
            return;
        }
    };
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let ack = ingest_line(log, &line, receipts);
        if ack.is_ok() {
            stats.accepted.fetch_add(1, Ordering::Relaxed);
        } else {
            stats.rejected.fetch_add(1, Ordering::Relaxed);
            log::debug!("rejected line from {peer:?}: {:?}", ack.message);
        }
        let mut out = serde_json::to_string(&ack).expect("ack serializes");
        out.push('\n');
        if writer.write_all(out.as_bytes()).is_err() {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ack_wire_shape() {
        assert_eq!(serde_json::to_string(&Ack::ok(SequenceNumber(4))).unwrap(), r#"{"status":"ok","seq":4}"#);
        let e = serde_json::to_string(&Ack::error("bad")).unwrap();
        assert_eq!(e, r#"{"status":"error","seq":null,"message":"bad"}"#);
    }

    #[test]
    fn ingest_line_validates_before_append() {
        let dir = tempfile::tempdir().unwrap();
        let log = EventSeq::create(&dir.path().join("l"), false).unwrap();
        assert!(!ingest_line(&log, "garbage", None).is_ok());
        assert!(!ingest_line(&log, r#"{"type":"Bogus","time":1,"info":"H:1"}"#, None).is_ok());
        assert!(!ingest_line(&log, r#"{"type":"HandIn","time":1,"info":"S:1;H:1"}"#, None).is_ok());
        assert_eq!(log.len(), 0);
        let ack = ingest_line(&log, r#"{"type":"HandIn","time":50,"info":"H:1;S:2"}"#, None);
        assert_eq!(ack, Ack::ok(SequenceNumber(0)));
        assert_eq!(log.len(), 1);
    }
}
