use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};

use super::server::Ack;
use crate::model::EventRecord;

/// A tracker-side connection to the ingestion server.
pub struct TrackerClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl TrackerClient {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { reader: BufReader::new(stream.try_clone()?), writer: stream })
    }

    /// Sends one raw line and waits for its acknowledgment.
    pub fn send_line(&mut self, line: &str) -> io::Result<Ack> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        let mut reply = String::new();
        if self.reader.read_line(&mut reply)? == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "server closed connection"));
        }
        serde_json::from_str(&reply).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    pub fn send(&mut self, record: &EventRecord) -> io::Result<Ack> {
        self.send_line(&record.to_json())
    }
}
