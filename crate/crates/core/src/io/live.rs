//! Live ingestion: any byte stream carrying recording-format rows, such as a
//! TCP socket fed by an acquisition bridge.

use std::io::{BufReader, Read};
use std::net::{TcpStream, ToSocketAddrs};

use super::recording_file::SampleReader;
use super::IoError;
use crate::source::{Prompt, SampleSource, SourceError};
use crate::types::EmgSample;

pub struct LineSource<R: Read> {
    reader: SampleReader<BufReader<R>>,
}

impl<R: Read> LineSource<R> {
    pub fn new(inner: R) -> Self {
        Self { reader: SampleReader::new(BufReader::new(inner)) }
    }
}

impl LineSource<TcpStream> {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, IoError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self::new(stream))
    }
}

impl<R: Read> SampleSource for LineSource<R> {
    fn next_sample(&mut self, _prompt: &Prompt) -> Result<EmgSample, SourceError> {
        match self.reader.next_sample() {
            Ok(Some(s)) => Ok(s),
            Ok(None) => Err(SourceError::Exhausted),
            Err(IoError::Io(e)) => Err(SourceError::Io(e.to_string())),
            Err(e) => Err(SourceError::Malformed(e.to_string())),
        }
    }
}
