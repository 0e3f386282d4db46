//! Append-only binary stream of amplitude snapshots.
//!
//! Layout, all little-endian:
//!
//! ```text
//! header   12 bytes  magic "SPINCAT-AMPS"
//!           4 bytes  u32 format version
//! record    8 bytes  f64 tau
//!           4 bytes  u32 N
//!       N × 16 bytes A_n as (re f64, im f64), n = 0..N
//!       N × 16 bytes B_n
//! ```
//!
//! Records are packed back to back without padding.
//!
//! While a writer is open a `<stream>.partial` marker sits next to the
//! stream; [`StreamWriter::finish`] removes it.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::quantum::SpinorFockState;

pub const MAGIC: [u8; 12] = *b"SPINCAT-AMPS";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

/// Largest record size accepted on read, guarding against corrupt counts.
pub const MAX_BASIS: usize = 1 << 24;

/// Bytes taken by one record of `n` Fock states per component.
pub fn record_size(n: usize) -> usize {
    12 + 32 * n
}

fn marker_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    path.with_file_name(name)
}

pub struct StreamWriter {
    out: BufWriter<File>,
    marker: PathBuf,
    records: u64,
}

impl StreamWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let marker = marker_path(path);
        fs::write(&marker, b"")?;
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(&MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        Ok(Self {
            out,
            marker,
            records: 0,
        })
    }

    pub fn append(&mut self, state: &SpinorFockState) -> Result<()> {
        let n = state.basis_size();
        let count = u32::try_from(n).map_err(|_| Error::Format(format!("{n} Fock states do not fit a record")))?;
        self.out.write_all(&state.tau.to_le_bytes())?;
        self.out.write_all(&count.to_le_bytes())?;
        for c in state.up_amplitudes().iter().chain(&state.down_amplitudes()) {
            self.out.write_all(&c.re.to_le_bytes())?;
            self.out.write_all(&c.im.to_le_bytes())?;
        }
        self.records += 1;
        Ok(())
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    /// Flushes the stream and removes the partial-file marker.
    pub fn finish(mut self) -> Result<u64> {
        self.out.flush()?;
        self.out.get_ref().sync_all()?;
        fs::remove_file(&self.marker)?;
        Ok(self.records)
    }
}

pub struct StreamReader {
    input: BufReader<File>,
    version: u32,
}

impl StreamReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut input = BufReader::new(File::open(path)?);
        let mut header = [0u8; HEADER_LEN];
        input.read_exact(&mut header).map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof => Error::Format("file shorter than the header".into()),
            _ => Error::Io(e),
        })?;
        if header[..12] != MAGIC {
            return Err(Error::Format("magic mismatch".into()));
        }
        let version = u32::from_le_bytes(header[12..16].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        Ok(Self { input, version })
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    /// Next record, or `None` at a clean end of file.
    pub fn next_record(&mut self) -> Result<Option<SpinorFockState>> {
        let mut head = [0u8; 12];
        match read_full(&mut self.input, &mut head)? {
            0 => return Ok(None),
            12 => {}
            _ => return Err(Error::Format("truncated record header".into())),
        }
        let tau = f64::from_le_bytes(head[..8].try_into().expect("8 bytes"));
        let n = u32::from_le_bytes(head[8..].try_into().expect("4 bytes")) as usize;
        if n == 0 || n > MAX_BASIS {
            return Err(Error::Format(format!("implausible basis size {n} at tau = {tau}")));
        }
        let mut body = vec![0u8; record_size(n) - 12];
        if read_full(&mut self.input, &mut body)? != body.len() {
            return Err(Error::Format(format!("truncated record at tau = {tau}")));
        }
        let values: Vec<Complex64> = body
            .chunks_exact(16)
            .map(|b| {
                Complex64::new(
                    f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
                    f64::from_le_bytes(b[8..].try_into().expect("8 bytes")),
                )
            })
            .collect();
        let (up, down) = values.split_at(n);
        SpinorFockState::new(up, down, tau).map(Some)
    }
}

impl Iterator for StreamReader {
    type Item = Result<SpinorFockState>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_record().transpose()
    }
}

/// Reads until `buf` is full or the input ends; returns the bytes read.
fn read_full(input: &mut impl Read, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match input.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(k) => filled += k,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}
