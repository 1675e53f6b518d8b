//! Binary PPM (P6) and PGM (P5) with 8-bit samples.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// An 8-bit raster with `channels` interleaved samples per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

fn parse_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        msg: msg.into(),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_err(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| parse_err(start, format!("{what} out of range")))
    }
}

/// Parses either format; `magic` selects which one is accepted.
fn parse(bytes: &[u8], magic: &[u8; 2], channels: usize) -> Result<Raster> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(parse_err(
            0,
            format!("bad magic, expected {}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    h.skip_space_and_comments();
    let maxval_at = h.pos;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(parse_err(
            maxval_at,
            format!("only 8-bit files (maxval 255) are supported, got {maxval}"),
        ));
    }
    if width == 0 || height == 0 {
        return Err(parse_err(2, "zero-sized image"));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => {
            return Err(parse_err(
                h.pos,
                "expected a single whitespace byte before the payload",
            ))
        }
    }
    let need = width * height * channels;
    let payload = &bytes[h.pos..];
    if payload.len() < need {
        return Err(parse_err(
            bytes.len(),
            format!("truncated payload: {} of {need} bytes", payload.len()),
        ));
    }
    Ok(Raster {
        width,
        height,
        channels,
        data: payload[..need].to_vec(),
    })
}

pub fn parse_ppm(bytes: &[u8]) -> Result<Raster> {
    parse(bytes, b"P6", 3)
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Raster> {
    parse(bytes, b"P5", 1)
}

impl Raster {
    pub fn to_bytes(&self) -> Vec<u8> {
        let magic = match self.channels {
            1 => "P5",
            3 => "P6",
            c => panic!("no PNM format for {c} channels"),
        };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads a file, attaching the path to parse errors.
fn read_with(path: &Path, parse: fn(&[u8]) -> Result<Raster>) -> Result<Raster> {
    parse(&read(path)?).map_err(|e| match e {
        Error::Parse { offset, msg } => Error::Parse {
            offset,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

pub fn read_ppm(path: &Path) -> Result<Raster> {
    read_with(path, parse_ppm)
}

pub fn read_pgm(path: &Path) -> Result<Raster> {
    read_with(path, parse_pgm)
}
