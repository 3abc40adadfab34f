//! MIT annotation (.atr) stream parser.
//!
//! The stream is a sequence of little-endian 16-bit words. For each word,
//! `code = word >> 10` and `value = word & 0x3FF`. Codes 1..=49 emit an
//! annotation at cumulative time + value; codes 59..=63 are pseudo-codes
//! (SKIP / NUM / SUB / CHN / AUX); the word 0x0000 terminates the stream.

use crate::error::{Error, Result};

const CODE_SKIP: u8 = 59;
const CODE_NUM: u8 = 60;
const CODE_SUB: u8 = 61;
const CODE_CHN: u8 = 62;
const CODE_AUX: u8 = 63;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    /// Absolute sample index.
    pub sample_index: u64,
    /// Annotation type code, 1..=49.
    pub code: u8,
    pub subtype: i8,
    pub chan: u8,
    pub num: i8,
    pub aux: Option<Vec<u8>>,
}

impl Annotation {
    /// MIT-BIH display symbol for this annotation's code, if standard.
    pub fn symbol(&self) -> Option<char> {
        code_to_symbol(self.code)
    }
}

/// Result of parsing a full .atr stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationStream {
    pub annotations: Vec<Annotation>,
    /// True when bytes after the end-of-stream sentinel were ignored.
    pub trailing_bytes_ignored: bool,
}

/// Standard WFDB annotation-code symbols (beat and non-beat).
pub fn code_to_symbol(code: u8) -> Option<char> {
    Some(match code {
        1 => 'N',
        2 => 'L',
        3 => 'R',
        4 => 'a',
        5 => 'V',
        6 => 'F',
        7 => 'J',
        8 => 'A',
        9 => 'S',
        10 => 'E',
        11 => 'j',
        12 => '/',
        13 => 'Q',
        14 => '~',
        16 => '|',
        18 => 's',
        19 => 'T',
        20 => '*',
        21 => 'D',
        22 => '"',
        23 => '=',
        24 => 'p',
        25 => 'B',
        26 => '^',
        27 => 't',
        28 => '+',
        29 => 'u',
        30 => '?',
        31 => '!',
        32 => '[',
        33 => ']',
        34 => 'e',
        35 => 'n',
        36 => '@',
        37 => 'x',
        38 => 'f',
        39 => '(',
        40 => ')',
        41 => 'r',
        _ => return None,
    })
}

pub fn symbol_to_code(symbol: char) -> Option<u8> {
    (1u8..=49).find(|&c| code_to_symbol(c) == Some(symbol))
}

pub fn parse_annotations(bytes: &[u8]) -> Result<AnnotationStream> {
    let mut annotations: Vec<Annotation> = Vec::new();
    let mut pos = 0usize;
    let mut time: i64 = 0;
    let mut skip_offset: i64 = 0;
    let mut num: i8 = 0;
    let mut chan: u8 = 0;
    let mut subtype: i8 = 0;
    let mut terminated = false;

    while !terminated && pos < bytes.len() {
        if pos + 2 > bytes.len() {
            return Err(Error::Parse(format!(
                "odd trailing byte at offset {pos} before end-of-stream sentinel"
            )));
        }
        let word = u16::from_le_bytes([bytes[pos], bytes[pos + 1]]);
        pos += 2;
        if word == 0 {
            terminated = true;
            break;
        }
        let code = (word >> 10) as u8;
        let value = i64::from(word & 0x3FF);
        match code {
            CODE_SKIP => {
                // long interval: most-significant 16-bit word first, each
                // word little-endian
                if pos + 4 > bytes.len() {
                    return Err(Error::Parse("SKIP escape truncated".into()));
                }
                let hi = u16::from_le_bytes([bytes[pos], bytes[pos + 1]]) as u32;
                let lo = u16::from_le_bytes([bytes[pos + 2], bytes[pos + 3]]) as u32;
                pos += 4;
                skip_offset += i64::from(((hi << 16) | lo) as i32);
            }
            CODE_NUM => {
                num = (word & 0xFF) as u8 as i8;
            }
            CODE_SUB => {
                subtype = (word & 0xFF) as u8 as i8;
            }
            CODE_CHN => {
                chan = (word & 0xFF) as u8;
            }
            CODE_AUX => {
                let len = value as usize;
                let padded = len + (len & 1);
                if pos + padded > bytes.len() {
                    return Err(Error::Parse(format!(
                        "AUX of {len} bytes overruns buffer at offset {pos}"
                    )));
                }
                let aux = bytes[pos..pos + len].to_vec();
                pos += padded;
                match annotations.last_mut() {
                    Some(prev) => prev.aux = Some(aux),
                    None => {
                        return Err(Error::Parse(
                            "AUX escape before any annotation".into(),
                        ))
                    }
                }
            }
            1..=49 => {
                let new_time = time + skip_offset + value;
                if new_time < time {
                    return Err(Error::Parse(format!(
                        "annotation time decreases ({time} -> {new_time})"
                    )));
                }
                time = new_time;
                skip_offset = 0;
                annotations.push(Annotation {
                    sample_index: time as u64,
                    code,
                    subtype,
                    chan,
                    num,
                    aux: None,
                });
                subtype = 0;
            }
            _ => {
                return Err(Error::Parse(format!(
                    "unknown annotation code {code} at offset {}",
                    pos - 2
                )));
            }
        }
    }

    Ok(AnnotationStream {
        annotations,
        trailing_bytes_ignored: terminated && pos < bytes.len(),
    })
}
