//! Format-212 packed signal (.dat) codec.
//!
//! Two 12-bit two's-complement samples per 3 bytes:
//! s1 = b0 | ((b1 & 0x0F) << 8), s2 = b2 | ((b1 & 0xF0) << 4),
//! each sign-extended from bit 11. Samples interleave across channels.

use crate::error::{Error, Result};

pub const SAMPLE_MIN: i16 = -2048;
pub const SAMPLE_MAX: i16 = 2047;

/// Per-channel integer samples in adu.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignalFrame {
    pub channels: Vec<Vec<i16>>,
}

impl SignalFrame {
    pub fn num_samples(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }
}

fn sign_extend_12(v: u16) -> i16 {
    if v & 0x800 != 0 {
        (v | 0xF000) as i16
    } else {
        v as i16
    }
}

/// Decode `num_samples` samples per channel across `num_channels` channels.
pub fn decode_format212(
    bytes: &[u8],
    num_samples: usize,
    num_channels: usize,
) -> Result<SignalFrame> {
    if num_channels == 0 {
        return Err(Error::Config("num_channels must be positive".into()));
    }
    let total = num_samples * num_channels;
    let needed = (total * 3).div_ceil(2);
    if bytes.len() < needed {
        return Err(Error::Parse(format!(
            "format 212 data truncated: need {} bytes for {} samples x {} channels, got {}",
            needed,
            num_samples,
            num_channels,
            bytes.len()
        )));
    }
    let mut flat = Vec::with_capacity(total);
    let mut i = 0;
    while flat.len() < total {
        let b0 = bytes[i];
        let b1 = bytes[i + 1];
        let s1 = sign_extend_12(u16::from(b0) | (u16::from(b1 & 0x0F) << 8));
        flat.push(s1);
        if flat.len() < total {
            let b2 = bytes[i + 2];
            let s2 = sign_extend_12(u16::from(b2) | (u16::from(b1 & 0xF0) << 4));
            flat.push(s2);
        }
        i += 3;
    }
    let mut channels = vec![Vec::with_capacity(num_samples); num_channels];
    for (k, s) in flat.into_iter().enumerate() {
        channels[k % num_channels].push(s);
    }
    Ok(SignalFrame { channels })
}

/// Inverse of [`decode_format212`]; test-only round-trip writer in spirit,
/// but also used to build fixtures.
pub fn encode_format212(frame: &SignalFrame) -> Result<Vec<u8>> {
    let num_channels = frame.channels.len();
    let num_samples = frame.num_samples();
    for ch in &frame.channels {
        if ch.len() != num_samples {
            return Err(Error::Shape("channels have unequal lengths".into()));
        }
    }
    let mut flat = Vec::with_capacity(num_samples * num_channels);
    for s in 0..num_samples {
        for ch in &frame.channels {
            let v = ch[s];
            if !(SAMPLE_MIN..=SAMPLE_MAX).contains(&v) {
                return Err(Error::Range(format!(
                    "sample {} outside the 12-bit signed range",
                    v
                )));
            }
            flat.push(v);
        }
    }
    let mut bytes = Vec::with_capacity((flat.len() * 3).div_ceil(2));
    for pair in flat.chunks(2) {
        let u1 = (pair[0] as u16) & 0x0FFF;
        let u2 = pair.get(1).map_or(0, |&v| (v as u16) & 0x0FFF);
        bytes.push((u1 & 0xFF) as u8);
        bytes.push(((u1 >> 8) as u8 & 0x0F) | ((u2 >> 4) as u8 & 0xF0));
        bytes.push((u2 & 0xFF) as u8);
    }
    Ok(bytes)
}
