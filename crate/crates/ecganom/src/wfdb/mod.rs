//! Readers for the MIT-BIH record triplet: text header (.hea), format-212
//! packed signal (.dat), and the MIT annotation stream (.atr).
//!
//! Only format 212 is supported; MIT-BIH uses it exclusively. Other storage
//! formats are rejected with an "unsupported format" error.

pub mod annotation;
pub mod header;
pub mod signal;

use std::path::Path;

pub use annotation::{
    code_to_symbol, parse_annotations, symbol_to_code, Annotation, AnnotationStream,
};
pub use header::{parse_header, RecordHeader, SignalSpec};
pub use signal::{decode_format212, encode_format212, SignalFrame};

use crate::error::{Error, Result};

/// One fully parsed record: header, signal channels, and annotations.
#[derive(Debug, Clone)]
pub struct Record {
    pub header: RecordHeader,
    pub signal: SignalFrame,
    pub annotations: Vec<Annotation>,
}

impl Record {
    pub fn id(&self) -> &str {
        &self.header.record_name
    }
}

/// Read `<record>.hea`, `<record>.dat`, `<record>.atr` from `dir`.
pub fn read_record(dir: &Path, record: &str) -> Result<Record> {
    let hea = std::fs::read_to_string(dir.join(format!("{record}.hea")))?;
    let header = parse_header(&hea)?;
    for spec in &header.signals {
        if spec.format != 212 {
            return Err(Error::Parse(format!(
                "unsupported signal format {} in record {} (only 212 is supported)",
                spec.format, record
            )));
        }
    }
    let dat = std::fs::read(dir.join(format!("{record}.dat")))?;
    let signal = decode_format212(&dat, header.num_samples, header.num_signals)?;
    let atr = std::fs::read(dir.join(format!("{record}.atr")))?;
    let stream = parse_annotations(&atr)?;
    Ok(Record {
        header,
        signal,
        annotations: stream.annotations,
    })
}

/// Record ids present in `dir` (any `<id>.hea` with its `.dat` and `.atr`),
/// sorted for determinism.
pub fn list_records(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("hea") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                if dir.join(format!("{stem}.dat")).exists()
                    && dir.join(format!("{stem}.atr")).exists()
                {
                    ids.push(stem.to_string());
                }
            }
        }
    }
    ids.sort();
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn read_record_round_trip_via_writers() {
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<i16> = (0..300).map(|i| ((i * 7) % 4000) as i16 - 2000).collect();
        let frame = SignalFrame {
            channels: vec![samples.clone(), samples.iter().map(|v| -v).collect()],
        };
        std::fs::write(
            dir.path().join("100.hea"),
            "100 2 360 300\n100.dat 212 200 11 1024 0 0 16 MLII\n100.dat 212 200 11 1024 0 0 16 V5\n",
        )
        .unwrap();
        std::fs::write(dir.path().join("100.dat"), encode_format212(&frame).unwrap()).unwrap();
        let mut atr = Vec::new();
        atr.extend_from_slice(&((1u16 << 10) | 150).to_le_bytes());
        atr.extend_from_slice(&[0, 0]);
        std::fs::write(dir.path().join("100.atr"), atr).unwrap();

        let rec = read_record(dir.path(), "100").unwrap();
        assert_eq!(rec.signal, frame);
        assert_eq!(rec.annotations.len(), 1);
        assert_eq!(rec.annotations[0].sample_index, 150);
        assert_eq!(list_records(dir.path()).unwrap(), vec!["100".to_string()]);
    }

    #[test]
    fn non_212_format_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("x.hea"),
            "x 1 360 10\nx.dat 16 200 11 1024 0 0 16 MLII\n",
        )
        .unwrap();
        std::fs::write(dir.path().join("x.dat"), [0u8; 20]).unwrap();
        std::fs::write(dir.path().join("x.atr"), [0u8, 0]).unwrap();
        let err = read_record(dir.path(), "x").unwrap_err();
        assert!(err.to_string().contains("unsupported"));
    }
}
