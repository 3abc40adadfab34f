//! Beat-level dataset construction: R-peak-anchored segmentation, AAMI class
//! remapping, 128x128 rasterization, split building, and a synthetic ECG
//! generator for data-free testing.

use std::io::Write;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::wfdb::{Annotation, Record};

pub const IMG_SIZE: usize = 128;

/// The five AAMI beat classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AamiClass {
    N,
    S,
    V,
    F,
    Q,
}

impl AamiClass {
    pub fn as_char(self) -> char {
        match self {
            AamiClass::N => 'N',
            AamiClass::S => 'S',
            AamiClass::V => 'V',
            AamiClass::F => 'F',
            AamiClass::Q => 'Q',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        Some(match c {
            'N' => AamiClass::N,
            'S' => AamiClass::S,
            'V' => AamiClass::V,
            'F' => AamiClass::F,
            'Q' => AamiClass::Q,
            _ => return None,
        })
    }
}

/// The 15 MIT-BIH beat symbols grouped into the five AAMI classes:
/// {N,L,R,e,j} -> N; {A,a,J,S} -> S; {V,E} -> V; {F} -> F; {/,f,Q} -> Q.
/// Non-beat symbols (rhythm '+', quality '~', ...) return `None`.
pub fn map_aami(mit_code: char) -> Option<AamiClass> {
    Some(match mit_code {
        'N' | 'L' | 'R' | 'e' | 'j' => AamiClass::N,
        'A' | 'a' | 'J' | 'S' => AamiClass::S,
        'V' | 'E' => AamiClass::V,
        'F' => AamiClass::F,
        '/' | 'f' | 'Q' => AamiClass::Q,
        _ => return None,
    })
}

/// One segmented heartbeat window in adu.
#[derive(Debug, Clone, PartialEq)]
pub struct Beat {
    pub record_id: String,
    pub r_index: u64,
    pub samples: Vec<f64>,
    pub mit_code: char,
}

/// A rasterized beat: 128x128 grayscale in [0,1], row-major, row 0 at the
/// amplitude maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatImage {
    pixels: Vec<f64>,
    pub aami_class: AamiClass,
    pub record_id: String,
    pub r_index: u64,
}

impl BeatImage {
    pub fn new(
        pixels: Vec<f64>,
        aami_class: AamiClass,
        record_id: String,
        r_index: u64,
    ) -> Result<Self> {
        if pixels.len() != IMG_SIZE * IMG_SIZE {
            return Err(Error::Shape(format!(
                "beat image needs {} pixels, got {}",
                IMG_SIZE * IMG_SIZE,
                pixels.len()
            )));
        }
        if pixels.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Range("beat image pixel outside [0,1]".into()));
        }
        Ok(Self {
            pixels,
            aami_class,
            record_id,
            r_index,
        })
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * IMG_SIZE + col]
    }
}

/// Segment beats around each beat annotation on one channel. The window is
/// `[r - round(pre_s*fs), r + round(post_s*fs))`; windows that leave the
/// record bounds are dropped, non-beat annotations are skipped.
pub fn segment_beats(
    channel: &[i16],
    annotations: &[Annotation],
    record_id: &str,
    fs: f64,
    pre_s: f64,
    post_s: f64,
) -> Vec<Beat> {
    let pre = (pre_s * fs).round() as i64;
    let post = (post_s * fs).round() as i64;
    let n = channel.len() as i64;
    let mut beats = Vec::new();
    for ann in annotations {
        let Some(sym) = ann.symbol() else { continue };
        if map_aami(sym).is_none() {
            continue;
        }
        let r = ann.sample_index as i64;
        let start = r - pre;
        let end = r + post;
        if start < 0 || end > n {
            continue;
        }
        let samples = channel[start as usize..end as usize]
            .iter()
            .map(|&v| f64::from(v))
            .collect();
        beats.push(Beat {
            record_id: record_id.to_string(),
            r_index: ann.sample_index,
            samples,
            mit_code: sym,
        });
    }
    beats
}

/// Rasterize one beat: per-beat min-max normalization to [0,1], linear
/// resampling of the time axis to 128 columns, then a connected one-pixel
/// polyline of value 1.0 on a 0.0 background. Row 0 is the amplitude maximum.
/// A flat window maps to the middle row.
pub fn rasterize_beat(beat: &Beat) -> Result<BeatImage> {
    if beat.samples.is_empty() {
        return Err(Error::Contract("cannot rasterize an empty beat".into()));
    }
    let min = beat.samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = beat
        .samples
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    let n = beat.samples.len();

    let mut pixels = vec![0.0; IMG_SIZE * IMG_SIZE];
    let mut prev_row: Option<usize> = None;
    for col in 0..IMG_SIZE {
        // linear interpolation along the time axis
        let t = if IMG_SIZE > 1 {
            col as f64 * (n - 1) as f64 / (IMG_SIZE - 1) as f64
        } else {
            0.0
        };
        let i0 = t.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        let frac = t - i0 as f64;
        let v = beat.samples[i0] * (1.0 - frac) + beat.samples[i1] * frac;
        let norm = if range > 0.0 { (v - min) / range } else { 0.5 };
        let row = ((1.0 - norm) * (IMG_SIZE - 1) as f64).round() as usize;
        match prev_row {
            None => pixels[row * IMG_SIZE + col] = 1.0,
            Some(p) => {
                // connect to the previous column with a vertical run
                let (lo, hi) = if p <= row { (p, row) } else { (row, p) };
                for r in lo..=hi {
                    pixels[r * IMG_SIZE + col] = 1.0;
                }
            }
        }
        prev_row = Some(row);
    }
    let class = map_aami(beat.mit_code)
        .ok_or_else(|| Error::Contract(format!("{:?} is not a beat symbol", beat.mit_code)))?;
    BeatImage::new(pixels, class, beat.record_id.clone(), beat.r_index)
}

#[derive(Debug, Clone)]
pub struct SplitConfig {
    pub pre_s: f64,
    pub post_s: f64,
    pub excluded: Vec<String>,
    pub seed: u64,
    /// How many N-class beats are withheld from training into the test set.
    pub n_test_normals: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            pre_s: 0.3,
            post_s: 0.4,
            excluded: ["102", "104", "107", "217", "218"]
                .iter()
                .map(ToString::to_string)
                .collect(),
            seed: 0,
            n_test_normals: 1000,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DatasetSplit {
    pub train: Vec<BeatImage>,
    pub test: Vec<BeatImage>,
    pub excluded_records: Vec<String>,
}

/// Build train/test splits from parsed records. Training holds N-class
/// images only; the test set is a seeded random sample of withheld N images
/// plus every S/V/F/Q image. Excluded records contribute nothing.
pub fn build_splits(records: &[Record], cfg: &SplitConfig) -> Result<DatasetSplit> {
    if records.is_empty() {
        return Err(Error::Config("no records to build splits from".into()));
    }
    let mut normals = Vec::new();
    let mut abnormals = Vec::new();
    for rec in records {
        if cfg.excluded.iter().any(|e| e == rec.id()) {
            continue;
        }
        let fs = rec.header.sampling_frequency;
        let channel = rec
            .signal
            .channels
            .first()
            .ok_or_else(|| Error::Config(format!("record {} has no channels", rec.id())))?;
        let beats = segment_beats(channel, &rec.annotations, rec.id(), fs, cfg.pre_s, cfg.post_s);
        for beat in &beats {
            let img = rasterize_beat(beat)?;
            if img.aami_class == AamiClass::N {
                normals.push(img);
            } else {
                abnormals.push(img);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..normals.len()).collect();
    order.shuffle(&mut rng);
    let n_test = cfg.n_test_normals.min(normals.len());
    let test_idx: std::collections::HashSet<usize> = order[..n_test].iter().copied().collect();
    let mut train = Vec::with_capacity(normals.len() - n_test);
    let mut test = Vec::with_capacity(n_test + abnormals.len());
    for (i, img) in normals.into_iter().enumerate() {
        if test_idx.contains(&i) {
            test.push(img);
        } else {
            train.push(img);
        }
    }
    test.extend(abnormals);
    Ok(DatasetSplit {
        train,
        test,
        excluded_records: cfg.excluded.clone(),
    })
}

/// Synthetic beat shapes for data-free testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Normal,
    /// QRS complex sign-flipped; labeled V.
    InvertedQrs,
    /// P bump removed; labeled S (supraventricular-like).
    MissingP,
    /// QRS amplitude scaled 3x relative to P/T; labeled Q.
    Scaled,
}

impl SynthKind {
    pub fn mit_code(self) -> char {
        match self {
            SynthKind::Normal => 'N',
            SynthKind::InvertedQrs => 'V',
            SynthKind::MissingP => 'A',
            SynthKind::Scaled => 'Q',
        }
    }
}

/// Window constants matching the default MIT-BIH segmentation:
/// round(0.3*360) before + round(0.4*360) after the R-peak.
pub const SYNTH_LEN: usize = 252;
pub const SYNTH_R_INDEX: usize = 108;

/// One synthetic beat: a sum of three Gaussian bumps (P, QRS, T) with
/// jittered amplitudes and positions plus small noise.
pub fn synth_beat(kind: SynthKind, rng: &mut impl Rng) -> Beat {
    let jitter = |rng: &mut dyn RngCore, scale: f64| 1.0 + scale * rng.gen_range(-1.0..1.0);

    // centers are fixed relative to the R anchor (segmentation aligns beats
    // at the R-peak); variability comes from amplitude jitter and noise
    let r = SYNTH_R_INDEX as f64;
    let mut p_amp = 0.25 * jitter(rng, 0.05);
    let p_center = r - 55.0;
    let mut qrs_amp = 1.0 * jitter(rng, 0.05);
    let qrs_center = r;
    let t_amp = 0.3 * jitter(rng, 0.05);
    let t_center = r + 70.0;

    match kind {
        SynthKind::Normal => {}
        SynthKind::InvertedQrs => qrs_amp = -qrs_amp,
        SynthKind::MissingP => p_amp = 0.0,
        SynthKind::Scaled => qrs_amp *= 3.0,
    }

    let gauss = |x: f64, c: f64, a: f64, s: f64| a * (-(x - c) * (x - c) / (2.0 * s * s)).exp();
    let mut samples = Vec::with_capacity(SYNTH_LEN);
    for i in 0..SYNTH_LEN {
        let x = i as f64;
        let v = gauss(x, p_center, p_amp, 6.0)
            + gauss(x, qrs_center, qrs_amp, 3.5)
            + gauss(x, t_center, t_amp, 12.0)
            + 0.002 * rng.gen_range(-1.0..1.0);
        samples.push(v * 200.0); // nominal adu scale
    }
    Beat {
        record_id: "synthetic".to_string(),
        r_index: SYNTH_R_INDEX as u64,
        samples,
        mit_code: kind.mit_code(),
    }
}

const SPLIT_MAGIC: &[u8; 4] = b"ECGS";
const SPLIT_VERSION: u32 = 1;

/// Write one split's images to a binary container. Pixels are stored as u8
/// (value * 255); polyline images hold only 0.0 and 1.0, so this is lossless
/// for them.
pub fn write_split_container(path: &Path, images: &[BeatImage]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(SPLIT_MAGIC);
    out.extend_from_slice(&SPLIT_VERSION.to_le_bytes());
    out.extend_from_slice(&(images.len() as u32).to_le_bytes());
    for img in images {
        let id = img.record_id.as_bytes();
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&img.r_index.to_le_bytes());
        out.push(img.aami_class.as_char() as u8);
        for &p in img.pixels() {
            out.push((p * 255.0).round() as u8);
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_split_container(path: &Path) -> Result<Vec<BeatImage>> {
    let bytes = std::fs::read(path)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Parse("split container truncated".into()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != SPLIT_MAGIC {
        return Err(Error::Parse("bad split container magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != SPLIT_VERSION {
        return Err(Error::Parse(format!("unsupported split container version {version}")));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut images = Vec::with_capacity(count);
    for _ in 0..count {
        let id_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let id = String::from_utf8(take(&mut pos, id_len)?.to_vec())
            .map_err(|_| Error::Parse("non-utf8 record id".into()))?;
        let r_index = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let class_byte = take(&mut pos, 1)?[0];
        let class = AamiClass::from_char(class_byte as char)
            .ok_or_else(|| Error::Parse(format!("bad class byte {class_byte}")))?;
        let pixels: Vec<f64> = take(&mut pos, IMG_SIZE * IMG_SIZE)?
            .iter()
            .map(|&b| f64::from(b) / 255.0)
            .collect();
        images.push(BeatImage::new(pixels, class, id, r_index)?);
    }
    Ok(images)
}

/// Manifest CSV with fixed column order: record_id, r_index, aami_class, split.
pub fn write_manifest(path: &Path, split: &DatasetSplit) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "record_id,r_index,aami_class,split")?;
    for img in &split.train {
        writeln!(f, "{},{},{},train", img.record_id, img.r_index, img.aami_class.as_char())?;
    }
    for img in &split.test {
        writeln!(f, "{},{},{},test", img.record_id, img.r_index, img.aami_class.as_char())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wfdb::symbol_to_code;

    fn beat_ann(sym: char, at: u64) -> Annotation {
        Annotation {
            sample_index: at,
            code: symbol_to_code(sym).unwrap(),
            subtype: 0,
            chan: 0,
            num: 0,
            aux: None,
        }
    }

    #[test]
    fn aami_table_is_exact() {
        let table = [
            ('N', AamiClass::N),
            ('L', AamiClass::N),
            ('R', AamiClass::N),
            ('e', AamiClass::N),
            ('j', AamiClass::N),
            ('A', AamiClass::S),
            ('a', AamiClass::S),
            ('J', AamiClass::S),
            ('S', AamiClass::S),
            ('V', AamiClass::V),
            ('E', AamiClass::V),
            ('F', AamiClass::F),
            ('/', AamiClass::Q),
            ('f', AamiClass::Q),
            ('Q', AamiClass::Q),
        ];
        assert_eq!(table.len(), 15);
        for (sym, class) in table {
            assert_eq!(map_aami(sym), Some(class), "symbol {sym}");
        }
        for non_beat in ['+', '~', '|', '"', '['] {
            assert_eq!(map_aami(non_beat), None);
        }
    }

    #[test]
    fn segment_window_arithmetic() {
        let channel = vec![0i16; 2000];
        let anns = vec![beat_ann('N', 1000)];
        let beats = segment_beats(&channel, &anns, "t", 360.0, 0.3, 0.4);
        assert_eq!(beats.len(), 1);
        assert_eq!(beats[0].samples.len(), 252); // [892, 1144)
    }

    #[test]
    fn underflowing_window_is_dropped() {
        let channel = vec![0i16; 2000];
        let anns = vec![beat_ann('N', 50)];
        assert!(segment_beats(&channel, &anns, "t", 360.0, 0.3, 0.4).is_empty());
    }

    #[test]
    fn rhythm_annotation_produces_no_beat() {
        let channel = vec![0i16; 2000];
        let anns = vec![Annotation {
            sample_index: 1000,
            code: 28, // '+'
            subtype: 0,
            chan: 0,
            num: 0,
            aux: None,
        }];
        assert!(segment_beats(&channel, &anns, "t", 360.0, 0.3, 0.4).is_empty());
    }

    #[test]
    fn flat_beat_rasterizes_to_middle_row() {
        let beat = Beat {
            record_id: "t".into(),
            r_index: 0,
            samples: vec![5.0; 252],
            mit_code: 'N',
        };
        let img = rasterize_beat(&beat).unwrap();
        for col in 0..IMG_SIZE {
            for row in 0..IMG_SIZE {
                let expect = if row == 64 { 1.0 } else { 0.0 };
                assert_eq!(img.pixel(row, col), expect, "({row},{col})");
            }
        }
    }

    #[test]
    fn every_column_has_ink_and_max_hits_row_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let beat = synth_beat(SynthKind::Normal, &mut rng);
        let img = rasterize_beat(&beat).unwrap();
        for col in 0..IMG_SIZE {
            assert!((0..IMG_SIZE).any(|row| img.pixel(row, col) > 0.0), "column {col}");
        }
        assert!(img.pixels().iter().all(|&p| (0.0..=1.0).contains(&p)));

        // a column that lands exactly on the window maximum maps to row 0:
        // with 128 samples the column-to-sample mapping is the identity
        let mut samples = vec![0.0; IMG_SIZE];
        samples[40] = 5.0;
        let beat = Beat {
            record_id: "t".into(),
            r_index: 0,
            samples,
            mit_code: 'N',
        };
        let img = rasterize_beat(&beat).unwrap();
        assert_eq!(img.pixel(0, 40), 1.0);
    }

    #[test]
    fn synth_beats_are_deterministic_and_shaped() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let x = synth_beat(SynthKind::Normal, &mut a);
        let y = synth_beat(SynthKind::Normal, &mut b);
        assert_eq!(x, y);
        let argmax = x
            .samples
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!((argmax as i64 - SYNTH_R_INDEX as i64).abs() < 6);

        let mut c = ChaCha8Rng::seed_from_u64(9);
        let inv = synth_beat(SynthKind::InvertedQrs, &mut c);
        let argmin = inv
            .samples
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!((argmin as i64 - SYNTH_R_INDEX as i64).abs() < 6);
    }

    fn synth_record(id: &str, beats: &[(char, u64)]) -> Record {
        use crate::wfdb::{RecordHeader, SignalFrame, SignalSpec};
        let n = 5000;
        let channel: Vec<i16> = (0..n).map(|i| ((i % 100) as i16) - 50).collect();
        Record {
            header: RecordHeader {
                record_name: id.to_string(),
                num_signals: 1,
                sampling_frequency: 360.0,
                num_samples: n,
                signals: vec![SignalSpec {
                    file_name: format!("{id}.dat"),
                    format: 212,
                    gain: 200.0,
                    baseline: 0,
                    description: "MLII".into(),
                }],
            },
            signal: SignalFrame {
                channels: vec![channel],
            },
            annotations: beats.iter().map(|&(s, t)| beat_ann(s, t)).collect(),
        }
    }

    #[test]
    fn excluded_record_contributes_nothing() {
        let records = vec![
            synth_record("102", &[('N', 1000), ('V', 2000)]),
            synth_record("100", &[('N', 1000), ('V', 2000)]),
        ];
        let cfg = SplitConfig {
            n_test_normals: 0,
            ..Default::default()
        };
        let split = build_splits(&records, &cfg).unwrap();
        assert!(split
            .train
            .iter()
            .chain(&split.test)
            .all(|img| img.record_id == "100"));
    }

    #[test]
    fn train_split_is_all_normal() {
        let records = vec![synth_record(
            "100",
            &[('N', 1000), ('N', 1500), ('N', 2000), ('V', 2500), ('A', 3000)],
        )];
        let cfg = SplitConfig {
            n_test_normals: 1,
            ..Default::default()
        };
        let split = build_splits(&records, &cfg).unwrap();
        assert!(split.train.iter().all(|img| img.aami_class == AamiClass::N));
        assert_eq!(split.train.len(), 2);
        assert_eq!(split.test.len(), 3); // 1 held-out N + V + S
    }

    #[test]
    fn splits_are_seed_deterministic() {
        let records = vec![synth_record(
            "100",
            &[('N', 1000), ('N', 1500), ('N', 2000), ('N', 2500), ('V', 3000)],
        )];
        let cfg = SplitConfig {
            n_test_normals: 2,
            seed: 13,
            ..Default::default()
        };
        let a = build_splits(&records, &cfg).unwrap();
        let b = build_splits(&records, &cfg).unwrap();
        let key = |s: &DatasetSplit| -> Vec<(String, u64)> {
            s.train.iter().map(|i| (i.record_id.clone(), i.r_index)).collect()
        };
        assert_eq!(key(&a), key(&b));
    }

    #[test]
    fn empty_record_set_is_config_error() {
        assert!(matches!(
            build_splits(&[], &SplitConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn split_container_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let images: Vec<BeatImage> = (0..3)
            .map(|_| rasterize_beat(&synth_beat(SynthKind::Normal, &mut rng)).unwrap())
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.bin");
        write_split_container(&path, &images).unwrap();
        let back = read_split_container(&path).unwrap();
        assert_eq!(back, images);
    }
}
