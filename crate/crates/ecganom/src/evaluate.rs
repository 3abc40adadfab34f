//! Anomaly scoring and metrics: masked-reconstruction scores averaged over
//! several mask draws, rank-based AUROC, quantile thresholding, and the
//! confusion-matrix report.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::beats::{AamiClass, BeatImage};
use crate::error::{Error, Result};
use crate::model::{patchify, sample_wave_mask, Generator};
use crate::numerics::Tape;
use crate::training::{loss_con, loss_mae};

#[derive(Debug, Clone, Copy)]
pub struct ScoreConfig {
    /// Column mask ratio used for each scoring draw.
    pub mask_ratio: f64,
    /// Number of independent mask draws averaged per beat.
    pub k_draws: usize,
    /// Weight of the contextual term in the score.
    pub gamma_con: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            mask_ratio: 0.3,
            k_draws: 8,
            gamma_con: 1.0,
        }
    }
}

/// One scored beat; `abnormal` is the ground-truth label (non-N class).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredBeat {
    pub record_id: String,
    pub r_index: u64,
    pub aami_class: AamiClass,
    pub abnormal: bool,
    pub score: f64,
}

/// Reconstruction-based anomaly score for one beat image: the average over
/// `k_draws` fresh masks of (masked MSE + gamma_con * mean absolute
/// reconstruction error).
pub fn anomaly_score(
    gen: &Generator,
    image: &BeatImage,
    cfg: &ScoreConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if cfg.k_draws == 0 {
        return Err(Error::Config("k_draws must be at least 1".into()));
    }
    let grid = gen.cfg.grid()?;
    let seq = patchify(image.pixels(), grid)?;
    let mut total = 0.0;
    for _ in 0..cfg.k_draws {
        let mask = sample_wave_mask(grid, cfg.mask_ratio, rng)?;
        let tape = Tape::new();
        let vars = gen.params.leaves(&tape);
        let out = gen.forward(&tape, &vars, &seq, &mask)?;
        let mae = loss_mae(&seq, &out.x_hat_m.value(), &mask)?;
        let con = loss_con(seq.data.data(), out.x_tilde.value().data())?;
        total += mae + cfg.gamma_con * con;
    }
    let score = total / cfg.k_draws as f64;
    if !score.is_finite() {
        return Err(Error::Contract(format!(
            "non-finite anomaly score for record {} beat {}",
            image.record_id, image.r_index
        )));
    }
    Ok(score)
}

/// Score a batch of beats with a deterministic mask stream per seed.
pub fn score_beats(
    gen: &Generator,
    images: &[BeatImage],
    cfg: &ScoreConfig,
    seed: u64,
) -> Result<Vec<ScoredBeat>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    images
        .iter()
        .map(|img| {
            Ok(ScoredBeat {
                record_id: img.record_id.clone(),
                r_index: img.r_index,
                aami_class: img.aami_class,
                abnormal: img.aami_class != AamiClass::N,
                score: anomaly_score(gen, img, cfg, &mut rng)?,
            })
        })
        .collect()
}

/// Area under the ROC curve via average ranks (Mann-Whitney), with tied
/// scores receiving half credit. Errors when either class is absent.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Contract("non-finite score in AUROC input".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Contract(
            "AUROC needs both positive and negative examples".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average rank within each tie group
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Score threshold at the given quantile of the reference (training) score
/// distribution, using linear interpolation between order statistics.
pub fn select_threshold(reference_scores: &[f64], quantile: f64) -> Result<f64> {
    if reference_scores.is_empty() {
        return Err(Error::Contract("no reference scores for threshold".into()));
    }
    if !(0.0..=1.0).contains(&quantile) {
        return Err(Error::Range(format!("quantile {quantile} outside [0,1]")));
    }
    let mut sorted = reference_scores.to_vec();
    if sorted.iter().any(|s| !s.is_finite()) {
        return Err(Error::Contract("non-finite reference score".into()));
    }
    sorted.sort_by(f64::total_cmp);
    let h = quantile * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Absent when the test set contains a single class.
    pub auroc: Option<f64>,
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1: f64,
    pub accuracy: f64,
}

/// Confusion matrix and derived rates at `threshold`; a beat is flagged
/// anomalous when its score is strictly greater than the threshold.
/// Undefined rates (zero denominators) are reported as 0.
pub fn confusion_metrics(scored: &[ScoredBeat], threshold: f64) -> Result<MetricsReport> {
    if scored.is_empty() {
        return Err(Error::Contract("no scored beats to evaluate".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for s in scored {
        let flagged = s.score > threshold;
        match (s.abnormal, flagged) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let sensitivity = ratio(tp, tp + fn_);
    let specificity = ratio(tn, tn + fp);
    let precision = ratio(tp, tp + fp);
    let f1 = if precision + sensitivity == 0.0 {
        0.0
    } else {
        2.0 * precision * sensitivity / (precision + sensitivity)
    };
    let accuracy = ratio(tp + tn, scored.len());
    let scores: Vec<f64> = scored.iter().map(|s| s.score).collect();
    let labels: Vec<bool> = scored.iter().map(|s| s.abnormal).collect();
    let auroc = match roc_auc(&scores, &labels) {
        Ok(a) => Some(a),
        Err(Error::Contract(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        auroc,
        threshold,
        tp,
        fp,
        tn,
        fn_,
        sensitivity,
        specificity,
        precision,
        f1,
        accuracy,
    })
}

/// Scores CSV: record_id, r_index, aami_class, abnormal, score.
pub fn write_scores_csv(path: &Path, scored: &[ScoredBeat]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "record_id,r_index,aami_class,abnormal,score")?;
    for s in scored {
        writeln!(
            f,
            "{},{},{},{},{}",
            s.record_id,
            s.r_index,
            s.aami_class.as_char(),
            s.abnormal as u8,
            s.score
        )?;
    }
    Ok(())
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoredBeat>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "record_id,r_index,aami_class,abnormal,score" {
                return Err(Error::Parse(format!("unexpected scores header {line:?}")));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse(format!("scores line {}: {line:?}", i + 1)));
        }
        let class_char = fields[2]
            .chars()
            .next()
            .ok_or_else(|| Error::Parse(format!("scores line {}: empty class", i + 1)))?;
        let bad = |what: &str| Error::Parse(format!("scores line {}: bad {what}", i + 1));
        out.push(ScoredBeat {
            record_id: fields[0].to_string(),
            r_index: fields[1].parse().map_err(|_| bad("r_index"))?,
            aami_class: AamiClass::from_char(class_char)
                .ok_or_else(|| bad("aami_class"))?,
            abnormal: match fields[3] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("abnormal flag")),
            },
            score: fields[4].parse().map_err(|_| bad("score"))?,
        });
    }
    Ok(out)
}

/// ROC curve CSV (threshold sweep over the observed scores): fpr, tpr.
pub fn write_roc_csv(path: &Path, scored: &[ScoredBeat]) -> Result<()> {
    let n_pos = scored.iter().filter(|s| s.abnormal).count();
    let n_neg = scored.len() - n_pos;
    let mut order: Vec<&ScoredBeat> = scored.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "fpr,tpr")?;
    writeln!(f, "0,0")?;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && order[j].score == order[i].score {
            if order[j].abnormal {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let fpr = if n_neg == 0 { 0.0 } else { fp as f64 / n_neg as f64 };
        let tpr = if n_pos == 0 { 0.0 } else { tp as f64 / n_pos as f64 };
        writeln!(f, "{fpr},{tpr}")?;
        i = j;
    }
    Ok(())
}

pub fn write_metrics_txt(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    match report.auroc {
        Some(a) => writeln!(f, "auroc {a}")?,
        None => writeln!(f, "auroc undefined (single class)")?,
    }
    writeln!(f, "threshold {}", report.threshold)?;
    writeln!(f, "tp {}", report.tp)?;
    writeln!(f, "fp {}", report.fp)?;
    writeln!(f, "tn {}", report.tn)?;
    writeln!(f, "fn {}", report.fn_)?;
    writeln!(f, "sensitivity {}", report.sensitivity)?;
    writeln!(f, "specificity {}", report.specificity)?;
    writeln!(f, "precision {}", report.precision)?;
    writeln!(f, "f1 {}", report.f1)?;
    writeln!(f, "accuracy {}", report.accuracy)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
        // literal pair count: 1 per correctly ordered (pos, neg) pair, 0.5 per tie
        let mut credit = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    credit += 1.0;
                } else if scores[i] == scores[j] {
                    credit += 0.5;
                }
            }
        }
        credit / pairs
    }

    #[test]
    fn auroc_extremes_and_ties() {
        let perfect = roc_auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert!((perfect - 1.0).abs() < 1e-12);
        let reversed = roc_auc(&[0.1, 0.2, 0.8, 0.9], &[true, true, false, false]).unwrap();
        assert!(reversed.abs() < 1e-12);
        let all_tied = roc_auc(&[0.5; 6], &[true, true, true, false, false, false]).unwrap();
        assert!((all_tied - 0.5).abs() < 1e-12);
        assert!(roc_auc(&[1.0, 2.0], &[true, true]).is_err());
        assert!(roc_auc(&[f64::NAN, 0.0], &[true, false]).is_err());
    }

    #[test]
    fn auroc_matches_pair_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..200 {
            let n = rng.gen_range(2..40);
            // quantized scores so ties actually occur
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 / 8.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            labels[0] = true;
            labels[n - 1] = false;
            let got = roc_auc(&scores, &labels).unwrap();
            let want = brute_force_auc(&scores, &labels);
            assert!((got - want).abs() < 1e-12, "trial {trial}: {got} vs {want}");
        }
    }

    #[test]
    fn auroc_is_invariant_under_monotone_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let scores: Vec<f64> = (0..30).map(|_| rng.gen_range(0.01..5.0)).collect();
        let labels: Vec<bool> = (0..30).map(|i| i % 3 == 0).collect();
        let base = roc_auc(&scores, &labels).unwrap();
        let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let affine: Vec<f64> = scores.iter().map(|s| 3.0 * s + 7.0).collect();
        assert!((roc_auc(&exp, &labels).unwrap() - base).abs() < 1e-12);
        assert!((roc_auc(&affine, &labels).unwrap() - base).abs() < 1e-12);
        // negation gives the complement
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        assert!((roc_auc(&neg, &labels).unwrap() - (1.0 - base)).abs() < 1e-12);
    }

    #[test]
    fn threshold_quantile_interpolation() {
        let scores = vec![4.0, 1.0, 3.0, 2.0];
        // sorted [1,2,3,4]: q=0 -> min, q=1 -> max, q=0.5 -> 2.5
        assert_eq!(select_threshold(&scores, 0.0).unwrap(), 1.0);
        assert_eq!(select_threshold(&scores, 1.0).unwrap(), 4.0);
        assert!((select_threshold(&scores, 0.5).unwrap() - 2.5).abs() < 1e-15);
        assert!((select_threshold(&scores, 0.95).unwrap() - 3.85).abs() < 1e-12);
        assert!(select_threshold(&[], 0.5).is_err());
        assert!(select_threshold(&scores, 1.5).is_err());
        assert_eq!(select_threshold(&[7.0], 0.95).unwrap(), 7.0);
    }

    fn scored(pairs: &[(f64, bool)]) -> Vec<ScoredBeat> {
        pairs
            .iter()
            .enumerate()
            .map(|(i, &(score, abnormal))| ScoredBeat {
                record_id: "t".into(),
                r_index: i as u64,
                aami_class: if abnormal { AamiClass::V } else { AamiClass::N },
                abnormal,
                score,
            })
            .collect()
    }

    #[test]
    fn confusion_hand_case() {
        // 95 true positives, 5 misses, 98 true negatives, 2 false alarms
        let mut pairs = Vec::new();
        pairs.extend(std::iter::repeat((0.9, true)).take(95));
        pairs.extend(std::iter::repeat((0.1, true)).take(5));
        pairs.extend(std::iter::repeat((0.1, false)).take(98));
        pairs.extend(std::iter::repeat((0.9, false)).take(2));
        let report = confusion_metrics(&scored(&pairs), 0.5).unwrap();
        assert_eq!((report.tp, report.fn_, report.tn, report.fp), (95, 5, 98, 2));
        assert!((report.sensitivity - 0.95).abs() < 1e-12);
        assert!((report.specificity - 0.98).abs() < 1e-12);
        assert!((report.accuracy - 193.0 / 200.0).abs() < 1e-12);
        let expected_prec = 95.0 / 97.0;
        assert!((report.precision - expected_prec).abs() < 1e-12);
        let expected_f1 = 2.0 * expected_prec * 0.95 / (expected_prec + 0.95);
        assert!((report.f1 - expected_f1).abs() < 1e-12);
    }

    #[test]
    fn flagging_is_strictly_greater_than() {
        let report = confusion_metrics(&scored(&[(0.5, true), (0.6, false)]), 0.5).unwrap();
        // score exactly at the threshold is not flagged
        assert_eq!((report.tp, report.fn_, report.fp, report.tn), (0, 1, 1, 0));
    }

    #[test]
    fn single_class_reports_no_auroc() {
        let report = confusion_metrics(&scored(&[(0.9, true), (0.2, true)]), 0.5).unwrap();
        assert_eq!(report.auroc, None);
        assert_eq!(report.sensitivity, 0.5);
        assert_eq!(report.specificity, 0.0);
    }

    #[test]
    fn scores_csv_round_trip() {
        let rows = scored(&[(0.125, true), (0.5, false), (3.0e-7, true)]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        write_scores_csv(&path, &rows).unwrap();
        assert_eq!(read_scores_csv(&path).unwrap(), rows);
        std::fs::write(&path, "wrong,header\n").unwrap();
        assert!(read_scores_csv(&path).is_err());
    }

    #[test]
    fn roc_csv_endpoints() {
        let rows = scored(&[(0.9, true), (0.8, true), (0.3, false), (0.1, false)]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roc.csv");
        write_roc_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "fpr,tpr");
        assert_eq!(lines[1], "0,0");
        assert_eq!(*lines.last().unwrap(), "1,1");
    }

    #[test]
    fn anomaly_scores_are_seed_deterministic() {
        use crate::beats::{rasterize_beat, synth_beat, SynthKind};
        use crate::model::ModelConfig;
        let cfg = ModelConfig {
            embed_dim: 16,
            enc_blocks: 1,
            dec_dim: 8,
            dec_blocks: 1,
            disc_dim: 8,
            disc_blocks: 1,
            heads: 2,
            ..Default::default()
        };
        let gen = Generator::init(&cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let imgs: Vec<BeatImage> = (0..3)
            .map(|_| rasterize_beat(&synth_beat(SynthKind::Normal, &mut rng)).unwrap())
            .collect();
        let sc = ScoreConfig {
            k_draws: 3,
            ..Default::default()
        };
        let a = score_beats(&gen, &imgs, &sc, 4).unwrap();
        let b = score_beats(&gen, &imgs, &sc, 4).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| s.score.is_finite() && s.score >= 0.0));
        // a different seed draws different masks
        let c = score_beats(&gen, &imgs, &sc, 5).unwrap();
        assert!(a.iter().zip(&c).any(|(x, y)| x.score != y.score));
    }
}
