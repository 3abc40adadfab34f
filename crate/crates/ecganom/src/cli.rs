//! Command-line pipeline: ingest (or synthesize) beats, train, score, and
//! evaluate, with a flat key=value config file and flag overrides.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::beats::{
    build_splits, rasterize_beat, read_split_container, synth_beat, write_manifest,
    write_split_container, BeatImage, DatasetSplit, SplitConfig, SynthKind, IMG_SIZE,
};
use crate::error::{Error, Result};
use crate::evaluate::{
    confusion_metrics, read_scores_csv, score_beats, select_threshold, write_metrics_txt,
    write_roc_csv, write_scores_csv, ScoreConfig,
};
use crate::model::{load_checkpoint, save_checkpoint, Generator, ModelConfig};
use crate::training::{train, write_loss_history, TrainConfig};
use crate::wfdb::{list_records, read_record};

/// Fully resolved run configuration: model, training, scoring, and data
/// generation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub k_draws: usize,
    pub quantile: f64,
    pub n_test_normals: usize,
    pub synth_train: usize,
    pub synth_test_normal: usize,
    pub synth_test_abnormal: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            k_draws: 8,
            quantile: 0.95,
            n_test_normals: 1000,
            synth_train: 512,
            synth_test_normal: 200,
            synth_test_abnormal: 200,
        }
    }
}

fn apply_kv(cfg: &mut RunConfig, key: &str, value: &str) -> Result<()> {
    fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
        value
            .parse()
            .map_err(|_| Error::Config(format!("bad value {value:?} for config key {key}")))
    }
    match key {
        "image_size" => cfg.model.image_size = parse(key, value)?,
        "patch_size" => cfg.model.patch_size = parse(key, value)?,
        "embed_dim" => cfg.model.embed_dim = parse(key, value)?,
        "enc_blocks" => cfg.model.enc_blocks = parse(key, value)?,
        "dec_dim" => cfg.model.dec_dim = parse(key, value)?,
        "dec_blocks" => cfg.model.dec_blocks = parse(key, value)?,
        "disc_dim" => cfg.model.disc_dim = parse(key, value)?,
        "disc_blocks" => cfg.model.disc_blocks = parse(key, value)?,
        "heads" => cfg.model.heads = parse(key, value)?,
        "mlp_ratio" => cfg.model.mlp_ratio = parse(key, value)?,
        "ln_eps" => cfg.model.ln_eps = parse(key, value)?,
        "epochs" => cfg.train.epochs = parse(key, value)?,
        "batch_size" => cfg.train.batch_size = parse(key, value)?,
        "base_lr" => cfg.train.base_lr = parse(key, value)?,
        "warmup_steps" => cfg.train.warmup_steps = parse(key, value)?,
        "weight_decay" => cfg.train.weight_decay = parse(key, value)?,
        "mask_ratio" => cfg.train.mask_ratio = parse(key, value)?,
        "gamma_adv" => cfg.train.gamma_adv = parse(key, value)?,
        "gamma_con" => cfg.train.gamma_con = parse(key, value)?,
        "disc_lr" => cfg.train.disc_lr = parse(key, value)?,
        "seed" => cfg.train.seed = parse(key, value)?,
        "k_draws" => cfg.k_draws = parse(key, value)?,
        "quantile" => cfg.quantile = parse(key, value)?,
        "n_test_normals" => cfg.n_test_normals = parse(key, value)?,
        "synth_train" => cfg.synth_train = parse(key, value)?,
        "synth_test_normal" => cfg.synth_test_normal = parse(key, value)?,
        "synth_test_abnormal" => cfg.synth_test_abnormal = parse(key, value)?,
        _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
    }
    Ok(())
}

/// Parse a flat `key = value` config file. Blank lines and `#` comments are
/// ignored; unknown keys are errors.
pub fn parse_config(text: &str, base: RunConfig) -> Result<RunConfig> {
    let mut cfg = base;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected key=value, got {raw:?}", i + 1)))?;
        apply_kv(&mut cfg, key.trim(), value.trim())?;
    }
    Ok(cfg)
}

/// Render the resolved config as key=value lines (the config.echo format).
/// `parse_config` on the output reproduces the config exactly.
pub fn render_config(cfg: &RunConfig) -> String {
    let m = &cfg.model;
    let t = &cfg.train;
    format!(
        "image_size = {}\npatch_size = {}\nembed_dim = {}\nenc_blocks = {}\ndec_dim = {}\ndec_blocks = {}\ndisc_dim = {}\ndisc_blocks = {}\nheads = {}\nmlp_ratio = {}\nln_eps = {}\nepochs = {}\nbatch_size = {}\nbase_lr = {}\nwarmup_steps = {}\nweight_decay = {}\nmask_ratio = {}\ngamma_adv = {}\ngamma_con = {}\ndisc_lr = {}\nseed = {}\nk_draws = {}\nquantile = {}\nn_test_normals = {}\nsynth_train = {}\nsynth_test_normal = {}\nsynth_test_abnormal = {}\n",
        m.image_size, m.patch_size, m.embed_dim, m.enc_blocks, m.dec_dim, m.dec_blocks,
        m.disc_dim, m.disc_blocks, m.heads, m.mlp_ratio, m.ln_eps,
        t.epochs, t.batch_size, t.base_lr, t.warmup_steps, t.weight_decay, t.mask_ratio,
        t.gamma_adv, t.gamma_con, t.disc_lr, t.seed,
        cfg.k_draws, cfg.quantile, cfg.n_test_normals,
        cfg.synth_train, cfg.synth_test_normal, cfg.synth_test_abnormal
    )
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Path to a key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the run seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the training/scoring column mask ratio.
    #[arg(long)]
    pub mask_ratio: Option<f64>,
    /// Override the patch size.
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Override the number of training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Override the number of mask draws averaged per scored beat.
    #[arg(long)]
    pub k_draws: Option<usize>,
}

impl CommonArgs {
    /// Defaults, then the config file, then explicit flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)?;
            cfg = parse_config(&text, cfg)?;
        }
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        if let Some(r) = self.mask_ratio {
            cfg.train.mask_ratio = r;
        }
        if let Some(p) = self.patch_size {
            cfg.model.patch_size = p;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(k) = self.k_draws {
            cfg.k_draws = k;
        }
        cfg.model.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Parser)]
#[command(name = "ecganom", about = "ECG heartbeat anomaly detection via masked reconstruction", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read WFDB records, segment beats, and write train/test splits.
    Ingest {
        /// Directory holding .hea/.dat/.atr record files.
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Generate a synthetic beat dataset and write train/test splits.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train on the prepared train split; writes checkpoint and loss history.
    Train {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Score the train and test splits with a trained checkpoint.
    Score {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Threshold the scores and write the ROC curve and metrics report.
    Eval {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Full pipeline: ingest or synth, then train, score, eval.
    All {
        #[arg(long)]
        out: PathBuf,
        /// WFDB record directory (omit with --synthetic).
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Use generated synthetic beats instead of WFDB records.
        #[arg(long)]
        synthetic: bool,
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn write_splits(out: &Path, split: &DatasetSplit) -> Result<()> {
    std::fs::create_dir_all(out.join("splits"))?;
    write_manifest(&out.join("manifest.csv"), split)?;
    write_split_container(&out.join("splits").join("train.bin"), &split.train)?;
    write_split_container(&out.join("splits").join("test.bin"), &split.test)?;
    Ok(())
}

pub fn cmd_ingest(data_dir: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let names = list_records(data_dir)?;
    if names.is_empty() {
        return Err(Error::Config(format!(
            "no .hea records found in {}",
            data_dir.display()
        )));
    }
    let records = names
        .iter()
        .map(|name| read_record(data_dir, name))
        .collect::<Result<Vec<_>>>()?;
    let split = build_splits(
        &records,
        &SplitConfig {
            seed: cfg.train.seed,
            n_test_normals: cfg.n_test_normals,
            ..Default::default()
        },
    )?;
    write_splits(out, &split)?;
    println!(
        "ingested {} records: {} train beats, {} test beats",
        records.len(),
        split.train.len(),
        split.test.len()
    );
    Ok(())
}

/// Deterministic synthetic dataset: all-normal train beats plus a test set
/// of held-out normals and an even cycle of the anomaly kinds.
pub fn make_synth_split(cfg: &RunConfig) -> Result<DatasetSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut gen_img = |kind: SynthKind| -> Result<BeatImage> {
        rasterize_beat(&synth_beat(kind, &mut rng))
    };
    let mut train = Vec::with_capacity(cfg.synth_train);
    for _ in 0..cfg.synth_train {
        train.push(gen_img(SynthKind::Normal)?);
    }
    let mut test = Vec::with_capacity(cfg.synth_test_normal + cfg.synth_test_abnormal);
    for _ in 0..cfg.synth_test_normal {
        test.push(gen_img(SynthKind::Normal)?);
    }
    let kinds = [SynthKind::InvertedQrs, SynthKind::MissingP, SynthKind::Scaled];
    for i in 0..cfg.synth_test_abnormal {
        test.push(gen_img(kinds[i % kinds.len()])?);
    }
    Ok(DatasetSplit {
        train,
        test,
        excluded_records: Vec::new(),
    })
}

pub fn cmd_synth(out: &Path, cfg: &RunConfig) -> Result<()> {
    let split = make_synth_split(cfg)?;
    write_splits(out, &split)?;
    println!(
        "generated {} train beats, {} test beats",
        split.train.len(),
        split.test.len()
    );
    Ok(())
}

pub fn cmd_train(out: &Path, cfg: &RunConfig) -> Result<()> {
    if cfg.model.image_size != IMG_SIZE {
        return Err(Error::Config(format!(
            "pipeline images are {IMG_SIZE}x{IMG_SIZE}; image_size {} unsupported",
            cfg.model.image_size
        )));
    }
    let train_images = read_split_container(&out.join("splits").join("train.bin"))?;
    let result = train(&train_images, &cfg.model, &cfg.train)?;
    save_checkpoint(
        &out.join("checkpoint.bin"),
        &cfg.model,
        &result.generator.params,
        &result.discriminator.params,
    )?;
    write_loss_history(&out.join("loss_history.csv"), &result.history)?;
    std::fs::write(out.join("config.echo"), render_config(cfg))?;
    if let Some(last) = result.history.last() {
        println!(
            "trained {} epochs on {} beats, final l_total {:.6}",
            result.history.len(),
            train_images.len(),
            last.l_total
        );
    } else {
        println!("trained 0 epochs on {} beats", train_images.len());
    }
    Ok(())
}

pub fn cmd_score(out: &Path, cfg: &RunConfig) -> Result<()> {
    let (model_cfg, gen_params, _) = load_checkpoint(&out.join("checkpoint.bin"))?;
    let gen = Generator {
        cfg: model_cfg,
        params: gen_params,
    };
    let score_cfg = ScoreConfig {
        mask_ratio: cfg.train.mask_ratio,
        k_draws: cfg.k_draws,
        gamma_con: cfg.train.gamma_con,
    };
    let splits = out.join("splits");
    let test_images = read_split_container(&splits.join("test.bin"))?;
    let test_scores = score_beats(&gen, &test_images, &score_cfg, cfg.train.seed)?;
    write_scores_csv(&out.join("scores.csv"), &test_scores)?;
    let train_images = read_split_container(&splits.join("train.bin"))?;
    let train_scores = score_beats(&gen, &train_images, &score_cfg, cfg.train.seed.wrapping_add(1))?;
    write_scores_csv(&out.join("train_scores.csv"), &train_scores)?;
    println!(
        "scored {} test beats and {} train beats",
        test_scores.len(),
        train_scores.len()
    );
    Ok(())
}

pub fn cmd_eval(out: &Path, cfg: &RunConfig) -> Result<()> {
    let test_scores = read_scores_csv(&out.join("scores.csv"))?;
    let train_scores = read_scores_csv(&out.join("train_scores.csv"))?;
    let reference: Vec<f64> = train_scores.iter().map(|s| s.score).collect();
    let threshold = select_threshold(&reference, cfg.quantile)?;
    let report = confusion_metrics(&test_scores, threshold)?;
    write_roc_csv(&out.join("roc.csv"), &test_scores)?;
    write_metrics_txt(&out.join("metrics.txt"), &report)?;
    match report.auroc {
        Some(a) => println!("auroc {a:.6}"),
        None => println!("auroc undefined (single class)"),
    }
    println!(
        "threshold {:.6}: sensitivity {:.4}, specificity {:.4}, f1 {:.4}",
        report.threshold, report.sensitivity, report.specificity, report.f1
    );
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest { data_dir, out, common } => {
            cmd_ingest(data_dir, out, &common.resolve()?)
        }
        Command::Synth { out, common } => cmd_synth(out, &common.resolve()?),
        Command::Train { out, common } => cmd_train(out, &common.resolve()?),
        Command::Score { out, common } => cmd_score(out, &common.resolve()?),
        Command::Eval { out, common } => cmd_eval(out, &common.resolve()?),
        Command::All {
            out,
            data_dir,
            synthetic,
            common,
        } => {
            let cfg = common.resolve()?;
            match (synthetic, data_dir) {
                (true, Some(_)) => {
                    return Err(Error::Config(
                        "--synthetic and --data-dir are mutually exclusive".into(),
                    ))
                }
                (true, None) => cmd_synth(out, &cfg)?,
                (false, Some(dir)) => cmd_ingest(dir, out, &cfg)?,
                (false, None) => {
                    return Err(Error::Config(
                        "all requires either --data-dir or --synthetic".into(),
                    ))
                }
            }
            cmd_train(out, &cfg)?;
            cmd_score(out, &cfg)?;
            cmd_eval(out, &cfg)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_round_trip_through_render() {
        let cfg = RunConfig::default();
        let parsed = parse_config(&render_config(&cfg), RunConfig::default()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn config_file_overrides_and_rejects_unknown_keys() {
        let text = "# comment\n\nepochs = 3\nmask_ratio = 0.5\npatch_size=8\n";
        let cfg = parse_config(text, RunConfig::default()).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.mask_ratio, 0.5);
        assert_eq!(cfg.model.patch_size, 8);

        assert!(matches!(
            parse_config("not_a_key = 1\n", RunConfig::default()),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            parse_config("epochs\n", RunConfig::default()),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            parse_config("epochs = many\n", RunConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn flags_take_precedence_over_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "seed = 1\nepochs = 9\n").unwrap();
        let args = CommonArgs {
            config: Some(path),
            seed: Some(42),
            mask_ratio: None,
            patch_size: None,
            epochs: None,
            k_draws: Some(2),
        };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.train.seed, 42);
        assert_eq!(cfg.train.epochs, 9);
        assert_eq!(cfg.k_draws, 2);
    }

    #[test]
    fn synth_split_composition_and_determinism() {
        let cfg = RunConfig {
            synth_train: 10,
            synth_test_normal: 4,
            synth_test_abnormal: 6,
            ..Default::default()
        };
        let a = make_synth_split(&cfg).unwrap();
        assert_eq!(a.train.len(), 10);
        assert_eq!(a.test.len(), 10);
        assert!(a.train.iter().all(|i| i.aami_class == crate::beats::AamiClass::N));
        let abnormal = a.test.iter().filter(|i| i.aami_class != crate::beats::AamiClass::N).count();
        assert_eq!(abnormal, 6);
        let b = make_synth_split(&cfg).unwrap();
        assert_eq!(a.train[0].pixels(), b.train[0].pixels());
    }

    #[test]
    fn cli_parses_subcommands() {
        use clap::Parser;
        let cli = Cli::try_parse_from([
            "ecganom", "all", "--out", "/tmp/x", "--synthetic", "--seed", "7", "--epochs", "2",
        ])
        .unwrap();
        match cli.command {
            Command::All { synthetic, common, .. } => {
                assert!(synthetic);
                assert_eq!(common.seed, Some(7));
                assert_eq!(common.epochs, Some(2));
            }
            _ => panic!("wrong subcommand"),
        }
        assert!(Cli::try_parse_from(["ecganom", "bogus"]).is_err());
    }
}
