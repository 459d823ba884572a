//! Command-line front door: one JSON run configuration drives dataset
//! generation, two-phase training, descriptor extraction, evaluation, the
//! mask-depth ablation, and the gradient checker.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{generate_synthetic, load_dataset, LoadedDataset, SyntheticConfig, MANIFEST_NAME};
use crate::descriptor::{
    extract_descriptors, load_descriptors, save_descriptors, DescriptorBranch,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, write_per_query_ap, EvalProtocol};
use crate::network::{
    export_heatmap, load_checkpoint, mask_snapshot, save_checkpoint, MaskTap, NetworkConfig,
    NetworkParams,
};
use crate::rerank::{write_ranking_lines, ReRankConfig};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::{
    check_parameter_gradient, check_single_precision_gradient, default_check_targets,
    train_stage1, train_stage2, write_metrics_tsv, EpochMetrics, TrainConfig,
};

/// Output locations, all created on demand.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunPaths {
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for RunPaths {
    fn default() -> Self {
        RunPaths {
            data_dir: PathBuf::from("data"),
            checkpoint_dir: PathBuf::from("checkpoints"),
            output_dir: PathBuf::from("output"),
        }
    }
}

/// The whole run in one document. Partial files are fine: absent fields take
/// these defaults, unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; it overwrites `train.seed` and `dataset.seed` so one
    /// number controls every random draw in the pipeline.
    pub seed: u64,
    /// Fusion weight for the global half of the combined descriptor.
    pub alpha: f64,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub dataset: SyntheticConfig,
    pub rerank: ReRankConfig,
    pub protocol: EvalProtocol,
    pub paths: RunPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            alpha: crate::descriptor::DEFAULT_ALPHA,
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            dataset: SyntheticConfig::default(),
            rerank: ReRankConfig::default(),
            protocol: EvalProtocol::default(),
            paths: RunPaths::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        self.dataset.validate()?;
        self.protocol.validate()?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!(
                "alpha = {} must lie in [0, 1]",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.rerank.lambda) {
            return Err(Error::config(format!(
                "rerank.lambda = {} must lie in [0, 1]",
                self.rerank.lambda
            )));
        }
        if self.rerank.k2 < 1 || self.rerank.k2 > self.rerank.k1 {
            return Err(Error::config(format!(
                "rerank needs 1 <= k2 <= k1, got k1 = {}, k2 = {}",
                self.rerank.k1, self.rerank.k2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BranchArg {
    Fused,
    Grn,
    Lan,
}

impl From<BranchArg> for DescriptorBranch {
    fn from(arg: BranchArg) -> Self {
        match arg {
            BranchArg::Fused => DescriptorBranch::Fused,
            BranchArg::Grn => DescriptorBranch::Grn,
            BranchArg::Lan => DescriptorBranch::Lan,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "fmn",
    version,
    about = "Two-branch feature-mask network for small-scale person re-identification"
)]
pub struct Cli {
    /// JSON run configuration; built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override a config field by dotted path, e.g. --set train.batch_size=8.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    pub overrides: Vec<String>,
    /// Shorthand for --set seed=N, applied last.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic identity benchmark to disk.
    Generate,
    /// Train the global branch (stage 1), the masked local branch (stage 2),
    /// or both in sequence.
    Train {
        #[arg(long, value_enum, default_value = "all")]
        stage: StageArg,
    },
    /// Compute descriptors for the query and gallery splits of the dataset.
    Extract {
        /// Which embedding the descriptor file carries.
        #[arg(long, value_enum, default_value = "fused")]
        branch: BranchArg,
        /// Also render per-image grayscale maps of the tapped features, the
        /// attention mask, and the masked features.
        #[arg(long)]
        heatmaps: bool,
        /// Checkpoint directory; defaults to the stage-2 checkpoint.
        #[arg(long, value_name = "DIR")]
        checkpoint: Option<PathBuf>,
    },
    /// Score a query descriptor file against a gallery descriptor file.
    Evaluate {
        #[arg(long, value_name = "FMND")]
        queries: PathBuf,
        #[arg(long, value_name = "FMND")]
        gallery: PathBuf,
        /// Neighborhood re-ranking: k1 k2 lambda.
        #[arg(long, num_args = 3, value_names = ["K1", "K2", "LAMBDA"])]
        rerank: Option<Vec<String>>,
    },
    /// Retrain the local branch once per mask depth and tabulate the metrics.
    AblateMaskTap,
    /// Compare analytic gradients against central differences through the
    /// full network and both training losses.
    GradCheck {
        /// Number of seeded input batches per precision.
        #[arg(long, default_value_t = 10)]
        inputs: usize,
    },
}

fn parse_override(config: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| {
        Error::config(format!("override {spec:?} is not of the form path=value"))
    })?;
    let mut cursor = &mut *config;
    for segment in path.split('.') {
        cursor = cursor
            .as_object_mut()
            .and_then(|map| map.get_mut(segment))
            .ok_or_else(|| Error::config(format!("no config field named {path:?}")))?;
    }
    *cursor = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

/// Load the configuration, apply `--set` and `--seed`, stamp the master seed
/// into the per-module seeds, and validate everything.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut value = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|err| Error::io(path, err))?;
            serde_json::from_str(&text)
                .map_err(|err| Error::Parse(format!("{}: {err}", path.display())))?
        }
        None => serde_json::to_value(RunConfig::default()).expect("default config serializes"),
    };
    for spec in &cli.overrides {
        parse_override(&mut value, spec)?;
    }
    if let Some(seed) = cli.seed {
        value["seed"] = Value::from(seed);
    }
    let mut config: RunConfig = serde_json::from_value(value)
        .map_err(|err| Error::config(format!("run configuration: {err}")))?;
    config.train.seed = config.seed;
    config.dataset.seed = config.seed;
    config.validate()?;
    Ok(config)
}

/// Stream of the master seed that initializes network weights. Dataset
/// styling and rendering use streams 0 and 1, the two training phases use
/// streams 1 and 2 of the (identical) training seed.
const INIT_STREAM: u64 = 3;

fn load_run_dataset(config: &RunConfig) -> Result<LoadedDataset<f32>> {
    let manifest = config.paths.data_dir.join(MANIFEST_NAME);
    if !manifest.exists() {
        return Err(Error::config(format!(
            "no dataset manifest at {}; run `fmn generate` first",
            manifest.display()
        )));
    }
    let data = load_dataset::<f32>(&manifest)?;
    let [c, h, w] = data.manifest.image_shape;
    let net = &config.network;
    if (net.input_channels, net.input_height, net.input_width) != (c, h, w) {
        return Err(Error::config(format!(
            "network expects {}x{}x{} input but the dataset holds {c}x{h}x{w} images",
            net.input_channels, net.input_height, net.input_width
        )));
    }
    Ok(data)
}

fn check_train_classes(config: &RunConfig, data: &LoadedDataset<f32>) -> Result<()> {
    if config.network.num_classes != data.num_train_classes() {
        return Err(Error::config(format!(
            "network.num_classes = {} but the training split holds {} identities",
            config.network.num_classes,
            data.num_train_classes()
        )));
    }
    Ok(())
}

fn stage_summary(metrics: &[EpochMetrics]) -> String {
    match metrics.last() {
        Some(last) => format!(
            "{} epochs, final accuracy {:.4}, final loss {:.6}",
            metrics.len(),
            last.train_accuracy,
            last.mean_ce + last.mean_rank_loss
        ),
        None => "0 epochs".to_string(),
    }
}

fn cmd_generate(config: &RunConfig) -> Result<()> {
    let manifest = generate_synthetic(&config.dataset, &config.paths.data_dir)?;
    println!(
        "generated {} images across {} identities under {}",
        manifest.entries.len(),
        manifest.num_identities,
        config.paths.data_dir.display()
    );
    println!(
        "manifest: {}",
        config.paths.data_dir.join(MANIFEST_NAME).display()
    );
    Ok(())
}

fn stage1_dir(config: &RunConfig) -> PathBuf {
    config.paths.checkpoint_dir.join("stage1")
}

fn stage2_dir(config: &RunConfig) -> PathBuf {
    config.paths.checkpoint_dir.join("stage2")
}

fn write_stage_outputs(
    config: &RunConfig,
    stage: u8,
    params: &NetworkParams<f32>,
    metrics: &[EpochMetrics],
) -> Result<()> {
    let dir = match stage {
        1 => stage1_dir(config),
        _ => stage2_dir(config),
    };
    save_checkpoint(&dir, params)?;
    let log = config
        .paths
        .output_dir
        .join(format!("metrics_stage{stage}.tsv"));
    write_metrics_tsv(&log, metrics)?;
    println!("stage {stage}: {}", stage_summary(metrics));
    println!("  checkpoint: {}", dir.display());
    println!("  metrics: {}", log.display());
    Ok(())
}

fn cmd_train(config: &RunConfig, stage: StageArg) -> Result<()> {
    let data = load_run_dataset(config)?;
    check_train_classes(config, &data)?;
    if stage != StageArg::One && !stage1_dir(config).join("manifest.json").exists() {
        if stage == StageArg::Two {
            return Err(Error::config(format!(
                "stage 2 needs the stage-1 checkpoint at {}; run `fmn train --stage 1` first",
                stage1_dir(config).display()
            )));
        }
    }
    fs::create_dir_all(&config.paths.output_dir)
        .map_err(|err| Error::io(&config.paths.output_dir, err))?;

    let mut params = match stage {
        StageArg::Two => load_checkpoint::<f32>(&stage1_dir(config))?,
        _ => NetworkParams::init(&config.network, &mut Rng::stream(config.seed, INIT_STREAM))?,
    };
    if stage != StageArg::One && params.config != config.network {
        return Err(Error::config(
            "checkpoint architecture does not match the run configuration".to_string(),
        ));
    }

    if stage != StageArg::Two {
        let metrics = train_stage1(&mut params, &data.train.images, &data.train.labels, &config.train)?;
        write_stage_outputs(config, 1, &params, &metrics)?;
    }
    if stage != StageArg::One {
        let metrics = train_stage2(&mut params, &data.train.images, &data.train.labels, &config.train)?;
        write_stage_outputs(config, 2, &params, &metrics)?;
    }
    Ok(())
}

fn write_heatmaps(
    config: &RunConfig,
    params: &NetworkParams<f32>,
    images: &[Tensor<f32>],
    keys: &[String],
) -> Result<()> {
    let dir = config.paths.output_dir.join("heatmaps");
    fs::create_dir_all(&dir).map_err(|err| Error::io(&dir, err))?;
    let (out_h, out_w) = (config.network.input_height, config.network.input_width);
    for (image, key) in images.iter().zip(keys) {
        let snap = mask_snapshot(params, image)?;
        for (suffix, plane) in [
            ("grn", &snap.features),
            ("mask", &snap.mask),
            ("lan", &snap.masked),
        ] {
            let gray = export_heatmap(plane, out_h, out_w);
            crate::dataset::pnm::write_pgm(dir.join(format!("{key}_{suffix}.pgm")), out_w, out_h, &gray)?;
        }
    }
    Ok(())
}

fn cmd_extract(
    config: &RunConfig,
    branch: BranchArg,
    heatmaps: bool,
    checkpoint: Option<PathBuf>,
) -> Result<()> {
    let data = load_run_dataset(config)?;
    let ckpt = checkpoint.unwrap_or_else(|| stage2_dir(config));
    let params = load_checkpoint::<f32>(&ckpt)?;
    let net = &params.config;
    let [c, h, w] = data.manifest.image_shape;
    if (net.input_channels, net.input_height, net.input_width) != (c, h, w) {
        return Err(Error::config(format!(
            "checkpoint expects {}x{}x{} input but the dataset holds {c}x{h}x{w} images",
            net.input_channels, net.input_height, net.input_width
        )));
    }
    fs::create_dir_all(&config.paths.output_dir)
        .map_err(|err| Error::io(&config.paths.output_dir, err))?;

    let branch: DescriptorBranch = branch.into();
    for (name, split) in [("query", &data.query), ("gallery", &data.gallery)] {
        let set = extract_descriptors(
            &params,
            &split.images,
            &split.keys,
            &split.identities,
            &split.cameras,
            branch,
            config.alpha,
            config.train.batch_size,
        )?;
        let path = config
            .paths
            .output_dir
            .join(format!("{name}_{branch}.fmnd"));
        save_descriptors(&path, &set)?;
        println!("{name}: {} descriptors of dim {} -> {}", set.records.len(), set.dim, path.display());
    }

    if heatmaps {
        for split in [&data.query, &data.gallery] {
            write_heatmaps(config, &params, &split.images, &split.keys)?;
        }
        println!(
            "heatmaps: {}",
            config.paths.output_dir.join("heatmaps").display()
        );
    }
    Ok(())
}

fn parse_rerank_triple(values: &[String]) -> Result<ReRankConfig> {
    assert_eq!(values.len(), 3, "clap enforces three values");
    let k1: usize = values[0]
        .parse()
        .map_err(|_| Error::config(format!("rerank k1 {:?} is not an integer", values[0])))?;
    let k2: usize = values[1]
        .parse()
        .map_err(|_| Error::config(format!("rerank k2 {:?} is not an integer", values[1])))?;
    let lambda: f64 = values[2]
        .parse()
        .map_err(|_| Error::config(format!("rerank lambda {:?} is not a number", values[2])))?;
    Ok(ReRankConfig { k1, k2, lambda })
}

fn cmd_evaluate(
    config: &RunConfig,
    queries_path: &Path,
    gallery_path: &Path,
    rerank_args: Option<&[String]>,
) -> Result<()> {
    let queries = load_descriptors(queries_path)?;
    let gallery = load_descriptors(gallery_path)?;
    let rerank_config = rerank_args.map(parse_rerank_triple).transpose()?;
    let (report, ranked) = evaluate(&queries, &gallery, &config.protocol, rerank_config.as_ref())?;

    let json = report.to_json();
    print!("{json}");
    fs::create_dir_all(&config.paths.output_dir)
        .map_err(|err| Error::io(&config.paths.output_dir, err))?;
    let report_path = config.paths.output_dir.join("eval_report.json");
    fs::write(&report_path, &json).map_err(|err| Error::io(&report_path, err))?;

    let ap_path = config.paths.output_dir.join("per_query_ap.tsv");
    let mut ap_file = fs::File::create(&ap_path).map_err(|err| Error::io(&ap_path, err))?;
    write_per_query_ap(&mut ap_file, &report).map_err(|err| Error::io(&ap_path, err))?;

    let ranking_path = config.paths.output_dir.join("ranking.tsv");
    let mut ranking_file =
        fs::File::create(&ranking_path).map_err(|err| Error::io(&ranking_path, err))?;
    write_ranking_lines(&mut ranking_file, &queries, &gallery, &ranked)
        .map_err(|err| Error::io(&ranking_path, err))?;
    Ok(())
}

fn cmd_ablate(config: &RunConfig) -> Result<()> {
    let data = load_run_dataset(config)?;
    check_train_classes(config, &data)?;
    let stage1_path = stage1_dir(config);
    if !stage1_path.join("manifest.json").exists() {
        return Err(Error::config(format!(
            "the ablation needs the stage-1 checkpoint at {}; run `fmn train --stage 1` first",
            stage1_path.display()
        )));
    }
    let stage1 = load_checkpoint::<f32>(&stage1_path)?;
    {
        let mut expected = config.network.clone();
        expected.mask_tap = stage1.config.mask_tap;
        if stage1.config != expected {
            return Err(Error::config(
                "checkpoint architecture does not match the run configuration".to_string(),
            ));
        }
    }
    fs::create_dir_all(&config.paths.output_dir)
        .map_err(|err| Error::io(&config.paths.output_dir, err))?;

    let mut lines = vec!["tap\trank1\tmAP".to_string()];
    for tap in MaskTap::ALL {
        let mut net = config.network.clone();
        net.mask_tap = tap;
        // The global branch's weights are independent of the tap depth, so the
        // trained backbone transfers verbatim; only the mask and the local
        // branch start fresh.
        let mut params = NetworkParams::init(&net, &mut Rng::stream(config.seed, INIT_STREAM))?;
        params.grn = stage1.grn.clone();
        eprintln!("ablation: training local branch at tap {}", tap.name());
        train_stage2(&mut params, &data.train.images, &data.train.labels, &config.train)?;

        let mut sets = Vec::new();
        for split in [&data.query, &data.gallery] {
            sets.push(extract_descriptors(
                &params,
                &split.images,
                &split.keys,
                &split.identities,
                &split.cameras,
                DescriptorBranch::Fused,
                config.alpha,
                config.train.batch_size,
            )?);
        }
        let (report, _) = evaluate(&sets[0], &sets[1], &config.protocol, None)?;
        lines.push(format!(
            "{}\t{:.6}\t{:.6}",
            tap.name(),
            report.cmc[&1],
            report.map_score
        ));
    }

    let table = lines.join("\n") + "\n";
    print!("{table}");
    let path = config.paths.output_dir.join("mask_tap_ablation.tsv");
    fs::write(&path, &table).map_err(|err| Error::io(&path, err))?;
    Ok(())
}

/// Small architecture used by the gradient checker: rich enough to exercise
/// every layer kind, small enough to finite-difference in seconds.
pub fn grad_check_config() -> NetworkConfig {
    NetworkConfig {
        input_channels: 3,
        input_height: 16,
        input_width: 8,
        stem_stride: 1,
        channels: [4, 8, 8, 8],
        blocks_per_stage: 1,
        feature_dim: 8,
        num_classes: 4,
        mask_tap: MaskTap::Res4,
    }
}

fn grad_check_batch<E: crate::tensor::Element>(
    config: &NetworkConfig,
    batch: usize,
    rng: &mut Rng,
) -> Result<Tensor<E>> {
    let numel = batch * config.input_channels * config.input_height * config.input_width;
    let data: Vec<E> = (0..numel).map(|_| E::of(rng.uniform(-1.0, 1.0))).collect();
    Tensor::new(
        &[
            batch,
            config.input_channels,
            config.input_height,
            config.input_width,
        ],
        data,
    )
}

fn run_grad_checks(single_precision: bool, inputs: usize) -> Result<()> {
    let (label, eps, tolerance) = if single_precision {
        ("f32", 1e-5, 1e-3)
    } else {
        ("f64", 1e-5, 1e-5)
    };
    let config = grad_check_config();
    // Batch of four: two samples per normalized channel make the statistics
    // degenerate and the loss locally flat, so four is the smallest honest
    // batch for finite differences.
    let batch = 4;
    let mut failures = Vec::new();
    for index in 0..inputs {
        let mut rng = Rng::stream(0xC0FFEE + index as u64, 7);
        let params = NetworkParams::<f64>::init(&config, &mut rng)?;
        let images = grad_check_batch::<f64>(&config, batch, &mut rng)?;
        let labels: Vec<usize> = (0..batch)
            .map(|i| (i * 3 + index) % config.num_classes)
            .collect();
        let params32 = params.cast::<f32>();
        let images32 = images.cast::<f32>();
        for name in default_check_targets(&params) {
            // A single-precision numeric reference cannot resolve deep
            // gradients to three digits, so the f32 analytic gradient is
            // compared against f64 central differences at the same point.
            let report = if single_precision {
                check_single_precision_gradient(
                    &params32, &name, &images32, &labels, 0.2, eps, 6,
                )?
            } else {
                check_parameter_gradient(&params, &name, &images, &labels, 0.2, eps, 6)?
            };
            let ok = report.max_relative_error < tolerance;
            println!(
                "{label} input {index:2} {name:34} max rel err {:10.3e} {}",
                report.max_relative_error,
                if ok { "ok" } else { "FAIL" }
            );
            if !ok {
                failures.push(format!(
                    "{label} input {index} {name}: {:.3e} >= {tolerance:.0e}",
                    report.max_relative_error
                ));
            }
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "gradient check failed:\n{}",
            failures.join("\n")
        )))
    }
}

fn cmd_grad_check(inputs: usize) -> Result<()> {
    if inputs == 0 {
        return Err(Error::config("grad-check needs at least one input".to_string()));
    }
    run_grad_checks(false, inputs)?;
    run_grad_checks(true, inputs)?;
    println!("all gradients verified");
    Ok(())
}

/// Execute one parsed command line. Errors propagate to the caller so tests
/// can assert on them; the binary maps them to exit codes.
pub fn run(cli: Cli) -> Result<()> {
    let config = resolve_config(&cli)?;
    match &cli.command {
        Command::Generate => cmd_generate(&config),
        Command::Train { stage } => cmd_train(&config, *stage),
        Command::Extract {
            branch,
            heatmaps,
            checkpoint,
        } => cmd_extract(&config, *branch, *heatmaps, checkpoint.clone()),
        Command::Evaluate {
            queries,
            gallery,
            rerank,
        } => cmd_evaluate(&config, queries, gallery, rerank.as_deref()),
        Command::AblateMaskTap => cmd_ablate(&config),
        Command::GradCheck { inputs } => cmd_grad_check(*inputs),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cli_for(args: &[&str]) -> Cli {
        Cli::try_parse_from(args).unwrap()
    }

    #[test]
    fn defaults_round_trip_through_json() {
        let config = RunConfig::default();
        let text = serde_json::to_string(&config).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(config, back);
        assert!(config.validate().is_ok());
    }

    #[test]
    fn partial_config_files_fill_in_defaults() {
        let parsed: RunConfig = serde_json::from_str(r#"{"seed": 9}"#).unwrap();
        assert_eq!(parsed.seed, 9);
        assert_eq!(parsed.network, NetworkConfig::default());
        let err = serde_json::from_str::<RunConfig>(r#"{"sede": 9}"#).unwrap_err();
        assert!(err.to_string().contains("unknown field"));
    }

    #[test]
    fn overrides_rewrite_nested_fields() {
        let cli = cli_for(&[
            "fmn",
            "generate",
            "--set",
            "train.batch_size=8",
            "--set",
            "dataset.num_identities=4",
            "--set",
            "dataset.confusable_pairs=2",
            "--set",
            "network.mask_tap=res3",
        ]);
        let config = resolve_config(&cli).unwrap();
        assert_eq!(config.train.batch_size, 8);
        assert_eq!(config.dataset.num_identities, 4);
        assert_eq!(config.dataset.confusable_pairs, 2);
        assert_eq!(config.network.mask_tap, MaskTap::Res3);
    }

    #[test]
    fn bad_overrides_name_the_problem() {
        let cli = cli_for(&["fmn", "generate", "--set", "no.such.field=1"]);
        match resolve_config(&cli).unwrap_err() {
            Error::Config(msg) => assert!(msg.contains("no.such.field")),
            other => panic!("expected a config error, got {other:?}"),
        }

        let cli = cli_for(&["fmn", "generate", "--set", "train.batch_size"]);
        assert!(resolve_config(&cli).is_err());
    }

    #[test]
    fn the_master_seed_reaches_every_module() {
        let cli = cli_for(&["fmn", "generate", "--seed", "123"]);
        let config = resolve_config(&cli).unwrap();
        assert_eq!(config.seed, 123);
        assert_eq!(config.train.seed, 123);
        assert_eq!(config.dataset.seed, 123);

        // --seed wins over --set seed=...
        let cli = cli_for(&["fmn", "generate", "--set", "seed=5", "--seed", "6"]);
        assert_eq!(resolve_config(&cli).unwrap().seed, 6);
    }

    #[test]
    fn invalid_configs_fail_before_any_work() {
        let cli = cli_for(&["fmn", "generate", "--set", "dataset.images_per_identity=1"]);
        match resolve_config(&cli).unwrap_err() {
            Error::Config(msg) => assert!(msg.contains("images_per_identity")),
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn rerank_triples_parse_and_reject_garbage() {
        let ok = parse_rerank_triple(&["20".into(), "6".into(), "0.3".into()]).unwrap();
        assert_eq!((ok.k1, ok.k2), (20, 6));
        assert!((ok.lambda - 0.3).abs() < 1e-12);
        assert!(parse_rerank_triple(&["x".into(), "6".into(), "0.3".into()]).is_err());
        assert!(parse_rerank_triple(&["20".into(), "6".into(), "w".into()]).is_err());
    }

    #[test]
    fn exit_codes_partition_the_error_kinds() {
        assert_eq!(Error::config("x".to_string()).exit_code(), 1);
        assert_eq!(
            Error::io(Path::new("y"), std::io::Error::from(std::io::ErrorKind::NotFound))
                .exit_code(),
            2
        );
        assert_eq!(Error::Numeric("z".to_string()).exit_code(), 3);
    }
}
