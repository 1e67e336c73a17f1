//! End-to-end experiment orchestration: train everything, run both sweeps,
//! and emit checkpoints, CSVs, and a manifest tying the outputs to the
//! config hash and seed. Given equal config and seed, every byte written is
//! identical across reruns.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{mse_sweep, psnr_sweep, sweep_csv_string, training_csv_string};
use crate::checkpoint::{decoder_bytes, denoiser_bytes, encoder_bytes, hash_bytes};
use crate::config::{ConfigError, ExperimentConfig};
use crate::jscc::train_joint;

/// Where the SNR axis comes from, recorded so curves stay interpretable.
pub const SNR_CONVENTION: &str =
    "snr_db = 10*log10(1/(2*sigma2)) for unit-power complex symbols; sigma2 is the per-component noise variance";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn at<E>(stage: &'static str) -> impl FnOnce(E) -> PipelineError
where
    E: std::error::Error + Send + Sync + 'static,
{
    move |e| PipelineError::Stage {
        stage,
        source: Box::new(e),
    }
}

/// Record of everything a pipeline run wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub snr_convention: String,
    /// Checkpoint file name -> SHA-256 of its bytes.
    pub checkpoints: BTreeMap<String, String>,
    /// CSV files written alongside the checkpoints.
    pub outputs: Vec<String>,
}

#[derive(Debug)]
pub struct PipelineOutcome {
    /// Human-readable stage list (what a dry run prints).
    pub plan: Vec<String>,
    /// Present unless this was a dry run.
    pub manifest: Option<Manifest>,
}

/// The stages a run with this config will execute.
pub fn plan(cfg: &ExperimentConfig, out_dir: &Path) -> Vec<String> {
    vec![
        format!(
            "train: stage1 {} steps, stage2 {} steps, stage3 {} steps (n={}, k={})",
            cfg.train.stage1_steps, cfg.train.stage2.steps, cfg.train.stage3_steps, cfg.n, cfg.k
        ),
        format!(
            "sweep: channel-space MSE at {:?} dB, {} trials per point, {:?} channel",
            cfg.sweep.snr_grid_db, cfg.sweep.mse_trials, cfg.mode
        ),
        format!(
            "sweep: source-space PSNR at {:?} dB, {} trials per point, decoder retuned per point",
            cfg.sweep.snr_grid_db, cfg.sweep.psnr_trials
        ),
        format!(
            "emit: 4 checkpoints, 3 CSVs, manifest.json -> {}",
            out_dir.display()
        ),
    ]
}

/// Execute train -> sweep -> emit. With `dry_run` the filesystem is left
/// untouched and only the plan is returned.
pub fn run_pipeline(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    dry_run: bool,
) -> Result<PipelineOutcome, PipelineError> {
    cfg.validate()?;
    let plan = plan(cfg, out_dir);
    if dry_run {
        return Ok(PipelineOutcome {
            plan,
            manifest: None,
        });
    }
    fs::create_dir_all(out_dir)?;
    let root = cfg.root_stream();
    let src = cfg.build_source(root)?;
    let enc = cfg.build_encoder(root)?;
    let dec = cfg.build_decoder(root)?;
    let model = cfg.build_denoiser(root)?;
    let schedule = cfg.build_schedule().map_err(at("schedule construction"))?;

    let art =
        train_joint(enc, dec, model, &src, &schedule, &cfg.train, root).map_err(at("training"))?;

    let config_hash = cfg.hash();
    let mut checkpoints = BTreeMap::new();
    let ckpts: [(&str, Vec<u8>); 4] = [
        ("encoder.ckpt", encoder_bytes(&art.encoder)),
        ("decoder_stage1.ckpt", decoder_bytes(&art.stage1_decoder)),
        ("decoder_stage3.ckpt", decoder_bytes(&art.decoder)),
        ("denoiser.ckpt", denoiser_bytes(&art.model)),
    ];
    for (name, bytes) in &ckpts {
        fs::write(out_dir.join(name), bytes)?;
        checkpoints.insert(name.to_string(), hash_bytes(bytes));
    }

    let curves = training_csv_string(
        &config_hash,
        &[
            (
                "stage1",
                art.log.stage1.iter().map(|p| (p.step, p.loss)).collect(),
            ),
            (
                "stage2",
                art.log
                    .stage2
                    .reports
                    .iter()
                    .map(|r| (r.step, r.loss))
                    .collect(),
            ),
            (
                "stage3",
                art.log.stage3.iter().map(|p| (p.step, p.loss)).collect(),
            ),
        ],
    );
    fs::write(out_dir.join("training_curves.csv"), curves)?;

    let mse_records = mse_sweep(
        &art.model,
        &art.encoder,
        &src,
        &schedule,
        cfg.mode,
        &cfg.sweep.snr_grid_db,
        cfg.sweep.mse_trials,
        cfg.target_factor,
        root,
    )
    .map_err(at("mse sweep"))?;
    fs::write(
        out_dir.join("mse_sweep.csv"),
        sweep_csv_string(&config_hash, &mse_records),
    )?;

    // the sweeps evaluate under the experiment's channel family, so the
    // per-point decoder retune happens under that family too
    let mut sweep_joint_cfg = cfg.train.clone();
    sweep_joint_cfg.mode = cfg.mode;
    let psnr_records = psnr_sweep(
        &art.encoder,
        &art.stage1_decoder,
        &art.model,
        &src,
        &schedule,
        &sweep_joint_cfg,
        &cfg.sweep.snr_grid_db,
        cfg.sweep.psnr_trials,
        root,
    )
    .map_err(at("psnr sweep"))?;
    fs::write(
        out_dir.join("psnr_sweep.csv"),
        sweep_csv_string(&config_hash, &psnr_records),
    )?;

    let manifest = Manifest {
        config_hash,
        seed: cfg.seed,
        snr_convention: SNR_CONVENTION.to_string(),
        checkpoints,
        outputs: vec![
            "training_curves.csv".into(),
            "mse_sweep.csv".into(),
            "psnr_sweep.csv".into(),
        ],
    };
    let mut manifest_json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    manifest_json.push('\n');
    fs::write(out_dir.join("manifest.json"), manifest_json)?;

    Ok(PipelineOutcome {
        plan,
        manifest: Some(manifest),
    })
}
