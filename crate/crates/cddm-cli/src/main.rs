use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use cddm::bench::{gain_db, mse_sweep, psnr_sweep, sweep_csv_string, sweep_trial};
use cddm::channel::{receive_pipeline, sample_channel, sigma2_from_snr_db};
use cddm::checkpoint::{
    load_decoder, load_denoiser, load_encoder, save_decoder, save_denoiser, save_encoder,
};
use cddm::config::ExperimentConfig;
use cddm::diffusion::train_cddm;
use cddm::jscc::{train_joint, EncodedSource};
use cddm::pipeline::run_pipeline;
use cddm::rng::tags;
use cddm::schedule::select_m;
use cddm::ChannelMode;

#[derive(Parser)]
#[command(
    name = "cddm",
    version,
    about = "Channel-matched denoising diffusion: training, sweeps, and conformance checks"
)]
struct Cli {
    /// JSON experiment config; built-in defaults are used when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Show what would run without writing anything.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo check of the receiver output against its closed form.
    CheckDist,
    /// Stage 1: train encoder and decoder through the raw channel.
    TrainJscc,
    /// Stage 2: train the noise predictor against the frozen encoder.
    TrainCddm,
    /// Denoise one transmission and report both arms.
    Sample {
        /// Operating point of the demo transmission.
        #[arg(long, default_value_t = 10.0)]
        snr_db: f64,
    },
    /// Channel-space MSE sweep over the configured SNR grid.
    SweepMse,
    /// Source-space PSNR sweep, retuning the decoder per grid point.
    SweepPsnr,
    /// Full run: train all stages, both sweeps, manifest.
    Pipeline,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out_dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    cfg.validate().context("validating config")?;

    match cli.command {
        Command::CheckDist => check_dist(&cfg, cli.dry_run),
        Command::TrainJscc => train_jscc(&cfg, &out_dir, cli.dry_run),
        Command::TrainCddm => train_cddm_cmd(&cfg, &out_dir, cli.dry_run),
        Command::Sample { snr_db } => sample_demo(&cfg, &out_dir, snr_db, cli.dry_run),
        Command::SweepMse => sweep_mse_cmd(&cfg, &out_dir, cli.dry_run),
        Command::SweepPsnr => sweep_psnr_cmd(&cfg, &out_dir, cli.dry_run),
        Command::Pipeline => pipeline_cmd(&cfg, &out_dir, cli.dry_run),
    }
}

fn check_dist(cfg: &ExperimentConfig, dry_run: bool) -> Result<()> {
    let modes = [ChannelMode::Awgn, ChannelMode::Rayleigh];
    if dry_run {
        println!(
            "would check {} configurations: modes {:?} x sigma2 {:?}, k={}, {} trials each",
            modes.len() * cfg.dist_check.sigma2_grid.len(),
            modes,
            cfg.dist_check.sigma2_grid,
            cfg.k,
            cfg.dist_check.trials
        );
        return Ok(());
    }
    let mut all_pass = true;
    for mode in modes {
        for &sigma2 in &cfg.dist_check.sigma2_grid {
            let report = cddm::check_distribution(
                mode,
                cfg.k,
                sigma2,
                cfg.dist_check.trials,
                cfg.dist_check.noise_scale,
                cfg.root_stream(),
            )?;
            println!(
                "mode={mode} sigma2={sigma2} trials={} mean_err={:.4e} (tol {:.0e}) var_err={:.4e} (tol {:.0e}) {}",
                report.trials,
                report.max_mean_rel_err,
                report.mean_tolerance,
                report.max_var_rel_err,
                report.var_tolerance,
                if report.pass { "pass" } else { "FAIL" }
            );
            all_pass &= report.pass;
        }
    }
    if !all_pass {
        bail!("distribution check failed");
    }
    Ok(())
}

fn train_jscc(cfg: &ExperimentConfig, out_dir: &Path, dry_run: bool) -> Result<()> {
    if dry_run {
        println!(
            "would train stage 1 ({} steps, batch {}) and write encoder.ckpt, decoder_stage1.ckpt to {}",
            cfg.train.stage1_steps,
            cfg.train.stage1_batch,
            out_dir.display()
        );
        return Ok(());
    }
    fs::create_dir_all(out_dir)?;
    let root = cfg.root_stream();
    let src = cfg.build_source(root)?;
    let enc = cfg.build_encoder(root)?;
    let dec = cfg.build_decoder(root)?;
    let model = cfg.build_denoiser(root)?;
    let schedule = cfg.build_schedule()?;
    let mut stage1_only = cfg.train.clone();
    stage1_only.stage2.steps = 0;
    stage1_only.stage3_steps = 0;
    let art = train_joint(enc, dec, model, &src, &schedule, &stage1_only, root)
        .context("stage 1 training")?;
    save_encoder(&out_dir.join("encoder.ckpt"), &art.encoder)?;
    save_decoder(&out_dir.join("decoder_stage1.ckpt"), &art.stage1_decoder)?;
    if let Some(last) = art.log.stage1.last() {
        println!(
            "stage 1 done: {} steps, final loss {:.6}",
            cfg.train.stage1_steps, last.loss
        );
    }
    println!("wrote {}", out_dir.join("encoder.ckpt").display());
    println!("wrote {}", out_dir.join("decoder_stage1.ckpt").display());
    Ok(())
}

fn load_encoder_required(out_dir: &Path) -> Result<cddm::JsccEncoder> {
    let path = out_dir.join("encoder.ckpt");
    load_encoder(&path).with_context(|| {
        format!(
            "missing or unreadable encoder checkpoint {}; run `cddm train-jscc` first",
            path.display()
        )
    })
}

fn train_cddm_cmd(cfg: &ExperimentConfig, out_dir: &Path, dry_run: bool) -> Result<()> {
    if dry_run {
        println!(
            "would train the noise predictor ({} steps, batch {}) against {}/encoder.ckpt and write denoiser.ckpt",
            cfg.train.stage2.steps,
            cfg.train.stage2.batch_size,
            out_dir.display()
        );
        return Ok(());
    }
    fs::create_dir_all(out_dir)?;
    let root = cfg.root_stream();
    let enc = load_encoder_required(out_dir)?;
    let src = cfg.build_source(root)?;
    let schedule = cfg.build_schedule()?;
    let model = cfg.build_denoiser(root)?;
    let (model, log) = train_cddm(
        model,
        &EncodedSource {
            enc: &enc,
            src: &src,
        },
        &schedule,
        &cfg.train.stage2,
        root.derive(tags::STAGE2),
    )
    .context("noise predictor training")?;
    save_denoiser(&out_dir.join("denoiser.ckpt"), &model)?;
    if let Some(ma) = log.moving_average(100).last() {
        println!(
            "stage 2 done: {} steps, trailing loss {:.6}",
            cfg.train.stage2.steps, ma
        );
    }
    println!("wrote {}", out_dir.join("denoiser.ckpt").display());
    Ok(())
}

fn sample_demo(cfg: &ExperimentConfig, out_dir: &Path, snr_db: f64, dry_run: bool) -> Result<()> {
    if dry_run {
        println!(
            "would denoise one transmission at {snr_db} dB using checkpoints from {}",
            out_dir.display()
        );
        return Ok(());
    }
    let root = cfg.root_stream();
    let enc = load_encoder_required(out_dir)?;
    let model = load_denoiser(&out_dir.join("denoiser.ckpt")).with_context(|| {
        format!(
            "missing or unreadable denoiser checkpoint in {}; run `cddm train-cddm` first",
            out_dir.display()
        )
    })?;
    let src = cfg.build_source(root)?;
    let schedule = cfg.build_schedule()?;
    let sigma2 = sigma2_from_snr_db(snr_db);
    let m = select_m(&schedule, sigma2, cfg.target_factor)?;
    let mut rng = root.derive(tags::SAMPLE_DEMO).rng();
    let s_vec = src.sample(&mut rng);
    let x = enc.encode(&s_vec, &mut rng)?;
    let ch = sample_channel(cfg.mode, cfg.k, sigma2, &mut rng)?;
    let y_r = receive_pipeline(&x, &ch, &mut rng)?;
    let (with, without) = sweep_trial(&x, &ch, &schedule, m, &model, &y_r)?;
    let dim = (2 * cfg.k) as f64;
    let (mse_with, mse_without) = (with / dim, without / dim);
    println!("snr_db={snr_db} sigma2={sigma2:.6} mode={} m={m}", cfg.mode);
    println!("mse_without={mse_without:.6e}");
    println!("mse_with={mse_with:.6e}");
    println!("gain_db={:.3}", gain_db(mse_without, mse_with));
    Ok(())
}

fn sweep_mse_cmd(cfg: &ExperimentConfig, out_dir: &Path, dry_run: bool) -> Result<()> {
    if dry_run {
        println!(
            "would sweep channel-space MSE at {:?} dB ({} trials/point) and write mse_sweep.csv",
            cfg.sweep.snr_grid_db, cfg.sweep.mse_trials
        );
        return Ok(());
    }
    fs::create_dir_all(out_dir)?;
    let root = cfg.root_stream();
    let enc = load_encoder_required(out_dir)?;
    let model = load_denoiser(&out_dir.join("denoiser.ckpt")).with_context(|| {
        format!(
            "missing or unreadable denoiser checkpoint in {}; run `cddm train-cddm` first",
            out_dir.display()
        )
    })?;
    let src = cfg.build_source(root)?;
    let schedule = cfg.build_schedule()?;
    let records = mse_sweep(
        &model,
        &enc,
        &src,
        &schedule,
        cfg.mode,
        &cfg.sweep.snr_grid_db,
        cfg.sweep.mse_trials,
        cfg.target_factor,
        root,
    )?;
    for r in &records {
        println!(
            "snr_db={} m={} mse_with={:.6e} mse_without={:.6e} gain_db={:.3}",
            r.snr_db,
            r.m,
            r.mse_with_cddm,
            r.mse_without_cddm,
            gain_db(r.mse_without_cddm, r.mse_with_cddm)
        );
    }
    let path = out_dir.join("mse_sweep.csv");
    fs::write(&path, sweep_csv_string(&cfg.hash(), &records))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn sweep_psnr_cmd(cfg: &ExperimentConfig, out_dir: &Path, dry_run: bool) -> Result<()> {
    if dry_run {
        println!(
            "would sweep source-space PSNR at {:?} dB ({} trials/point, decoder retuned per point) and write psnr_sweep.csv",
            cfg.sweep.snr_grid_db, cfg.sweep.psnr_trials
        );
        return Ok(());
    }
    fs::create_dir_all(out_dir)?;
    let root = cfg.root_stream();
    let enc = load_encoder_required(out_dir)?;
    let dec1 = load_decoder(&out_dir.join("decoder_stage1.ckpt")).with_context(|| {
        format!(
            "missing or unreadable stage-1 decoder checkpoint in {}; run `cddm train-jscc` first",
            out_dir.display()
        )
    })?;
    let model = load_denoiser(&out_dir.join("denoiser.ckpt")).with_context(|| {
        format!(
            "missing or unreadable denoiser checkpoint in {}; run `cddm train-cddm` first",
            out_dir.display()
        )
    })?;
    let src = cfg.build_source(root)?;
    let schedule = cfg.build_schedule()?;
    let mut joint = cfg.train.clone();
    joint.mode = cfg.mode;
    let records = psnr_sweep(
        &enc,
        &dec1,
        &model,
        &src,
        &schedule,
        &joint,
        &cfg.sweep.snr_grid_db,
        cfg.sweep.psnr_trials,
        root,
    )?;
    for r in &records {
        let show = |v: Option<f64>| v.map_or("inf".to_string(), |p| format!("{p:.3}"));
        println!(
            "snr_db={} m={} psnr_with={} psnr_without={}",
            r.snr_db,
            r.m,
            show(r.psnr_with),
            show(r.psnr_without)
        );
    }
    let path = out_dir.join("psnr_sweep.csv");
    fs::write(&path, sweep_csv_string(&cfg.hash(), &records))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn pipeline_cmd(cfg: &ExperimentConfig, out_dir: &Path, dry_run: bool) -> Result<()> {
    let outcome = run_pipeline(cfg, out_dir, dry_run)?;
    for line in &outcome.plan {
        println!("{line}");
    }
    if let Some(manifest) = outcome.manifest {
        for name in manifest.checkpoints.keys() {
            println!("wrote {}", out_dir.join(name).display());
        }
        for name in &manifest.outputs {
            println!("wrote {}", out_dir.join(name).display());
        }
        println!("wrote {}", out_dir.join("manifest.json").display());
    } else {
        println!("dry run: nothing written");
    }
    Ok(())
}
