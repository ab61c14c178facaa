//! Command-line pipeline driver.
//!
//! The `foci` binary orchestrates the full experiment as explicit stages:
//! dataset generation, learning-rate probing, the two training stages plus
//! the GRU ablation, the Tikhonov (ECGI) baseline, held-out scoring, panel
//! rendering, and latent-norm diagnostics. Every stage writes its artifacts
//! and an exact config snapshot into its own directory under
//! `$FOCI_OUTPUT_ROOT/<output_dir>/` and never mutates previously written
//! files.
//!
//! Exit codes: 0 success, 1 usage error (bad flags, bad config), 2 runtime
//! failure (missing artifacts, numerical trouble, I/O).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use foci_core::config::RunConfig;
use foci_core::error::{Error, Result};
use foci_core::eval::{detect_foci, latent_norm_curves, localization_metrics, DetectorConfig};
use foci_core::forward::{
    add_observation_noise, build_forward_operator, ecgi_reconstruct, select_lambda,
    ForwardOperator, RegularizerSpec,
};
use foci_core::io::{
    create_new_file, load_dataset, load_gru_checkpoint, load_intervention_checkpoint,
    load_native_checkpoint, load_observations, require_artifact, save_dataset,
    save_gru_checkpoint, save_intervention_checkpoint, save_native_checkpoint,
    save_observations, save_report, ReportRow,
};
use foci_core::models::gru_ablation::GruArch;
use foci_core::models::native::NativeArch;
use foci_core::models::{
    lr_find_gru_baseline, lr_find_intervention, lr_find_native, train_gru_baseline,
    train_intervention, train_native, EpochStats, GruBaselineModel, InterventionModel,
    NativeModel,
};
use foci_core::nn::LrRangeResult;
use foci_core::render::render_panels;
use foci_core::sim::{
    binarize_sequence, generate_dataset, Dataset, DatasetKind, FhnParams, GeneratorConfig,
    VoltageSequence,
};

#[derive(Parser)]
#[command(name = "foci", version, about = "Hidden ectopic-foci reconstruction pipeline")]
struct Cli {
    /// Config file (flat `key = value` lines); defaults apply when absent.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set seed=3`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the native, intervention, and held-out datasets plus
    /// electrode observations.
    Simulate,
    /// Run the learning-rate range test for one training stage.
    LrFind {
        #[arg(long, value_enum, default_value_t = Stage::Native)]
        stage: Stage,
    },
    /// Train the stage-1 native latent-ODE autoencoder.
    TrainNative,
    /// Train the stage-2 intervention filter on top of the frozen stage-1
    /// checkpoint.
    TrainIntv,
    /// Train the GRU-update ablation jointly on native + intervention data.
    TrainGruAblation,
    /// Score the Tikhonov (ECGI) baseline on the held-out set.
    Ecgi {
        /// Pick λ by validation on the intervention training set instead of
        /// using the configured value.
        #[arg(long)]
        select_lambda: bool,
    },
    /// Score every trained model on the held-out set and write the report.
    Eval,
    /// Render ground truth and reconstructions of one held-out episode as a
    /// panel image.
    Render {
        #[arg(long, default_value_t = 0)]
        episode: usize,
        #[arg(long, default_value_t = 10)]
        stride: usize,
    },
    /// Write latent-norm curves over the held-out set and the fraction of
    /// episodes whose intervention norm rises after onset.
    DiagnoseLatents,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Native,
    Intv,
    Gru,
}

impl Stage {
    fn as_str(self) -> &'static str {
        match self {
            Stage::Native => "native",
            Stage::Intv => "intv",
            Stage::Gru => "gru",
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage_ok = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if usage_ok { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    let cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match dispatch(cli.cmd, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::parse_file(path)?,
        None => RunConfig::default(),
    };
    for assignment in &cli.set {
        cfg.apply_override(assignment)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cmd: Cmd, cfg: &RunConfig) -> Result<()> {
    match cmd {
        Cmd::Simulate => simulate(cfg),
        Cmd::LrFind { stage } => lr_find(cfg, stage),
        Cmd::TrainNative => run_train_native(cfg),
        Cmd::TrainIntv => run_train_intv(cfg),
        Cmd::TrainGruAblation => run_train_gru(cfg),
        Cmd::Ecgi { select_lambda } => run_ecgi(cfg, select_lambda),
        Cmd::Eval => run_eval(cfg),
        Cmd::Render { episode, stride } => run_render(cfg, episode, stride),
        Cmd::DiagnoseLatents => diagnose_latents(cfg),
    }
}

// ---------------------------------------------------------------------------
// Paths and shared plumbing.

fn output_root() -> PathBuf {
    std::env::var_os("FOCI_OUTPUT_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn run_dir(cfg: &RunConfig) -> PathBuf {
    output_root().join(&cfg.output_dir)
}

/// Create (or reuse) a stage directory and snapshot the exact config into
/// it. A pre-existing snapshot means the stage already ran into this
/// directory; the append-only discipline turns that into an error.
fn stage_dir(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    let dir = run_dir(cfg).join(name);
    fs::create_dir_all(&dir)?;
    let mut snapshot = create_new_file(&dir.join("config.txt"))?;
    use std::io::Write;
    snapshot.write_all(cfg.to_text().as_bytes())?;
    Ok(dir)
}

fn data_path(cfg: &RunConfig, file: &str) -> PathBuf {
    run_dir(cfg).join("data").join(file)
}

fn operator(cfg: &RunConfig) -> Result<ForwardOperator> {
    build_forward_operator(
        cfg.grid_size,
        cfg.electrode_rows,
        cfg.electrode_cols,
        cfg.electrode_height_mm,
    )
}

fn native_arch(cfg: &RunConfig) -> Result<NativeArch> {
    if cfg.electrode_rows != cfg.electrode_cols {
        return Err(Error::InvalidArgument {
            context: "native_arch",
            detail: format!(
                "the observation encoder needs a square electrode lattice, got {}×{}",
                cfg.electrode_rows, cfg.electrode_cols
            ),
        });
    }
    let arch = NativeArch {
        grid_size: cfg.grid_size,
        obs_side: cfg.electrode_rows,
        k: cfg.k,
        d_z: cfg.d_z,
        rk4_steps: cfg.rk4_steps,
    };
    arch.validate()?;
    Ok(arch)
}

/// Load one dataset split (binarized episodes, metas, observations),
/// checking the split kind.
fn load_split(cfg: &RunConfig, name: &str, want: DatasetKind) -> Result<(Dataset, Vec<Array2<f64>>)> {
    let data = data_path(cfg, &format!("{name}.data"));
    let meta = data_path(cfg, &format!("{name}.meta"));
    let obs = data_path(cfg, &format!("{name}.obs"));
    let hint = "run `foci simulate` first";
    require_artifact(&data, hint)?;
    require_artifact(&meta, hint)?;
    require_artifact(&obs, hint)?;
    let (ds, kind, _) = load_dataset(&data, &meta)?;
    if kind != want {
        return Err(Error::InvalidArgument {
            context: "load_split",
            detail: format!("{} holds a {kind:?} dataset, expected {want:?}", data.display()),
        });
    }
    let (ys, _, _) = load_observations(&obs)?;
    if ys.len() != ds.episodes.len() {
        return Err(Error::InvalidArgument {
            context: "load_split",
            detail: format!(
                "{} observation blocks for {} episodes in split `{name}`",
                ys.len(),
                ds.episodes.len()
            ),
        });
    }
    Ok((ds, ys))
}

fn native_ckpt_path(cfg: &RunConfig) -> PathBuf {
    run_dir(cfg).join("native").join("native.ckpt")
}

fn intv_ckpt_path(cfg: &RunConfig) -> PathBuf {
    run_dir(cfg).join("intv").join("intv.ckpt")
}

fn gru_ckpt_path(cfg: &RunConfig) -> PathBuf {
    run_dir(cfg).join("gru").join("gru.ckpt")
}

fn load_native_model(cfg: &RunConfig) -> Result<NativeModel> {
    let path = native_ckpt_path(cfg);
    require_artifact(&path, "run `foci train-native` first")?;
    let (model, _) = load_native_checkpoint(&path)?;
    Ok(model)
}

fn load_intv_model(cfg: &RunConfig) -> Result<InterventionModel> {
    let native = load_native_model(cfg)?;
    let path = intv_ckpt_path(cfg);
    require_artifact(&path, "run `foci train-intv` first")?;
    let (model, _) = load_intervention_checkpoint(&path, native)?;
    Ok(model)
}

fn load_gru_model(cfg: &RunConfig) -> Result<GruBaselineModel> {
    let path = gru_ckpt_path(cfg);
    require_artifact(&path, "run `foci train-gru-ablation` first")?;
    let (model, _) = load_gru_checkpoint(&path)?;
    Ok(model)
}

fn print_epoch(stats: &EpochStats) {
    println!(
        "epoch {:>3}  train {:.5}  val {:.5}  lr {:.3e}",
        stats.epoch, stats.train_loss, stats.val_loss, stats.lr
    );
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    use std::io::Write;
    let mut f = create_new_file(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// Threshold probability maps at 1/2 into a binary sequence.
fn threshold_probs(x: &Array3<f64>) -> VoltageSequence {
    x.mapv(|v| if v >= 0.5 { 1.0 } else { 0.0 })
}

// ---------------------------------------------------------------------------
// Stages.

fn simulate(cfg: &RunConfig) -> Result<()> {
    let dir = stage_dir(cfg, "data")?;
    let params = FhnParams::for_grid(cfg.grid_size);
    let gen = GeneratorConfig::for_grid(cfg.grid_size, cfg.frames);
    let op = operator(cfg)?;
    let splits: [(&str, DatasetKind, usize, u64); 3] = [
        ("native", DatasetKind::Native, cfg.native_count, 1),
        ("intv", DatasetKind::Intervention, cfg.intervention_count, 2),
        ("heldout", DatasetKind::Intervention, cfg.heldout_count, 3),
    ];
    for (name, kind, count, tag) in splits {
        let seed = cfg.seed ^ (0xDA7A_0000 + tag);
        let ds = generate_dataset(kind, count, &gen, &params, seed)?;
        let mut ys = Vec::with_capacity(ds.episodes.len());
        for (episode, meta) in ds.episodes.iter().zip(&ds.metas) {
            let mut y = foci_core::forward::observe(&op, episode)?;
            let mut rng = ChaCha8Rng::seed_from_u64(meta.seed ^ 0xB0B5_5EED);
            add_observation_noise(&mut y, cfg.obs_noise_sigma, &mut rng);
            ys.push(y);
        }
        save_dataset(&dir.join(format!("{name}.data")), &dir.join(format!("{name}.meta")), &ds, kind, seed)?;
        save_observations(&dir.join(format!("{name}.obs")), &ys, cfg.obs_noise_sigma, seed)?;
        println!(
            "wrote split `{name}`: {count} episodes of {} frames at N={}",
            cfg.frames, cfg.grid_size
        );
    }
    Ok(())
}

fn sweep_to_text(sweep: &LrRangeResult) -> String {
    let mut s = String::new();
    for (lr, loss) in sweep.lrs.iter().zip(&sweep.smoothed) {
        let _ = writeln!(s, "lr {lr:.6e} smoothed {loss:.6}");
    }
    let _ = writeln!(s, "suggested {:.6e}", sweep.suggested);
    s
}

fn lr_find(cfg: &RunConfig, stage: Stage) -> Result<()> {
    let dir = stage_dir(cfg, &format!("lr-{}", stage.as_str()))?;
    let sweep = match stage {
        Stage::Native => {
            let (ds, ys) = load_split(cfg, "native", DatasetKind::Native)?;
            lr_find_native(&ds.episodes, &ys, native_arch(cfg)?, &cfg.native_train_config())?
        }
        Stage::Intv => {
            let (ds, ys) = load_split(cfg, "intv", DatasetKind::Intervention)?;
            let native = load_native_model(cfg)?;
            lr_find_intervention(&ds.episodes, &ys, &operator(cfg)?, native, cfg.d_a, &cfg.intv_train_config())?
        }
        Stage::Gru => {
            let (x, ys) = joint_gru_data(cfg)?;
            let arch = GruArch {
                native: native_arch(cfg)?,
                obs_frames: cfg.obs_frames_gru,
            };
            lr_find_gru_baseline(&x, &ys, arch, &cfg.gru_train_config())?
        }
    };
    write_text(&dir.join("sweep.txt"), &sweep_to_text(&sweep))?;
    println!("suggested learning rate: {:.3e}", sweep.suggested);
    Ok(())
}

fn run_train_native(cfg: &RunConfig) -> Result<()> {
    let (ds, ys) = load_split(cfg, "native", DatasetKind::Native)?;
    let dir = stage_dir(cfg, "native")?;
    let arch = native_arch(cfg)?;
    let (model, log) = train_native(&ds.episodes, &ys, arch, &cfg.native_train_config(), print_epoch)?;
    save_native_checkpoint(&dir.join("native.ckpt"), &model, log.epochs.len() as u64)?;
    write_text(&dir.join("train_log.txt"), &log.to_text())?;
    println!("stage-1 checkpoint written: best epoch {}", log.best_epoch);
    Ok(())
}

fn run_train_intv(cfg: &RunConfig) -> Result<()> {
    let native = load_native_model(cfg)?;
    let (ds, ys) = load_split(cfg, "intv", DatasetKind::Intervention)?;
    let dir = stage_dir(cfg, "intv")?;
    let op = operator(cfg)?;
    let (model, log) = train_intervention(
        &ds.episodes,
        &ys,
        &op,
        native,
        cfg.d_a,
        &cfg.intv_train_config(),
        print_epoch,
    )?;
    save_intervention_checkpoint(&dir.join("intv.ckpt"), &model, log.epochs.len() as u64)?;
    write_text(&dir.join("train_log.txt"), &log.to_text())?;
    println!("stage-2 checkpoint written: best epoch {}", log.best_epoch);
    Ok(())
}

/// Native + intervention training episodes concatenated, for the jointly
/// trained ablation.
fn joint_gru_data(cfg: &RunConfig) -> Result<(Vec<VoltageSequence>, Vec<Array2<f64>>)> {
    let (native_ds, native_ys) = load_split(cfg, "native", DatasetKind::Native)?;
    let (intv_ds, intv_ys) = load_split(cfg, "intv", DatasetKind::Intervention)?;
    let mut x = native_ds.episodes;
    x.extend(intv_ds.episodes);
    let mut ys = native_ys;
    ys.extend(intv_ys);
    Ok((x, ys))
}

fn run_train_gru(cfg: &RunConfig) -> Result<()> {
    let (x, ys) = joint_gru_data(cfg)?;
    let dir = stage_dir(cfg, "gru")?;
    let arch = GruArch {
        native: native_arch(cfg)?,
        obs_frames: cfg.obs_frames_gru,
    };
    let (model, log) = train_gru_baseline(&x, &ys, arch, &cfg.gru_train_config(), print_epoch)?;
    save_gru_checkpoint(&dir.join("gru.ckpt"), &model, log.epochs.len() as u64)?;
    write_text(&dir.join("train_log.txt"), &log.to_text())?;
    println!("ablation checkpoint written: best epoch {}", log.best_epoch);
    Ok(())
}

/// Score binarized reconstructions of every episode in a split.
fn score_recons(
    model_name: &str,
    recons: &[VoltageSequence],
    ds: &Dataset,
) -> Result<ReportRow> {
    let det_cfg = DetectorConfig::for_grid(ds.metas[0].grid_size);
    let detections: Vec<_> = recons.iter().map(|bin| detect_foci(bin, &det_cfg)).collect();
    let report = localization_metrics(&detections, &ds.metas)?;
    Ok(ReportRow {
        model: model_name.to_string(),
        pct_identified: report.pct_identified,
        timestep_mae: report.timestep_mae,
        location_error_mm: report.location_error_mm,
    })
}

fn ecgi_row(cfg: &RunConfig, lambda: f64, ds: &Dataset, ys: &[Array2<f64>]) -> Result<ReportRow> {
    let op = operator(cfg)?;
    let reg = RegularizerSpec::first_order(cfg.grid_size, lambda);
    let mut recons = Vec::with_capacity(ys.len());
    for y in ys {
        let recon = ecgi_reconstruct(y, &op, &reg)?;
        recons.push(binarize_sequence(&recon)?);
    }
    score_recons("ecgi", &recons, ds)
}

fn run_ecgi(cfg: &RunConfig, pick_lambda: bool) -> Result<()> {
    let (ds, ys) = load_split(cfg, "heldout", DatasetKind::Intervention)?;
    let dir = stage_dir(cfg, "ecgi")?;
    let candidates = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1];
    let (lambda, note) = if pick_lambda {
        // Validate on (a slice of) the training split, never on held-out data.
        let (val_ds, val_ys) = load_split(cfg, "intv", DatasetKind::Intervention)?;
        let take = val_ds.episodes.len().min(24);
        let op = operator(cfg)?;
        let (best, scores) = select_lambda(&op, &val_ys[..take], &val_ds.metas[..take], &candidates)?;
        let mut note = String::new();
        for (l, s) in candidates.iter().zip(&scores) {
            let _ = writeln!(note, "candidate {l:.0e} mean_error_mm {s:.3}");
        }
        let _ = writeln!(note, "selected {best:.0e} on {take} validation episodes");
        (best, note)
    } else {
        (cfg.lambda, format!("configured {:.0e}\n", cfg.lambda))
    };
    write_text(&dir.join("lambda.txt"), &note)?;
    let row = ecgi_row(cfg, lambda, &ds, &ys)?;
    save_report(&dir.join("report.txt"), std::slice::from_ref(&row))?;
    println!(
        "ecgi: pct_identified {:.4}  timestep_mae {:.4}  location_error_mm {:.4}",
        row.pct_identified, row.timestep_mae, row.location_error_mm
    );
    Ok(())
}

fn run_eval(cfg: &RunConfig) -> Result<()> {
    let (ds, ys) = load_split(cfg, "heldout", DatasetKind::Intervention)?;
    let dir = stage_dir(cfg, "eval")?;
    let frames = ds.episodes[0].dim().0;
    let op = operator(cfg)?;
    let mut rows = Vec::new();

    rows.push(ecgi_row(cfg, cfg.lambda, &ds, &ys)?);

    let native = load_native_model(cfg)?;
    let mut recons = Vec::with_capacity(ys.len());
    for y in &ys {
        let (x_hat, _) = native.reconstruct(y, frames)?;
        recons.push(threshold_probs(&x_hat));
    }
    rows.push(score_recons("native-ode", &recons, &ds)?);

    let intv = load_intv_model(cfg)?;
    let mut recons = Vec::with_capacity(ys.len());
    for y in &ys {
        let result = intv.filter(y, &op, frames)?;
        recons.push(threshold_probs(&result.x_hat));
    }
    rows.push(score_recons("intervention-filter", &recons, &ds)?);

    if gru_ckpt_path(cfg).is_file() {
        let gru = load_gru_model(cfg)?;
        let mut recons = Vec::with_capacity(ys.len());
        for y in &ys {
            let result = gru.filter(y, frames)?;
            recons.push(threshold_probs(&result.x_hat));
        }
        rows.push(score_recons("gru-filter", &recons, &ds)?);
    } else {
        println!("no ablation checkpoint found; skipping the gru-filter row");
    }

    save_report(&dir.join("report.txt"), &rows)?;
    print!("{}", foci_core::io::report_to_text(&rows));
    Ok(())
}

fn run_render(cfg: &RunConfig, episode: usize, stride: usize) -> Result<()> {
    let (ds, ys) = load_split(cfg, "heldout", DatasetKind::Intervention)?;
    if episode >= ds.episodes.len() {
        return Err(Error::InvalidArgument {
            context: "render",
            detail: format!("episode {episode} out of range (held-out set has {})", ds.episodes.len()),
        });
    }
    let dir = stage_dir(cfg, "render")?;
    let frames = ds.episodes[0].dim().0;
    let op = operator(cfg)?;
    let y = &ys[episode];

    let mut rows: Vec<(&str, VoltageSequence)> = vec![("truth", ds.episodes[episode].clone())];
    let reg = RegularizerSpec::first_order(cfg.grid_size, cfg.lambda);
    rows.push(("ecgi", binarize_sequence(&ecgi_reconstruct(y, &op, &reg)?)?));
    if native_ckpt_path(cfg).is_file() {
        let native = load_native_model(cfg)?;
        rows.push(("native-ode", native.reconstruct(y, frames)?.0));
    }
    if intv_ckpt_path(cfg).is_file() {
        let intv = load_intv_model(cfg)?;
        rows.push(("intervention-filter", intv.filter(y, &op, frames)?.x_hat));
    }
    if gru_ckpt_path(cfg).is_file() {
        let gru = load_gru_model(cfg)?;
        rows.push(("gru-filter", gru.filter(y, frames)?.x_hat));
    }
    let borrowed: Vec<(&str, &VoltageSequence)> = rows.iter().map(|(l, s)| (*l, s)).collect();
    let path = dir.join(format!("episode_{episode}.png"));
    render_panels(&path, &borrowed, stride)?;
    println!("wrote {} ({} rows)", path.display(), borrowed.len());
    Ok(())
}

fn diagnose_latents(cfg: &RunConfig) -> Result<()> {
    let (ds, ys) = load_split(cfg, "heldout", DatasetKind::Intervention)?;
    let dir = stage_dir(cfg, "diagnostics")?;
    let intv = load_intv_model(cfg)?;
    let op = operator(cfg)?;
    let frames = ds.episodes[0].dim().0;

    let mut text = String::new();
    let _ = writeln!(text, "foci-latent-norms v1");
    let _ = writeln!(text, "episodes {}", ds.episodes.len());
    let _ = writeln!(text, "frames {frames}");
    let mut active = 0usize;
    let mut comparable = 0usize;
    for (i, (y, meta)) in ys.iter().zip(&ds.metas).enumerate() {
        let result = intv.filter(y, &op, frames)?;
        let a = result.a.as_ref().expect("intervention filter tracks a");
        let (z_curve, a_curve) = latent_norm_curves(&result.z, Some(a));
        let a_curve = a_curve.expect("a trajectory present");
        let t_f = meta
            .foci_stim
            .as_ref()
            .map(|s| s.onset_frame)
            .ok_or_else(|| Error::InvalidArgument {
                context: "diagnose_latents",
                detail: format!("held-out episode {i} has no focus"),
            })?;
        let _ = writeln!(text, "episode {i} t_f {t_f}");
        let join = |c: &[f64]| c.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(text, "z {}", join(&z_curve));
        let _ = writeln!(text, "a {}", join(&a_curve));
        // Rise statistic: mean over [t_f, t_f+5] vs mean over [0, t_f−5].
        if t_f >= 5 && t_f < frames {
            let early = &a_curve[..=t_f - 5];
            let late = &a_curve[t_f..(t_f + 6).min(frames)];
            let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
            comparable += 1;
            if mean(late) > mean(early) {
                active += 1;
            }
        }
    }
    let fraction = active as f64 / comparable.max(1) as f64;
    let _ = writeln!(text, "rise_fraction {fraction:.4} over {comparable} episodes");
    write_text(&dir.join("norms.txt"), &text)?;
    println!("intervention norm rises after onset in {fraction:.4} of {comparable} episodes");
    Ok(())
}
