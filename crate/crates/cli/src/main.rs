use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use spectral_splat::color::combine_display_bands;
use spectral_splat::config::Config;
use spectral_splat::dataset::{
    load_dataset, perturb_scene, save_dataset, save_image, save_mask, synth_scene, DatasetView,
    SpectralDataset, Split,
};
use spectral_splat::edit::{
    classify_splats, delete_group, finetune_edit, group_mask_render, pixel_labels,
};
use spectral_splat::image::{Image, LabelImage};
use spectral_splat::metrics::evaluate;
use spectral_splat::optim::{train, write_loss_log};
use spectral_splat::raster::render;
use spectral_splat::scene::{checkpoint, SpectralScene};

#[derive(Parser)]
#[command(
    name = "specsplat",
    version,
    about = "Multi-spectral Gaussian splatting: reconstruct, render, segment and edit"
)]
struct Cli {
    /// TOML configuration file; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice (overrides train.seed, synth.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ground-truth scene and its dataset.
    Synth {
        /// Dataset directory to create.
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth checkpoint (default: <out>/scene_gt.spsplat).
        #[arg(long)]
        scene_out: Option<PathBuf>,
        /// Also write a perturbed copy of the ground truth as a training start point.
        #[arg(long)]
        start_out: Option<PathBuf>,
    },
    /// Optimize a scene against a dataset's training views.
    Train {
        #[command(flatten)]
        io: SceneIo,
        /// Dataset directory containing manifest.json.
        #[arg(long)]
        dataset: PathBuf,
        /// Overrides the configured iteration count.
        #[arg(long)]
        iterations: Option<usize>,
        /// Loss log CSV (default: <scene-out>.loss.csv).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Render one band for one view or for every view.
    Render {
        /// Scene checkpoint.
        #[arg(long)]
        scene_in: PathBuf,
        /// Dataset providing the cameras.
        #[arg(long)]
        dataset: PathBuf,
        /// Band name: a centre wavelength such as 540, or full.
        #[arg(long, default_value = "full")]
        band: String,
        /// View name; all views when omitted.
        #[arg(long)]
        view: Option<String>,
        /// Image file (.png or .npy) with --view, otherwise a directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-band PSNR/SSIM table of a scene on a dataset split.
    Eval {
        /// Scene checkpoint.
        #[arg(long)]
        scene_in: PathBuf,
        /// Dataset directory containing manifest.json.
        #[arg(long)]
        dataset: PathBuf,
        /// Dataset split to evaluate.
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Table file: JSON for a .json extension, CSV otherwise. Printed as CSV to stdout too.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify splats and write rendered label maps.
    Segment {
        /// Scene checkpoint.
        #[arg(long)]
        scene_in: PathBuf,
        /// Dataset directory containing manifest.json.
        #[arg(long)]
        dataset: PathBuf,
        /// Band name: a centre wavelength such as 540, or full.
        #[arg(long, default_value = "full")]
        band: String,
        /// View name; all views when omitted.
        #[arg(long)]
        view: Option<String>,
        /// Write a binary mask of this group instead of full label maps.
        #[arg(long)]
        group_id: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Remove every splat classified to a group.
    Delete {
        #[command(flatten)]
        io: SceneIo,
        /// Group (class) id to remove.
        #[arg(long)]
        group_id: usize,
        /// Band name: a centre wavelength such as 540, or full.
        #[arg(long, default_value = "full")]
        band: String,
    },
    /// Fine-tune a scene on an edited dataset.
    Finetune {
        #[command(flatten)]
        io: SceneIo,
        /// The edited dataset.
        #[arg(long)]
        dataset: PathBuf,
        /// The dataset the scene was trained on; cameras and bands must match.
        #[arg(long)]
        original: Option<PathBuf>,
        /// Overrides the configured iteration count.
        #[arg(long)]
        iterations: Option<usize>,
        /// Loss log CSV (default: <scene-out>.loss.csv).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Recombine narrow-band images into a full-spectrum display image.
    Combine {
        /// Dataset directory containing manifest.json.
        #[arg(long)]
        dataset: PathBuf,
        /// Render the narrow bands from this scene instead of using the dataset images.
        #[arg(long)]
        scene_in: Option<PathBuf>,
        /// View name; all views when omitted.
        #[arg(long)]
        view: Option<String>,
        /// Image file with --view, otherwise a directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the effective configuration (defaults, config file and --seed) as TOML.
    Config,
}

#[derive(Args)]
struct SceneIo {
    /// Input scene checkpoint.
    #[arg(long)]
    scene_in: PathBuf,
    /// Output scene checkpoint.
    #[arg(long)]
    scene_out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

fn load_scene(path: &Path) -> Result<SpectralScene> {
    checkpoint::load(path).with_context(|| format!("loading scene {}", path.display()))
}

fn save_scene(scene: &SpectralScene, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    checkpoint::save(scene, path).with_context(|| format!("writing scene {}", path.display()))
}

fn open_dataset(path: &Path) -> Result<SpectralDataset> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn select_views<'a>(ds: &'a SpectralDataset, view: Option<&str>) -> Result<Vec<&'a DatasetView>> {
    match view {
        Some(name) => match ds.views.iter().find(|v| v.name == name) {
            Some(v) => Ok(vec![v]),
            None => bail!("unknown view {name:?}"),
        },
        None => Ok(ds.views.iter().collect()),
    }
}

/// `out` itself for a single named view, otherwise `out/<view>.<ext>`.
fn output_path(out: &Path, view: &DatasetView, single: bool, ext: &str) -> PathBuf {
    if single {
        out.to_path_buf()
    } else {
        out.join(format!("{}.{ext}", view.name))
    }
}

fn loss_log_path(log: Option<PathBuf>, scene_out: &Path) -> PathBuf {
    log.unwrap_or_else(|| {
        let mut p = scene_out.as_os_str().to_owned();
        p.push(".loss.csv");
        PathBuf::from(p)
    })
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
        cfg.synth.seed = seed;
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }

    match cli.command {
        Command::Config => print!("{}", cfg.to_toml()),
        Command::Synth {
            out,
            scene_out,
            start_out,
        } => {
            let (gt, ds) = synth_scene(&cfg.synth, &cfg.raster, &cfg.shading)?;
            save_dataset(&out, &ds)
                .with_context(|| format!("writing dataset {}", out.display()))?;
            save_scene(
                &gt,
                &scene_out.unwrap_or_else(|| out.join("scene_gt.spsplat")),
            )?;
            if let Some(path) = start_out {
                let mut start = perturb_scene(&gt, &cfg.perturb, cfg.synth.seed)?;
                start.full_priors_initialized = false;
                save_scene(&start, &path)?;
            }
            info!("wrote {} views to {}", ds.views.len(), out.display());
        }
        Command::Train {
            io,
            dataset,
            iterations,
            log,
        } => {
            if let Some(n) = iterations {
                cfg.train.iterations = n;
                cfg.train.warmup_iterations = cfg.train.warmup_iterations.min(n.saturating_sub(1));
            }
            let ds = open_dataset(&dataset)?;
            let scene = load_scene(&io.scene_in)?;
            let result = train(scene, &ds, &cfg.train, &cfg.loss, &cfg.raster, &cfg.shading)?;
            save_scene(&result.scene, &io.scene_out)?;
            let log_path = loss_log_path(log, &io.scene_out);
            ensure_parent(&log_path)?;
            write_loss_log(&log_path, &result.log, &ds.band_table)?;
            info!(
                "trained {} iterations; loss log at {}",
                cfg.train.iterations,
                log_path.display()
            );
        }
        Command::Render {
            scene_in,
            dataset,
            band,
            view,
            out,
        } => {
            let scene = load_scene(&scene_in)?;
            let ds = open_dataset(&dataset)?;
            let b = scene.band_table.index_of(&band)?;
            let views = select_views(&ds, view.as_deref())?;
            for v in &views {
                let img = render(&scene, &v.camera, b, &cfg.raster, &cfg.shading)?.color;
                let path = output_path(&out, v, view.is_some(), "png");
                ensure_parent(&path)?;
                save_image(&path, &img)?;
            }
        }
        Command::Eval {
            scene_in,
            dataset,
            split,
            out,
        } => {
            let scene = load_scene(&scene_in)?;
            let ds = open_dataset(&dataset)?;
            let table = evaluate(&scene, &ds, split.into(), &cfg.raster, &cfg.shading)?;
            print!("{}", table.to_csv());
            if let Some(path) = out {
                ensure_parent(&path)?;
                let text = if path.extension().is_some_and(|e| e == "json") {
                    table.to_json()
                } else {
                    table.to_csv()
                };
                std::fs::write(&path, text)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Segment {
            scene_in,
            dataset,
            band,
            view,
            group_id,
            out,
        } => {
            let scene = load_scene(&scene_in)?;
            let ds = open_dataset(&dataset)?;
            let b = scene.band_table.index_of(&band)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut csv = String::from("index,group,confidence\n");
            for c in classify_splats(&scene, b)? {
                csv.push_str(&format!("{},{},{}\n", c.index, c.group, c.confidence));
            }
            let splats = out.join("splats.csv");
            std::fs::write(&splats, csv)
                .with_context(|| format!("writing {}", splats.display()))?;
            let threshold = cfg.loss.alpha_threshold;
            for v in select_views(&ds, view.as_deref())? {
                let (w, h) = (v.camera.width, v.camera.height);
                let labels = match group_id {
                    Some(g) => {
                        let mask = group_mask_render(
                            &scene,
                            &v.camera,
                            b,
                            g,
                            threshold,
                            &cfg.raster,
                            &cfg.shading,
                        )?;
                        LabelImage::from_vec(w, h, mask.into_iter().map(u8::from).collect())?
                    }
                    None => {
                        let r = render(&scene, &v.camera, b, &cfg.raster, &cfg.shading)?;
                        pixel_labels(&r, &scene.classifiers[b], threshold)?
                    }
                };
                save_mask(&out.join(format!("{}.png", v.name)), &labels)?;
            }
        }
        Command::Delete { io, group_id, band } => {
            let scene = load_scene(&io.scene_in)?;
            let b = scene.band_table.index_of(&band)?;
            let (edited, removed) =
                delete_group(&scene, group_id, b, cfg.edit.confidence_threshold)?;
            save_scene(&edited, &io.scene_out)?;
            info!("removed {removed} of {} splats", scene.gaussians.len());
        }
        Command::Finetune {
            io,
            dataset,
            original,
            iterations,
            log,
        } => {
            if let Some(n) = iterations {
                cfg.edit.finetune_iterations = n;
            }
            let edited = open_dataset(&dataset)?;
            let original = original.as_deref().map(open_dataset).transpose()?;
            let scene = load_scene(&io.scene_in)?;
            let result = finetune_edit(
                scene,
                &edited,
                original.as_ref(),
                &cfg.edit,
                &cfg.train,
                &cfg.loss,
                &cfg.raster,
                &cfg.shading,
            )?;
            save_scene(&result.scene, &io.scene_out)?;
            let log_path = loss_log_path(log, &io.scene_out);
            ensure_parent(&log_path)?;
            write_loss_log(&log_path, &result.log, &edited.band_table)?;
        }
        Command::Combine {
            dataset,
            scene_in,
            view,
            out,
        } => {
            let ds = open_dataset(&dataset)?;
            let scene = scene_in.as_deref().map(load_scene).transpose()?;
            let cmf = cfg.color.cmf_table()?;
            let m = cfg.color.combine_matrix()?;
            let narrow = ds.band_table.narrow_indices();
            for v in select_views(&ds, view.as_deref())? {
                let images: Vec<Image> = match &scene {
                    Some(s) => narrow
                        .iter()
                        .map(|&b| {
                            render(s, &v.camera, b, &cfg.raster, &cfg.shading).map(|r| r.color)
                        })
                        .collect::<spectral_splat::Result<_>>()?,
                    None => narrow.iter().map(|&b| v.images[b].clone()).collect(),
                };
                let refs: Vec<&Image> = images.iter().collect();
                let img =
                    combine_display_bands(&refs, &ds.band_table, &cmf, &m, cfg.shading.gamma)?;
                let path = output_path(&out, v, view.is_some(), "png");
                ensure_parent(&path)?;
                save_image(&path, &img)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
