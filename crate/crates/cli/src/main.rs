//! `nerdf`: train a teacher, distill a student, render, benchmark, evaluate, serve.

mod config;
mod error;
mod pose;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use nerdf_core::checkpoint::{Checkpoint, TeacherModel};
use nerdf_core::distill::probe::mean;
use nerdf_core::distill::{distill, teacher_image, DistillSetup, ProbeSet, Progress};
use nerdf_core::eval::image::{write_image, Image};
use nerdf_core::eval::{benchmark_render, benchmark_teacher, psnr, TimingBreakdown};
use nerdf_core::field::{render_teacher_image, train_micro_nerf, TeacherField};
use nerdf_core::geometry::{CameraPose, DepthRange};
use nerdf_core::nerdf::render_image;
use nerdf_core::scenes::SceneConfig;

use config::{resolve, Overrides, Resolved};
use error::{CliError, CliResult};
use pose::{parse_pose, FrameSize};

#[derive(Parser)]
#[command(name = "nerdf", version, about = "Neural radiance distribution fields at desk scale")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "NERDF_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a MicroNeRF teacher to an analytic scene.
    TrainTeacher {
        #[arg(long)]
        scene: Option<String>,
        /// Checkpoint path; config echo and metrics go next to it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<u64>,
    },
    /// Distill a ray-space student from a teacher checkpoint or the analytic scene.
    Distill {
        /// Teacher checkpoint, or `analytic`.
        #[arg(long)]
        teacher: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scene: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        batch: Option<usize>,
        /// Drop the density constraint.
        #[arg(long)]
        no_vdc: bool,
        /// Train on the fixed training cameras only.
        #[arg(long)]
        no_ovs: bool,
        /// Colour-head light-field baseline instead of distributions.
        #[arg(long)]
        nelf_baseline: bool,
        /// Frequencies per distribution.
        #[arg(long = "K", id = "K")]
        k: Option<usize>,
    },
    /// Render one image.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        pose: String,
        /// `.png` or `.ppm`.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        frame: FrameArgs,
        /// Print the per-stage timing record.
        #[arg(long)]
        breakdown: bool,
    },
    /// Median timing over repeated renders; prints one row.
    Bench {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        pose: String,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        #[command(flatten)]
        frame: FrameArgs,
    },
    /// PSNR against a teacher over the scene's held-out cameras.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: String,
        /// Reference: teacher checkpoint or `analytic`.
        #[arg(long, default_value = "analytic")]
        teacher: String,
        /// Samples per ray for reference renders (default: the teacher's own,
        /// 64 for the analytic field).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// WebSocket render service.
    Serve {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 1024)]
        max_size: u32,
    },
}

#[derive(Args, Clone)]
struct FrameArgs {
    /// Scene providing cameras and default intrinsics.
    #[arg(long, default_value = "sphere")]
    scene: String,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long)]
    fov: Option<f64>,
}

impl FrameArgs {
    fn pose(&self, spec: &str) -> CliResult<CameraPose> {
        let scene = SceneConfig::resolve(&self.scene)?;
        let size = FrameSize {
            width: self.width,
            height: self.height,
            fov_deg: self.fov,
        };
        parse_pose(spec, &scene, size)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::TrainTeacher {
            scene,
            out,
            config,
            seed,
            iterations,
        } => {
            let flags = Overrides {
                scene,
                seed,
                iterations,
                ..Overrides::default()
            };
            train_teacher(&out, config.as_deref(), &flags)
        }
        Command::Distill {
            teacher,
            out,
            scene,
            config,
            seed,
            iterations,
            batch,
            no_vdc,
            no_ovs,
            nelf_baseline,
            k,
        } => {
            let flags = Overrides {
                scene,
                seed,
                k,
                iterations,
                batch,
                no_vdc,
                no_ovs,
                nelf_baseline,
            };
            run_distill(&teacher, &out, config.as_deref(), &flags)
        }
        Command::Render {
            ckpt,
            pose,
            out,
            frame,
            breakdown,
        } => render(&ckpt, &frame.pose(&pose)?, &out, breakdown),
        Command::Bench {
            ckpt,
            pose,
            reps,
            frame,
        } => bench(&ckpt, &frame.pose(&pose)?, reps),
        Command::Eval {
            ckpt,
            scene,
            teacher,
            samples,
        } => eval(&ckpt, &scene, &teacher, samples),
        Command::Serve {
            ckpt,
            port,
            host,
            max_size,
        } => serve(&ckpt, &host, port, max_size),
    }
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Checkpoint::load(path).map_err(|e| match e {
        // an unreadable input is a data problem, not an environment one
        nerdf_core::NerdfError::Io { .. } => CliError::Data(e.to_string()),
        other => other.into(),
    })
}

/// Output directory, config echo and metrics log for a checkpoint path.
struct RunFiles {
    ckpt: PathBuf,
    metrics: BufWriter<File>,
}

fn prepare_outputs(out: &Path, resolved: &Resolved) -> CliResult<RunFiles> {
    let dir = resolved.run.out_dir.clone();
    let stem = out
        .file_stem()
        .ok_or_else(|| CliError::Config(format!("--out {} has no file name", out.display())))?
        .to_string_lossy()
        .into_owned();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let echo = dir.join(format!("{stem}.config.toml"));
    std::fs::write(&echo, resolved.run.to_toml())
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", echo.display())))?;
    let metrics_path = dir.join(format!("{stem}.metrics.jsonl"));
    let metrics = File::create(&metrics_path)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", metrics_path.display())))?;
    Ok(RunFiles {
        ckpt: out.to_path_buf(),
        metrics: BufWriter::new(metrics),
    })
}

fn out_dir(out: &Path) -> PathBuf {
    match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn log_line(w: &mut impl Write, value: &impl serde::Serialize) -> CliResult<()> {
    let line = serde_json::to_string(value).expect("metrics serialize");
    writeln!(w, "{line}").map_err(|e| CliError::Runtime(format!("metrics log: {e}")))
}

fn train_teacher(out: &Path, config: Option<&Path>, flags: &Overrides) -> CliResult<()> {
    let resolved = resolve(config, flags, &out_dir(out))?;
    let scene = &resolved.scene;
    let analytic = scene.analytic()?;
    let poses = scene.training_poses()?;
    let depth = scene.depth_range()?;
    let mut files = prepare_outputs(out, &resolved)?;
    let mut log_err = None;
    let (field, history) = train_micro_nerf(
        &analytic,
        &poses,
        depth,
        scene.camera.coord_scale,
        &resolved.run.teacher,
        |m| {
            if log_err.is_none() {
                log_err = log_line(&mut files.metrics, &m).err();
            }
        },
    )?;
    if let Some(e) = log_err {
        return Err(e);
    }
    files.metrics.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    let ckpt = Checkpoint::Teacher(TeacherModel {
        field,
        depth,
        samples: resolved.run.teacher.samples,
    });
    let hash = ckpt.save(&files.ckpt)?;
    let last = history.last().map(|m| m.loss).unwrap_or(f64::NAN);
    println!("teacher {} sha256 {hash} final loss {last:.3e}", files.ckpt.display());
    Ok(())
}

fn teacher_from(spec: &str, scene: &SceneConfig) -> CliResult<TeacherField> {
    if spec == "analytic" {
        return Ok(TeacherField::Analytic(scene.analytic()?));
    }
    let path = Path::new(spec);
    let teacher = load_checkpoint(path)?.into_teacher(path)?;
    let depth = scene.depth_range()?;
    if teacher.depth != depth {
        return Err(CliError::Data(format!(
            "{spec}: teacher was trained on depth range {:?}, scene uses {:?}",
            teacher.depth, depth
        )));
    }
    Ok(TeacherField::Micro(teacher.field))
}

fn run_distill(teacher: &str, out: &Path, config: Option<&Path>, flags: &Overrides) -> CliResult<()> {
    let resolved = resolve(config, flags, &out_dir(out))?;
    let scene = &resolved.scene;
    let teacher = teacher_from(teacher, scene)?;
    let region = scene.region()?;
    let depth = scene.depth_range()?;
    let run = &resolved.run;
    let probe = ProbeSet::new(&teacher, &scene.held_out_poses()?, depth, run.render.s_render, 1024, 99)?;
    let setup = DistillSetup {
        teacher: &teacher,
        region: &region,
        depth,
        encoding: run.encoding,
        render: run.render,
        probe: &probe,
    };
    let mut files = prepare_outputs(out, &resolved)?;
    let stem = out.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    let model = distill(&setup, &run.distill, |progress| match progress {
        Progress::Metrics(m) => {
            log_line(&mut files.metrics, m).map_err(|e| nerdf_core::NerdfError::Config(e.to_string()))?;
            eprintln!(
                "it {:>7}  loss {:.3e} (render {:.3e}, density {:.3e})  probe {:.2} dB",
                m.iteration, m.total, m.render_loss, m.vdc_loss, m.psnr_probe
            );
            Ok(())
        }
        Progress::Checkpoint { iteration, model } => {
            let path = run.out_dir.join(format!("{stem}.it{iteration}.ckpt"));
            Checkpoint::Student(model.clone()).save(&path).map(|_| ())
        }
    })?;
    files.metrics.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    let hash = Checkpoint::Student(model).save(&files.ckpt)?;
    println!("student {} sha256 {hash}", files.ckpt.display());
    Ok(())
}

fn render_checkpoint(ckpt: &Checkpoint, pose: &CameraPose) -> CliResult<(Image, TimingBreakdown)> {
    Ok(match ckpt {
        Checkpoint::Student(m) => render_image(m, pose)?,
        Checkpoint::Teacher(t) => render_teacher_image(&TeacherField::Micro(t.field.clone()), pose, t.depth, t.samples)?,
    })
}

fn render(ckpt: &Path, pose: &CameraPose, out: &Path, breakdown: bool) -> CliResult<()> {
    let model = load_checkpoint(ckpt)?;
    let (img, timing) = render_checkpoint(&model, pose)?;
    write_image(out, &img)?;
    if breakdown {
        println!("{}", timing.to_record());
    }
    Ok(())
}

fn bench(ckpt: &Path, pose: &CameraPose, reps: usize) -> CliResult<()> {
    let timing = match load_checkpoint(ckpt)? {
        Checkpoint::Student(m) => benchmark_render(&m, pose, reps)?,
        Checkpoint::Teacher(t) => benchmark_teacher(&TeacherField::Micro(t.field), pose, t.depth, t.samples, reps)?,
    };
    println!("{}", timing.to_record());
    Ok(())
}

fn eval(ckpt: &Path, scene: &str, teacher: &str, samples: Option<usize>) -> CliResult<()> {
    let scene = SceneConfig::resolve(scene)?;
    let model = load_checkpoint(ckpt)?;
    // any checkpoint may be the reference; a student is rendered as-is
    let reference = if teacher == "analytic" {
        let field = TeacherField::Analytic(scene.analytic()?);
        Reference::Field(field, scene.depth_range()?, samples.unwrap_or(64))
    } else {
        match load_checkpoint(Path::new(teacher))? {
            Checkpoint::Teacher(t) => Reference::Field(TeacherField::Micro(t.field), t.depth, samples.unwrap_or(t.samples)),
            student => Reference::Student(student),
        }
    };
    let mut scores = Vec::new();
    for (i, pose) in scene.held_out_poses()?.iter().enumerate() {
        let (img, _) = render_checkpoint(&model, pose)?;
        let truth = match &reference {
            Reference::Field(field, depth, s) => teacher_image(field, pose, *depth, *s)?,
            Reference::Student(c) => render_checkpoint(c, pose)?.0,
        };
        let p = psnr(&img, &truth)?;
        println!("view {i} psnr {p:.3}");
        scores.push(p);
    }
    println!("mean psnr {:.3}", mean(&scores));
    Ok(())
}

enum Reference {
    Field(TeacherField, DepthRange, usize),
    Student(Checkpoint),
}

fn serve(ckpt: &Path, host: &str, port: u16, max_size: u32) -> CliResult<()> {
    let model = load_checkpoint(ckpt)?;
    let hash = model.hash();
    let model = model.into_student(ckpt)?;
    let addr = format!("{host}:{port}")
        .parse()
        .map_err(|e| CliError::Config(format!("--host/--port: {e}")))?;
    let state = Arc::new(nerdf_serve::ServiceState {
        model,
        checkpoint_hash: hash,
        limits: nerdf_serve::Limits {
            max_width: max_size,
            max_height: max_size,
        },
    });
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(format!("runtime: {e}")))?;
    runtime.block_on(async {
        let listener = nerdf_serve::bind(addr).await?;
        eprintln!("serving on ws://{}/render", listener.local_addr().map_err(nerdf_serve::ServeError::Io)?);
        nerdf_serve::run(listener, state).await
    })?;
    Ok(())
}
