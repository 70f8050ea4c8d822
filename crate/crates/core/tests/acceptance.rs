//! Acceptance gate. Runs every primary criterion at its stated tolerance and
//! prints one PASS/FAIL line per criterion; exits non-zero if any fails.
//!
//! Run with `cargo test --release -p nerdf-core --test acceptance`.
//! `NERDF_ACCEPTANCE_ONLY=1,2,9` restricts the run to selected criteria;
//! `NERDF_ACCEPTANCE_ITERATIONS` / `NERDF_ACCEPTANCE_BATCH` shrink the training
//! budget for smoke runs (the override is echoed in the report).

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nerdf_core::checkpoint::{Checkpoint, TeacherModel};
use nerdf_core::distill::probe::mean;
use nerdf_core::distill::train::{iteration_rng, loss_and_grads, loss_value, Targets};
use nerdf_core::distill::{distill, held_out_psnr, ovs_batch, DistillConfig, DistillSetup, ProbeSet};
use nerdf_core::distill::loss::normalize_rows;
use nerdf_core::encoding::EncodingConfig;
use nerdf_core::eval::image::{encode_image, ImageFormat};
use nerdf_core::eval::{benchmark_render, benchmark_teacher};
use nerdf_core::field::{render_teacher_image, teacher_render_ray, train_micro_nerf, MicroNerf, TeacherField, TeacherTrainConfig};
use nerdf_core::geometry::{ray_from_pixel, CameraPose, Intrinsics, Vec3};
use nerdf_core::nerdf::fourier::{basis_matrix, decode_distribution, local_midpoints, FourierCoeffs};
use nerdf_core::nerdf::model::{render_image, Head, RayModel, RenderConfig};
use nerdf_core::nn::{MlpParams, MlpSpec};
use nerdf_core::scenes::{SceneConfig, BUILTIN};

const SEEDS: [u64; 3] = [0, 1, 2];
const K_SWEEP: [usize; 5] = [4, 8, 12, 16, 24];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn env_num<T: std::str::FromStr>(key: &str) -> Option<T> {
    std::env::var(key).ok().and_then(|v| v.parse().ok())
}

fn desk_encoding(scene: &SceneConfig) -> EncodingConfig {
    EncodingConfig {
        coord_scale: scene.camera.coord_scale,
        ..EncodingConfig::default()
    }
}

fn random_ray(scene: &SceneConfig, poses: &[CameraPose], rng: &mut ChaCha8Rng) -> nerdf_core::geometry::Ray {
    let pose = &poses[rng.random_range(0..poses.len())];
    let px = rng.random_range(0.0..pose.intrinsics.width as f64);
    let py = rng.random_range(0.0..pose.intrinsics.height as f64);
    ray_from_pixel(pose, px, py, scene.depth_range().unwrap()).unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst_all: f64 = 0.0;
    let mut parts = Vec::new();
    for (name, _) in BUILTIN {
        let scene = SceneConfig::builtin(name).unwrap();
        let field = TeacherField::Analytic(scene.analytic().unwrap());
        let mut poses = scene.training_poses().unwrap();
        poses.extend(scene.held_out_poses().unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let ray = random_ray(&scene, &poses, &mut rng);
            let a = teacher_render_ray(&field, &ray, 64).unwrap();
            let b = teacher_render_ray(&field, &ray, 4096).unwrap();
            for c in 0..3 {
                worst = worst.max((a.rgb[c] - b.rgb[c]).abs());
            }
        }
        worst_all = worst_all.max(worst);
        parts.push(format!("{name} {worst:.2e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_all <= 1e-2 && secs <= 60.0,
        format!("max |s64 - s4096| per channel: {} (tol 1e-2); {secs:.1}s (limit 60s)", parts.join(", ")),
    )
}

fn criterion_2() -> Outcome {
    let period = 4.0;
    let ts = local_midpoints(period, 4096);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for k in [4usize, 12, 24] {
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
        // four band-limited channels, frequencies 0..k-1 cycles per period
        let targets: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let a: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
                let b: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
                ts.iter()
                    .map(|t| {
                        (0..k)
                            .map(|f| {
                                let w = 2.0 * std::f64::consts::PI * f as f64 * t / period;
                                a[f] * w.cos() + b[f] * w.sin()
                            })
                            .sum()
                    })
                    .collect()
            })
            .collect();
        let basis = basis_matrix::<f64>(&ts, k, period);
        let m = DMatrix::from_fn(ts.len(), 2 * k, |r, c| basis[[r, c]]);
        let svd = m.svd(true, true);
        let mut channels = Vec::with_capacity(8 * k);
        for target in &targets {
            let w = svd.solve(&DVector::from_vec(target.clone()), 1e-12).unwrap();
            channels.extend(w.iter().copied());
        }
        let coeffs = FourierCoeffs::from_channels(&channels, k, period).unwrap();
        let d = decode_distribution(&coeffs, &ts);
        let mut err: f64 = 0.0;
        for (i, _) in ts.iter().enumerate() {
            err = err.max((d.raw_sigma[i] - targets[0][i]).abs());
            for c in 0..3 {
                let expect = 1.0 / (1.0 + (-targets[c + 1][i]).exp());
                err = err.max((d.rgb[i][c] - expect).abs());
            }
        }
        worst = worst.max(err);
        parts.push(format!("K={k} {err:.2e}"));
    }
    outcome(worst <= 1e-6, format!("max reconstruction error: {} (tol 1e-6)", parts.join(", ")))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let scene = SceneConfig::builtin("triplet").unwrap();
    let teacher = TeacherField::Analytic(scene.analytic().unwrap());
    let enc = EncodingConfig {
        pe_frequencies: 3,
        sh_degree: 2,
        n_points: 3,
        include_raw: true,
        coord_scale: scene.camera.coord_scale,
    };
    let rc = RenderConfig { s_render: 16, k: 3 };
    let depth = scene.depth_range().unwrap();
    let cfg = DistillConfig {
        batch: 6,
        ..DistillConfig::default()
    };
    let batch = ovs_batch(&teacher, &scene.region().unwrap(), depth, &cfg, rc.s_render, &mut iteration_rng(3, 0)).unwrap();
    let mut model: RayModel<f64> =
        RayModel::new(3, 16, enc, rc, Head::Distribution, depth, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let x = model.encode(&batch.rays).unwrap();
    let rgb = batch.rgb.mapv(|v| v as f64);
    let dens = normalize_rows(batch.sigma.mapv(|v| v as f64).view());
    let targets = Targets {
        rgb: rgb.view(),
        density: Some(dens.view()),
        lambda: 0.1,
    };
    let (metrics, grads) = loss_and_grads(&model, x.view(), &targets).unwrap();
    let analytic: Vec<f64> = grads.values().copied().collect();
    // h = 1e-4 straddles a ReLU kink for a few parameters of a random net;
    // those are re-probed with a step that stays on one side of it
    let rel = |a: f64, fd: f64| (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
    let mut worst: f64 = 0.0;
    let mut refined = 0;
    for (i, a) in analytic.iter().enumerate() {
        let mut central = |h: f64| {
            let mut probe = |d: f64| {
                *model.params.values_mut().nth(i).unwrap() += d;
                let l = loss_value(&model, x.view(), &targets).unwrap().total;
                *model.params.values_mut().nth(i).unwrap() -= d;
                l
            };
            (probe(h) - probe(-h)) / (2.0 * h)
        };
        let mut err = rel(*a, central(1e-4));
        if err > 1e-4 {
            refined += 1;
            err = rel(*a, central(1e-6));
        }
        worst = worst.max(err);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-4 && secs <= 120.0,
        format!(
            "{} parameters ({refined} re-probed at h=1e-6), loss {:.4} (render {:.4} + density {:.4}); max relative error {worst:.2e} (tol 1e-4); {secs:.1}s",
            analytic.len(),
            metrics.total,
            metrics.render_loss,
            metrics.vdc_loss
        ),
    )
}

fn micro_teacher(enc: &EncodingConfig, layers: usize, width: usize) -> TeacherField {
    let encoding = EncodingConfig { n_points: 1, ..*enc };
    let spec = MlpSpec {
        input: encoding.point_dim(),
        depth: layers,
        width,
        output: 4,
        residual: true,
    };
    let params = MlpParams::init(&spec, &mut ChaCha8Rng::seed_from_u64(17)).unwrap();
    TeacherField::Micro(MicroNerf { params, encoding })
}

fn frame_pose(scene: &SceneConfig, size: u32) -> CameraPose {
    let intr = Intrinsics::from_vertical_fov(size, size, scene.camera.fov_deg).unwrap();
    CameraPose::look_at(Vec3::new(0.2, -0.1, -4.0), Vec3::zeros(), Vec3::from(scene.camera.up), intr).unwrap()
}

fn criterion_4() -> Outcome {
    let scene = SceneConfig::builtin("sphere").unwrap();
    let enc = desk_encoding(&scene);
    let rc = RenderConfig::default();
    let depth = scene.depth_range().unwrap();
    let model =
        RayModel::<f32>::new(4, 64, enc, rc, Head::Distribution, depth, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let pose = frame_pose(&scene, 32);
    model.params.reset_forward_rows();
    render_image(&model, &pose).unwrap();
    let student_rows = model.params.forward_rows();
    let teacher = micro_teacher(&enc, 4, 64);
    let TeacherField::Micro(m) = &teacher else { unreachable!() };
    m.params.reset_forward_rows();
    render_teacher_image(&teacher, &pose, depth, rc.s_render).unwrap();
    let teacher_rows = m.params.forward_rows();
    let pixels = 32 * 32;
    outcome(
        student_rows == pixels && teacher_rows == pixels * rc.s_render as u64,
        format!(
            "32x32 frame: student {} forwards/pixel, teacher {} forwards/pixel (expect 1 and {})",
            student_rows as f64 / pixels as f64,
            teacher_rows as f64 / pixels as f64,
            rc.s_render
        ),
    )
}

fn criterion_9() -> Outcome {
    let scene = SceneConfig::builtin("triplet").unwrap();
    let enc = desk_encoding(&scene);
    let rc = RenderConfig::default();
    let depth = scene.depth_range().unwrap();
    let model =
        RayModel::<f32>::new(4, 64, enc, rc, Head::Distribution, depth, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let teacher = micro_teacher(&enc, 4, 64);
    let pose = frame_pose(&scene, 64);
    let s = benchmark_render(&model, &pose, 10).unwrap();
    let t = benchmark_teacher(&teacher, &pose, depth, rc.s_render, 10).unwrap();
    let ratio = t.total_ms / s.total_ms;
    let network_largest = s.network_ms >= s.encode_ms && s.network_ms >= s.render_ms;
    outcome(
        ratio >= 8.0 && network_largest,
        format!(
            "64x64, 4x64 MLPs, s=64, median of 10: teacher {:.1} ms, student {:.1} ms (ratio {ratio:.1}, need >= 8); \
             student breakdown encode {:.1} / network {:.1} / render {:.1} / total {:.1} ms",
            t.total_ms, s.total_ms, s.encode_ms, s.network_ms, s.render_ms, s.total_ms
        ),
    )
}

fn criterion_10() -> Outcome {
    let scene = SceneConfig::builtin("sphere").unwrap();
    let depth = scene.depth_range().unwrap();
    let tcfg = TeacherTrainConfig {
        iterations: 150,
        seed: 7,
        ..TeacherTrainConfig::default()
    };
    let teacher_hash = || {
        let (field, _) = train_micro_nerf(
            &scene.analytic().unwrap(),
            &scene.training_poses().unwrap(),
            depth,
            scene.camera.coord_scale,
            &tcfg,
            |_| {},
        )
        .unwrap();
        Checkpoint::Teacher(TeacherModel {
            field,
            depth,
            samples: tcfg.samples,
        })
        .hash()
    };
    let teacher = TeacherField::Analytic(scene.analytic().unwrap());
    let region = scene.region().unwrap();
    let probe = ProbeSet::new(&teacher, &scene.held_out_poses().unwrap(), depth, 64, 64, 1).unwrap();
    let setup = DistillSetup {
        teacher: &teacher,
        region: &region,
        depth,
        encoding: desk_encoding(&scene),
        render: RenderConfig::default(),
        probe: &probe,
    };
    let dcfg = DistillConfig {
        batch: 256,
        iterations: 150,
        seed: 7,
        log_every: 50,
        ..DistillConfig::default()
    };
    let student = || distill(&setup, &dcfg, |_| Ok(())).unwrap();
    let (t1, t2) = (teacher_hash(), teacher_hash());
    let (s1, s2) = (student(), student());
    let (h1, h2) = (Checkpoint::Student(s1.clone()).hash(), Checkpoint::Student(s2).hash());
    let pose = &scene.held_out_poses().unwrap()[0];
    let ppm = || encode_image(&render_image(&s1, pose).unwrap().0, ImageFormat::Ppm).unwrap();
    let (p1, p2) = (ppm(), ppm());
    outcome(
        t1 == t2 && h1 == h2 && p1 == p2,
        format!(
            "teacher hash {} {}, student hash {} {}, render bytes {}",
            &t1[..12],
            if t1 == t2 { "stable" } else { "DIFFERS" },
            &h1[..12],
            if h1 == h2 { "stable" } else { "DIFFERS" },
            if p1 == p2 { "identical" } else { "DIFFER" }
        ),
    )
}

/// Training arms in ablation order: colour head, distribution head, + view
/// sampling, + density constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Arm {
    Nelf,
    Dist,
    DistOvs,
    DistOvsVdc,
}

struct ArmResult {
    psnr: f64,
    density_mse: Option<f64>,
}

struct Ablation {
    scene: SceneConfig,
    teacher: TeacherField,
    probe: ProbeSet,
    iterations: u64,
    batch: usize,
    results: BTreeMap<(Arm, u64, usize), ArmResult>,
}

impl Ablation {
    fn new(iterations: u64, batch: usize) -> Self {
        let scene = SceneConfig::builtin("triplet").unwrap();
        let teacher = TeacherField::Analytic(scene.analytic().unwrap());
        let probe = ProbeSet::new(&teacher, &scene.held_out_poses().unwrap(), scene.depth_range().unwrap(), 64, 1024, 99)
            .unwrap();
        Self {
            scene,
            teacher,
            probe,
            iterations,
            batch,
            results: BTreeMap::new(),
        }
    }

    fn run(&mut self, arm: Arm, seed: u64, k: usize) -> &ArmResult {
        if !self.results.contains_key(&(arm, seed, k)) {
            let start = Instant::now();
            let region = self.scene.region().unwrap();
            let depth = self.scene.depth_range().unwrap();
            let setup = DistillSetup {
                teacher: &self.teacher,
                region: &region,
                depth,
                encoding: desk_encoding(&self.scene),
                render: RenderConfig { s_render: 64, k },
                probe: &self.probe,
            };
            let cfg = DistillConfig {
                batch: self.batch,
                iterations: self.iterations,
                seed,
                enable_ovs: matches!(arm, Arm::DistOvs | Arm::DistOvsVdc),
                enable_vdc: arm == Arm::DistOvsVdc,
                head: if arm == Arm::Nelf { Head::Rgb } else { Head::Distribution },
                log_every: (self.iterations / 5).max(1),
                ..DistillConfig::default()
            };
            let model = distill(&setup, &cfg, |p| {
                if let nerdf_core::distill::Progress::Metrics(m) = p {
                    eprintln!(
                        "    [{arm:?} seed {seed} K {k}] it {:>6} loss {:.2e} probe {:.2} dB",
                        m.iteration, m.total, m.psnr_probe
                    );
                }
                Ok(())
            })
            .unwrap();
            let psnr = mean(&held_out_psnr(&model, &self.teacher, &self.scene.held_out_poses().unwrap()).unwrap());
            let density_mse = (arm != Arm::Nelf).then(|| self.probe.density_mse(&model).unwrap());
            eprintln!(
                "  {arm:?} seed {seed} K {k}: held-out {psnr:.3} dB, density mse {:?} ({:.0}s)",
                density_mse,
                start.elapsed().as_secs_f64()
            );
            self.results.insert((arm, seed, k), ArmResult { psnr, density_mse });
        }
        &self.results[&(arm, seed, k)]
    }

    fn psnr(&mut self, arm: Arm, seed: u64) -> f64 {
        self.run(arm, seed, 12).psnr
    }
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:+.2}")).collect::<Vec<_>>().join(", ")
}

fn criterion_5(ab: &mut Ablation) -> Outcome {
    let start = Instant::now();
    let gaps: Vec<f64> = SEEDS.iter().map(|&s| ab.psnr(Arm::Dist, s) - ab.psnr(Arm::Nelf, s)).collect();
    let m = mean(&gaps);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        m >= 1.0 && gaps.iter().all(|g| *g > 0.0) && secs <= 45.0 * 60.0,
        format!(
            "distribution minus colour head, held-out PSNR per seed [{}] dB, mean {m:+.2} (need >= +1.0, all > 0); {:.0} min",
            fmt_list(&gaps),
            secs / 60.0
        ),
    )
}

fn criterion_6(ab: &mut Ablation) -> Outcome {
    let gaps: Vec<f64> = SEEDS.iter().map(|&s| ab.psnr(Arm::DistOvs, s) - ab.psnr(Arm::Dist, s)).collect();
    outcome(
        gaps.iter().all(|g| *g > 0.0),
        format!("view sampling minus fixed poses per seed [{}] dB (need all > 0)", fmt_list(&gaps)),
    )
}

fn criterion_7(ab: &mut Ablation) -> Outcome {
    let mut lower = Vec::new();
    let mut deltas = Vec::new();
    let mut parts = Vec::new();
    for &s in &SEEDS {
        let off = ab.run(Arm::DistOvs, s, 12);
        let (off_mse, off_psnr) = (off.density_mse.unwrap(), off.psnr);
        let on = ab.run(Arm::DistOvsVdc, s, 12);
        let (on_mse, on_psnr) = (on.density_mse.unwrap(), on.psnr);
        lower.push(on_mse < off_mse);
        deltas.push(on_psnr - off_psnr);
        parts.push(format!("{off_mse:.2e} -> {on_mse:.2e}"));
    }
    let m = mean(&deltas);
    outcome(
        lower.iter().all(|b| *b) && m >= -0.3,
        format!(
            "probe density mse without -> with constraint [{}]; PSNR change per seed [{}] dB, mean {m:+.2} (need >= -0.3)",
            parts.join(", "),
            fmt_list(&deltas)
        ),
    )
}

fn criterion_8(ab: &mut Ablation) -> Outcome {
    let vals: Vec<f64> = K_SWEEP.iter().map(|&k| ab.run(Arm::DistOvsVdc, SEEDS[0], k).psnr).collect();
    let spread = vals.iter().cloned().fold(f64::MIN, f64::max) - vals.iter().cloned().fold(f64::MAX, f64::min);
    let parts: Vec<String> = K_SWEEP.iter().zip(&vals).map(|(k, v)| format!("K={k} {v:.2}")).collect();
    outcome(spread <= 0.5, format!("held-out PSNR {} dB; spread {spread:.2} dB (tol 0.5)", parts.join(", ")))
}

fn main() {
    // `cargo test` passes harness flags such as --nocapture; none apply here.
    let only: Option<Vec<usize>> =
        std::env::var("NERDF_ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    let iterations: u64 = env_num("NERDF_ACCEPTANCE_ITERATIONS").unwrap_or(50_000);
    let batch: usize = env_num("NERDF_ACCEPTANCE_BATCH").unwrap_or(256);
    println!(
        "acceptance: training budget {iterations} iterations x {batch} rays per arm{}",
        if iterations == 50_000 && batch == 256 { "" } else { " (OVERRIDDEN)" }
    );

    let started = Instant::now();
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let quick: [(usize, fn() -> Outcome); 6] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let report = |n: usize, o: &Outcome, took: Duration| {
        println!(
            "criterion {n:>2}: {} — {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64()
        );
    };
    for (n, f) in quick {
        if wanted(n) {
            let t = Instant::now();
            let o = f();
            report(n, &o, t.elapsed());
            results.push((n, o));
        }
    }
    let mut ab = Ablation::new(iterations, batch);
    let slow: [(usize, fn(&mut Ablation) -> Outcome); 4] =
        [(5, criterion_5), (6, criterion_6), (7, criterion_7), (8, criterion_8)];
    for (n, f) in slow {
        if wanted(n) {
            let t = Instant::now();
            let o = f(&mut ab);
            report(n, &o, t.elapsed());
            results.push((n, o));
        }
    }
    results.sort_by_key(|(n, _)| *n);
    println!("---- summary ({:.1} min) ----", started.elapsed().as_secs_f64() / 60.0);
    for (n, o) in &results {
        println!("criterion {n:>2}: {}", if o.pass { "PASS" } else { "FAIL" });
    }
    if results.iter().any(|(_, o)| !o.pass) {
        std::process::exit(1);
    }
}
