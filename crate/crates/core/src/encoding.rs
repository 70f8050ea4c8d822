//! Compound ray encoding: frequency encoding of the origin, real spherical
//! harmonics of the direction, and frequency encoding of points sampled along
//! the ray.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NerdfError, Result};
use crate::geometry::{midpoints, stratified_samples, Ray, Vec3};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncodingConfig {
    pub pe_frequencies: u32,
    pub sh_degree: u32,
    pub n_points: u32,
    pub include_raw: bool,
    /// Positions are divided by this radius before frequency encoding.
    pub coord_scale: f64,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            pe_frequencies: 10,
            sh_degree: 8,
            n_points: 16,
            include_raw: true,
            coord_scale: 1.0,
        }
    }
}

impl EncodingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pe_frequencies == 0 || self.sh_degree == 0 || self.n_points == 0 {
            return Err(NerdfError::Config(
                "encoding requires pe_frequencies, sh_degree and n_points >= 1".into(),
            ));
        }
        if !(self.coord_scale > 0.0 && self.coord_scale.is_finite()) {
            return Err(NerdfError::Config("encoding coord_scale must be > 0".into()));
        }
        Ok(())
    }

    pub fn pe_dim(&self, d: usize) -> usize {
        pe_dim(d, self.pe_frequencies as usize, self.include_raw)
    }

    pub fn sh_dim(&self) -> usize {
        (self.sh_degree * self.sh_degree) as usize
    }

    /// Width of an encoded ray.
    pub fn ray_dim(&self) -> usize {
        self.pe_dim(3) + self.sh_dim() + self.pe_dim(3 * self.n_points as usize)
    }

    /// Width of an encoded (point, direction) pair, as consumed by MicroNeRF.
    pub fn point_dim(&self) -> usize {
        self.pe_dim(3) + self.sh_dim()
    }
}

pub fn pe_dim(d: usize, frequencies: usize, include_raw: bool) -> usize {
    d * (2 * frequencies + usize::from(include_raw))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedRay {
    pub values: Vec<f64>,
}

impl EncodedRay {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Per component `x`: optionally `x`, then `sin(2^k pi x), cos(2^k pi x)` for `k < frequencies`.
pub fn positional_encode(v: &[f64], frequencies: u32, include_raw: bool) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(pe_dim(v.len(), frequencies as usize, include_raw));
    positional_encode_into(v, frequencies, include_raw, &mut out)?;
    Ok(out)
}

fn positional_encode_into(v: &[f64], frequencies: u32, include_raw: bool, out: &mut Vec<f64>) -> Result<()> {
    let base = out.len();
    out.resize(base + pe_dim(v.len(), frequencies as usize, include_raw), 0.0);
    pe_write(v, frequencies as usize, include_raw, &mut out[base..])
}

/// Writes the frequency encoding of `v` into `dst` (exactly `pe_dim` long).
fn pe_write<T: Scalar>(v: &[f64], frequencies: usize, include_raw: bool, dst: &mut [T]) -> Result<()> {
    check_finite(v)?;
    let (s, c): (Vec<f64>, Vec<f64>) = v.iter().map(|x| (PI * x).sin_cos()).unzip();
    pe_fill(v, s, c, frequencies, include_raw, dst);
    Ok(())
}

fn check_finite(v: &[f64]) -> Result<()> {
    match v.iter().find(|x| !x.is_finite()) {
        Some(x) => Err(NerdfError::InvalidInput(format!(
            "positional encoding input must be finite, got {x}"
        ))),
        None => Ok(()),
    }
}

/// `s`, `c` hold `sin(pi v_j)`, `cos(pi v_j)`; they are consumed as the
/// doubling workspace.
fn pe_fill<T: Scalar>(
    v: &[f64],
    mut s: Vec<f64>,
    mut c: Vec<f64>,
    frequencies: usize,
    include_raw: bool,
    dst: &mut [T],
) -> (Vec<f64>, Vec<f64>) {
    let raw = include_raw as usize;
    let per = raw + 2 * frequencies;
    debug_assert_eq!(dst.len(), v.len() * per);
    if include_raw {
        for (block, &x) in dst.chunks_exact_mut(per).zip(v) {
            block[0] = T::of(x);
        }
    }
    // angle doubling, independent across components:
    // sin 2a = 2 sin a cos a, cos 2a = cos^2 a - sin^2 a
    for k in 0..frequencies {
        let off = raw + 2 * k;
        for (block, (sj, cj)) in dst.chunks_exact_mut(per).zip(s.iter().zip(&c)) {
            if let [a, b, ..] = &mut block[off..] {
                *a = T::of(*sj);
                *b = T::of(*cj);
            }
        }
        for (sj, cj) in s.iter_mut().zip(c.iter_mut()) {
            let s2 = 2.0 * *sj * *cj;
            *cj = (*cj - *sj) * (*cj + *sj);
            *sj = s2;
        }
    }
    (s, c)
}

/// Real orthonormal spherical harmonics `Y_l^m(dir)` for `l < degree`, ordered by
/// `l`, then `m = -l..=l`. No Condon-Shortley phase.
pub fn sh_encode(dir: &Vec3, degree: u32) -> Result<Vec<f64>> {
    if (dir.norm() - 1.0).abs() > 1e-6 {
        return Err(NerdfError::InvalidInput(format!(
            "sh_encode requires a unit direction, |d| = {}",
            dir.norm()
        )));
    }
    let mut out = Vec::with_capacity((degree * degree) as usize);
    sh_encode_into(dir, degree as usize, &mut out);
    Ok(out)
}

fn sh_encode_into(dir: &Vec3, degree: usize, out: &mut Vec<f64>) {
    let base = out.len();
    out.resize(base + degree * degree, 0.0);
    ShTable::new(degree).write(dir, &mut out[base..]);
}

/// Direction-independent constants of the real SH evaluation, plus workspace.
struct ShTable {
    degree: usize,
    /// Normalisation per `(l, m)`, `l * degree + m`.
    norm: Vec<f64>,
    /// Recurrence weights in `z` and in `Q_{l-2}` per `(l, m)`.
    rec: Vec<(f64, f64)>,
    q: Vec<f64>,
    pw: Vec<(f64, f64)>,
}

impl ShTable {
    fn new(degree: usize) -> Self {
        let mut norm = vec![0.0; degree * degree];
        let mut rec = vec![(0.0, 0.0); degree * degree];
        for l in 0..degree {
            let head = (2 * l + 1) as f64 / (4.0 * PI);
            norm[l * degree] = head.sqrt();
            // ratio = (l-m)!/(l+m)!, updated as m grows
            let mut ratio = 1.0;
            for m in 1..=l {
                ratio /= ((l + m) * (l - m + 1)) as f64;
                norm[l * degree + m] = std::f64::consts::SQRT_2 * (head * ratio).sqrt();
            }
            for m in 0..l.saturating_sub(1) {
                let d = (l - m) as f64;
                rec[l * degree + m] = ((2 * l - 1) as f64 / d, (l + m - 1) as f64 / d);
            }
        }
        Self {
            degree,
            norm,
            rec,
            q: vec![0.0; degree * degree],
            pw: vec![(1.0, 0.0); degree],
        }
    }

    fn write<T: Scalar>(&mut self, dir: &Vec3, dst: &mut [T]) {
        let degree = self.degree;
        let z = dir.z.clamp(-1.0, 1.0);
        // P_l^m(z) = sin^m(theta) Q_l^m(z); the sin^m factor is folded into
        // (x + iy)^m = sin^m(theta) e^{i m phi}, so no trigonometry is needed.
        let q = &mut self.q;
        let idx = |l: usize, m: usize| l * degree + m;
        let mut qmm = 1.0;
        for m in 0..degree {
            if m > 0 {
                qmm *= (2 * m - 1) as f64;
            }
            q[idx(m, m)] = qmm;
            if m + 1 < degree {
                q[idx(m + 1, m)] = z * (2 * m + 1) as f64 * qmm;
            }
            for l in (m + 2)..degree {
                let (a, b) = self.rec[idx(l, m)];
                q[idx(l, m)] = a * z * q[idx(l - 1, m)] - b * q[idx(l - 2, m)];
            }
        }
        // (re, im) of (x + iy)^m
        let pw = &mut self.pw;
        for m in 1..degree {
            let (a, b) = pw[m - 1];
            pw[m] = (a * dir.x - b * dir.y, a * dir.y + b * dir.x);
        }
        for l in 0..degree {
            let centre = l * l + l;
            dst[centre] = T::of(self.norm[idx(l, 0)] * q[idx(l, 0)]);
            for m in 1..=l {
                let k = self.norm[idx(l, m)] * q[idx(l, m)];
                dst[centre + m] = T::of(k * pw[m].0);
                dst[centre - m] = T::of(k * pw[m].1);
            }
        }
    }
}

/// How the on-path points of a ray are placed.
pub enum PathSampling<'a, R: Rng + ?Sized> {
    /// One jittered point per bin (training).
    Stratified(&'a mut R),
    /// Bin midpoints (inference).
    Midpoints,
}

impl<R: Rng + ?Sized> PathSampling<'_, R> {
    fn points(&mut self, ray: &Ray, n: usize) -> Vec<f64> {
        match self {
            PathSampling::Stratified(rng) => stratified_samples(ray, n, *rng),
            PathSampling::Midpoints => midpoints(ray.t_near, ray.t_far, n),
        }
    }
}

/// `[PE(origin) | SH(dir) | PE(points)]`.
pub fn encode_ray<R: Rng + ?Sized>(
    ray: &Ray,
    cfg: &EncodingConfig,
    sampling: &mut PathSampling<'_, R>,
) -> Result<EncodedRay> {
    cfg.validate()?;
    let mut values = Vec::with_capacity(cfg.ray_dim());
    encode_ray_into(ray, cfg, sampling, &mut values)?;
    Ok(EncodedRay { values })
}

fn encode_ray_into<R: Rng + ?Sized>(
    ray: &Ray,
    cfg: &EncodingConfig,
    sampling: &mut PathSampling<'_, R>,
    out: &mut Vec<f64>,
) -> Result<()> {
    let base = out.len();
    out.resize(base + cfg.ray_dim(), 0.0);
    encode_ray_write(ray, cfg, sampling, &mut Scratch::default(), &mut out[base..])
}

#[derive(Default)]
struct Scratch {
    sh: Option<ShTable>,
    coords: Vec<f64>,
    sin: Vec<f64>,
    cos: Vec<f64>,
}

fn encode_ray_write<T: Scalar, R: Rng + ?Sized>(
    ray: &Ray,
    cfg: &EncodingConfig,
    sampling: &mut PathSampling<'_, R>,
    scratch: &mut Scratch,
    dst: &mut [T],
) -> Result<()> {
    let freq = cfg.pe_frequencies as usize;
    let n = cfg.n_points as usize;
    let (head, rest) = dst.split_at_mut(cfg.pe_dim(3));
    let (sh, path) = rest.split_at_mut(cfg.sh_dim());
    let inv_scale = 1.0 / cfg.coord_scale;
    let origin = ray.origin * inv_scale;
    pe_write(origin.as_slice(), freq, cfg.include_raw, head)?;
    if (ray.dir.norm() - 1.0).abs() > 1e-6 {
        return Err(NerdfError::InvalidInput("ray direction must be unit length".into()));
    }
    let degree = cfg.sh_degree as usize;
    let table = match &mut scratch.sh {
        Some(t) if t.degree == degree => t,
        slot => slot.insert(ShTable::new(degree)),
    };
    table.write(&ray.dir, sh);

    let ts = sampling.points(ray, n);
    let Scratch { coords, sin, cos, .. } = scratch;
    coords.clear();
    for &t in &ts {
        let p = ray.at(t) * inv_scale;
        coords.extend_from_slice(p.as_slice());
    }
    check_finite(coords)?;
    sin.clear();
    cos.clear();
    if matches!(sampling, PathSampling::Midpoints) && n > 1 {
        // evenly spaced points: each coordinate's phase advances by a fixed
        // angle, so rotate instead of calling sin_cos per point
        let step = (ts[1] - ts[0]) * inv_scale * PI;
        let rot: [(f64, f64); 3] = std::array::from_fn(|a| (ray.dir[a] * step).sin_cos());
        sin.resize(3 * n, 0.0);
        cos.resize(3 * n, 0.0);
        for a in 0..3 {
            let (mut sa, mut ca) = (PI * coords[a]).sin_cos();
            let (sr, cr) = rot[a];
            for i in 0..n {
                sin[3 * i + a] = sa;
                cos[3 * i + a] = ca;
                (sa, ca) = (sa * cr + ca * sr, ca * cr - sa * sr);
            }
        }
    } else {
        for x in coords.iter() {
            let (a, b) = (PI * x).sin_cos();
            sin.push(a);
            cos.push(b);
        }
    }
    let (s, c) = pe_fill(coords, std::mem::take(sin), std::mem::take(cos), freq, cfg.include_raw, path);
    (*sin, *cos) = (s, c);
    Ok(())
}

/// Encodes a batch of rays into the rows of a matrix.
pub fn encode_rays<T: Scalar, R: Rng + ?Sized>(
    rays: &[Ray],
    cfg: &EncodingConfig,
    sampling: &mut PathSampling<'_, R>,
) -> Result<Array2<T>> {
    let mut out = Array2::<T>::zeros((0, cfg.ray_dim()));
    encode_rays_into(rays, cfg, sampling, &mut out)?;
    Ok(out)
}

/// Like [`encode_rays`], reusing `out`'s allocation when it is large enough.
pub fn encode_rays_into<T: Scalar, R: Rng + ?Sized>(
    rays: &[Ray],
    cfg: &EncodingConfig,
    sampling: &mut PathSampling<'_, R>,
    out: &mut Array2<T>,
) -> Result<()> {
    cfg.validate()?;
    let dim = cfg.ray_dim();
    if out.dim() != (rays.len(), dim) {
        let mut buf = std::mem::take(out).into_raw_vec_and_offset().0;
        buf.resize(rays.len() * dim, T::zero());
        *out = Array2::from_shape_vec((rays.len(), dim), buf).expect("buffer sized to shape");
    }
    let mut scratch = Scratch::default();
    let flat = out.as_slice_mut().expect("standard layout");
    for (ray, row) in rays.iter().zip(flat.chunks_exact_mut(dim)) {
        encode_ray_write(ray, cfg, sampling, &mut scratch, row)?;
    }
    Ok(())
}

/// `[PE(point) | SH(dir)]` rows for a radiance-field MLP.
pub fn encode_points<T: Scalar>(points: &[Vec3], dirs: &[Vec3], cfg: &EncodingConfig) -> Result<Array2<T>> {
    if points.len() != dirs.len() {
        return Err(NerdfError::Structural("points and directions differ in length".into()));
    }
    let dim = cfg.point_dim();
    let mut out = Array2::<T>::zeros((points.len(), dim));
    let inv_scale = 1.0 / cfg.coord_scale;
    let pe = cfg.pe_dim(3);
    let mut table = ShTable::new(cfg.sh_degree as usize);
    let flat = out.as_slice_mut().expect("standard layout");
    for ((p, d), row) in points.iter().zip(dirs).zip(flat.chunks_exact_mut(dim.max(1))) {
        let (head, sh) = row.split_at_mut(pe);
        pe_write((p * inv_scale).as_slice(), cfg.pe_frequencies as usize, cfg.include_raw, head)?;
        table.write(d, sh);
    }
    Ok(out)
}
