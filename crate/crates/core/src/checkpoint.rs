//! Binary checkpoint format. Byte layout is documented in `docs/checkpoint.md`.

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::encoding::EncodingConfig;
use crate::error::{NerdfError, Result};
use crate::field::MicroNerf;
use crate::geometry::DepthRange;
use crate::nerdf::model::{Head, RayModel, RenderConfig};
use crate::nn::MlpParams;

pub const MAGIC: &[u8; 4] = b"NRDF";
pub const VERSION: u32 = 1;

const KIND_NERDF: u8 = 0;
const KIND_NELF: u8 = 1;
const KIND_TEACHER: u8 = 2;

/// A trained MicroNeRF with the sampling it was trained against.
#[derive(Debug, Clone)]
pub struct TeacherModel {
    pub field: MicroNerf,
    pub depth: DepthRange,
    pub samples: usize,
}

#[derive(Debug, Clone)]
pub enum Checkpoint {
    Student(RayModel<f32>),
    Teacher(TeacherModel),
}

impl Checkpoint {
    pub fn kind(&self) -> &'static str {
        match self {
            Checkpoint::Student(m) if m.head == Head::Rgb => "student-nelf",
            Checkpoint::Student(_) => "student-nerdf",
            Checkpoint::Teacher(_) => "teacher-micronerf",
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        put_u32(&mut w, VERSION);
        let (kind, enc, s, k, depth, params) = match self {
            Checkpoint::Student(m) => (
                if m.head == Head::Rgb { KIND_NELF } else { KIND_NERDF },
                &m.encoding,
                m.render.s_render,
                m.render.k,
                m.depth,
                &m.params,
            ),
            Checkpoint::Teacher(t) => (KIND_TEACHER, &t.field.encoding, t.samples, 0, t.depth, &t.field.params),
        };
        w.push(kind);
        put_u32(&mut w, enc.pe_frequencies);
        put_u32(&mut w, enc.sh_degree);
        put_u32(&mut w, enc.n_points);
        w.push(enc.include_raw as u8);
        w.extend_from_slice(&enc.coord_scale.to_le_bytes());
        put_u32(&mut w, s as u32);
        put_u32(&mut w, k as u32);
        w.extend_from_slice(&depth.near.to_le_bytes());
        w.extend_from_slice(&depth.far.to_le_bytes());
        put_u32(&mut w, params.widths().len() as u32);
        for width in params.widths() {
            put_u32(&mut w, *width as u32);
        }
        for r in params.residual() {
            w.push(*r as u8);
        }
        w.extend_from_slice(&(params.param_count() as u64).to_le_bytes());
        for v in params.values() {
            w.extend_from_slice(&v.to_le_bytes());
        }
        w
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(NerdfError::Incompatible(format!("{}: not a checkpoint (bad magic)", path.display())));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(NerdfError::Incompatible(format!(
                "{}: checkpoint format version {version}, this build reads version {VERSION}",
                path.display()
            )));
        }
        let kind = r.u8()?;
        let encoding = EncodingConfig {
            pe_frequencies: r.u32()?,
            sh_degree: r.u32()?,
            n_points: r.u32()?,
            include_raw: r.u8()? != 0,
            coord_scale: r.f64()?,
        };
        let s = r.u32()? as usize;
        let k = r.u32()? as usize;
        let depth = DepthRange::new(r.f64()?, r.f64()?).map_err(|e| NerdfError::malformed(path, e.to_string()))?;
        let n_widths = r.u32()? as usize;
        if !(2..=1024).contains(&n_widths) {
            return Err(NerdfError::malformed(path, format!("implausible layer count {n_widths}")));
        }
        let widths: Vec<usize> = (0..n_widths).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
        let residual: Vec<bool> = (0..n_widths - 2).map(|_| r.u8().map(|v| v != 0)).collect::<Result<_>>()?;
        let count = r.u64()? as usize;
        let expected: usize = widths.windows(2).map(|p| p[0] * p[1] + p[1]).sum();
        if count != expected {
            return Err(NerdfError::malformed(path, format!("parameter count {count} does not match layer widths ({expected})")));
        }
        if r.remaining() != count * 4 {
            return Err(NerdfError::malformed(
                path,
                format!("payload holds {} bytes, header announces {}", r.remaining(), count * 4),
            ));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for p in widths.windows(2) {
            weights.push(ndarray::Array2::<f32>::zeros((p[1], p[0])));
            biases.push(ndarray::Array1::<f32>::zeros(p[1]));
        }
        let mut params = MlpParams::from_parts(widths, residual, weights, biases)
            .map_err(|e| NerdfError::malformed(path, e.to_string()))?;
        for v in params.values_mut() {
            *v = r.f32()?;
        }
        if params.values().any(|v| !v.is_finite()) {
            return Err(NerdfError::malformed(path, "non-finite parameter"));
        }
        let incompatible = |e: NerdfError| NerdfError::Incompatible(format!("{}: {e}", path.display()));
        match kind {
            KIND_NERDF | KIND_NELF => {
                let head = if kind == KIND_NELF { Head::Rgb } else { Head::Distribution };
                let render = RenderConfig { s_render: s, k };
                RayModel::from_params(params, encoding, render, head, depth)
                    .map(Checkpoint::Student)
                    .map_err(incompatible)
            }
            KIND_TEACHER => {
                encoding.validate().map_err(incompatible)?;
                if params.input_dim() != encoding.point_dim() || params.output_dim() != 4 || s < 2 {
                    return Err(NerdfError::Incompatible(format!(
                        "{}: teacher network does not match its encoding",
                        path.display()
                    )));
                }
                Ok(Checkpoint::Teacher(TeacherModel {
                    field: MicroNerf { params, encoding },
                    depth,
                    samples: s,
                }))
            }
            other => Err(NerdfError::Incompatible(format!("{}: unknown checkpoint kind {other}", path.display()))),
        }
    }

    /// Writes to a sibling temporary file and renames it into place, so a
    /// failed write never leaves a partial checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes();
        write_atomic(path, &bytes)?;
        Ok(hash_bytes(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| NerdfError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn hash(&self) -> String {
        hash_bytes(&self.to_bytes())
    }

    pub fn into_student(self, path: &Path) -> Result<RayModel<f32>> {
        match self {
            Checkpoint::Student(m) => Ok(m),
            Checkpoint::Teacher(_) => Err(NerdfError::Incompatible(format!(
                "{}: expected a student checkpoint, found a teacher",
                path.display()
            ))),
        }
    }

    pub fn into_teacher(self, path: &Path) -> Result<TeacherModel> {
        match self {
            Checkpoint::Teacher(t) => Ok(t),
            Checkpoint::Student(_) => Err(NerdfError::Incompatible(format!(
                "{}: expected a teacher checkpoint, found a student",
                path.display()
            ))),
        }
    }
}

/// Lower-case hex SHA-256.
pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(hash_bytes(&std::fs::read(path).map_err(|e| NerdfError::io(path, e))?))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(NerdfError::io(path, e));
    }
    Ok(())
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(NerdfError::malformed(self.path, format!("truncated at byte {}", self.pos))),
        }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
