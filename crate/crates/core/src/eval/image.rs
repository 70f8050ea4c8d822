//! RGB images in `[0, 1]` with PPM (P6) and 8-bit PNG IO.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{NerdfError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    /// Row-major, three channels per pixel.
    pub rgb: Vec<f32>,
}

impl Image {
    pub fn new(width: u32, height: u32, rgb: Vec<f32>) -> Result<Self> {
        if rgb.len() != 3 * width as usize * height as usize {
            return Err(NerdfError::Structural(format!(
                "{}x{} image needs {} values, got {}",
                width,
                height,
                3 * width as usize * height as usize,
                rgb.len()
            )));
        }
        if rgb.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(NerdfError::InvalidInput("image values must lie in [0, 1]".into()));
        }
        Ok(Self { width, height, rgb })
    }

    pub fn filled(width: u32, height: u32, value: [f32; 3]) -> Self {
        let rgb = (0..width as usize * height as usize).flat_map(|_| value).collect();
        Self { width, height, rgb }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Image file formats understood by [`write_image`] / [`read_image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    /// Binary P6 with a 16-bit maximum value.
    Ppm,
    /// 8-bit RGB PNG.
    Png,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("ppm") => Ok(ImageFormat::Ppm),
            Some("png") => Ok(ImageFormat::Png),
            _ => Err(NerdfError::InvalidInput(format!(
                "unknown image extension on {} (expected .ppm or .png)",
                path.display()
            ))),
        }
    }
}

const PPM_MAX: u32 = 65535;

fn quantize(v: f32, max: u32) -> u32 {
    (v.clamp(0.0, 1.0) * max as f32).round() as u32
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n{}\n", img.width, img.height, PPM_MAX).into_bytes();
    out.reserve(img.rgb.len() * 2);
    for &v in &img.rgb {
        out.extend_from_slice(&(quantize(v, PPM_MAX) as u16).to_be_bytes());
    }
    out
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width, img.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_source_srgb(png::SrgbRenderingIntent::Perceptual);
        let mut writer = enc
            .write_header()
            .map_err(|e| NerdfError::InvalidInput(format!("png header: {e}")))?;
        let bytes: Vec<u8> = img.rgb.iter().map(|&v| quantize(v, 255) as u8).collect();
        writer
            .write_image_data(&bytes)
            .map_err(|e| NerdfError::InvalidInput(format!("png data: {e}")))?;
    }
    Ok(out)
}

pub fn encode_image(img: &Image, format: ImageFormat) -> Result<Vec<u8>> {
    match format {
        ImageFormat::Ppm => Ok(encode_ppm(img)),
        ImageFormat::Png => encode_png(img),
    }
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let bytes = encode_image(img, ImageFormat::from_path(path)?)?;
    let mut f = fs::File::create(path).map_err(|e| NerdfError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| NerdfError::io(path, e))
}

pub fn read_image(path: &Path) -> Result<Image> {
    let format = ImageFormat::from_path(path)?;
    let bytes = fs::read(path).map_err(|e| NerdfError::io(path, e))?;
    match format {
        ImageFormat::Ppm => decode_ppm(&bytes).map_err(|d| NerdfError::malformed(path, d)),
        ImageFormat::Png => decode_png(&bytes).map_err(|d| NerdfError::malformed(path, d)),
    }
}

pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 0usize;
    let mut token = || -> std::result::Result<String, String> {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|b| *b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("unexpected end of header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P6" {
        return Err("missing P6 magic".into());
    }
    let parse = |s: String| s.parse::<u32>().map_err(|_| format!("bad header field {s:?}"));
    let width = parse(token()?)?;
    let height = parse(token()?)?;
    let max = parse(token()?)?;
    if max == 0 || max > 65535 {
        return Err(format!("unsupported maxval {max}"));
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    let bpc = if max > 255 { 2 } else { 1 };
    let n = 3 * width as usize * height as usize;
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() < n * bpc {
        return Err(format!("raster truncated: {} of {} bytes", raster.len(), n * bpc));
    }
    let rgb = (0..n)
        .map(|i| {
            let v = if bpc == 2 {
                u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as u32
            } else {
                raster[i] as u32
            };
            (v.min(max) as f32) / max as f32
        })
        .collect();
    Ok(Image { width, height, rgb })
}

pub fn decode_png(bytes: &[u8]) -> std::result::Result<Image, String> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or("png too large")?];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(format!("unsupported png layout {:?}/{:?}", info.color_type, info.bit_depth));
    }
    let rgb = buf[..info.buffer_size()].iter().map(|&b| b as f32 / 255.0).collect();
    Ok(Image {
        width: info.width,
        height: info.height,
        rgb,
    })
}
