pub mod bench;
pub mod image;
pub mod metrics;
pub mod timing;

pub use bench::{benchmark_render, benchmark_teacher};
pub use image::{read_image, write_image, Image, ImageFormat};
pub use metrics::{psnr, PSNR_CAP_DB};
pub use timing::TimingBreakdown;
