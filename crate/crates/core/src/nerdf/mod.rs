//! The ray-to-distribution student: Fourier density/colour decoding, volume
//! compositing, and the network that ties them together.

pub mod fourier;
pub mod model;
pub mod volume;

pub use fourier::{basis_eval, decode_distribution, Distribution, FourierCoeffs};
pub use model::{render_image, Head, RayModel, RenderConfig};
pub use volume::{volume_render, Composite};
