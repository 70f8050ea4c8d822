//! Wire messages.
//!
//! Client to server: one JSON text frame per [`PoseMessage`].
//!
//! Server to client:
//! - a rendered frame is a *binary* message: a single-line JSON
//!   [`FrameHeader`], a `\n` byte, then the PNG bytes;
//! - errors and superseded notices are JSON text frames ([`Notice`]).
//!
//! Every message carries `"v": 1`.

use nalgebra::{Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};

use nerdf_core::eval::image::{encode_image, ImageFormat};
use nerdf_core::geometry::{CameraPose, Intrinsics, Vec3};
use nerdf_core::nerdf::{render_image, RayModel};

pub const PROTOCOL_VERSION: u32 = 1;

/// Largest accepted deviation of `|orientation|` from one.
pub const QUATERNION_TOLERANCE: f64 = 1e-3;

/// A camera to render.
///
/// `orientation` is the camera-to-world rotation as `[w, x, y, z]`. The camera
/// looks along its local `+z` with image `y` pointing down, the same
/// convention as `CameraPose`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseMessage {
    pub v: u32,
    pub id: u64,
    pub position: [f64; 3],
    pub orientation: [f64; 4],
    pub fov_deg: f64,
    pub width: u32,
    pub height: u32,
}

/// An invariant violation, tagged with the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub field: &'static str,
    pub message: String,
}

impl FieldError {
    fn new(field: &'static str, message: impl Into<String>) -> Self {
        Self {
            field,
            message: message.into(),
        }
    }
}

/// Size limits of a running service.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub max_width: u32,
    pub max_height: u32,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_width: 1024,
            max_height: 1024,
        }
    }
}

impl PoseMessage {
    pub fn validate(&self, limits: &Limits) -> Result<(), FieldError> {
        if self.v != PROTOCOL_VERSION {
            return Err(FieldError::new(
                "v",
                format!("unsupported protocol version {}, expected {PROTOCOL_VERSION}", self.v),
            ));
        }
        if self.position.iter().any(|x| !x.is_finite()) {
            return Err(FieldError::new("position", "position must be finite"));
        }
        let norm = self.orientation.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= QUATERNION_TOLERANCE) {
            return Err(FieldError::new(
                "orientation",
                format!("quaternion norm {norm} is not 1 within {QUATERNION_TOLERANCE}"),
            ));
        }
        if !(self.fov_deg > 1.0 && self.fov_deg < 179.0) {
            return Err(FieldError::new("fov_deg", format!("fov {} outside (1, 179) degrees", self.fov_deg)));
        }
        if self.width == 0 || self.width > limits.max_width {
            return Err(FieldError::new(
                "width",
                format!("width {} outside 1..={}", self.width, limits.max_width),
            ));
        }
        if self.height == 0 || self.height > limits.max_height {
            return Err(FieldError::new(
                "height",
                format!("height {} outside 1..={}", self.height, limits.max_height),
            ));
        }
        Ok(())
    }

    /// The camera this message describes. The quaternion is renormalised.
    pub fn camera_pose(&self) -> Result<CameraPose, FieldError> {
        let [w, x, y, z] = self.orientation;
        let q = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
        let intr = Intrinsics::from_vertical_fov(self.width, self.height, self.fov_deg)
            .map_err(|e| FieldError::new("fov_deg", e.to_string()))?;
        CameraPose::from_quaternion(Vec3::from(self.position), q, intr)
            .map_err(|e| FieldError::new("orientation", e.to_string()))
    }
}

/// JSON line in front of a frame's PNG bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameHeader {
    pub v: u32,
    #[serde(rename = "type")]
    pub kind: String,
    pub id: u64,
    pub encoding: String,
    pub width: u32,
    pub height: u32,
    pub render_ms: f64,
    pub bytes: usize,
}

/// Text replies that carry no image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Notice {
    Error {
        v: u32,
        id: Option<u64>,
        field: Option<String>,
        message: String,
    },
    /// A newer pose arrived before this one was rendered.
    Superseded { v: u32, id: u64 },
}

impl Notice {
    pub fn error(id: Option<u64>, field: Option<&str>, message: impl Into<String>) -> Self {
        Notice::Error {
            v: PROTOCOL_VERSION,
            id,
            field: field.map(str::to_owned),
            message: message.into(),
        }
    }

    pub fn superseded(id: u64) -> Self {
        Notice::Superseded {
            v: PROTOCOL_VERSION,
            id,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("notices serialize")
    }
}

/// Header line, newline, PNG.
pub fn encode_frame(header: &FrameHeader, png: &[u8]) -> Vec<u8> {
    let mut out = serde_json::to_vec(header).expect("headers serialize");
    out.push(b'\n');
    out.extend_from_slice(png);
    out
}

/// Splits a binary frame back into header and PNG bytes.
pub fn decode_frame(bytes: &[u8]) -> Result<(FrameHeader, &[u8]), String> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or("frame has no header line")?;
    let header: FrameHeader = serde_json::from_slice(&bytes[..nl]).map_err(|e| e.to_string())?;
    let png = &bytes[nl + 1..];
    if png.len() != header.bytes {
        return Err(format!("header declares {} bytes, payload has {}", header.bytes, png.len()));
    }
    Ok((header, png))
}

/// Parses and validates a text message; failures become error notices.
pub fn parse_pose(text: &str, limits: &Limits) -> Result<PoseMessage, Notice> {
    let msg: PoseMessage = serde_json::from_str(text).map_err(|e| {
        // pick out the id if the rest of the message is unusable
        let id = serde_json::from_str::<serde_json::Value>(text)
            .ok()
            .and_then(|v| v.get("id").and_then(|i| i.as_u64()));
        Notice::error(id, None, format!("malformed pose message: {e}"))
    })?;
    msg.validate(limits)
        .map_err(|e| Notice::error(Some(msg.id), Some(e.field), e.message))?;
    Ok(msg)
}

/// Renders a validated pose to PNG. Same path as the command-line renderer,
/// so identical poses give identical bytes.
pub fn render_pose(model: &RayModel<f32>, msg: &PoseMessage) -> Result<(FrameHeader, Vec<u8>), Notice> {
    let pose = msg
        .camera_pose()
        .map_err(|e| Notice::error(Some(msg.id), Some(e.field), e.message))?;
    let (img, timing) = render_image(model, &pose).map_err(|e| Notice::error(Some(msg.id), None, e.to_string()))?;
    let png = encode_image(&img, ImageFormat::Png).map_err(|e| Notice::error(Some(msg.id), None, e.to_string()))?;
    let header = FrameHeader {
        v: PROTOCOL_VERSION,
        kind: "frame".into(),
        id: msg.id,
        encoding: "png".into(),
        width: msg.width,
        height: msg.height,
        render_ms: timing.total_ms,
        bytes: png.len(),
    };
    Ok((header, png))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose() -> PoseMessage {
        PoseMessage {
            v: 1,
            id: 7,
            position: [0.0, 0.0, -4.0],
            orientation: [1.0, 0.0, 0.0, 0.0],
            fov_deg: 40.0,
            width: 32,
            height: 24,
        }
    }

    #[test]
    fn valid_pose_passes() {
        assert_eq!(pose().validate(&Limits::default()), Ok(()));
        let cam = pose().camera_pose().unwrap();
        assert_eq!(cam.intrinsics.width, 32);
        assert!((cam.position - Vec3::new(0.0, 0.0, -4.0)).norm() < 1e-15);
    }

    #[test]
    fn each_invariant_names_its_field() {
        let lim = Limits {
            max_width: 64,
            max_height: 64,
        };
        let cases: [(fn(&mut PoseMessage), &str); 6] = [
            (|m| m.orientation = [0.5, 0.0, 0.0, 0.0], "orientation"),
            (|m| m.fov_deg = 180.0, "fov_deg"),
            (|m| m.fov_deg = 0.5, "fov_deg"),
            (|m| m.width = 65, "width"),
            (|m| m.height = 0, "height"),
            (|m| m.v = 2, "v"),
        ];
        for (mutate, field) in cases {
            let mut m = pose();
            mutate(&mut m);
            assert_eq!(m.validate(&lim).unwrap_err().field, field);
        }
    }

    #[test]
    fn unknown_keys_and_garbage_rejected_with_id_when_available() {
        let lim = Limits::default();
        let mut v = serde_json::to_value(pose()).unwrap();
        v["zoom"] = 2.into();
        match parse_pose(&v.to_string(), &lim).unwrap_err() {
            Notice::Error { id, .. } => assert_eq!(id, Some(7)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_pose("{not json", &lim), Err(Notice::Error { id: None, .. })));
    }

    #[test]
    fn frame_roundtrip() {
        let header = FrameHeader {
            v: 1,
            kind: "frame".into(),
            id: 3,
            encoding: "png".into(),
            width: 2,
            height: 2,
            render_ms: 1.5,
            bytes: 4,
        };
        let bytes = encode_frame(&header, &[1, 2, 3, 4]);
        let (h, png) = decode_frame(&bytes).unwrap();
        assert_eq!(h, header);
        assert_eq!(png, &[1, 2, 3, 4]);
        assert!(decode_frame(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn notice_json_shape() {
        let v: serde_json::Value = serde_json::from_str(&Notice::superseded(9).to_json()).unwrap();
        assert_eq!(v["type"], "superseded");
        assert_eq!(v["id"], 9);
        assert_eq!(v["v"], 1);
        let v: serde_json::Value =
            serde_json::from_str(&Notice::error(Some(1), Some("orientation"), "bad").to_json()).unwrap();
        assert_eq!(v["type"], "error");
        assert_eq!(v["field"], "orientation");
    }
}
