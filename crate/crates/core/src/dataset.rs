//! Ground-truth ingestion: normalized YOLO-style label files, pinhole
//! projection of 3D boxes, and per-split instance counts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{BoundingBox, GroundTruthBox};

/// Corners at or closer than this depth (meters) are culled before projection.
pub const NEAR_PLANE_M: f64 = 0.01;
/// Projected boxes narrower or shorter than this (pixels) are discarded.
pub const MIN_BOX_PX: f64 = 1.0;

pub const CLASS_PEDESTRIAN: u32 = 0;
pub const CLASS_TRAFFIC_LIGHT: u32 = 1;
pub const CLASS_VEHICLE: u32 = 2;

pub fn class_name(class_id: u32) -> String {
    match class_id {
        CLASS_PEDESTRIAN => "pedestrian".into(),
        CLASS_TRAFFIC_LIGHT => "traffic_light".into(),
        CLASS_VEHICLE => "vehicle".into(),
        other => format!("class_{other}"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub const fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }
}

/// Parses one frame's label file. Each non-empty line holds
/// `class_id x_center y_center width height`, all but the class normalized to [0, 1].
pub fn parse_labels<R: Read>(
    source: R,
    image: ImageSize,
    frame_id: &str,
) -> Result<Vec<GroundTruthBox>> {
    let (w, h) = (image.width as f64, image.height as f64);
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(source).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", fields.len())));
        }
        let class_id: u32 = fields[0]
            .parse()
            .map_err(|_| err(format!("bad class id {:?}", fields[0])))?;
        let mut vals = [0.0f64; 4];
        for (v, raw) in vals.iter_mut().zip(&fields[1..]) {
            *v = raw
                .parse()
                .map_err(|_| err(format!("bad number {raw:?}")))?;
            if !v.is_finite() || !(0.0..=1.0).contains(v) {
                return Err(err(format!("value {raw} outside [0, 1]")));
            }
        }
        let [xc, yc, bw, bh] = vals;
        let (x0, x1) = (xc - bw / 2.0, xc + bw / 2.0);
        let (y0, y1) = (yc - bh / 2.0, yc + bh / 2.0);
        const SLACK: f64 = 1e-9;
        if x0 < -SLACK || y0 < -SLACK || x1 > 1.0 + SLACK || y1 > 1.0 + SLACK {
            return Err(err("box extends beyond the image".into()));
        }
        let bbox = BoundingBox::new(
            class_id,
            x0.max(0.0) * w,
            y0.max(0.0) * h,
            x1.min(1.0) * w,
            y1.min(1.0) * h,
        )
        .map_err(|e| err(e.to_string()))?;
        out.push(GroundTruthBox {
            bbox,
            frame_id: frame_id.to_string(),
        });
    }
    Ok(out)
}

/// Writes boxes back in normalized form with six decimals.
pub fn serialize_labels(boxes: &[GroundTruthBox], image: ImageSize) -> String {
    let (w, h) = (image.width as f64, image.height as f64);
    let mut s = String::new();
    for b in boxes {
        let b = &b.bbox;
        let _ = writeln!(
            s,
            "{} {:.6} {:.6} {:.6} {:.6}",
            b.class_id,
            (b.x_min + b.x_max) / 2.0 / w,
            (b.y_min + b.y_max) / 2.0 / h,
            b.width() / w,
            b.height() / h
        );
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub image_width: u32,
    pub image_height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, image: ImageSize) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            image_width: image.width,
            image_height: image.height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera("focal lengths must be positive".into()));
        }
        let (w, h) = (self.image_width as f64, self.image_height as f64);
        if !(self.cx > 0.0 && self.cx < w && self.cy > 0.0 && self.cy < h) {
            return Err(Error::InvalidCamera(
                "principal point must lie strictly inside the image".into(),
            ));
        }
        Ok(())
    }
}

/// Eight corners in camera coordinates (meters, Z forward).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub class_id: u32,
    pub corners: [[f64; 3]; 8],
}

impl Box3D {
    /// Axis-aligned box spanning `min..max` in camera coordinates.
    pub fn from_extents(class_id: u32, min: [f64; 3], max: [f64; 3]) -> Self {
        let mut corners = [[0.0; 3]; 8];
        for (i, c) in corners.iter_mut().enumerate() {
            for axis in 0..3 {
                c[axis] = if i >> axis & 1 == 0 { min[axis] } else { max[axis] };
            }
        }
        Self { class_id, corners }
    }
}

/// Pinhole projection of the visible corners, clipped to the image.
///
/// Returns `None` when no corner lies beyond the near plane or when the
/// clipped box is thinner than [`MIN_BOX_PX`].
pub fn project_box3d(b: &Box3D, cam: &CameraIntrinsics) -> Option<BoundingBox> {
    if b.corners.iter().flatten().any(|v| !v.is_finite()) {
        return None;
    }
    let (w, h) = (cam.image_width as f64, cam.image_height as f64);
    let mut bounds: Option<[f64; 4]> = None;
    for &[x, y, z] in b.corners.iter().filter(|c| c[2] > NEAR_PLANE_M) {
        let u = cam.fx * x / z + cam.cx;
        let v = cam.fy * y / z + cam.cy;
        bounds = Some(match bounds {
            None => [u, v, u, v],
            Some([u0, v0, u1, v1]) => [u0.min(u), v0.min(v), u1.max(u), v1.max(v)],
        });
    }
    let [u0, v0, u1, v1] = bounds?;
    let (x0, y0) = (u0.clamp(0.0, w), v0.clamp(0.0, h));
    let (x1, y1) = (u1.clamp(0.0, w), v1.clamp(0.0, h));
    if x1 - x0 < MIN_BOX_PX || y1 - y0 < MIN_BOX_PX {
        return None;
    }
    Some(BoundingBox {
        class_id: b.class_id,
        x_min: x0,
        y_min: y0,
        x_max: x1,
        y_max: y1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub frame_id: String,
    pub boxes: Vec<GroundTruthBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub name: String,
    pub frames: Vec<Frame>,
}

impl DatasetSplit {
    pub fn new(name: impl Into<String>, frames: Vec<Frame>) -> Result<Self> {
        let name = name.into();
        let mut seen = BTreeSet::new();
        for f in &frames {
            if !seen.insert(f.frame_id.as_str()) {
                return Err(Error::Parse {
                    line: 0,
                    message: format!("duplicate frame id {:?} in split {name}", f.frame_id),
                });
            }
        }
        Ok(Self { name, frames })
    }
}

/// Instance counts per class for each split, plus a totals row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassStats {
    pub classes: Vec<u32>,
    /// Split name with counts aligned to `classes`, in input order.
    pub rows: Vec<(String, Vec<u64>)>,
    pub totals: Vec<u64>,
}

impl ClassStats {
    pub fn count(&self, split: &str, class_id: u32) -> Option<u64> {
        let col = self.classes.iter().position(|c| *c == class_id)?;
        self.rows
            .iter()
            .find(|(name, _)| name == split)
            .map(|(_, counts)| counts[col])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("split");
        for c in &self.classes {
            let _ = write!(s, ",{}", class_name(*c));
        }
        s.push('\n');
        for (name, counts) in self.rows.iter().chain(std::iter::once(&(
            "total".to_string(),
            self.totals.clone(),
        ))) {
            s.push_str(name);
            for n in counts {
                let _ = write!(s, ",{n}");
            }
            s.push('\n');
        }
        s
    }
}

/// Counts instances per class per split. `classes` fixes the column set; any
/// extra class seen in the data is appended in ascending order.
pub fn class_stats(splits: &[DatasetSplit], classes: &[u32]) -> ClassStats {
    let per_split: Vec<BTreeMap<u32, u64>> = splits
        .iter()
        .map(|s| {
            let mut m = BTreeMap::new();
            for b in s.frames.iter().flat_map(|f| &f.boxes) {
                *m.entry(b.class_id()).or_insert(0) += 1;
            }
            m
        })
        .collect();

    let mut cols: Vec<u32> = classes.to_vec();
    let extra: BTreeSet<u32> = per_split
        .iter()
        .flat_map(|m| m.keys().copied())
        .filter(|c| !classes.contains(c))
        .collect();
    cols.extend(extra);

    let rows: Vec<(String, Vec<u64>)> = splits
        .iter()
        .zip(&per_split)
        .map(|(s, m)| {
            (
                s.name.clone(),
                cols.iter().map(|c| m.get(c).copied().unwrap_or(0)).collect(),
            )
        })
        .collect();
    let totals = (0..cols.len())
        .map(|i| rows.iter().map(|(_, r)| r[i]).sum())
        .collect();
    ClassStats {
        classes: cols,
        rows,
        totals,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQ: ImageSize = ImageSize::new(640, 640);

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 320.0, 320.0, SQ).unwrap()
    }

    #[test]
    fn parse_full_frame_and_quadrant() {
        let b = parse_labels("2 0.5 0.5 1.0 1.0\n".as_bytes(), SQ, "f").unwrap();
        assert_eq!(b[0].bbox, BoundingBox::new(2, 0.0, 0.0, 640.0, 640.0).unwrap());
        let b = parse_labels("0 0.25 0.25 0.5 0.5".as_bytes(), SQ, "f").unwrap();
        assert_eq!(b[0].bbox, BoundingBox::new(0, 0.0, 0.0, 320.0, 320.0).unwrap());
    }

    #[test]
    fn parse_rejects_out_of_range_and_malformed() {
        let e = parse_labels("1 0.5 0.5 1.5 0.5".as_bytes(), SQ, "f").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        let e = parse_labels("0 0.5 0.5 0.2 0.2\n\n0 0.5 0.5\n".as_bytes(), SQ, "f").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }));
        let e = parse_labels("0 0.9 0.5 0.4 0.2".as_bytes(), SQ, "f").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        let e = parse_labels("x 0.5 0.5 0.2 0.2".as_bytes(), SQ, "f").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        let e = parse_labels("0 0.5 0.5 0.0 0.2".as_bytes(), SQ, "f").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn projection_of_centered_cube_is_symmetric() {
        let cube = Box3D::from_extents(2, [-0.5, -0.5, 4.0], [0.5, 0.5, 5.0]);
        let b = project_box3d(&cube, &cam()).unwrap();
        assert!(((b.x_min + b.x_max) / 2.0 - 320.0).abs() < 1e-9);
        assert!(((b.y_min + b.y_max) / 2.0 - 320.0).abs() < 1e-9);
        // widest extent comes from the nearer face: 100 * 0.5 / 4
        assert!((b.x_max - 332.5).abs() < 1e-9);
    }

    #[test]
    fn pinhole_formula() {
        let mut b = Box3D::from_extents(0, [0.5, -0.5, 2.0], [1.0, 0.5, 3.0]);
        b.corners[0] = [1.0, 0.0, 2.0];
        let p = project_box3d(&b, &cam()).unwrap();
        // u = 100 * 1 / 2 + 320
        assert!((p.x_max - 370.0).abs() < 1e-9);
    }

    #[test]
    fn boxes_behind_camera_are_invisible() {
        let b = Box3D::from_extents(0, [-1.0, -1.0, -5.0], [1.0, 1.0, -2.0]);
        assert_eq!(project_box3d(&b, &cam()), None);
        let b = Box3D::from_extents(0, [-1.0, -1.0, -5.0], [1.0, 1.0, 0.005]);
        assert_eq!(project_box3d(&b, &cam()), None);
    }

    #[test]
    fn partially_behind_box_drops_hidden_corners() {
        let b = Box3D::from_extents(0, [1.0, -1.0, -2.0], [2.0, 1.0, 4.0]);
        let p = project_box3d(&b, &cam()).unwrap();
        // only the Z = 4 face survives: u in [345, 370]
        assert!((p.x_min - 345.0).abs() < 1e-9 && (p.x_max - 370.0).abs() < 1e-9);
    }

    #[test]
    fn tiny_and_offscreen_boxes_are_discarded() {
        let far = Box3D::from_extents(0, [-0.001, -0.001, 100.0], [0.001, 0.001, 101.0]);
        assert_eq!(project_box3d(&far, &cam()), None);
        let off = Box3D::from_extents(0, [100.0, 0.0, 2.0], [101.0, 1.0, 3.0]);
        assert_eq!(project_box3d(&off, &cam()), None);
    }

    #[test]
    fn invalid_camera() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 320.0, 320.0, SQ).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 640.0, 320.0, SQ).is_err());
    }

    #[test]
    fn empty_split_counts_zero() {
        let s = class_stats(&[DatasetSplit::new("test", vec![]).unwrap()], &[0, 1, 2]);
        assert_eq!(s.rows[0].1, vec![0, 0, 0]);
        assert_eq!(s.totals, vec![0, 0, 0]);
    }

    #[test]
    fn duplicate_frame_ids_rejected() {
        let f = Frame {
            frame_id: "a".into(),
            boxes: vec![],
        };
        assert!(DatasetSplit::new("train", vec![f.clone(), f]).is_err());
    }
}
