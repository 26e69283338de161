//! Per-slice bounding boxes, halo rings and the evolving foreground /
//! background target regions.
//!
//! The bounding box stack `B` is the weak annotation: one 2D rectangle per
//! slice that contains foreground. The halo `H` is a ring around each box,
//! assumed to contain only background. During iterative refinement the
//! box interior is partitioned into the current foreground target `R_FG`
//! and background target `R_BG`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{LabelMap, LABEL_FG};

/// Inclusive 2D rectangle in voxel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn area(&self) -> usize {
        (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)
    }

    /// Grow by `margin` on every side, clamped to `[0, nx) x [0, ny)`.
    pub fn enlarged(&self, margin: usize, nx: usize, ny: usize) -> Rect {
        Rect {
            x0: self.x0.saturating_sub(margin),
            y0: self.y0.saturating_sub(margin),
            x1: (self.x1 + margin).min(nx - 1),
            y1: (self.y1 + margin).min(ny - 1),
        }
    }
}

/// Bounding boxes, halo rectangles and target-region masks for one volume.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSet {
    dims: [usize; 3],
    boxes: Vec<Option<Rect>>,
    halo_outer: Vec<Option<Rect>>,
    r_fg: Vec<bool>,
    r_bg: Vec<bool>,
}

impl RegionSet {
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    fn voxel_index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn box_on_slice(&self, z: usize) -> Option<Rect> {
        self.boxes[z]
    }

    pub fn halo_outer_on_slice(&self, z: usize) -> Option<Rect> {
        self.halo_outer[z]
    }

    pub fn boxes(&self) -> &[Option<Rect>] {
        &self.boxes
    }

    #[inline]
    pub fn in_box(&self, x: usize, y: usize, z: usize) -> bool {
        self.boxes[z].is_some_and(|r| r.contains(x, y))
    }

    /// Halo membership: inside the enlarged rectangle but outside the box.
    #[inline]
    pub fn in_halo(&self, x: usize, y: usize, z: usize) -> bool {
        self.halo_outer[z].is_some_and(|r| r.contains(x, y)) && !self.in_box(x, y, z)
    }

    #[inline]
    pub fn in_fg(&self, x: usize, y: usize, z: usize) -> bool {
        self.r_fg[self.voxel_index(x, y, z)]
    }

    #[inline]
    pub fn in_bg(&self, x: usize, y: usize, z: usize) -> bool {
        self.r_bg[self.voxel_index(x, y, z)]
    }

    fn collect<F: Fn(usize, usize, usize) -> bool>(&self, pred: F) -> Vec<[usize; 3]> {
        let mut out = Vec::new();
        for z in 0..self.dims[2] {
            if self.halo_outer[z].is_none() && self.boxes[z].is_none() {
                continue;
            }
            for y in 0..self.dims[1] {
                for x in 0..self.dims[0] {
                    if pred(x, y, z) {
                        out.push([x, y, z]);
                    }
                }
            }
        }
        out
    }

    pub fn box_voxels(&self) -> Vec<[usize; 3]> {
        self.collect(|x, y, z| self.in_box(x, y, z))
    }

    pub fn halo_voxels(&self) -> Vec<[usize; 3]> {
        self.collect(|x, y, z| self.in_halo(x, y, z))
    }

    pub fn fg_voxels(&self) -> Vec<[usize; 3]> {
        self.collect(|x, y, z| self.in_fg(x, y, z))
    }

    pub fn bg_voxels(&self) -> Vec<[usize; 3]> {
        self.collect(|x, y, z| self.in_bg(x, y, z))
    }

    pub fn box_voxel_count(&self) -> usize {
        self.boxes
            .iter()
            .zip(0..)
            .filter_map(|(r, _)| r.map(|r| r.area()))
            .sum()
    }

    pub fn fg_count(&self) -> usize {
        self.r_fg.iter().filter(|&&b| b).count()
    }

    /// Replace the target partition. `fg` must hold box voxels only; the
    /// background target becomes the rest of the box.
    pub fn set_targets_from_fg(&mut self, fg: &[[usize; 3]]) -> Result<()> {
        let mut new_fg = vec![false; self.r_fg.len()];
        for &[x, y, z] in fg {
            if !self.in_box(x, y, z) {
                return Err(Error::DimMismatch(format!(
                    "foreground target voxel ({x},{y},{z}) lies outside the bounding box"
                )));
            }
            new_fg[self.voxel_index(x, y, z)] = true;
        }
        self.r_fg = new_fg;
        for z in 0..self.dims[2] {
            let Some(r) = self.boxes[z] else { continue };
            for y in r.y0..=r.y1 {
                for x in r.x0..=r.x1 {
                    let i = self.voxel_index(x, y, z);
                    self.r_bg[i] = !self.r_fg[i];
                }
            }
        }
        Ok(())
    }

    /// Initialise targets from a pre-segmentation mask: foreground where the
    /// mask is 1 inside the box, background on the rest of the box.
    pub fn set_targets_from_mask(&mut self, mask: &LabelMap) -> Result<()> {
        if mask.dims() != self.dims {
            return Err(Error::DimMismatch("pre-segmentation dims differ from region dims".into()));
        }
        let fg: Vec<[usize; 3]> = self
            .box_voxels()
            .into_iter()
            .filter(|&[x, y, z]| mask.get(x, y, z) == LABEL_FG)
            .collect();
        self.set_targets_from_fg(&fg)
    }

    /// The target partition as a label map over the box (1 = R_FG).
    pub fn fg_labelmap(&self) -> LabelMap {
        let mut m = LabelMap::zeros(self.dims);
        for (i, &f) in self.r_fg.iter().enumerate() {
            if f {
                m.data_mut()[i] = LABEL_FG;
            }
        }
        m
    }

    /// Check the structural invariants: boxes inside halo rectangles,
    /// targets inside the box and disjoint.
    pub fn validate(&self) -> Result<()> {
        for z in 0..self.dims[2] {
            match (self.boxes[z], self.halo_outer[z]) {
                (Some(b), Some(h)) => {
                    if b.x0 < h.x0 || b.y0 < h.y0 || b.x1 > h.x1 || b.y1 > h.y1 {
                        return Err(Error::DimMismatch(format!(
                            "slice {z}: box extends beyond halo rectangle"
                        )));
                    }
                }
                (Some(_), None) => {
                    return Err(Error::DimMismatch(format!("slice {z}: box without halo")));
                }
                _ => {}
            }
        }
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[0] {
                    let i = self.voxel_index(x, y, z);
                    if self.r_fg[i] && self.r_bg[i] {
                        return Err(Error::DimMismatch(format!(
                            "targets overlap at ({x},{y},{z})"
                        )));
                    }
                    if (self.r_fg[i] || self.r_bg[i]) && !self.in_box(x, y, z) {
                        return Err(Error::DimMismatch(format!(
                            "target voxel ({x},{y},{z}) outside the box"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Tight per-slice 2D extent of the foreground, enlarged by `margin` and
/// clamped to the volume. Slices without foreground get no rectangle.
pub fn bbox_from_mask(mask: &LabelMap, margin: usize) -> Result<Vec<Option<Rect>>> {
    let [nx, ny, nz] = mask.dims();
    let mut boxes = vec![None; nz];
    let mut any = false;
    for z in 0..nz {
        let mut ext: Option<Rect> = None;
        for y in 0..ny {
            for x in 0..nx {
                if mask.get(x, y, z) == LABEL_FG {
                    ext = Some(match ext {
                        None => Rect { x0: x, y0: y, x1: x, y1: y },
                        Some(r) => Rect {
                            x0: r.x0.min(x),
                            y0: r.y0.min(y),
                            x1: r.x1.max(x),
                            y1: r.y1.max(y),
                        },
                    });
                }
            }
        }
        if let Some(r) = ext {
            boxes[z] = Some(r.enlarged(margin, nx, ny));
            any = true;
        }
    }
    if !any {
        return Err(Error::EmptyMask);
    }
    Ok(boxes)
}

/// Build a region set whose halo extends each box by `extent` voxels
/// (clamped at the volume bounds). Targets start as foreground = box,
/// background = empty.
pub fn halo_from_bbox(boxes: &[Option<Rect>], extent: usize, dims: [usize; 3]) -> RegionSet {
    assert_eq!(boxes.len(), dims[2], "one box slot per slice");
    let halo_outer: Vec<Option<Rect>> =
        boxes.iter().map(|b| b.map(|r| r.enlarged(extent, dims[0], dims[1]))).collect();
    let mut rs = RegionSet {
        dims,
        boxes: boxes.to_vec(),
        halo_outer,
        r_fg: vec![false; dims[0] * dims[1] * dims[2]],
        r_bg: vec![false; dims[0] * dims[1] * dims[2]],
    };
    let fg = rs.box_voxels();
    rs.set_targets_from_fg(&fg).expect("box voxels are inside the box");
    rs
}

#[derive(Serialize, Deserialize)]
struct RegionRow {
    slice_index: usize,
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    kind: String,
}

/// CSV rows `slice_index,x0,y0,x1,y1,kind` with kind `B` (box) or `H`
/// (outer halo rectangle).
pub fn write_regions_csv(path: &Path, rs: &RegionSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for z in 0..rs.dims[2] {
        if let Some(r) = rs.boxes[z] {
            w.serialize(RegionRow {
                slice_index: z,
                x0: r.x0,
                y0: r.y0,
                x1: r.x1,
                y1: r.y1,
                kind: "B".into(),
            })
            .map_err(csv_err(path))?;
        }
        if let Some(r) = rs.halo_outer[z] {
            w.serialize(RegionRow {
                slice_index: z,
                x0: r.x0,
                y0: r.y0,
                x1: r.x1,
                y1: r.y1,
                kind: "H".into(),
            })
            .map_err(csv_err(path))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_regions_csv(path: &Path, dims: [usize; 3]) -> Result<RegionSet> {
    let mut boxes = vec![None; dims[2]];
    let mut halo_outer = vec![None; dims[2]];
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    for row in reader.deserialize::<RegionRow>() {
        let row = row.map_err(csv_err(path))?;
        if row.slice_index >= dims[2] {
            return Err(Error::Parse {
                file: path.display().to_string(),
                msg: format!("slice {} outside volume with {} slices", row.slice_index, dims[2]),
            });
        }
        let rect = Rect { x0: row.x0, y0: row.y0, x1: row.x1, y1: row.y1 };
        match row.kind.as_str() {
            "B" => boxes[row.slice_index] = Some(rect),
            "H" => halo_outer[row.slice_index] = Some(rect),
            other => {
                return Err(Error::Parse {
                    file: path.display().to_string(),
                    msg: format!("unknown region kind `{other}`"),
                })
            }
        }
    }
    let mut rs = RegionSet {
        dims,
        boxes,
        halo_outer,
        r_fg: vec![false; dims[0] * dims[1] * dims[2]],
        r_bg: vec![false; dims[0] * dims[1] * dims[2]],
    };
    let fg = rs.box_voxels();
    rs.set_targets_from_fg(&fg).expect("box voxels are inside the box");
    rs.validate()?;
    Ok(rs)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Parse { file: path.display().to_string(), msg: e.to_string() }
}
