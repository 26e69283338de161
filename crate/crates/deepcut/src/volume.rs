//! Scalar volumes, label maps and their on-disk container.
//!
//! A volume is stored as a two-file pair: a plain-text header
//! (`key = value` lines) and a raw little-endian binary payload in
//! x-fastest order. Intensity volumes use `dtype = float32`, label maps
//! `dtype = uint8`. Multi-channel fields (e.g. per-class probabilities)
//! add a `channels` key and concatenate the channel payloads.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};

use crate::error::{Error, Result};

pub const LABEL_BG: u8 = 0;
pub const LABEL_FG: u8 = 1;
pub const LABEL_UNKNOWN: u8 = 2;

/// 3D scalar intensity grid with voxel spacing metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn zeros(dims: [usize; 3], spacing: [f64; 3]) -> Self {
        Volume { dims, spacing, data: vec![0.0; dims[0] * dims[1] * dims[2]] }
    }

    pub fn from_vec(dims: [usize; 3], spacing: [f64; 3], data: Vec<f32>) -> Result<Self> {
        if data.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::DimMismatch(format!(
                "payload holds {} values, dims {:?} require {}",
                data.len(),
                dims,
                dims[0] * dims[1] * dims[2]
            )));
        }
        Ok(Volume { dims, spacing, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f32) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Physical position of a voxel center: index scaled by spacing.
    #[inline]
    pub fn world(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        [x as f64 * self.spacing[0], y as f64 * self.spacing[1], z as f64 * self.spacing[2]]
    }
}

/// Per-voxel labels aligned with a [`Volume`]: 0 background, 1 foreground,
/// 2 unlabeled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    dims: [usize; 3],
    data: Vec<u8>,
}

impl LabelMap {
    pub fn zeros(dims: [usize; 3]) -> Self {
        LabelMap { dims, data: vec![LABEL_BG; dims[0] * dims[1] * dims[2]] }
    }

    pub fn from_vec(dims: [usize; 3], data: Vec<u8>) -> Result<Self> {
        if data.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::DimMismatch(format!(
                "payload holds {} labels, dims {:?} require {}",
                data.len(),
                dims,
                dims[0] * dims[1] * dims[2]
            )));
        }
        Ok(LabelMap { dims, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: u8) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&l| l == LABEL_FG).count()
    }
}

fn raw_path(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

struct Header {
    dims: [usize; 3],
    spacing: [f64; 3],
    dtype: String,
    channels: usize,
}

fn parse_header(path: &Path) -> Result<Header> {
    let text = fs::read_to_string(path)?;
    let mut dims = None;
    let mut spacing = [1.0f64; 3];
    let mut dtype = None;
    let mut channels = 1usize;
    let err = |msg: &str| Error::Parse { file: path.display().to_string(), msg: msg.into() };
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(&format!("expected `key = value`, got `{line}`")))?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "dims" => {
                let v: Vec<usize> =
                    value.split_whitespace().map(|t| t.parse().unwrap_or(0)).collect();
                if v.len() != 3 || v.contains(&0) {
                    return Err(err("dims must be three positive integers"));
                }
                dims = Some([v[0], v[1], v[2]]);
            }
            "spacing" => {
                let v: Vec<f64> =
                    value.split_whitespace().filter_map(|t| t.parse().ok()).collect();
                if v.len() != 3 {
                    return Err(err("spacing must be three numbers"));
                }
                spacing = [v[0], v[1], v[2]];
            }
            "dtype" => dtype = Some(value.to_string()),
            "byte_order" => {
                if value != "little" {
                    return Err(err("only little byte_order is supported"));
                }
            }
            "channels" => {
                channels = value.parse().map_err(|_| err("channels must be an integer"))?;
            }
            _ => {} // unknown keys are ignored
        }
    }
    Ok(Header {
        dims: dims.ok_or_else(|| err("missing dims"))?,
        spacing,
        dtype: dtype.ok_or_else(|| err("missing dtype"))?,
        channels,
    })
}

fn write_header(
    path: &Path,
    dims: [usize; 3],
    spacing: Option<[f64; 3]>,
    dtype: &str,
    channels: usize,
) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    writeln!(f, "dims = {} {} {}", dims[0], dims[1], dims[2])?;
    if let Some(s) = spacing {
        writeln!(f, "spacing = {} {} {}", s[0], s[1], s[2])?;
    }
    writeln!(f, "dtype = {dtype}")?;
    writeln!(f, "byte_order = little")?;
    if channels != 1 {
        writeln!(f, "channels = {channels}")?;
    }
    Ok(())
}

/// Write a volume as `<path>` (header) plus a sibling `.raw` payload.
pub fn write_volume(path: &Path, vol: &Volume) -> Result<()> {
    write_header(path, vol.dims, Some(vol.spacing), "float32", 1)?;
    let mut bytes = vec![0u8; vol.data.len() * 4];
    LittleEndian::write_f32_into(&vol.data, &mut bytes);
    fs::write(raw_path(path), bytes)?;
    Ok(())
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let h = parse_header(path)?;
    if h.dtype != "float32" || h.channels != 1 {
        return Err(Error::Parse {
            file: path.display().to_string(),
            msg: format!("expected single-channel float32, got {} x{}", h.dtype, h.channels),
        });
    }
    let bytes = fs::read(raw_path(path))?;
    let mut data = vec![0.0f32; bytes.len() / 4];
    LittleEndian::read_f32_into(&bytes, &mut data);
    Volume::from_vec(h.dims, h.spacing, data)
}

pub fn write_labelmap(path: &Path, map: &LabelMap) -> Result<()> {
    write_header(path, map.dims, None, "uint8", 1)?;
    fs::write(raw_path(path), &map.data)?;
    Ok(())
}

pub fn read_labelmap(path: &Path) -> Result<LabelMap> {
    let h = parse_header(path)?;
    if h.dtype != "uint8" || h.channels != 1 {
        return Err(Error::Parse {
            file: path.display().to_string(),
            msg: format!("expected single-channel uint8, got {} x{}", h.dtype, h.channels),
        });
    }
    LabelMap::from_vec(h.dims, fs::read(raw_path(path))?)
}

/// Write a multi-channel field (channel-major payload: all of channel 0,
/// then channel 1, ...). All channels must share dims and spacing.
pub fn write_channels(path: &Path, channels: &[&Volume]) -> Result<()> {
    let first = channels.first().ok_or_else(|| Error::DimMismatch("no channels".into()))?;
    for c in channels {
        if c.dims != first.dims {
            return Err(Error::DimMismatch("channel dims differ".into()));
        }
    }
    write_header(path, first.dims, Some(first.spacing), "float32", channels.len())?;
    let mut bytes = Vec::with_capacity(first.data.len() * 4 * channels.len());
    for c in channels {
        let mut chunk = vec![0u8; c.data.len() * 4];
        LittleEndian::write_f32_into(&c.data, &mut chunk);
        bytes.extend_from_slice(&chunk);
    }
    fs::write(raw_path(path), bytes)?;
    Ok(())
}

pub fn read_channels(path: &Path) -> Result<Vec<Volume>> {
    let h = parse_header(path)?;
    if h.dtype != "float32" {
        return Err(Error::Parse {
            file: path.display().to_string(),
            msg: format!("expected float32, got {}", h.dtype),
        });
    }
    let bytes = fs::read(raw_path(path))?;
    let per = h.dims[0] * h.dims[1] * h.dims[2];
    if bytes.len() != per * 4 * h.channels {
        return Err(Error::DimMismatch(format!(
            "payload is {} bytes, expected {}",
            bytes.len(),
            per * 4 * h.channels
        )));
    }
    let mut out = Vec::with_capacity(h.channels);
    for c in 0..h.channels {
        let mut data = vec![0.0f32; per];
        LittleEndian::read_f32_into(&bytes[c * per * 4..(c + 1) * per * 4], &mut data);
        out.push(Volume::from_vec(h.dims, h.spacing, data)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volume_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = Volume::zeros([3, 4, 2], [1.0, 1.0, 2.5]);
        for (i, x) in v.data_mut().iter_mut().enumerate() {
            *x = i as f32 * 0.5 - 3.0;
        }
        let path = dir.path().join("vol.hdr");
        write_volume(&path, &v).unwrap();
        let back = read_volume(&path).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn labelmap_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = LabelMap::zeros([2, 2, 2]);
        m.set(1, 0, 1, LABEL_FG);
        m.set(0, 1, 0, LABEL_UNKNOWN);
        let path = dir.path().join("labels.hdr");
        write_labelmap(&path, &m).unwrap();
        assert_eq!(read_labelmap(&path).unwrap(), m);
    }

    #[test]
    fn two_channel_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Volume::zeros([2, 3, 1], [1.0; 3]);
        let mut b = Volume::zeros([2, 3, 1], [1.0; 3]);
        a.set(1, 2, 0, 0.25);
        b.set(0, 0, 0, -1.5);
        let path = dir.path().join("probs.hdr");
        write_channels(&path, &[&a, &b]).unwrap();
        let back = read_channels(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], a);
        assert_eq!(back[1], b);
    }

    #[test]
    fn x_fastest_indexing() {
        let v = Volume::zeros([4, 5, 6], [1.0; 3]);
        assert_eq!(v.index(1, 0, 0), 1);
        assert_eq!(v.index(0, 1, 0), 4);
        assert_eq!(v.index(0, 0, 1), 20);
    }

    #[test]
    fn dim_mismatch_rejected() {
        assert!(Volume::from_vec([2, 2, 2], [1.0; 3], vec![0.0; 7]).is_err());
        assert!(LabelMap::from_vec([2, 2, 2], vec![0; 9]).is_err());
    }
}
