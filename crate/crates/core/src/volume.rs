//! Dense voxel containers and the handful of geometric queries everything
//! else is built on.
//!
//! Memory layout is x-fastest: index = x + dims[0] * (y + dims[1] * z).
//! Positions handed to samplers are in voxel coordinates, so the center of
//! voxel (x, y, z) is at position (x, y, z) exactly.

use crate::error::{Error, Result};

/// Scalar volume, 32-bit float voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    data: Vec<f32>,
}

/// Binary mask, one byte per voxel, 0 = background, 1 = foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    dims: [usize; 3],
    data: Vec<u8>,
}

/// Foreground census of a mask: voxel count and inclusive bounding box,
/// `None` when the mask is empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoxelSetStats {
    pub count: usize,
    pub bbox: Option<([i64; 3], [i64; 3])>,
}

fn check_dims(dims: [usize; 3]) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::invalid(format!("zero-sized volume dims {dims:?}")));
    }
    dims[0]
        .checked_mul(dims[1])
        .and_then(|p| p.checked_mul(dims[2]))
        .ok_or_else(|| Error::invalid(format!("volume dims {dims:?} overflow")))?;
    Ok(())
}

impl Volume {
    pub fn zeros(dims: [usize; 3]) -> Result<Volume> {
        check_dims(dims)?;
        Ok(Volume { dims, data: vec![0.0; dims[0] * dims[1] * dims[2]] })
    }

    /// Wrap an existing buffer; its length must match the dims product.
    pub fn from_vec(dims: [usize; 3], data: Vec<f32>) -> Result<Volume> {
        check_dims(dims)?;
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::invalid(format!(
                "buffer length {} does not match dims {dims:?} (need {n})",
                data.len()
            )));
        }
        Ok(Volume { dims, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
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

    /// Trilinear interpolation at a voxel-space position.
    ///
    /// Out-of-domain positions are clamped per axis onto the voxel-center
    /// hull [0, dim-1], so samples never read outside the buffer and the
    /// field extends continuously past the faces. NaN voxel values
    /// propagate into the result.
    pub fn sample_trilinear(&self, p: [f64; 3]) -> f64 {
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let max = (self.dims[a] - 1) as f64;
            // NaN positions clamp to 0 rather than poisoning the index math.
            let c = if p[a].is_nan() { 0.0 } else { p[a].clamp(0.0, max) };
            let f = c.floor().min(max - 1.0).max(0.0);
            base[a] = f as usize;
            frac[a] = if self.dims[a] == 1 { 0.0 } else { c - f };
        }
        let [fx, fy, fz] = frac;
        let mut acc = 0.0;
        for dz in 0..2usize {
            let wz = if dz == 0 { 1.0 - fz } else { fz };
            for dy in 0..2usize {
                let wy = if dy == 0 { 1.0 - fy } else { fy };
                for dx in 0..2usize {
                    let wx = if dx == 0 { 1.0 - fx } else { fx };
                    let w = wx * wy * wz;
                    // Zero-weight corners are skipped so a sample landing
                    // exactly on a voxel center reads only that voxel, even
                    // next to NaN data.
                    if w == 0.0 {
                        continue;
                    }
                    let x = (base[0] + dx).min(self.dims[0] - 1);
                    let y = (base[1] + dy).min(self.dims[1] - 1);
                    let z = (base[2] + dz).min(self.dims[2] - 1);
                    acc += w * self.get(x, y, z) as f64;
                }
            }
        }
        acc
    }
}

impl Mask {
    pub fn zeros(dims: [usize; 3]) -> Result<Mask> {
        check_dims(dims)?;
        Ok(Mask { dims, data: vec![0; dims[0] * dims[1] * dims[2]] })
    }

    /// Wrap a buffer of 0/1 bytes. Any nonzero byte counts as foreground
    /// and is normalized to 1.
    pub fn from_vec(dims: [usize; 3], mut data: Vec<u8>) -> Result<Mask> {
        check_dims(dims)?;
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::invalid(format!(
                "buffer length {} does not match dims {dims:?} (need {n})",
                data.len()
            )));
        }
        for b in &mut data {
            *b = (*b != 0) as u8;
        }
        Ok(Mask { dims, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.index(x, y, z)] != 0
    }

    /// Foreground test with out-of-domain coordinates reading as background.
    #[inline]
    pub fn get_i64(&self, x: i64, y: i64, z: i64) -> bool {
        if x < 0 || y < 0 || z < 0 {
            return false;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        if x >= self.dims[0] || y >= self.dims[1] || z >= self.dims[2] {
            return false;
        }
        self.get(x, y, z)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = self.index(x, y, z);
        self.data[i] = v as u8;
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn stats(&self) -> VoxelSetStats {
        let mut count = 0usize;
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[0] {
                    if self.get(x, y, z) {
                        count += 1;
                        let p = [x as i64, y as i64, z as i64];
                        for a in 0..3 {
                            lo[a] = lo[a].min(p[a]);
                            hi[a] = hi[a].max(p[a]);
                        }
                    }
                }
            }
        }
        VoxelSetStats { count, bbox: (count > 0).then_some((lo, hi)) }
    }

    /// Foreground voxels with at least one of their six face neighbors
    /// background. Voxels on the volume face treat out-of-domain as
    /// background, so a mask touching the face has boundary there.
    /// Returned in x-fastest scan order.
    pub fn boundary_voxels(&self) -> Vec<[i64; 3]> {
        let mut out = Vec::new();
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[0] {
                    if !self.get(x, y, z) {
                        continue;
                    }
                    let (xi, yi, zi) = (x as i64, y as i64, z as i64);
                    let open = !self.get_i64(xi - 1, yi, zi)
                        || !self.get_i64(xi + 1, yi, zi)
                        || !self.get_i64(xi, yi - 1, zi)
                        || !self.get_i64(xi, yi + 1, zi)
                        || !self.get_i64(xi, yi, zi - 1)
                        || !self.get_i64(xi, yi, zi + 1);
                    if open {
                        out.push([xi, yi, zi]);
                    }
                }
            }
        }
        out
    }
}

/// Dice-Sorensen coefficient between two masks of equal dims.
///
/// Two empty masks agree perfectly and score 1.0.
pub fn dsc(a: &Mask, b: &Mask) -> Result<f64> {
    if a.dims != b.dims {
        return Err(Error::DimensionMismatch { expected: a.dims, got: b.dims });
    }
    let mut inter = 0u64;
    let mut na = 0u64;
    let mut nb = 0u64;
    for (va, vb) in a.data.iter().zip(&b.data) {
        na += *va as u64;
        nb += *vb as u64;
        inter += (*va & *vb) as u64;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}
