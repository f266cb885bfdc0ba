//! Windowed sums and mask-weighted local means over cubic `n^3` neighborhoods.
//!
//! Windows are truncated at the volume border: voxels outside the domain
//! contribute neither value nor weight. Sums are built from three separable
//! 1D moving sums, so the cost per voxel does not depend on `n`. Each scan
//! line is accumulated sequentially, which keeps results identical across
//! thread counts.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{ConfidenceMask, Dims, Volume};

/// Stabilizer added to every window weight sum and correlation denominator.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Rows per task in the z pass.
const Z_BLOCK_ROWS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WindowSpec {
    n: usize,
}

impl WindowSpec {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || n.is_multiple_of(2) {
            return Err(Error::Config(format!("window edge {n} must be odd and positive")));
        }
        Ok(WindowSpec { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn radius(&self) -> usize {
        self.n / 2
    }

    /// Largest odd edge not exceeding `n / 2^level`, but at least 3 when
    /// `n >= 3`. Used to keep the physical window size across pyramid levels.
    pub fn coarsened(&self, level: usize) -> WindowSpec {
        if self.n < 3 {
            return *self;
        }
        let mut n = (self.n >> level).max(3);
        if n.is_multiple_of(2) {
            n -= 1;
        }
        WindowSpec { n: n.max(3) }
    }
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec { n: 15 }
    }
}

/// Windowed sum of a 64-bit grid.
pub fn box_sum_f64(data: &[f64], dims: Dims, win: WindowSpec) -> Vec<f64> {
    assert_eq!(data.len(), dims.len(), "grid length does not match dims");
    let r = win.radius();
    if r == 0 {
        return data.to_vec();
    }
    let tmp = sum_along_x(data, dims, r);
    let tmp = sum_along_y(&tmp, dims, r);
    sum_along_z(&tmp, dims, r)
}

/// Windowed sum: output at `p` is the sum of `vol` over the in-bounds part
/// of the `n^3` window centred at `p`.
pub fn box_sum(vol: &Volume, win: WindowSpec) -> Volume {
    if win.radius() == 0 {
        return vol.clone();
    }
    let out = box_sum_f64(&vol.to_f64(), vol.dims(), win);
    Volume::from_f64(vol.dims(), vol.spacing(), &out).expect("finite sums of finite data")
}

/// `box(w * v) / (box(w) + eps)` on 64-bit grids.
pub fn weighted_local_mean_f64(
    data: &[f64],
    weights: &[f64],
    dims: Dims,
    win: WindowSpec,
    eps: f64,
) -> Vec<f64> {
    let wv: Vec<f64> = data.iter().zip(weights).map(|(v, w)| v * w).collect();
    let num = box_sum_f64(&wv, dims, win);
    let den = box_sum_f64(weights, dims, win);
    num.iter().zip(&den).map(|(n, d)| n / (d + eps)).collect()
}

/// Local mean of `vol` over observed voxels only, weighted by `w`.
///
/// Windows holding no weight evaluate to 0.
pub fn weighted_local_mean(vol: &Volume, w: &ConfidenceMask, win: WindowSpec, eps: f64) -> Result<Volume> {
    if vol.dims() != w.dims() {
        return Err(Error::invalid(format!(
            "volume dims {} differ from mask dims {}",
            vol.dims(),
            w.dims()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    let mu = weighted_local_mean_f64(&vol.to_f64(), &w.to_f64(), vol.dims(), win, eps);
    Volume::from_f64(vol.dims(), vol.spacing(), &mu)
}

/// Mean-subtracted values `v(p_i) - mu(p)` for a centre `p` and a neighbour `p_i`.
#[derive(Debug, Clone, Copy)]
pub struct Centered<'a> {
    values: &'a [f64],
    mean: &'a [f64],
}

impl<'a> Centered<'a> {
    pub fn new(values: &'a [f64], mean: &'a [f64]) -> Result<Self> {
        if values.len() != mean.len() {
            return Err(Error::invalid("values and local means differ in length"));
        }
        Ok(Centered { values, mean })
    }

    #[inline]
    pub fn residual(&self, centre: usize, neighbour: usize) -> f64 {
        self.values[neighbour] - self.mean[centre]
    }
}

/// Moving sum along one contiguous line.
#[inline]
fn line_sum(src: &[f64], dst: &mut [f64], r: usize) {
    let len = src.len();
    let mut acc: f64 = src[..len.min(r + 1)].iter().sum();
    for i in 0..len {
        dst[i] = acc;
        if i + r + 1 < len {
            acc += src[i + r + 1];
        }
        if i >= r {
            acc -= src[i - r];
        }
    }
}

/// Moving sum of whole rows: `rows[k]` is a row of width `w`. Writes
/// `out[k] = sum of rows in [k - r, k + r]`.
#[inline]
fn row_moving_sum(src: &[f64], dst: &mut [f64], w: usize, count: usize, r: usize, stride: usize) {
    // src/dst rows are `stride` apart, each `w` wide
    let mut acc = vec![0.0f64; w];
    for k in 0..count.min(r + 1) {
        add_assign(&mut acc, &src[k * stride..k * stride + w]);
    }
    for k in 0..count {
        dst[k * stride..k * stride + w].copy_from_slice(&acc);
        if k + r + 1 < count {
            let j = (k + r + 1) * stride;
            add_assign(&mut acc, &src[j..j + w]);
        }
        if k >= r {
            let j = (k - r) * stride;
            sub_assign(&mut acc, &src[j..j + w]);
        }
    }
}

#[inline]
fn add_assign(acc: &mut [f64], row: &[f64]) {
    for (a, v) in acc.iter_mut().zip(row) {
        *a += v;
    }
}

#[inline]
fn sub_assign(acc: &mut [f64], row: &[f64]) {
    for (a, v) in acc.iter_mut().zip(row) {
        *a -= v;
    }
}

fn sum_along_x(src: &[f64], dims: Dims, r: usize) -> Vec<f64> {
    let mut dst = vec![0.0; src.len()];
    dst.par_chunks_mut(dims.nx)
        .zip(src.par_chunks(dims.nx))
        .for_each(|(d, s)| line_sum(s, d, r));
    dst
}

fn sum_along_y(src: &[f64], dims: Dims, r: usize) -> Vec<f64> {
    let plane = dims.nx * dims.ny;
    let mut dst = vec![0.0; src.len()];
    dst.par_chunks_mut(plane)
        .zip(src.par_chunks(plane))
        .for_each(|(d, s)| row_moving_sum(s, d, dims.nx, dims.ny, r, dims.nx));
    dst
}

fn sum_along_z(src: &[f64], dims: Dims, r: usize) -> Vec<f64> {
    let (nx, ny, nz) = (dims.nx, dims.ny, dims.nz);
    let plane = nx * ny;
    let blocks: Vec<(usize, usize)> = (0..ny)
        .step_by(Z_BLOCK_ROWS)
        .map(|y0| (y0, (y0 + Z_BLOCK_ROWS).min(ny)))
        .collect();
    // Each block handles a band of rows through every plane, producing its
    // output plane-major; the bands are then scattered back.
    let parts: Vec<Vec<f64>> = blocks
        .par_iter()
        .map(|&(y0, y1)| {
            let w = (y1 - y0) * nx;
            let mut out = vec![0.0; nz * w];
            let mut acc = vec![0.0; w];
            let band = |z: usize| &src[z * plane + y0 * nx..z * plane + y0 * nx + w];
            for z in 0..nz.min(r + 1) {
                add_assign(&mut acc, band(z));
            }
            for z in 0..nz {
                out[z * w..(z + 1) * w].copy_from_slice(&acc);
                if z + r + 1 < nz {
                    add_assign(&mut acc, band(z + r + 1));
                }
                if z >= r {
                    sub_assign(&mut acc, band(z - r));
                }
            }
            out
        })
        .collect();
    let mut dst = vec![0.0; src.len()];
    dst.par_chunks_mut(plane).enumerate().for_each(|(z, d)| {
        for (&(y0, y1), part) in blocks.iter().zip(&parts) {
            let w = (y1 - y0) * nx;
            d[y0 * nx..y0 * nx + w].copy_from_slice(&part[z * w..(z + 1) * w]);
        }
    });
    dst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(d: Dims) -> Volume {
        Volume::constant(d, 1.0).unwrap()
    }

    #[test]
    fn window_spec_validation() {
        assert!(WindowSpec::new(0).is_err());
        assert!(WindowSpec::new(4).is_err());
        assert_eq!(WindowSpec::new(1).unwrap().radius(), 0);
        assert_eq!(WindowSpec::new(15).unwrap().radius(), 7);
        let w = WindowSpec::new(15).unwrap();
        assert_eq!(w.coarsened(0).n(), 15);
        assert_eq!(w.coarsened(1).n(), 7);
        assert_eq!(w.coarsened(2).n(), 3);
        assert_eq!(WindowSpec::new(1).unwrap().coarsened(2).n(), 1);
    }

    #[test]
    fn box_sum_of_ones_counts_window() {
        let s = box_sum(&ones(Dims::cube(5)), WindowSpec::new(3).unwrap());
        assert_eq!(s.get(2, 2, 2), 27.0);
        assert_eq!(s.get(0, 0, 0), 8.0);
        assert_eq!(s.get(0, 2, 2), 18.0);
        assert_eq!(s.get(4, 4, 0), 8.0);
    }

    #[test]
    fn box_sum_window_larger_than_volume() {
        let d = Dims::new(3, 2, 4);
        let s = box_sum(&ones(d), WindowSpec::new(21).unwrap());
        assert!(s.data().iter().all(|&v| v == d.len() as f32));
    }

    #[test]
    fn box_sum_unit_window_is_exact_identity() {
        let v = Volume::from_fn(Dims::new(4, 3, 5), |x, y, z| {
            (x as f32).sin() + y as f32 * 0.37 - z as f32
        })
        .unwrap();
        assert_eq!(box_sum(&v, WindowSpec::new(1).unwrap()), v);
    }

    #[test]
    fn z_pass_handles_ragged_row_blocks() {
        // ny not a multiple of the block height
        let d = Dims::new(2, Z_BLOCK_ROWS + 3, 6);
        let data: Vec<f64> = (0..d.len()).map(|i| (i % 13) as f64).collect();
        let s = box_sum_f64(&data, d, WindowSpec::new(3).unwrap());
        let (x, y, z) = (1, Z_BLOCK_ROWS + 1, 3);
        let mut expect = 0.0;
        for zz in z - 1..=z + 1 {
            for yy in y - 1..=y + 1 {
                for xx in 0..2 {
                    expect += data[d.index(xx, yy, zz)];
                }
            }
        }
        assert_eq!(s[d.index(x, y, z)], expect);
    }

    #[test]
    fn weighted_mean_constant_volume() {
        let d = Dims::cube(5);
        let c = 3.5f32;
        let v = Volume::constant(d, c).unwrap();
        let win = WindowSpec::new(3).unwrap();
        let mu = weighted_local_mean(&v, &ConfidenceMask::ones(d), win, DEFAULT_EPS).unwrap();
        for &m in mu.data() {
            // the corner window holds only 8 voxels
            assert!((m - c).abs() as f64 <= c as f64 * DEFAULT_EPS / 8.0 + 1e-6);
        }
    }

    #[test]
    fn weighted_mean_empty_window_is_zero() {
        let d = Dims::new(3, 3, 9);
        let v = Volume::constant(d, 4.0).unwrap();
        let mut w = vec![0.0f32; d.len()];
        for i in d.slice_indices(crate::volume::Axis::Z, 8) {
            w[i] = 1.0;
        }
        let w = ConfidenceMask::new(d, w).unwrap();
        let mu = weighted_local_mean(&v, &w, WindowSpec::new(3).unwrap(), DEFAULT_EPS).unwrap();
        assert_eq!(mu.get(1, 1, 2), 0.0);
        assert!((mu.get(1, 1, 7) - 4.0).abs() < 1e-4);
    }

    #[test]
    fn weighted_mean_rejects_mismatch() {
        let v = ones(Dims::cube(3));
        let w = ConfidenceMask::ones(Dims::cube(4));
        assert!(weighted_local_mean(&v, &w, WindowSpec::new(3).unwrap(), 1e-5).is_err());
    }

    #[test]
    fn centered_residuals() {
        let values = [5.0, 1.0, 2.0];
        let mean = [2.0, 2.0, 2.0];
        let c = Centered::new(&values, &mean).unwrap();
        assert_eq!(c.residual(1, 0), 3.0);
        let flat = [2.0; 3];
        let c = Centered::new(&flat, &mean).unwrap();
        for p in 0..3 {
            for q in 0..3 {
                assert_eq!(c.residual(p, q), 0.0);
            }
        }
    }
}
