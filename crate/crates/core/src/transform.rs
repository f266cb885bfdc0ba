//! Dense displacement fields and the warps built on them.
//!
//! A field stores `u(p)` in voxel units of the grid it is defined on; the
//! moving image is sampled at `p + u(p)`. Out-of-domain policy differs per
//! payload: intensities clamp to the border, mask weights fall to zero, and
//! labels become background.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{ConfidenceMask, Dims, LabelMap, Volume};

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    dims: Dims,
    u: Vec<Vec3>,
}

impl DisplacementField {
    pub fn new(dims: Dims, u: Vec<Vec3>) -> Result<Self> {
        if dims.is_empty() || dims.len() != u.len() {
            return Err(Error::invalid(format!(
                "field dims {dims} need {} vectors, got {}",
                dims.len(),
                u.len()
            )));
        }
        if let Some(i) = u.iter().position(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::NonFinite {
                index: i,
                offset: 12 * i,
            });
        }
        Ok(DisplacementField { dims, u })
    }

    pub fn zeros(dims: Dims) -> Self {
        DisplacementField {
            dims,
            u: vec![[0.0; 3]; dims.len()],
        }
    }

    pub fn constant(dims: Dims, v: Vec3) -> Self {
        DisplacementField {
            dims,
            u: vec![v; dims.len()],
        }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> Vec3) -> Result<Self> {
        let u = (0..dims.len())
            .map(|i| {
                let (x, y, z) = dims.coords(i);
                f(x, y, z)
            })
            .collect();
        DisplacementField::new(dims, u)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn vectors(&self) -> &[Vec3] {
        &self.u
    }

    pub fn into_vectors(self) -> Vec<Vec3> {
        self.u
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> Vec3 {
        self.u[self.dims.index(x, y, z)]
    }

    /// Largest absolute displacement component.
    pub fn max_abs(&self) -> f64 {
        self.u
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |m, c| m.max(c.abs()))
    }

    /// Mean of each component over the voxels selected by `keep`.
    pub fn mean_where(&self, keep: impl Fn(usize) -> bool) -> Option<Vec3> {
        let mut acc = [0.0; 3];
        let mut n = 0usize;
        for (_, v) in self.u.iter().enumerate().filter(|(i, _)| keep(*i)) {
            for a in 0..3 {
                acc[a] += v[a];
            }
            n += 1;
        }
        (n > 0).then(|| acc.map(|s| s / n as f64))
    }

    pub(crate) fn vectors_mut(&mut self) -> &mut [Vec3] {
        &mut self.u
    }

    /// Sampling location `p + u(p)` of voxel `i`.
    #[inline]
    fn target(&self, i: usize) -> Vec3 {
        let (x, y, z) = self.dims.coords(i);
        let u = self.u[i];
        [x as f64 + u[0], y as f64 + u[1], z as f64 + u[2]]
    }
}

/// Lower cell corner, fractional offset, and whether the coordinate was
/// clamped, for a clamp-to-border lookup along one axis.
#[inline]
fn clamped_cell(c: f64, n: usize) -> (usize, f64, bool) {
    if n == 1 {
        return (0, 0.0, true);
    }
    let hi = (n - 1) as f64;
    if c < 0.0 {
        (0, 0.0, true)
    } else if c > hi {
        (n - 1, 0.0, true)
    } else {
        // lattice points take the cell to their right; on the top face that
        // cell is degenerate and the slope is zero
        let i0 = c.floor() as usize;
        (i0, c - i0 as f64, false)
    }
}

#[inline]
fn upper(i0: usize, n: usize) -> usize {
    (i0 + 1).min(n - 1)
}

/// Clamped trilinear sample and its gradient with respect to the sampling
/// position. Gradient components along clamped axes are zero.
#[inline]
pub(crate) fn sample_with_gradient(data: &[f64], dims: Dims, pos: Vec3) -> (f64, Vec3) {
    let (x0, tx, cx) = clamped_cell(pos[0], dims.nx);
    let (y0, ty, cy) = clamped_cell(pos[1], dims.ny);
    let (z0, tz, cz) = clamped_cell(pos[2], dims.nz);
    let (x1, y1, z1) = (upper(x0, dims.nx), upper(y0, dims.ny), upper(z0, dims.nz));
    let v = |x, y, z| data[dims.index(x, y, z)];
    let (c000, c100, c010, c110) = (v(x0, y0, z0), v(x1, y0, z0), v(x0, y1, z0), v(x1, y1, z0));
    let (c001, c101, c011, c111) = (v(x0, y0, z1), v(x1, y0, z1), v(x0, y1, z1), v(x1, y1, z1));

    // interpolate along x, then y, then z
    let c00 = c000 + tx * (c100 - c000);
    let c10 = c010 + tx * (c110 - c010);
    let c01 = c001 + tx * (c101 - c001);
    let c11 = c011 + tx * (c111 - c011);
    let c0 = c00 + ty * (c10 - c00);
    let c1 = c01 + ty * (c11 - c01);
    let value = c0 + tz * (c1 - c0);

    let gx = if cx {
        0.0
    } else {
        let d00 = c100 - c000;
        let d10 = c110 - c010;
        let d01 = c101 - c001;
        let d11 = c111 - c011;
        let d0 = d00 + ty * (d10 - d00);
        let d1 = d01 + ty * (d11 - d01);
        d0 + tz * (d1 - d0)
    };
    let gy = if cy {
        0.0
    } else {
        let e0 = c10 - c00;
        let e1 = c11 - c01;
        e0 + tz * (e1 - e0)
    };
    let gz = if cz { 0.0 } else { c1 - c0 };
    (value, [gx, gy, gz])
}

#[inline]
pub(crate) fn sample_clamped(data: &[f64], dims: Dims, pos: Vec3) -> f64 {
    let (x0, tx, _) = clamped_cell(pos[0], dims.nx);
    let (y0, ty, _) = clamped_cell(pos[1], dims.ny);
    let (z0, tz, _) = clamped_cell(pos[2], dims.nz);
    let (x1, y1, z1) = (upper(x0, dims.nx), upper(y0, dims.ny), upper(z0, dims.nz));
    let v = |x, y, z| data[dims.index(x, y, z)];
    let c00 = v(x0, y0, z0) + tx * (v(x1, y0, z0) - v(x0, y0, z0));
    let c10 = v(x0, y1, z0) + tx * (v(x1, y1, z0) - v(x0, y1, z0));
    let c01 = v(x0, y0, z1) + tx * (v(x1, y0, z1) - v(x0, y0, z1));
    let c11 = v(x0, y1, z1) + tx * (v(x1, y1, z1) - v(x0, y1, z1));
    let c0 = c00 + ty * (c10 - c00);
    let c1 = c01 + ty * (c11 - c01);
    c0 + tz * (c1 - c0)
}

/// Trilinear sample treating everything outside the lattice as zero.
#[inline]
pub(crate) fn sample_zero_padded(data: &[f64], dims: Dims, pos: Vec3) -> f64 {
    let n = dims.as_array();
    if (0..3).any(|a| pos[a] <= -1.0 || pos[a] >= n[a] as f64) {
        return 0.0;
    }
    let mut base = [0i64; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let f = pos[a].floor();
        base[a] = f as i64;
        frac[a] = pos[a] - f;
    }
    let mut acc = 0.0;
    for corner in 0..8 {
        let mut idx = [0usize; 3];
        let mut weight = 1.0;
        let mut inside = true;
        for a in 0..3 {
            let bit = (corner >> a) & 1;
            let c = base[a] + bit as i64;
            if c < 0 || c >= n[a] as i64 {
                inside = false;
                break;
            }
            idx[a] = c as usize;
            weight *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        if inside && weight != 0.0 {
            acc += weight * data[dims.index(idx[0], idx[1], idx[2])];
        }
    }
    acc
}

/// Warps a 64-bit grid onto the field's grid.
pub fn warp_trilinear_f64(moving: &[f64], moving_dims: Dims, field: &DisplacementField) -> Vec<f64> {
    assert_eq!(moving.len(), moving_dims.len());
    (0..field.dims.len())
        .into_par_iter()
        .map(|i| sample_clamped(moving, moving_dims, field.target(i)))
        .collect()
}

/// `m ∘ φ`: samples `moving` at `p + u(p)` for every voxel `p` of the field grid.
pub fn warp_trilinear(moving: &Volume, field: &DisplacementField) -> Volume {
    let out = warp_trilinear_f64(&moving.to_f64(), moving.dims(), field);
    Volume::from_f64(field.dims, moving.spacing(), &out).expect("convex combinations stay finite")
}

/// Warps confidence weights; samples leaving the domain lose their weight.
pub fn warp_mask(w: &ConfidenceMask, field: &DisplacementField) -> ConfidenceMask {
    let src = w.to_f64();
    let dims = w.dims();
    let out: Vec<f32> = (0..field.dims.len())
        .into_par_iter()
        .map(|i| sample_zero_padded(&src, dims, field.target(i)).clamp(0.0, 1.0) as f32)
        .collect();
    ConfidenceMask::new(field.dims, out).expect("weights clamped into range")
}

/// Nearest-neighbour label warp; out-of-domain samples become background.
pub fn warp_labels(labels: &LabelMap, field: &DisplacementField) -> LabelMap {
    let dims = labels.dims();
    let n = dims.as_array();
    let src = labels.labels();
    let out: Vec<u32> = (0..field.dims.len())
        .into_par_iter()
        .map(|i| {
            let t = field.target(i);
            let mut idx = [0usize; 3];
            for a in 0..3 {
                let r = (t[a] + 0.5).floor();
                if !(r >= 0.0 && r < n[a] as f64) {
                    return 0;
                }
                idx[a] = r as usize;
            }
            src[dims.index(idx[0], idx[1], idx[2])]
        })
        .collect();
    LabelMap::new(field.dims, out).expect("field dims are valid")
}

/// Chains a gradient with respect to the warped image back to the field.
pub fn warp_adjoint_f64(
    grad_out: &[f64],
    moving: &[f64],
    moving_dims: Dims,
    field: &DisplacementField,
) -> Vec<Vec3> {
    assert_eq!(grad_out.len(), field.dims.len());
    (0..field.dims.len())
        .into_par_iter()
        .map(|i| {
            let g = grad_out[i];
            if g == 0.0 {
                return [0.0; 3];
            }
            let (_, d) = sample_with_gradient(moving, moving_dims, field.target(i));
            [g * d[0], g * d[1], g * d[2]]
        })
        .collect()
}

/// `∂L/∂u(p) = ∂L/∂[m∘φ](p) · ∇_u [m∘φ](p)` for a loss gradient `grad_out`
/// on the warped image.
pub fn warp_adjoint(grad_out: &Volume, moving: &Volume, field: &DisplacementField) -> Result<Vec<Vec3>> {
    if grad_out.dims() != field.dims() {
        return Err(Error::invalid(format!(
            "gradient dims {} differ from field dims {}",
            grad_out.dims(),
            field.dims()
        )));
    }
    Ok(warp_adjoint_f64(
        &grad_out.to_f64(),
        &moving.to_f64(),
        moving.dims(),
        field,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x_ramp(d: Dims) -> Volume {
        Volume::from_fn(d, |x, _, _| x as f32).unwrap()
    }

    #[test]
    fn zero_field_is_identity() {
        let d = Dims::new(4, 5, 3);
        let v = Volume::from_fn(d, |x, y, z| ((x * 7 + y * 3 + z * 11) % 5) as f32 * 0.3).unwrap();
        let w = warp_trilinear(&v, &DisplacementField::zeros(d));
        assert_eq!(w, v);
    }

    #[test]
    fn integer_shift_clamps_at_far_face() {
        let d = Dims::cube(5);
        let out = warp_trilinear(&x_ramp(d), &DisplacementField::constant(d, [1.0, 0.0, 0.0]));
        for x in 0..5 {
            assert_eq!(out.get(x, 2, 2), (x + 1).min(4) as f32);
        }
    }

    #[test]
    fn field_rejects_non_finite() {
        let d = Dims::cube(2);
        let mut u = vec![[0.0; 3]; 8];
        u[3][1] = f64::NAN;
        assert!(DisplacementField::new(d, u).is_err());
        assert!(DisplacementField::new(d, vec![[0.0; 3]; 7]).is_err());
    }

    #[test]
    fn mask_warp_keeps_ones_in_bounds() {
        let d = Dims::cube(4);
        let field = DisplacementField::from_fn(d, |x, _, _| {
            // stays inside [0, 3]
            [if x == 3 { -0.4 } else { 0.3 }, 0.0, 0.0]
        })
        .unwrap();
        let out = warp_mask(&ConfidenceMask::ones(d), &field);
        assert!(out.weights().iter().all(|&w| (w - 1.0).abs() < 1e-6));
    }

    #[test]
    fn mask_warp_half_voxel_shift() {
        let d = Dims::new(4, 1, 1);
        let w = ConfidenceMask::new(d, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let out = warp_mask(&w, &DisplacementField::constant(d, [0.5, 0.0, 0.0]));
        assert_eq!(out.weights(), &[0.5, 1.0, 0.5, 0.0]);
        let out = warp_mask(&w, &DisplacementField::constant(d, [-0.5, 0.0, 0.0]));
        assert_eq!(out.weights(), &[0.0, 0.5, 1.0, 0.5]);
    }

    #[test]
    fn mask_out_of_domain_has_no_weight() {
        let d = Dims::cube(3);
        let out = warp_mask(
            &ConfidenceMask::ones(d),
            &DisplacementField::constant(d, [5.0, 0.0, 0.0]),
        );
        assert!(out.weights().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn label_shift_fills_background() {
        let d = Dims::new(4, 1, 1);
        let l = LabelMap::new(d, vec![1, 2, 3, 4]).unwrap();
        let out = warp_labels(&l, &DisplacementField::constant(d, [1.0, 0.0, 0.0]));
        assert_eq!(out.labels(), &[2, 3, 4, 0]);
        let out = warp_labels(&l, &DisplacementField::constant(d, [-1.0, 0.0, 0.0]));
        assert_eq!(out.labels(), &[0, 1, 2, 3]);
        assert_eq!(warp_labels(&l, &DisplacementField::zeros(d)), l);
    }

    #[test]
    fn adjoint_of_linear_ramp() {
        let d = Dims::cube(5);
        let moving = x_ramp(d);
        let grad = Volume::from_fn(d, |x, y, z| (x + 2 * y + 3 * z) as f32 * 0.1 + 0.5).unwrap();
        let field = DisplacementField::constant(d, [0.25, 0.1, -0.2]);
        let g = warp_adjoint(&grad, &moving, &field).unwrap();
        for x in 0..4 {
            for y in 1..4 {
                for z in 1..4 {
                    let i = d.index(x, y, z);
                    assert!((g[i][0] - grad.data()[i] as f64).abs() < 1e-12);
                    assert!(g[i][1].abs() < 1e-12);
                    assert!(g[i][2].abs() < 1e-12);
                }
            }
        }
        let zero = Volume::constant(d, 0.0).unwrap();
        assert!(warp_adjoint(&zero, &moving, &field)
            .unwrap()
            .iter()
            .all(|v| *v == [0.0; 3]));
    }

    #[test]
    fn clamped_axis_has_zero_derivative() {
        let d = Dims::cube(3);
        let data: Vec<f64> = (0..27).map(|i| i as f64).collect();
        let (_, g) = sample_with_gradient(&data, d, [-0.5, 1.2, 2.5]);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[2], 0.0);
        assert!((g[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn singleton_axis_samples() {
        let d = Dims::new(3, 1, 1);
        let data = [1.0, 2.0, 4.0];
        assert_eq!(sample_clamped(&data, d, [1.5, 0.3, -2.0]), 3.0);
    }
}
