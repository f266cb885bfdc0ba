//! Naive reference implementations shared by the integration tests. Each is
//! a direct loop over the definition with no shared code from the library.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsereg::transform::DisplacementField;
use sparsereg::volume::{ConfidenceMask, Dims, Volume};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_volume(dims: Dims, rng: &mut impl Rng) -> Volume {
    let data = (0..dims.len()).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    Volume::from_data(dims, data).unwrap()
}

/// Smooth-ish image: a few random plane waves plus a little noise, so local
/// windows have non-trivial variance everywhere.
pub fn smooth_volume(dims: Dims, rng: &mut impl Rng) -> Volume {
    let waves: Vec<([f64; 3], f64)> = (0..4)
        .map(|_| {
            (
                [
                    rng.random_range(0.3..1.2),
                    rng.random_range(0.3..1.2),
                    rng.random_range(0.3..1.2),
                ],
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let noise: Vec<f64> = (0..dims.len()).map(|_| rng.random_range(-0.05..0.05)).collect();
    Volume::from_fn(dims, |x, y, z| {
        let v: f64 = waves
            .iter()
            .map(|(k, ph)| (k[0] * x as f64 + k[1] * y as f64 + k[2] * z as f64 + ph).sin())
            .sum();
        (v + noise[dims.index(x, y, z)]) as f32
    })
    .unwrap()
}

pub fn random_binary_mask(dims: Dims, p: f64, rng: &mut impl Rng) -> ConfidenceMask {
    let w = (0..dims.len())
        .map(|_| if rng.random_bool(p) { 1.0 } else { 0.0 })
        .collect();
    ConfidenceMask::new(dims, w).unwrap()
}

pub fn random_field(dims: Dims, scale: f64, rng: &mut impl Rng) -> DisplacementField {
    let u = (0..dims.len())
        .map(|_| std::array::from_fn(|_| rng.random_range(-scale..scale)))
        .collect();
    DisplacementField::new(dims, u).unwrap()
}

/// In-bounds neighbours of `(x, y, z)` within the n³ window.
pub fn window(dims: Dims, x: usize, y: usize, z: usize, n: usize) -> Vec<usize> {
    let r = (n / 2) as i64;
    let mut out = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                let (a, b, c) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                if a >= 0
                    && b >= 0
                    && c >= 0
                    && a < dims.nx as i64
                    && b < dims.ny as i64
                    && c < dims.nz as i64
                {
                    out.push(a as usize + dims.nx * (b as usize + dims.ny * c as usize));
                }
            }
        }
    }
    out
}

pub fn naive_box_sum(v: &[f64], dims: Dims, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; dims.len()];
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                out[x + dims.nx * (y + dims.ny * z)] = window(dims, x, y, z, n).iter().map(|&j| v[j]).sum();
            }
        }
    }
    out
}

pub fn naive_masked_mean(v: &[f64], w: &[f64], dims: Dims, n: usize, eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; dims.len()];
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let win = window(dims, x, y, z, n);
                let num: f64 = win.iter().map(|&j| w[j] * v[j]).sum();
                let den: f64 = win.iter().map(|&j| w[j]).sum();
                out[x + dims.nx * (y + dims.ny * z)] = num / (den + eps);
            }
        }
    }
    out
}

/// Per-window correlation with explicit residuals. `w = None` is the
/// unweighted case with exact in-bounds means.
pub fn naive_correlation_sum(f: &[f64], m: &[f64], w: Option<&[f64]>, dims: Dims, n: usize, eps: f64) -> f64 {
    let weight = |j: usize| w.map_or(1.0, |w| w[j]);
    let mean_eps = if w.is_some() { eps } else { 0.0 };
    let mut total = 0.0;
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let win = window(dims, x, y, z, n);
                let sw: f64 = win.iter().map(|&j| weight(j)).sum();
                let mu_f = win.iter().map(|&j| weight(j) * f[j]).sum::<f64>() / (sw + mean_eps);
                let mu_m = win.iter().map(|&j| weight(j) * m[j]).sum::<f64>() / (sw + mean_eps);
                let (mut cross, mut vf, mut vm) = (0.0, 0.0, 0.0);
                for &j in &win {
                    let (a, b) = (f[j] - mu_f, m[j] - mu_m);
                    cross += weight(j) * a * b;
                    vf += weight(j) * a * a;
                    vm += weight(j) * b * b;
                }
                total += cross * cross / (vf * vm + eps);
            }
        }
    }
    total
}

pub fn naive_smoothness(u: &DisplacementField) -> f64 {
    let d = u.dims();
    let mut total = 0.0;
    for z in 0..d.nz {
        for y in 0..d.ny {
            for x in 0..d.nx {
                let here = u.get(x, y, z);
                let mut add = |other: [f64; 3]| {
                    for c in 0..3 {
                        total += (other[c] - here[c]).powi(2);
                    }
                };
                if x + 1 < d.nx {
                    add(u.get(x + 1, y, z));
                }
                if y + 1 < d.ny {
                    add(u.get(x, y + 1, z));
                }
                if z + 1 < d.nz {
                    add(u.get(x, y, z + 1));
                }
            }
        }
    }
    total
}

/// Trilinear sample with clamped coordinates, from the eight-corner formula.
pub fn naive_trilinear(v: &[f64], dims: Dims, p: [f64; 3]) -> f64 {
    let ext = [dims.nx, dims.ny, dims.nz];
    let mut lo = [0usize; 3];
    let mut t = [0.0; 3];
    for a in 0..3 {
        let c = p[a].clamp(0.0, (ext[a] - 1) as f64);
        let f = c.floor().min((ext[a] as f64 - 2.0).max(0.0));
        lo[a] = f as usize;
        t[a] = c - f;
    }
    let mut acc = 0.0;
    for corner in 0..8 {
        let mut w = 1.0;
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let hi = corner >> a & 1 == 1;
            idx[a] = (lo[a] + hi as usize).min(ext[a] - 1);
            w *= if hi { t[a] } else { 1.0 - t[a] };
        }
        acc += w * v[idx[0] + dims.nx * (idx[1] + dims.ny * idx[2])];
    }
    acc
}

/// Central finite differences of `loss` with respect to every field component.
pub fn finite_difference(
    field: &DisplacementField,
    h: f64,
    mut loss: impl FnMut(&DisplacementField) -> f64,
) -> Vec<[f64; 3]> {
    let dims = field.dims();
    let base = field.vectors().to_vec();
    let mut out = vec![[0.0; 3]; base.len()];
    for i in 0..base.len() {
        for c in 0..3 {
            let mut plus = base.clone();
            plus[i][c] += h;
            let mut minus = base.clone();
            minus[i][c] -= h;
            let lp = loss(&DisplacementField::new(dims, plus).unwrap());
            let lm = loss(&DisplacementField::new(dims, minus).unwrap());
            out[i][c] = (lp - lm) / (2.0 * h);
        }
    }
    out
}

/// `max |a - b| / max |b|` over all components.
pub fn global_rel_error(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let num = a
        .iter()
        .zip(b)
        .flat_map(|(x, y)| (0..3).map(move |c| (x[c] - y[c]).abs()))
        .fold(0.0, f64::max);
    let den = b
        .iter()
        .flat_map(|y| y.iter().map(|v| v.abs()))
        .fold(0.0, f64::max);
    num / den.max(f64::MIN_POSITIVE)
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}
