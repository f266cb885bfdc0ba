//! Local normalized cross correlation with per-voxel confidence weights.
//!
//! Per window centred at `p`, with cross weights `c`, fixed-mean weights `a`
//! and moving-mean weights `b`:
//!
//! ```text
//! mu_f  = sum(a f) / (sum(a) + mean_eps)        mu_m = sum(b m) / (sum(b) + mean_eps)
//! cross = sum c (f - mu_f)(m - mu_m)
//! var_f = sum c (f - mu_f)^2                    var_m = sum c (m - mu_m)^2
//! T(p)  = cross^2 / (var_f var_m + eps)
//! ```
//!
//! Every window sum is expanded into plain windowed sums of weighted
//! products, so each term costs a fixed number of `box_sum` passes. With all
//! weights equal to one and `mean_eps = 0` this is the ordinary unweighted
//! local cross correlation.

use rayon::prelude::*;

use crate::localstats::{box_sum_f64, WindowSpec};
use crate::volume::Dims;

/// Weights entering the correlation. `None` means weight one everywhere.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CorrelationWeights<'a> {
    pub fixed_mean: Option<&'a [f64]>,
    pub moving_mean: Option<&'a [f64]>,
    pub cross: Option<&'a [f64]>,
    pub mean_eps: f64,
}

impl CorrelationWeights<'_> {
    pub fn unweighted() -> Self {
        CorrelationWeights {
            fixed_mean: None,
            moving_mean: None,
            cross: None,
            mean_eps: 0.0,
        }
    }
}

struct WindowStats {
    mu_f: Vec<f64>,
    mu_m: Vec<f64>,
    /// `sum(b) + mean_eps` per window.
    moving_mean_den: Vec<f64>,
    /// `sum c (f - mu_f)`.
    resid_f: Vec<f64>,
    /// `sum c (m - mu_m)`.
    resid_m: Vec<f64>,
    cross: Vec<f64>,
    var_f: Vec<f64>,
    var_m: Vec<f64>,
}

fn weighted(values: &[f64], w: Option<&[f64]>) -> Vec<f64> {
    match w {
        Some(w) => values.par_iter().zip(w).map(|(v, w)| v * w).collect(),
        None => values.to_vec(),
    }
}

fn weight_sum(w: Option<&[f64]>, dims: Dims, win: WindowSpec) -> Vec<f64> {
    match w {
        Some(w) => box_sum_f64(w, dims, win),
        None => box_sum_f64(&vec![1.0; dims.len()], dims, win),
    }
}

fn local_mean(
    values: &[f64],
    w: Option<&[f64]>,
    dims: Dims,
    win: WindowSpec,
    eps: f64,
) -> (Vec<f64>, Vec<f64>) {
    let num = box_sum_f64(&weighted(values, w), dims, win);
    let den: Vec<f64> = weight_sum(w, dims, win).into_iter().map(|d| d + eps).collect();
    let mu = num.par_iter().zip(&den).map(|(n, d)| n / d).collect();
    (mu, den)
}

fn window_stats(
    dims: Dims,
    f: &[f64],
    m: &[f64],
    w: &CorrelationWeights<'_>,
    win: WindowSpec,
) -> WindowStats {
    let (mu_f, _) = local_mean(f, w.fixed_mean, dims, win, w.mean_eps);
    let (mu_m, moving_mean_den) = local_mean(m, w.moving_mean, dims, win, w.mean_eps);

    let cf = weighted(f, w.cross);
    let cm = weighted(m, w.cross);
    let s_c = weight_sum(w.cross, dims, win);
    let s_f = box_sum_f64(&cf, dims, win);
    let s_m = box_sum_f64(&cm, dims, win);
    let ff: Vec<f64> = cf.par_iter().zip(f).map(|(a, b)| a * b).collect();
    let s_ff = box_sum_f64(&ff, dims, win);
    drop(ff);
    let mm: Vec<f64> = cm.par_iter().zip(m).map(|(a, b)| a * b).collect();
    let s_mm = box_sum_f64(&mm, dims, win);
    drop(mm);
    let fm: Vec<f64> = cf.par_iter().zip(m).map(|(a, b)| a * b).collect();
    let s_fm = box_sum_f64(&fm, dims, win);
    drop(fm);

    let n = dims.len();
    let mut resid_f = vec![0.0; n];
    let mut resid_m = vec![0.0; n];
    let mut cross = vec![0.0; n];
    let mut var_f = vec![0.0; n];
    let mut var_m = vec![0.0; n];
    resid_f
        .par_iter_mut()
        .zip(&mut resid_m)
        .zip(&mut cross)
        .zip(&mut var_f)
        .zip(&mut var_m)
        .enumerate()
        .for_each(|(i, ((((rf, rm), cr), vf), vm))| {
            let (uf, um, c) = (mu_f[i], mu_m[i], s_c[i]);
            *rf = s_f[i] - uf * c;
            *rm = s_m[i] - um * c;
            *cr = s_fm[i] - um * s_f[i] - uf * s_m[i] + uf * um * c;
            *vf = s_ff[i] - 2.0 * uf * s_f[i] + uf * uf * c;
            *vm = s_mm[i] - 2.0 * um * s_m[i] + um * um * c;
        });

    WindowStats {
        mu_f,
        mu_m,
        moving_mean_den,
        resid_f,
        resid_m,
        cross,
        var_f,
        var_m,
    }
}

/// Per-voxel correlation terms `T(p)`.
pub(crate) fn correlation_map(
    dims: Dims,
    f: &[f64],
    m: &[f64],
    w: &CorrelationWeights<'_>,
    win: WindowSpec,
    eps: f64,
) -> Vec<f64> {
    let s = window_stats(dims, f, m, w, win);
    (0..dims.len())
        .into_par_iter()
        .map(|i| s.cross[i] * s.cross[i] / (s.var_f[i] * s.var_m[i] + eps))
        .collect()
}

/// `sum_p T(p)` and its gradient with respect to every moving sample.
pub(crate) fn correlation_with_grad(
    dims: Dims,
    f: &[f64],
    m: &[f64],
    w: &CorrelationWeights<'_>,
    win: WindowSpec,
    eps: f64,
) -> (Vec<f64>, Vec<f64>) {
    let s = window_stats(dims, f, m, w, win);
    let n = dims.len();

    let mut terms = vec![0.0; n];
    // per-window coefficients to be spread back over each window
    let mut g_cross = vec![0.0; n];
    let mut g_var = vec![0.0; n];
    let mut g_mean = vec![0.0; n];
    let mut g_resid = vec![0.0; n];
    terms
        .par_iter_mut()
        .zip(&mut g_cross)
        .zip(&mut g_var)
        .zip(&mut g_mean)
        .zip(&mut g_resid)
        .enumerate()
        .for_each(|(i, ((((t, gc), gv), gm), gr))| {
            let cross = s.cross[i];
            let den = s.var_f[i] * s.var_m[i] + eps;
            *t = cross * cross / den;
            // dT/dcross and dT/dvar_m
            let g1 = 2.0 * cross / den;
            let g2 = -cross * cross * s.var_f[i] / (den * den);
            *gc = g1;
            *gv = g2;
            *gm = g1 * s.mu_f[i] + 2.0 * g2 * s.mu_m[i];
            *gr = (g1 * s.resid_f[i] + 2.0 * g2 * s.resid_m[i]) / s.moving_mean_den[i];
        });
    drop(s);

    let p = box_sum_f64(&g_cross, dims, win);
    let q = box_sum_f64(&g_var, dims, win);
    let r = box_sum_f64(&g_mean, dims, win);
    let sr = box_sum_f64(&g_resid, dims, win);

    let grad = (0..n)
        .into_par_iter()
        .map(|j| {
            let c = w.cross.map_or(1.0, |c| c[j]);
            let b = w.moving_mean.map_or(1.0, |b| b[j]);
            c * (f[j] * p[j] + 2.0 * m[j] * q[j] - r[j]) - b * sr[j]
        })
        .collect();
    (terms, grad)
}
