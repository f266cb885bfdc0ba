//! Factor-2 resolution pyramid for volumes, masks and fields.

use crate::error::{Error, Result};
use crate::transform::{sample_clamped as sample, DisplacementField};
use crate::volume::{ConfidenceMask, Dims, Volume};

/// Dims after one 2x reduction (odd extents round up).
pub fn coarser_dims(dims: Dims) -> Result<Dims> {
    if dims.nx < 2 || dims.ny < 2 || dims.nz < 2 {
        return Err(Error::Config(format!(
            "cannot downsample {dims}: every extent must be >= 2"
        )));
    }
    Ok(Dims::new(
        dims.nx.div_ceil(2),
        dims.ny.div_ceil(2),
        dims.nz.div_ceil(2),
    ))
}

/// Dims of every level, finest first.
pub fn level_dims(dims: Dims, levels: usize) -> Result<Vec<Dims>> {
    if levels == 0 {
        return Err(Error::Config("pyramid needs at least one level".into()));
    }
    let mut out = vec![dims];
    for _ in 1..levels {
        out.push(coarser_dims(*out.last().expect("non-empty"))?);
    }
    Ok(out)
}

/// Visits each fine voxel of the 2x2x2 block behind coarse voxel `i`.
fn for_block(fine: Dims, coarse: Dims, i: usize, mut f: impl FnMut(usize)) {
    let (cx, cy, cz) = coarse.coords(i);
    for z in 2 * cz..(2 * cz + 2).min(fine.nz) {
        for y in 2 * cy..(2 * cy + 2).min(fine.ny) {
            for x in 2 * cx..(2 * cx + 2).min(fine.nx) {
                f(fine.index(x, y, z));
            }
        }
    }
}

/// Block average weighted by `w`; blocks without weight fall back to the
/// plain mean.
pub fn downsample_volume(vol: &Volume, w: Option<&ConfidenceMask>) -> Result<Volume> {
    let fine = vol.dims();
    if let Some(w) = w {
        if w.dims() != fine {
            return Err(Error::invalid(format!("mask dims {} vs volume {fine}", w.dims())));
        }
    }
    let coarse = coarser_dims(fine)?;
    let data = vol.data();
    let out: Vec<f64> = (0..coarse.len())
        .map(|i| {
            let (mut sw, mut swv, mut s, mut n) = (0.0f64, 0.0f64, 0.0f64, 0usize);
            for_block(fine, coarse, i, |j| {
                let v = data[j] as f64;
                let wj = w.map_or(1.0, |w| w.weights()[j] as f64);
                sw += wj;
                swv += wj * v;
                s += v;
                n += 1;
            });
            if sw > 0.0 {
                swv / sw
            } else {
                s / n as f64
            }
        })
        .collect();
    let sp = vol.spacing();
    Volume::from_f64(coarse, [sp[0] * 2.0, sp[1] * 2.0, sp[2] * 2.0], &out)
}

/// Plain block mean of the weights; results stay continuous in `[0, 1]`.
pub fn downsample_mask(w: &ConfidenceMask) -> Result<ConfidenceMask> {
    let fine = w.dims();
    let coarse = coarser_dims(fine)?;
    let data = w.weights();
    let out: Vec<f64> = (0..coarse.len())
        .map(|i| {
            let (mut s, mut n) = (0.0f64, 0usize);
            for_block(fine, coarse, i, |j| {
                s += data[j] as f64;
                n += 1;
            });
            s / n as f64
        })
        .collect();
    ConfidenceMask::from_f64_clamped(coarse, &out)
}

/// Trilinear prolongation of a coarse field onto `fine` dims, with
/// displacements doubled to fine voxel units.
pub fn upsample_field(field: &DisplacementField, fine: Dims) -> Result<DisplacementField> {
    let coarse = field.dims();
    let expected = coarser_dims(fine)?;
    if expected != coarse {
        return Err(Error::invalid(format!(
            "field dims {coarse} are not the coarse level of {fine} ({expected})"
        )));
    }
    let comps: Vec<Vec<f64>> = (0..3)
        .map(|c| field.vectors().iter().map(|v| v[c]).collect())
        .collect();
    // coarse voxel k covers fine voxels 2k and 2k+1, centred at 2k + 0.5
    DisplacementField::from_fn(fine, |x, y, z| {
        let pos = [
            (x as f64 - 0.5) / 2.0,
            (y as f64 - 0.5) / 2.0,
            (z as f64 - 0.5) / 2.0,
        ];
        [
            2.0 * sample(&comps[0], coarse, pos),
            2.0 * sample(&comps[1], coarse, pos),
            2.0 * sample(&comps[2], coarse, pos),
        ]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_halve_rounding_up() {
        assert_eq!(coarser_dims(Dims::new(64, 7, 2)).unwrap(), Dims::new(32, 4, 1));
        assert!(coarser_dims(Dims::new(64, 1, 8)).is_err());
        assert_eq!(
            level_dims(Dims::cube(16), 3).unwrap(),
            vec![Dims::cube(16), Dims::cube(8), Dims::cube(4)]
        );
        assert!(level_dims(Dims::cube(4), 4).is_err());
        assert!(level_dims(Dims::cube(4), 0).is_err());
    }

    #[test]
    fn constants_survive_every_level() {
        let mut v = Volume::constant(Dims::new(9, 8, 7), 2.5).unwrap();
        let mut w = ConfidenceMask::ones(Dims::new(9, 8, 7));
        for _ in 0..2 {
            let nv = downsample_volume(&v, Some(&w)).unwrap();
            w = downsample_mask(&w).unwrap();
            v = nv;
            assert!(v.data().iter().all(|&x| x == 2.5));
            assert!(w.weights().iter().all(|&x| x == 1.0));
        }
    }

    #[test]
    fn masked_downsample_ignores_unobserved() {
        let d = Dims::new(2, 2, 2);
        let v = Volume::from_data(d, vec![1.0, 1.0, 1.0, 1.0, 9.0, 9.0, 9.0, 9.0]).unwrap();
        let w = ConfidenceMask::new(d, vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(downsample_volume(&v, Some(&w)).unwrap().data(), &[1.0]);
        assert_eq!(downsample_volume(&v, None).unwrap().data(), &[5.0]);
        let z = ConfidenceMask::zeros(d);
        assert_eq!(downsample_volume(&v, Some(&z)).unwrap().data(), &[5.0]);
    }

    #[test]
    fn constant_field_doubles() {
        let coarse = DisplacementField::constant(Dims::cube(4), [1.0, -0.5, 0.25]);
        let fine = upsample_field(&coarse, Dims::new(8, 7, 8)).unwrap();
        assert!(fine.vectors().iter().all(|v| *v == [2.0, -1.0, 0.5]));
        assert!(upsample_field(&coarse, Dims::cube(16)).is_err());
    }

    #[test]
    fn linear_field_is_reproduced() {
        // u_x = coarse x index, i.e. a linear ramp; prolongation should
        // reproduce the matching ramp in fine units away from the borders
        let coarse = DisplacementField::from_fn(Dims::cube(6), |x, _, _| [x as f64, 0.0, 0.0]).unwrap();
        let fine = upsample_field(&coarse, Dims::cube(12)).unwrap();
        for x in 1..11 {
            let expect = 2.0 * (x as f64 - 0.5) / 2.0;
            assert!((fine.get(x, 5, 5)[0] - expect).abs() < 1e-12);
        }
    }
}
