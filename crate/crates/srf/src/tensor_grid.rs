//! Vector–matrix factorized voxel grids.
//!
//! A field over a 3D box is stored not as a dense `n_x × n_y × n_z × C`
//! array but as a sum of per-axis separable terms: for each axis `a` and
//! each of `R` ranks there is a *line* factor sampled on that axis and a
//! *plane* factor sampled on the complementary two axes. The scalar
//! coefficient of term `(a, r)` at a point is the product of the linearly
//! interpolated line value and the bilinearly interpolated plane value; the
//! `3R` coefficients of a feature field are mixed into `C` channels by a
//! shared basis matrix. A density field uses the same factor layout with a
//! single implicit channel and no basis; its raw value passes through
//! softplus to yield a nonnegative density.
//!
//! Because every term is linear along each axis, sampling a factorized
//! field is exactly trilinear interpolation of its dense reconstruction —
//! tests rely on that equivalence as an oracle.

use crate::error::{Error, Result};
use crate::math::{softplus, Mat, SplitMix64, Vec3};

/// The two axes complementary to `a`, in cyclic order.
pub fn plane_axes(a: usize) -> (usize, usize) {
    ((a + 1) % 3, (a + 2) % 3)
}

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

/// Axis-aligned grid domain: per-axis node counts and a bounding box. Grid
/// nodes sit at evenly spaced positions with the first and last node exactly
/// on the box faces.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGeometry {
    resolution: [usize; 3],
    bbox_min: Vec3,
    bbox_max: Vec3,
}

impl GridGeometry {
    pub fn new(resolution: [usize; 3], bbox_min: Vec3, bbox_max: Vec3) -> Result<GridGeometry> {
        if !(bbox_min.is_finite() && bbox_max.is_finite()) {
            return Err(Error::NonFinite("grid bounding box"));
        }
        for a in 0..3 {
            if resolution[a] < 2 {
                return Err(Error::domain(format!(
                    "grid resolution must be at least 2 per axis, got {} on axis {a}",
                    resolution[a]
                )));
            }
            if bbox_min.axis(a) >= bbox_max.axis(a) {
                return Err(Error::domain(format!(
                    "grid bbox must satisfy min < max on every axis, got [{}, {}] on axis {a}",
                    bbox_min.axis(a),
                    bbox_max.axis(a)
                )));
            }
        }
        Ok(GridGeometry { resolution, bbox_min, bbox_max })
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn bbox_min(&self) -> Vec3 {
        self.bbox_min
    }

    pub fn bbox_max(&self) -> Vec3 {
        self.bbox_max
    }

    /// Inclusive containment test; the box faces belong to the domain.
    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|a| p.axis(a) >= self.bbox_min.axis(a) && p.axis(a) <= self.bbox_max.axis(a))
    }

    /// World position of the node with integer index `idx`.
    pub fn node_position(&self, idx: [usize; 3]) -> Vec3 {
        let f = |a: usize| {
            let t = idx[a] as f64 / (self.resolution[a] - 1) as f64;
            self.bbox_min.axis(a) + t * (self.bbox_max.axis(a) - self.bbox_min.axis(a))
        };
        Vec3::new(f(0), f(1), f(2))
    }

    /// Validates that `p` is a legal query point (finite and inside the box).
    pub fn check_point(&self, p: Vec3) -> Result<()> {
        if !p.is_finite() {
            return Err(Error::NonFinite("sample position"));
        }
        if !self.contains(p) {
            return Err(Error::OutOfBounds(p));
        }
        Ok(())
    }

    /// Interpolation stencil at `p`. Continuous grid coordinates are clamped
    /// into `[0, n-1]`, which only matters for floating-point dust at the box
    /// faces (callers either bounds-check or cull to the box first).
    pub(crate) fn stencil(&self, p: Vec3) -> GridStencil {
        let mut taps = [LineTap { index: 0, frac: 0.0 }; 3];
        for a in 0..3 {
            let n = self.resolution[a];
            let lo = self.bbox_min.axis(a);
            let hi = self.bbox_max.axis(a);
            let u = ((p.axis(a) - lo) / (hi - lo) * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
            let index = (u.floor() as usize).min(n - 2);
            taps[a] = LineTap { index, frac: u - index as f64 };
        }
        GridStencil { taps }
    }
}

/// One-dimensional interpolation tap: the interpolated value on an axis is
/// `(1 - frac) * v[index] + frac * v[index + 1]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LineTap {
    pub index: usize,
    pub frac: f64,
}

/// Per-axis taps describing where a point lands in the grid. Line factors
/// use the tap of their own axis; plane factors combine the taps of the two
/// complementary axes bilinearly.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GridStencil {
    pub taps: [LineTap; 3],
}

// ---------------------------------------------------------------------------
// Factors
// ---------------------------------------------------------------------------

/// The factor storage shared by density and feature fields: per axis `a`, a
/// line factor of shape `R × n_a` (rank-major) and a plane factor of shape
/// `R × n_b × n_c` with `(b, c) = plane_axes(a)` and `c` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct VmFactors {
    rank: usize,
    line: [Vec<f64>; 3],
    plane: [Vec<f64>; 3],
}

impl VmFactors {
    pub fn zeros(geometry: &GridGeometry, rank: usize) -> Result<VmFactors> {
        if rank == 0 {
            return Err(Error::domain("factor rank must be at least 1".to_string()));
        }
        let n = geometry.resolution();
        let line = [vec![0.0; rank * n[0]], vec![0.0; rank * n[1]], vec![0.0; rank * n[2]]];
        let plane_len = |a: usize| {
            let (b, c) = plane_axes(a);
            rank * n[b] * n[c]
        };
        let plane = [vec![0.0; plane_len(0)], vec![0.0; plane_len(1)], vec![0.0; plane_len(2)]];
        Ok(VmFactors { rank, line, plane })
    }

    /// Deterministically fills all factors with uniform values in `[lo, hi)`.
    /// Fill order (line factors by axis, then plane factors by axis) is part
    /// of the seeded-run contract.
    pub fn seeded_uniform(
        geometry: &GridGeometry,
        rank: usize,
        lo: f64,
        hi: f64,
        rng: &mut SplitMix64,
    ) -> Result<VmFactors> {
        let mut f = VmFactors::zeros(geometry, rank)?;
        for a in 0..3 {
            for v in f.line[a].iter_mut() {
                *v = rng.uniform(lo, hi);
            }
        }
        for a in 0..3 {
            for v in f.plane[a].iter_mut() {
                *v = rng.uniform(lo, hi);
            }
        }
        Ok(f)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn line(&self, axis: usize) -> &[f64] {
        &self.line[axis]
    }

    pub fn plane(&self, axis: usize) -> &[f64] {
        &self.plane[axis]
    }

    pub fn line_mut(&mut self, axis: usize) -> &mut [f64] {
        &mut self.line[axis]
    }

    pub fn plane_mut(&mut self, axis: usize) -> &mut [f64] {
        &mut self.plane[axis]
    }

    pub fn param_count(&self) -> usize {
        self.line.iter().map(Vec::len).sum::<usize>() + self.plane.iter().map(Vec::len).sum::<usize>()
    }

    fn line_value(&self, geometry: &GridGeometry, axis: usize, rank: usize, tap: LineTap) -> f64 {
        let n = geometry.resolution()[axis];
        let base = rank * n + tap.index;
        let v = &self.line[axis];
        (1.0 - tap.frac) * v[base] + tap.frac * v[base + 1]
    }

    fn plane_value(&self, geometry: &GridGeometry, axis: usize, rank: usize, tb: LineTap, tc: LineTap) -> f64 {
        let (b, c) = plane_axes(axis);
        let n = geometry.resolution();
        let (nb, nc) = (n[b], n[c]);
        let m = &self.plane[axis];
        let base = rank * nb * nc;
        let row0 = base + tb.index * nc + tc.index;
        let row1 = row0 + nc;
        let v00 = m[row0];
        let v01 = m[row0 + 1];
        let v10 = m[row1];
        let v11 = m[row1 + 1];
        let top = (1.0 - tc.frac) * v00 + tc.frac * v01;
        let bot = (1.0 - tc.frac) * v10 + tc.frac * v11;
        (1.0 - tb.frac) * top + tb.frac * bot
    }

    /// Calls `f(term_index, coefficient)` for each of the `3R` terms at the
    /// stencil, in axis-major order (`term_index = a * R + r`).
    pub(crate) fn for_each_coefficient(
        &self,
        geometry: &GridGeometry,
        st: &GridStencil,
        mut f: impl FnMut(usize, f64),
    ) {
        for a in 0..3 {
            let (b, c) = plane_axes(a);
            for r in 0..self.rank {
                let lv = self.line_value(geometry, a, r, st.taps[a]);
                let pv = self.plane_value(geometry, a, r, st.taps[b], st.taps[c]);
                f(a * self.rank + r, lv * pv);
            }
        }
    }

    /// Writes the `3R` per-term coefficients at the stencil into `out`,
    /// ordered axis-major: `out[a * R + r]`.
    pub(crate) fn coefficients_into(&self, geometry: &GridGeometry, st: &GridStencil, out: &mut [f64]) {
        debug_assert_eq!(out.len(), 3 * self.rank);
        self.for_each_coefficient(geometry, st, |k, v| out[k] = v);
    }

    /// Accumulates `∂L/∂(factor entries)` given `∂L/∂coefficient` for each of
    /// the `3R` terms at a stencil. The adjoint of `coefficients_into`.
    pub(crate) fn scatter_coefficient_grads(
        &self,
        geometry: &GridGeometry,
        st: &GridStencil,
        d_coeff: &[f64],
        grads: &mut FactorGrads,
    ) {
        debug_assert_eq!(d_coeff.len(), 3 * self.rank);
        let n = geometry.resolution();
        for a in 0..3 {
            let (b, c) = plane_axes(a);
            let ta = st.taps[a];
            let (tb, tc) = (st.taps[b], st.taps[c]);
            let (nb, nc) = (n[b], n[c]);
            for r in 0..self.rank {
                let d = d_coeff[a * self.rank + r];
                if d == 0.0 {
                    continue;
                }
                let lv = self.line_value(geometry, a, r, ta);
                let pv = self.plane_value(geometry, a, r, tb, tc);
                // Line taps receive d * plane_value, split linearly.
                let lbase = r * n[a] + ta.index;
                grads.line[a][lbase] += d * pv * (1.0 - ta.frac);
                grads.line[a][lbase + 1] += d * pv * ta.frac;
                // Plane taps receive d * line_value, split bilinearly.
                let pbase = r * nb * nc + tb.index * nc + tc.index;
                let dl = d * lv;
                grads.plane[a][pbase] += dl * (1.0 - tb.frac) * (1.0 - tc.frac);
                grads.plane[a][pbase + 1] += dl * (1.0 - tb.frac) * tc.frac;
                grads.plane[a][pbase + nc] += dl * tb.frac * (1.0 - tc.frac);
                grads.plane[a][pbase + nc + 1] += dl * tb.frac * tc.frac;
            }
        }
    }
}

/// Gradient accumulator with the same shape as [`VmFactors`].
#[derive(Debug, Clone)]
pub struct FactorGrads {
    pub line: [Vec<f64>; 3],
    pub plane: [Vec<f64>; 3],
}

impl FactorGrads {
    pub fn zeros_like(f: &VmFactors) -> FactorGrads {
        FactorGrads {
            line: [vec![0.0; f.line[0].len()], vec![0.0; f.line[1].len()], vec![0.0; f.line[2].len()]],
            plane: [
                vec![0.0; f.plane[0].len()],
                vec![0.0; f.plane[1].len()],
                vec![0.0; f.plane[2].len()],
            ],
        }
    }

    pub fn fill_zero(&mut self) {
        for v in self.line.iter_mut().chain(self.plane.iter_mut()) {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

// ---------------------------------------------------------------------------
// Fields
// ---------------------------------------------------------------------------

/// Factorized multi-channel feature field: `C`-vector per point, obtained by
/// mixing the `3R` factor coefficients through a `C × 3R` basis matrix.
#[derive(Debug, Clone)]
pub struct VmFeatureField {
    geometry: GridGeometry,
    factors: VmFactors,
    basis: Mat,
}

impl VmFeatureField {
    pub fn new(geometry: GridGeometry, factors: VmFactors, basis: Mat) -> Result<VmFeatureField> {
        if basis.cols() != 3 * factors.rank() {
            return Err(Error::domain(format!(
                "basis must have 3R = {} columns, got {}",
                3 * factors.rank(),
                basis.cols()
            )));
        }
        if basis.rows() == 0 {
            return Err(Error::domain("feature field needs at least one channel".to_string()));
        }
        Ok(VmFeatureField { geometry, factors, basis })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn factors(&self) -> &VmFactors {
        &self.factors
    }

    pub fn factors_mut(&mut self) -> &mut VmFactors {
        &mut self.factors
    }

    pub fn basis(&self) -> &Mat {
        &self.basis
    }

    pub fn basis_mut(&mut self) -> &mut Mat {
        &mut self.basis
    }

    pub fn channels(&self) -> usize {
        self.basis.rows()
    }

    /// Number of stored parameters (factors plus basis).
    pub fn param_count(&self) -> usize {
        self.factors.param_count() + self.basis.rows() * self.basis.cols()
    }

    /// Bounds-checked sample: the `C`-channel feature vector at `p`.
    pub fn sample(&self, p: Vec3) -> Result<Vec<f64>> {
        self.geometry.check_point(p)?;
        let mut out = vec![0.0; self.channels()];
        self.sample_clamped_into(p, &mut out);
        Ok(out)
    }

    /// Unchecked sample used on the hot rendering path after culling; grid
    /// coordinates are clamped to the box, so this never faults.
    pub(crate) fn sample_clamped_into(&self, p: Vec3, out: &mut [f64]) {
        let st = self.geometry.stencil(p);
        let mut coeffs = vec![0.0; 3 * self.factors.rank()];
        self.factors.coefficients_into(&self.geometry, &st, &mut coeffs);
        self.basis.matvec_into(&coeffs, out);
    }

    /// Dense reconstruction as an `n_x × n_y × n_z × C` row-major array
    /// (channel fastest). Fails with a resource error if the element count
    /// exceeds `cap`.
    pub fn reconstruct_dense(&self, cap: usize) -> Result<Vec<f64>> {
        let [nx, ny, nz] = self.geometry.resolution();
        let c = self.channels();
        let total = nx
            .checked_mul(ny)
            .and_then(|v| v.checked_mul(nz))
            .and_then(|v| v.checked_mul(c))
            .ok_or_else(|| Error::Resource("dense reconstruction size overflows".to_string()))?;
        if total > cap {
            return Err(Error::Resource(format!(
                "dense reconstruction needs {total} elements, cap is {cap}"
            )));
        }
        let mut out = vec![0.0; total];
        let mut coeffs = vec![0.0; 3 * self.factors.rank()];
        let mut feature = vec![0.0; c];
        for ix in 0..nx {
            for iy in 0..ny {
                for iz in 0..nz {
                    let st = GridStencil {
                        taps: [
                            LineTap { index: ix.min(nx - 2), frac: (ix == nx - 1) as u8 as f64 },
                            LineTap { index: iy.min(ny - 2), frac: (iy == ny - 1) as u8 as f64 },
                            LineTap { index: iz.min(nz - 2), frac: (iz == nz - 1) as u8 as f64 },
                        ],
                    };
                    self.factors.coefficients_into(&self.geometry, &st, &mut coeffs);
                    self.basis.matvec_into(&coeffs, &mut feature);
                    let base = ((ix * ny + iy) * nz + iz) * c;
                    out[base..base + c].copy_from_slice(&feature);
                }
            }
        }
        Ok(out)
    }
}

/// Factorized scalar density field. The stored (raw) value is the factor
/// coefficient sum plus a constant offset; [`VmDensityField::sample_density`]
/// maps it through softplus so activated densities are strictly positive and
/// smooth. A negative offset makes a freshly initialized field (small random
/// factors) start as thin, nearly transparent fog instead of opaque haze.
#[derive(Debug, Clone)]
pub struct VmDensityField {
    geometry: GridGeometry,
    factors: VmFactors,
    raw_offset: f64,
}

impl VmDensityField {
    pub fn new(geometry: GridGeometry, factors: VmFactors, raw_offset: f64) -> VmDensityField {
        VmDensityField { geometry, factors, raw_offset }
    }

    pub fn raw_offset(&self) -> f64 {
        self.raw_offset
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn factors(&self) -> &VmFactors {
        &self.factors
    }

    pub fn factors_mut(&mut self) -> &mut VmFactors {
        &mut self.factors
    }

    pub fn param_count(&self) -> usize {
        self.factors.param_count()
    }

    /// Bounds-checked raw (pre-activation) value at `p`.
    pub fn sample_raw(&self, p: Vec3) -> Result<f64> {
        self.geometry.check_point(p)?;
        Ok(self.raw_clamped(p))
    }

    /// Bounds-checked activated density `softplus(raw)` at `p`.
    pub fn sample_density(&self, p: Vec3) -> Result<f64> {
        Ok(softplus(self.sample_raw(p)?))
    }

    /// Clamped raw value. The offset seeds the accumulator (`offset + v_0 +
    /// v_1 + …`); every raw-density evaluation in the crate uses this exact
    /// summation order so independently computed paths agree bitwise.
    pub(crate) fn raw_clamped(&self, p: Vec3) -> f64 {
        let st = self.geometry.stencil(p);
        self.raw_at_stencil(&st)
    }

    pub(crate) fn raw_at_stencil(&self, st: &GridStencil) -> f64 {
        let mut raw = self.raw_offset;
        self.factors.for_each_coefficient(&self.geometry, st, |_, v| raw += v);
        raw
    }

    /// Dense reconstruction of the *raw* field as `n_x × n_y × n_z` row-major.
    pub fn reconstruct_dense(&self, cap: usize) -> Result<Vec<f64>> {
        let [nx, ny, nz] = self.geometry.resolution();
        let total = nx
            .checked_mul(ny)
            .and_then(|v| v.checked_mul(nz))
            .ok_or_else(|| Error::Resource("dense reconstruction size overflows".to_string()))?;
        if total > cap {
            return Err(Error::Resource(format!(
                "dense reconstruction needs {total} elements, cap is {cap}"
            )));
        }
        let mut out = vec![0.0; total];
        for ix in 0..nx {
            for iy in 0..ny {
                for iz in 0..nz {
                    let st = GridStencil {
                        taps: [
                            LineTap { index: ix.min(nx - 2), frac: (ix == nx - 1) as u8 as f64 },
                            LineTap { index: iy.min(ny - 2), frac: (iy == ny - 1) as u8 as f64 },
                            LineTap { index: iz.min(nz - 2), frac: (iz == nz - 1) as u8 as f64 },
                        ],
                    };
                    out[(ix * ny + iy) * nz + iz] = self.raw_at_stencil(&st);
                }
            }
        }
        Ok(out)
    }
}
