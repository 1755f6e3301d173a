//! Voxel occupancy map with a Euclidean distance field.
//!
//! The distance field stores exact Euclidean distances to the nearest
//! occupied voxel center (Felzenszwalb-Huttenlocher transform, three
//! separable passes), saturated at a configurable free-space cap so that
//! clearance gradients vanish far from obstacles. Queries interpolate
//! trilinearly between voxel centers and return the interpolant's exact
//! piecewise-linear gradient.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::Vector3;
#[allow(unused_imports)] // resolves f64 math in no_std builds; shadowed by inherent methods under test
use num_traits::Float;

/// Dense boolean occupancy over a regular grid.
///
/// Voxel `(i, j, k)` covers the cube with center
/// `origin + resolution·(i+0.5, j+0.5, k+0.5)`.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    pub origin: Vector3<f64>,
    pub resolution: f64,
    pub dims: [usize; 3],
    occupancy: Vec<bool>,
}

impl VoxelGrid {
    pub fn new(origin: Vector3<f64>, resolution: f64, dims: [usize; 3]) -> Self {
        assert!(resolution > 0.0, "voxel resolution must be positive");
        assert!(dims.iter().all(|&d| d > 0), "grid dims must be positive");
        Self { origin, resolution, dims, occupancy: vec![false; dims[0] * dims[1] * dims[2]] }
    }

    #[inline]
    fn linear(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    #[inline]
    pub fn is_occupied(&self, i: usize, j: usize, k: usize) -> bool {
        self.occupancy[self.linear(i, j, k)]
    }

    pub fn set_occupied(&mut self, i: usize, j: usize, k: usize, value: bool) {
        let idx = self.linear(i, j, k);
        self.occupancy[idx] = value;
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.origin
            + self.resolution
                * Vector3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5)
    }

    /// Voxel index containing `p`, or None outside the grid.
    pub fn voxel_of(&self, p: &Vector3<f64>) -> Option<[usize; 3]> {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let u = (p[a] - self.origin[a]) / self.resolution;
            if u < 0.0 || u >= self.dims[a] as f64 {
                return None;
            }
            idx[a] = u as usize;
        }
        Some(idx)
    }

    pub fn min_corner(&self) -> Vector3<f64> {
        self.origin
    }

    pub fn max_corner(&self) -> Vector3<f64> {
        self.origin
            + self.resolution * Vector3::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64)
    }

    /// Marks every voxel whose center falls inside the axis-aligned box.
    pub fn fill_box(&mut self, min: &Vector3<f64>, max: &Vector3<f64>) {
        for k in 0..self.dims[2] {
            for j in 0..self.dims[1] {
                for i in 0..self.dims[0] {
                    let c = self.center(i, j, k);
                    if (0..3).all(|a| c[a] >= min[a] && c[a] <= max[a]) {
                        self.set_occupied(i, j, k, true);
                    }
                }
            }
        }
    }

    /// Marks every voxel whose center falls inside the vertical cylinder.
    pub fn fill_cylinder(&mut self, center_xy: (f64, f64), radius: f64, z0: f64, z1: f64) {
        let r2 = radius * radius;
        for k in 0..self.dims[2] {
            for j in 0..self.dims[1] {
                for i in 0..self.dims[0] {
                    let c = self.center(i, j, k);
                    let dx = c.x - center_xy.0;
                    let dy = c.y - center_xy.1;
                    if dx * dx + dy * dy <= r2 && c.z >= z0 && c.z <= z1 {
                        self.set_occupied(i, j, k, true);
                    }
                }
            }
        }
    }

    pub fn occupied_cells(&self) -> Vec<[usize; 3]> {
        let mut out = Vec::new();
        for k in 0..self.dims[2] {
            for j in 0..self.dims[1] {
                for i in 0..self.dims[0] {
                    if self.is_occupied(i, j, k) {
                        out.push([i, j, k]);
                    }
                }
            }
        }
        out
    }

    /// True iff no occupied voxel intersects the segment `ab`.
    ///
    /// Endpoints are ordered canonically before traversal so the result is
    /// symmetric in its arguments; the segment is clipped to the grid and
    /// anything outside counts as free.
    pub fn raycast_free(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> bool {
        let (a, b) = if lex_le(a, b) { (*a, *b) } else { (*b, *a) };
        let Some((a, b)) = self.clip_segment(a, b) else {
            return true;
        };

        let mut idx = self.clamped_voxel(&a);
        let end = self.clamped_voxel(&b);
        let dir = b - a;

        let mut step = [0isize; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for ax in 0..3 {
            if dir[ax] > 1e-15 {
                step[ax] = 1;
                let next = self.origin[ax] + (idx[ax] as f64 + 1.0) * self.resolution;
                t_max[ax] = (next - a[ax]) / dir[ax];
                t_delta[ax] = self.resolution / dir[ax];
            } else if dir[ax] < -1e-15 {
                step[ax] = -1;
                let prev = self.origin[ax] + idx[ax] as f64 * self.resolution;
                t_max[ax] = (prev - a[ax]) / dir[ax];
                t_delta[ax] = -self.resolution / dir[ax];
            }
        }

        let max_steps = self.dims[0] + self.dims[1] + self.dims[2] + 3;
        for _ in 0..max_steps {
            if self.is_occupied(idx[0] as usize, idx[1] as usize, idx[2] as usize) {
                return false;
            }
            if idx == end {
                return true;
            }
            let ax = (0..3).min_by(|&p, &q| t_max[p].partial_cmp(&t_max[q]).unwrap()).unwrap();
            if t_max[ax] > 1.0 {
                return true;
            }
            idx[ax] += step[ax];
            t_max[ax] += t_delta[ax];
            for a in 0..3 {
                if idx[a] < 0 || idx[a] >= self.dims[a] as isize {
                    return true;
                }
            }
        }
        true
    }

    fn clamped_voxel(&self, p: &Vector3<f64>) -> [isize; 3] {
        let mut idx = [0isize; 3];
        for a in 0..3 {
            let u = ((p[a] - self.origin[a]) / self.resolution) as isize;
            idx[a] = u.clamp(0, self.dims[a] as isize - 1);
        }
        idx
    }

    fn clip_segment(&self, a: Vector3<f64>, b: Vector3<f64>) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let lo = self.min_corner();
        let hi = self.max_corner();
        let d = b - a;
        let mut t0 = 0.0f64;
        let mut t1 = 1.0f64;
        for ax in 0..3 {
            if d[ax].abs() < 1e-15 {
                if a[ax] < lo[ax] || a[ax] > hi[ax] {
                    return None;
                }
            } else {
                let mut ta = (lo[ax] - a[ax]) / d[ax];
                let mut tb = (hi[ax] - a[ax]) / d[ax];
                if ta > tb {
                    core::mem::swap(&mut ta, &mut tb);
                }
                t0 = t0.max(ta);
                t1 = t1.min(tb);
                if t0 > t1 {
                    return None;
                }
            }
        }
        Some((a + t0 * d, a + t1 * d))
    }
}

fn lex_le(a: &Vector3<f64>, b: &Vector3<f64>) -> bool {
    for ax in 0..3 {
        if a[ax] < b[ax] {
            return true;
        }
        if a[ax] > b[ax] {
            return false;
        }
    }
    true
}

/// Unsigned Euclidean distance field sampled at voxel centers.
#[derive(Debug, Clone)]
pub struct DistanceField {
    pub origin: Vector3<f64>,
    pub resolution: f64,
    pub dims: [usize; 3],
    /// Distances saturate here; gradients vanish beyond it.
    pub cap: f64,
    /// True when the grid had no free voxel and the field is all zeros.
    pub degenerate: bool,
    distances: Vec<f64>,
}

/// Result of a distance query.
#[derive(Debug, Clone, Copy)]
pub struct DistanceSample {
    pub distance: f64,
    pub gradient: Vector3<f64>,
    /// Set when the query point was clamped into the grid.
    pub out_of_bounds: bool,
}

/// One-dimensional squared-distance lower envelope (Felzenszwalb-Huttenlocher).
fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let fq = f[q] + (q * q) as f64;
        loop {
            let p = v[k];
            let s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        d[q] = dq * dq + f[p];
    }
}

/// Builds the distance field for `grid`, saturating at `cap` meters.
pub fn build_esdf(grid: &VoxelGrid, cap: f64) -> DistanceField {
    assert!(cap > 0.0, "free-space cap must be positive");
    let [nx, ny, nz] = grid.dims;
    let total = nx * ny * nz;
    // Squared distances in voxel units; occupied voxels seed at zero.
    let inf = 1e30f64;
    let mut sq: Vec<f64> = Vec::with_capacity(total);
    let mut any_free = false;
    for v in &grid.occupancy {
        if *v {
            sq.push(0.0);
        } else {
            sq.push(inf);
            any_free = true;
        }
    }
    let any_occupied = sq.contains(&0.0);

    if any_occupied {
        let nmax = nx.max(ny).max(nz);
        let mut f = vec![0.0f64; nmax];
        let mut d = vec![0.0f64; nmax];
        let mut v = vec![0usize; nmax];
        let mut z = vec![0.0f64; nmax + 1];

        let lin = |i: usize, j: usize, k: usize| (k * ny + j) * nx + i;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    f[i] = sq[lin(i, j, k)];
                }
                edt_1d(&f[..nx], &mut d[..nx], &mut v, &mut z);
                for i in 0..nx {
                    sq[lin(i, j, k)] = d[i];
                }
            }
        }
        for k in 0..nz {
            for i in 0..nx {
                for j in 0..ny {
                    f[j] = sq[lin(i, j, k)];
                }
                edt_1d(&f[..ny], &mut d[..ny], &mut v, &mut z);
                for j in 0..ny {
                    sq[lin(i, j, k)] = d[j];
                }
            }
        }
        for j in 0..ny {
            for i in 0..nx {
                for k in 0..nz {
                    f[k] = sq[lin(i, j, k)];
                }
                edt_1d(&f[..nz], &mut d[..nz], &mut v, &mut z);
                for k in 0..nz {
                    sq[lin(i, j, k)] = d[k];
                }
            }
        }
    }

    let res = grid.resolution;
    let distances: Vec<f64> = sq
        .iter()
        .map(|&s| if s >= 1e29 { cap } else { (s.sqrt() * res).min(cap) })
        .collect();

    DistanceField {
        origin: grid.origin,
        resolution: grid.resolution,
        dims: grid.dims,
        cap,
        degenerate: !any_free,
        distances,
    }
}

impl DistanceField {
    #[inline]
    fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.distances[(k * self.dims[1] + j) * self.dims[0] + i]
    }

    pub fn distance_at_center(&self, i: usize, j: usize, k: usize) -> f64 {
        self.at(i, j, k)
    }

    /// Trilinear distance and analytic gradient at `p`.
    ///
    /// Outside the sampled lattice the point is clamped per axis, the
    /// clamped axes contribute zero gradient, and `out_of_bounds` is set.
    pub fn query(&self, p: &Vector3<f64>) -> DistanceSample {
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        let mut clamped = [false; 3];
        for a in 0..3 {
            // Continuous coordinate in units of cells, measured from the
            // first voxel center.
            let u = (p[a] - self.origin[a]) / self.resolution - 0.5;
            if self.dims[a] == 1 {
                base[a] = 0;
                frac[a] = 0.0;
                clamped[a] = true;
                continue;
            }
            let max_u = (self.dims[a] - 1) as f64;
            if u <= 0.0 {
                base[a] = 0;
                frac[a] = 0.0;
                clamped[a] = u < 0.0;
            } else if u >= max_u {
                base[a] = self.dims[a] - 2;
                frac[a] = 1.0;
                clamped[a] = u > max_u;
            } else {
                let b = u as usize;
                base[a] = b.min(self.dims[a] - 2);
                frac[a] = u - base[a] as f64;
            }
        }

        let c = |di: usize, dj: usize, dk: usize| {
            let i = (base[0] + di).min(self.dims[0] - 1);
            let j = (base[1] + dj).min(self.dims[1] - 1);
            let k = (base[2] + dk).min(self.dims[2] - 1);
            self.at(i, j, k)
        };
        let (fx, fy, fz) = (frac[0], frac[1], frac[2]);
        let w = |f: f64, side: usize| if side == 0 { 1.0 - f } else { f };

        let mut value = 0.0;
        let mut grad = Vector3::zeros();
        for di in 0..2 {
            for dj in 0..2 {
                for dk in 0..2 {
                    let v = c(di, dj, dk);
                    let (wx, wy, wz) = (w(fx, di), w(fy, dj), w(fz, dk));
                    value += v * wx * wy * wz;
                    let sx = if di == 0 { -1.0 } else { 1.0 };
                    let sy = if dj == 0 { -1.0 } else { 1.0 };
                    let sz = if dk == 0 { -1.0 } else { 1.0 };
                    grad.x += sx * v * wy * wz;
                    grad.y += sy * v * wx * wz;
                    grad.z += sz * v * wx * wy;
                }
            }
        }
        grad /= self.resolution;
        for a in 0..3 {
            if clamped[a] {
                grad[a] = 0.0;
            }
        }
        DistanceSample {
            distance: value,
            gradient: grad,
            out_of_bounds: clamped.iter().any(|&c| c),
        }
    }
}
