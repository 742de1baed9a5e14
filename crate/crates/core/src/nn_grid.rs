//! Uniform-grid nearest-neighbor index over a fixed point set.

use nalgebra::Vector3;

/// Samples used to estimate the typical point spacing.
const SPACING_SAMPLES: usize = 8;
/// Upper bound on cells per indexed point.
const MAX_CELLS_PER_POINT: f64 = 2.0;

pub struct NearestNeighborGrid {
    points: Vec<Vector3<f64>>,
    origin: Vector3<f64>,
    cell: f64,
    dims: [usize; 3],
    /// CSR offsets into `order`, one slot per cell plus a sentinel.
    cell_start: Vec<u32>,
    order: Vec<u32>,
}

impl NearestNeighborGrid {
    /// Returns `None` for an empty set.
    pub fn new(points: &[Vector3<f64>]) -> Option<Self> {
        Self::from_vec(points.to_vec())
    }

    pub fn from_vec(points: Vec<Vector3<f64>>) -> Option<Self> {
        if points.is_empty() {
            return None;
        }
        let mut lo = points[0];
        let mut hi = points[0];
        for p in &points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let ext = hi - lo;
        let n = points.len() as f64;
        let spacing = median_spacing(&points);
        let diag = ext.norm();
        let floor = (diag * 1e-9).max(1e-12);
        let mut cell = (2.0 * spacing).max(floor);
        let nonflat: Vec<f64> = ext.iter().copied().filter(|&e| e > 0.0).collect();
        let volume: f64 = nonflat.iter().product();
        if !nonflat.is_empty() {
            // Keep the total cell count bounded.
            let d = nonflat.len() as i32;
            let min_cell = (volume / (MAX_CELLS_PER_POINT * n)).powf(1.0 / d as f64);
            cell = cell.max(min_cell);
        }
        let dims = [0, 1, 2].map(|a| ((ext[a] / cell).floor() as usize + 1).max(1));
        let total = dims[0] * dims[1] * dims[2];

        let mut grid = Self {
            points: Vec::new(),
            origin: lo,
            cell,
            dims,
            cell_start: Vec::new(),
            order: Vec::new(),
        };
        let mut counts = vec![0u32; total + 1];
        let cell_of: Vec<usize> = points.iter().map(|p| grid.flat(grid.cell_coords(p))).collect();
        for &c in &cell_of {
            counts[c + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let mut fill = counts.clone();
        let mut order = vec![0u32; points.len()];
        for (i, &c) in cell_of.iter().enumerate() {
            order[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        grid.cell_start = counts;
        grid.order = order;
        grid.points = points;
        Some(grid)
    }

    fn cell_coords(&self, p: &Vector3<f64>) -> [usize; 3] {
        [0, 1, 2].map(|a| {
            let c = ((p[a] - self.origin[a]) / self.cell).floor();
            if c.is_nan() || c < 0.0 {
                0
            } else {
                (c as usize).min(self.dims[a] - 1)
            }
        })
    }

    #[inline]
    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    fn scan_cell(&self, c: [i64; 3], q: &Vector3<f64>, best: &mut (f64, u32)) {
        for a in 0..3 {
            if c[a] < 0 || c[a] >= self.dims[a] as i64 {
                return;
            }
        }
        let f = self.flat([c[0] as usize, c[1] as usize, c[2] as usize]);
        let (s, e) = (self.cell_start[f] as usize, self.cell_start[f + 1] as usize);
        for &idx in &self.order[s..e] {
            let d2 = (self.points[idx as usize] - q).norm_squared();
            if d2 < best.0 || (d2 == best.0 && idx < best.1) {
                *best = (d2, idx);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    /// Nearest indexed point to `q` as `(index, squared distance)`; ties go
    /// to the lowest index.
    pub fn nearest(&self, q: &Vector3<f64>) -> (usize, f64) {
        let c = self.cell_coords(q).map(|v| v as i64);
        let dims = self.dims.map(|d| d as i64);
        let max_ring = *dims.iter().max().unwrap_or(&1);
        let mut best = (f64::INFINITY, u32::MAX);
        for k in 0..=max_ring {
            let lo = [0, 1, 2].map(|a| (c[a] - k).max(0));
            let hi = [0, 1, 2].map(|a| (c[a] + k).min(dims[a] - 1));
            for x in lo[0]..=hi[0] {
                for y in lo[1]..=hi[1] {
                    if (x - c[0]).abs() == k || (y - c[1]).abs() == k {
                        for z in lo[2]..=hi[2] {
                            self.scan_cell([x, y, z], q, &mut best);
                        }
                    } else {
                        if c[2] - k >= 0 {
                            self.scan_cell([x, y, c[2] - k], q, &mut best);
                        }
                        if c[2] + k < dims[2] {
                            self.scan_cell([x, y, c[2] + k], q, &mut best);
                        }
                    }
                }
            }
            match self.unscanned_dist2(q, c, k) {
                // Strict, with slack for rounding, so an equidistant point
                // with a lower index further out is never skipped.
                Some(d2) if best.0 >= d2 * (1.0 - 1e-9) => {}
                _ => break,
            }
        }
        (best.1 as usize, best.0)
    }

    /// Squared distance from `q` to the grid cells outside the cube of
    /// ring `k` around `c`, or `None` when the cube covers the grid.
    fn unscanned_dist2(&self, q: &Vector3<f64>, c: [i64; 3], k: i64) -> Option<f64> {
        let lo = self.origin;
        let hi = lo + Vector3::from_iterator(self.dims.iter().map(|&d| d as f64 * self.cell));
        let mut out: Option<f64> = None;
        for a in 0..3 {
            let mut slabs = [None, None];
            if c[a] - k > 0 {
                slabs[0] = Some((lo[a], lo[a] + (c[a] - k) as f64 * self.cell));
            }
            if c[a] + k + 1 < self.dims[a] as i64 {
                slabs[1] = Some((lo[a] + (c[a] + k + 1) as f64 * self.cell, hi[a]));
            }
            for (s, e) in slabs.into_iter().flatten() {
                let mut d2 = 0.0;
                for b in 0..3 {
                    let (l, h) = if b == a { (s, e) } else { (lo[b], hi[b]) };
                    let g = (l - q[b]).max(q[b] - h).max(0.0);
                    d2 += g * g;
                }
                out = Some(out.map_or(d2, |o: f64| o.min(d2)));
            }
        }
        out
    }
}

fn median_spacing(points: &[Vector3<f64>]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 0.0;
    }
    let samples = SPACING_SAMPLES.min(n);
    let mut d: Vec<f64> = (0..samples)
        .map(|s| {
            let i = s * n / samples;
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, p)| (p - points[i]).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}
