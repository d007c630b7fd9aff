//! Cell-centred and staggered (MAC) grids.
//!
//! All grids are stored in x-fastest order. Two-dimensional grids use an
//! extent of 1 along z and carry no z face component.

use crate::error::{FluidError, Result};

/// Extents of a cell grid, 2D or 3D.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridDims {
    pub extents: [usize; 3],
    pub dim: usize,
}

impl GridDims {
    pub fn new_2d(nx: usize, ny: usize) -> Self {
        Self { extents: [nx, ny, 1], dim: 2 }
    }

    pub fn new_3d(nx: usize, ny: usize, nz: usize) -> Self {
        Self { extents: [nx, ny, nz], dim: 3 }
    }

    /// Cubic/square grid of resolution `r` in `dim` dimensions.
    pub fn cube(dim: usize, r: usize) -> Self {
        match dim {
            2 => Self::new_2d(r, r),
            _ => Self::new_3d(r, r, r),
        }
    }

    pub fn cell_count(&self) -> usize {
        self.extents.iter().product()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.extents[0] * (j + self.extents[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.extents[0];
        let ny = self.extents[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    /// Extents of the face grid holding the velocity component along `axis`.
    pub fn face_extents(&self, axis: usize) -> [usize; 3] {
        let mut e = self.extents;
        e[axis] += 1;
        e
    }

    pub fn face_count(&self, axis: usize) -> usize {
        self.face_extents(axis).iter().product()
    }

    /// Neighbour of cell `c` offset by `delta` along `axis`, if inside the grid.
    #[inline]
    pub fn neighbor(&self, c: [usize; 3], axis: usize, delta: isize) -> Option<[usize; 3]> {
        let v = c[axis] as isize + delta;
        if v < 0 || v >= self.extents[axis] as isize {
            return None;
        }
        let mut n = c;
        n[axis] = v as usize;
        Some(n)
    }

    pub fn is_boundary(&self, c: [usize; 3]) -> bool {
        (0..self.dim).any(|a| c[a] == 0 || c[a] + 1 == self.extents[a])
    }

    pub fn max_extent(&self) -> usize {
        self.extents[..self.dim].iter().copied().max().unwrap_or(1)
    }
}

#[inline]
pub(crate) fn flat_index(ext: [usize; 3], i: usize, j: usize, k: usize) -> usize {
    i + ext[0] * (j + ext[1] * k)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    // a + t*(b-a) returns `a` exactly for constant data
    a + t * (b - a)
}

/// Multilinear interpolation of a field with extents `ext` at grid-space
/// coordinate `g` (already offset so that sample `i` sits at `g = i`).
pub(crate) fn interpolate(data: &[f64], ext: [usize; 3], dim: usize, g: [f64; 3]) -> f64 {
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..dim {
        let n = ext[a];
        if n == 1 {
            continue;
        }
        let x = g[a].clamp(0.0, (n - 1) as f64);
        let i0 = (x.floor() as usize).min(n - 2);
        base[a] = i0;
        frac[a] = x - i0 as f64;
    }
    let at = |di: usize, dj: usize, dk: usize| {
        let i = (base[0] + di).min(ext[0] - 1);
        let j = (base[1] + dj).min(ext[1] - 1);
        let k = (base[2] + dk).min(ext[2] - 1);
        data[flat_index(ext, i, j, k)]
    };
    let bilinear = |dk: usize| {
        let c0 = lerp(at(0, 0, dk), at(1, 0, dk), frac[0]);
        let c1 = lerp(at(0, 1, dk), at(1, 1, dk), frac[0]);
        lerp(c0, c1, frac[1])
    };
    if dim == 3 && ext[2] > 1 {
        lerp(bilinear(0), bilinear(1), frac[2])
    } else {
        bilinear(0)
    }
}

/// One value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    pub dims: GridDims,
    pub dx: f64,
    pub data: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(dims: GridDims, dx: f64) -> Self {
        Self::filled(dims, dx, 0.0)
    }

    pub fn filled(dims: GridDims, dx: f64, value: f64) -> Self {
        assert!(dx > 0.0, "cell size must be positive");
        Self { dims, dx, data: vec![value; dims.cell_count()] }
    }

    pub fn from_vec(dims: GridDims, dx: f64, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.cell_count() {
            return Err(FluidError::Dimension(format!(
                "scalar grid expects {} values, got {}",
                dims.cell_count(),
                data.len()
            )));
        }
        if dx <= 0.0 {
            return Err(FluidError::Config("cell size must be positive".into()));
        }
        Ok(Self { dims, dx, data })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.dims.index(i, j, k)]
    }

    #[inline]
    pub fn at(&self, c: [usize; 3]) -> f64 {
        self.data[self.dims.index(c[0], c[1], c[2])]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let idx = self.dims.index(i, j, k);
        self.data[idx] = v;
    }

    /// World-space position of the centre of cell `c`.
    pub fn cell_center(&self, c: [usize; 3]) -> [f64; 3] {
        let mut p = [0.0; 3];
        for a in 0..self.dims.dim {
            p[a] = (c[a] as f64 + 0.5) * self.dx;
        }
        p
    }

    /// Linear interpolation at a world-space position, clamped to the grid.
    pub fn sample(&self, pos: [f64; 3]) -> f64 {
        let mut g = [0.0; 3];
        for a in 0..self.dims.dim {
            g[a] = pos[a] / self.dx - 0.5;
        }
        interpolate(&self.data, self.dims.extents, self.dims.dim, g)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &ScalarGrid) -> Result<()> {
        if self.dims != other.dims {
            return Err(FluidError::Dimension(format!(
                "grid extents {:?} vs {:?}",
                self.dims.extents, other.dims.extents
            )));
        }
        Ok(())
    }
}

/// Staggered grid: component `a` lives on the faces normal to axis `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct MacGrid {
    pub dims: GridDims,
    pub dx: f64,
    pub comps: [Vec<f64>; 3],
}

impl MacGrid {
    pub fn new(dims: GridDims, dx: f64) -> Self {
        assert!(dx > 0.0, "cell size must be positive");
        let comp = |a: usize| if a < dims.dim { vec![0.0; dims.face_count(a)] } else { Vec::new() };
        Self { dims, dx, comps: [comp(0), comp(1), comp(2)] }
    }

    /// Uniform velocity on every face.
    pub fn uniform(dims: GridDims, dx: f64, v: [f64; 3]) -> Self {
        let mut g = Self::new(dims, dx);
        for a in 0..dims.dim {
            g.comps[a].iter_mut().for_each(|x| *x = v[a]);
        }
        g
    }

    #[inline]
    pub fn face_index(&self, axis: usize, i: usize, j: usize, k: usize) -> usize {
        flat_index(self.dims.face_extents(axis), i, j, k)
    }

    #[inline]
    pub fn face(&self, axis: usize, f: [usize; 3]) -> f64 {
        self.comps[axis][self.face_index(axis, f[0], f[1], f[2])]
    }

    #[inline]
    pub fn face_mut(&mut self, axis: usize, f: [usize; 3]) -> &mut f64 {
        let idx = self.face_index(axis, f[0], f[1], f[2]);
        &mut self.comps[axis][idx]
    }

    pub fn face_coords(&self, axis: usize, idx: usize) -> [usize; 3] {
        let e = self.dims.face_extents(axis);
        [idx % e[0], (idx / e[0]) % e[1], idx / (e[0] * e[1])]
    }

    /// World position of face `f` of component `axis`.
    pub fn face_position(&self, axis: usize, f: [usize; 3]) -> [f64; 3] {
        let mut p = [0.0; 3];
        for a in 0..self.dims.dim {
            p[a] = if a == axis { f[a] as f64 * self.dx } else { (f[a] as f64 + 0.5) * self.dx };
        }
        p
    }

    /// Interpolates component `axis` at a world position.
    pub fn sample_component(&self, axis: usize, pos: [f64; 3]) -> f64 {
        let mut g = [0.0; 3];
        for a in 0..self.dims.dim {
            g[a] = if a == axis { pos[a] / self.dx } else { pos[a] / self.dx - 0.5 };
        }
        interpolate(&self.comps[axis], self.dims.face_extents(axis), self.dims.dim, g)
    }

    pub fn velocity_at(&self, pos: [f64; 3]) -> [f64; 3] {
        let mut v = [0.0; 3];
        for a in 0..self.dims.dim {
            v[a] = self.sample_component(a, pos);
        }
        v
    }

    /// Cell-centred average of the two faces bounding each cell along `axis`.
    pub fn cell_centered(&self, axis: usize) -> ScalarGrid {
        let mut out = ScalarGrid::new(self.dims, self.dx);
        for idx in 0..self.dims.cell_count() {
            let c = self.dims.coords(idx);
            let mut hi = c;
            hi[axis] += 1;
            out.data[idx] = 0.5 * (self.face(axis, c) + self.face(axis, hi));
        }
        out
    }

    /// Rebuilds a staggered field from cell-centred components by averaging
    /// the two cells adjacent to each face (one-sided at the domain edge).
    pub fn from_cell_centered(comps: &[ScalarGrid]) -> Result<Self> {
        let first = comps.first().ok_or_else(|| FluidError::Dimension("no components".into()))?;
        let dims = first.dims;
        if comps.len() != dims.dim {
            return Err(FluidError::Dimension(format!(
                "expected {} velocity components, got {}",
                dims.dim,
                comps.len()
            )));
        }
        let mut mac = MacGrid::new(dims, first.dx);
        for (axis, grid) in comps.iter().enumerate() {
            grid.same_shape(first)?;
            let fe = dims.face_extents(axis);
            for idx in 0..mac.comps[axis].len() {
                let f = [idx % fe[0], (idx / fe[0]) % fe[1], idx / (fe[0] * fe[1])];
                let n = dims.extents[axis];
                let hi = f[axis].min(n - 1);
                let lo = f[axis].saturating_sub(1);
                let mut a = f;
                a[axis] = lo;
                let mut b = f;
                b[axis] = hi;
                mac.comps[axis][idx] = 0.5 * (grid.at(a) + grid.at(b));
            }
        }
        Ok(mac)
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest velocity magnitude, evaluated at cell centres.
    pub fn max_speed(&self) -> f64 {
        let mut best = 0.0f64;
        for idx in 0..self.dims.cell_count() {
            let c = self.dims.coords(idx);
            let mut s = 0.0;
            for a in 0..self.dims.dim {
                let mut hi = c;
                hi[a] += 1;
                let v = 0.5 * (self.face(a, c) + self.face(a, hi));
                s += v * v;
            }
            best = best.max(s.sqrt());
        }
        best
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().flatten().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &MacGrid) -> Result<()> {
        if self.dims != other.dims {
            return Err(FluidError::Dimension(format!(
                "MAC grid extents {:?} vs {:?}",
                self.dims.extents, other.dims.extents
            )));
        }
        Ok(())
    }

    /// Component-wise difference `self - other`.
    pub fn minus(&self, other: &MacGrid) -> Result<MacGrid> {
        self.same_shape(other)?;
        let mut out = self.clone();
        for a in 0..self.dims.dim {
            for (o, b) in out.comps[a].iter_mut().zip(&other.comps[a]) {
                *o -= *b;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellType {
    Fluid,
    Air,
    Solid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFlags {
    pub dims: GridDims,
    pub cells: Vec<CellType>,
}

impl CellFlags {
    /// Domain walls SOLID, interior filled with `interior`.
    pub fn walled(dims: GridDims, interior: CellType) -> Self {
        let mut cells = vec![interior; dims.cell_count()];
        for (idx, cell) in cells.iter_mut().enumerate() {
            if dims.is_boundary(dims.coords(idx)) {
                *cell = CellType::Solid;
            }
        }
        Self { dims, cells }
    }

    /// Walls SOLID; interior FLUID where `phi < 0`, AIR elsewhere.
    pub fn from_levelset(phi: &ScalarGrid) -> Self {
        let mut flags = Self::walled(phi.dims, CellType::Air);
        for (idx, cell) in flags.cells.iter_mut().enumerate() {
            if *cell != CellType::Solid && phi.data[idx] < 0.0 {
                *cell = CellType::Fluid;
            }
        }
        flags
    }

    #[inline]
    pub fn at(&self, c: [usize; 3]) -> CellType {
        self.cells[self.dims.index(c[0], c[1], c[2])]
    }

    #[inline]
    pub fn is_fluid(&self, c: [usize; 3]) -> bool {
        self.at(c) == CellType::Fluid
    }

    pub fn fluid_count(&self) -> usize {
        self.cells.iter().filter(|c| **c == CellType::Fluid).count()
    }

    /// Types of the two cells sharing face `f` of component `axis`; `None`
    /// stands for outside the domain.
    pub fn face_neighbors(&self, axis: usize, f: [usize; 3]) -> (Option<CellType>, Option<CellType>) {
        let lo = if f[axis] == 0 {
            None
        } else {
            let mut c = f;
            c[axis] -= 1;
            Some(self.at(c))
        };
        let hi = if f[axis] >= self.dims.extents[axis] { None } else { Some(self.at(f)) };
        (lo, hi)
    }
}
