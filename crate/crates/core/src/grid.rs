//! MAC staggered grid on the rectangle (0, L) x (0, 1).
//!
//! Layout:
//! - `u1` lives on x-faces `(i, j)`, `i = 0..=nx`, `j < nz`, at `(i dx, (j + 1/2) dz)`.
//! - `u2` lives on z-faces `(i, j)`, `i < nx`, `j = 0..=nz`, at `((i + 1/2) dx, j dz)`.
//! - scalars (pressure, potentials) live in cells.
//! - beam nodes share the cell-center abscissae, so the top z-faces sit on them.
//!
//! Boundary segments: inflow `x = 0`, outflow `x = L`, bottom `z = 0`, top `z = 1`
//! (the beam). Everything except the outflow carries Dirichlet velocity data.

use crate::error::{Error, Result};
use std::io::{BufRead, Write};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid2D {
    pub nx: usize,
    pub nz: usize,
    pub length: f64,
    pub dx: f64,
    pub dz: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Boundary {
    Inflow,
    Outflow,
    Bottom,
    Top,
}

impl Boundary {
    pub const ALL: [Boundary; 4] = [Boundary::Inflow, Boundary::Outflow, Boundary::Bottom, Boundary::Top];

    /// Part of the Dirichlet velocity boundary (everything but the outflow).
    pub fn is_dirichlet_part(self) -> bool {
        !matches!(self, Boundary::Outflow)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stagger {
    Cell,
    XFace,
    ZFace,
    Node,
}

impl Stagger {
    pub fn name(self) -> &'static str {
        match self {
            Stagger::Cell => "cell",
            Stagger::XFace => "xface",
            Stagger::ZFace => "zface",
            Stagger::Node => "node",
        }
    }

    pub fn parse(s: &str) -> Option<Stagger> {
        match s {
            "cell" => Some(Stagger::Cell),
            "xface" => Some(Stagger::XFace),
            "zface" => Some(Stagger::ZFace),
            "node" => Some(Stagger::Node),
            _ => None,
        }
    }

    /// `(ni, nj)` site counts.
    pub fn shape(self, g: &Grid2D) -> (usize, usize) {
        match self {
            Stagger::Cell => (g.nx, g.nz),
            Stagger::XFace => (g.nx + 1, g.nz),
            Stagger::ZFace => (g.nx, g.nz + 1),
            Stagger::Node => (g.nx + 1, g.nz + 1),
        }
    }

    pub fn count(self, g: &Grid2D) -> usize {
        let (a, b) = self.shape(g);
        a * b
    }

    pub fn position(self, g: &Grid2D, i: usize, j: usize) -> (f64, f64) {
        let (ox, oz) = match self {
            Stagger::Cell => (0.5, 0.5),
            Stagger::XFace => (0.0, 0.5),
            Stagger::ZFace => (0.5, 0.0),
            Stagger::Node => (0.0, 0.0),
        };
        ((i as f64 + ox) * g.dx, (j as f64 + oz) * g.dz)
    }

    /// Quadrature weight of a site: trapezoid in any direction where the
    /// sites touch the boundary.
    pub fn weight(self, g: &Grid2D, i: usize, j: usize) -> f64 {
        let (ni, nj) = self.shape(g);
        let mut w = g.dx * g.dz;
        if matches!(self, Stagger::XFace | Stagger::Node) && (i == 0 || i + 1 == ni) {
            w *= 0.5;
        }
        if matches!(self, Stagger::ZFace | Stagger::Node) && (j == 0 || j + 1 == nj) {
            w *= 0.5;
        }
        w
    }
}

impl Grid2D {
    pub fn new(nx: usize, nz: usize, length: f64) -> Result<Self> {
        let mut bad = Vec::new();
        if nx < 4 {
            bad.push(format!("nx = {nx} must be >= 4"));
        }
        if nz < 4 {
            bad.push(format!("nz = {nz} must be >= 4"));
        }
        if !(length > 0.0 && length.is_finite()) {
            bad.push(format!("L = {length} must be positive"));
        }
        if !bad.is_empty() {
            return Err(Error::InvalidConfig(bad));
        }
        Ok(Grid2D { nx, nz, length, dx: length / nx as f64, dz: 1.0 / nz as f64 })
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }
    #[inline]
    pub fn xf(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }
    #[inline]
    pub fn zf(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }
    pub fn n_cells(&self) -> usize {
        self.nx * self.nz
    }
    pub fn n_xfaces(&self) -> usize {
        (self.nx + 1) * self.nz
    }
    pub fn n_zfaces(&self) -> usize {
        self.nx * (self.nz + 1)
    }

    pub fn xc(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx
    }
    pub fn zc(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dz
    }

    pub fn xface_boundary(&self, i: usize) -> Option<Boundary> {
        if i == 0 {
            Some(Boundary::Inflow)
        } else if i == self.nx {
            Some(Boundary::Outflow)
        } else {
            None
        }
    }

    pub fn zface_boundary(&self, j: usize) -> Option<Boundary> {
        if j == 0 {
            Some(Boundary::Bottom)
        } else if j == self.nz {
            Some(Boundary::Top)
        } else {
            None
        }
    }

    /// Number of boundary faces along a segment.
    pub fn side_len(&self, b: Boundary) -> usize {
        match b {
            Boundary::Inflow | Boundary::Outflow => self.nz,
            Boundary::Bottom | Boundary::Top => self.nx,
        }
    }

    /// Length of one boundary face on a segment.
    pub fn side_h(&self, b: Boundary) -> f64 {
        match b {
            Boundary::Inflow | Boundary::Outflow => self.dz,
            Boundary::Bottom | Boundary::Top => self.dx,
        }
    }
}

fn check(expected: Stagger, got: Stagger) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::StaggerMismatch { expected: expected.name(), got: got.name() })
    }
}

fn same_grid(a: &Grid2D, b: &Grid2D) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!("{}x{} (L={}) vs {}x{} (L={})", a.nx, a.nz, a.length, b.nx, b.nz, b.length)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub grid: Grid2D,
    pub stagger: Stagger,
    pub data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid2D, stagger: Stagger) -> Self {
        ScalarField { grid, stagger, data: vec![0.0; stagger.count(&grid)] }
    }

    pub fn from_fn(grid: Grid2D, stagger: Stagger, f: impl Fn(f64, f64) -> f64) -> Self {
        let (ni, nj) = stagger.shape(&grid);
        let mut data = Vec::with_capacity(ni * nj);
        for j in 0..nj {
            for i in 0..ni {
                let (x, z) = stagger.position(&grid, i, j);
                data.push(f(x, z));
            }
        }
        ScalarField { grid, stagger, data }
    }

    pub fn from_vec(grid: Grid2D, stagger: Stagger, data: Vec<f64>) -> Result<Self> {
        if data.len() != stagger.count(&grid) {
            return Err(Error::GridMismatch(format!(
                "{} values for {} {} sites",
                data.len(),
                stagger.count(&grid),
                stagger.name()
            )));
        }
        Ok(ScalarField { grid, stagger, data })
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        let (ni, _) = self.stagger.shape(&self.grid);
        self.data[j * ni + i]
    }

    pub fn inner(&self, other: &ScalarField) -> Result<f64> {
        same_grid(&self.grid, &other.grid)?;
        check(self.stagger, other.stagger)?;
        let (ni, nj) = self.stagger.shape(&self.grid);
        let mut s = 0.0;
        for j in 0..nj {
            for i in 0..ni {
                let k = j * ni + i;
                s += self.stagger.weight(&self.grid, i, j) * self.data[k] * other.data[k];
            }
        }
        Ok(s)
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).map(f64::sqrt).unwrap_or(f64::NAN)
    }

    /// Discrete H1 pairing of cell fields: L2 part plus the face gradients
    /// with a zero Dirichlet closure on every side.
    pub fn h1_inner(&self, other: &ScalarField) -> Result<f64> {
        check(Stagger::Cell, self.stagger)?;
        let bc = ScalarBc::homogeneous(&self.grid, BcKinds::ALL_DIRICHLET);
        let ga = gradient_bc(self, &bc)?;
        let gb = gradient_bc(other, &bc)?;
        Ok(self.inner(other)? + ga.inner(&gb)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub grid: Grid2D,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: Grid2D) -> Self {
        VectorField { grid, u1: vec![0.0; grid.n_xfaces()], u2: vec![0.0; grid.n_zfaces()] }
    }

    pub fn from_fn(grid: Grid2D, f1: impl Fn(f64, f64) -> f64, f2: impl Fn(f64, f64) -> f64) -> Self {
        VectorField {
            grid,
            u1: ScalarField::from_fn(grid, Stagger::XFace, f1).data,
            u2: ScalarField::from_fn(grid, Stagger::ZFace, f2).data,
        }
    }

    pub fn component1(&self) -> ScalarField {
        ScalarField { grid: self.grid, stagger: Stagger::XFace, data: self.u1.clone() }
    }
    pub fn component2(&self) -> ScalarField {
        ScalarField { grid: self.grid, stagger: Stagger::ZFace, data: self.u2.clone() }
    }

    pub fn axpy(&mut self, a: f64, x: &VectorField) {
        for (s, v) in self.u1.iter_mut().zip(&x.u1) {
            *s += a * v;
        }
        for (s, v) in self.u2.iter_mut().zip(&x.u2) {
            *s += a * v;
        }
    }

    pub fn scaled(&self, a: f64) -> VectorField {
        VectorField {
            grid: self.grid,
            u1: self.u1.iter().map(|v| a * v).collect(),
            u2: self.u2.iter().map(|v| a * v).collect(),
        }
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        let mut r = self.clone();
        r.axpy(-1.0, other);
        r
    }

    pub fn add(&self, other: &VectorField) -> VectorField {
        let mut r = self.clone();
        r.axpy(1.0, other);
        r
    }

    /// L2 pairing over all faces, boundary faces at half weight.
    pub fn inner(&self, other: &VectorField) -> Result<f64> {
        same_grid(&self.grid, &other.grid)?;
        Ok(self.component1().inner(&other.component1())? + self.component2().inner(&other.component2())?)
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).map(f64::sqrt).unwrap_or(f64::NAN)
    }

    pub fn max_abs(&self) -> f64 {
        self.u1.iter().chain(&self.u2).fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Normal component (outward) on one boundary face of a segment.
    pub fn normal_trace(&self, b: Boundary, k: usize) -> f64 {
        let g = &self.grid;
        match b {
            Boundary::Inflow => -self.u1[g.xf(0, k)],
            Boundary::Outflow => self.u1[g.xf(g.nx, k)],
            Boundary::Bottom => -self.u2[g.zf(k, 0)],
            Boundary::Top => self.u2[g.zf(k, g.nz)],
        }
    }

    /// Sum of (u . n) h over the given segments.
    pub fn flux(&self, segments: &[Boundary]) -> f64 {
        let mut s = 0.0;
        for &b in segments {
            let h = self.grid.side_h(b);
            for k in 0..self.grid.side_len(b) {
                s += self.normal_trace(b, k) * h;
            }
        }
        s
    }
}

/// Beam displacement or velocity at the nodes `x_j = (j + 1/2) dx`.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamField {
    pub grid: Grid2D,
    pub data: Vec<f64>,
}

impl BeamField {
    pub fn zeros(grid: Grid2D) -> Self {
        BeamField { grid, data: vec![0.0; grid.nx] }
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(f64) -> f64) -> Self {
        BeamField { grid, data: (0..grid.nx).map(|j| f(grid.xc(j))).collect() }
    }

    pub fn node_x(&self, j: usize) -> f64 {
        self.grid.xc(j)
    }

    /// Clamped ghost values `(left, right)` at `x = -dx/2` and `x = L + dx/2`.
    ///
    /// The ghost comes from the cubic with `eta = eta_x = 0` at the wall through
    /// the first two nodes.
    pub fn clamped_ghosts(&self) -> (f64, f64) {
        clamped_ghosts(&self.data)
    }

    pub fn inner(&self, other: &BeamField) -> Result<f64> {
        same_grid(&self.grid, &other.grid)?;
        Ok(self.grid.dx * self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum::<f64>())
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).map(f64::sqrt).unwrap_or(f64::NAN)
    }
}

pub fn clamped_ghosts(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    (2.0 * v[0] - v[1] / 9.0, 2.0 * v[n - 1] - v[n - 2] / 9.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SideKind {
    Dirichlet,
    Neumann,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BcKinds {
    pub inflow: SideKind,
    pub outflow: SideKind,
    pub bottom: SideKind,
    pub top: SideKind,
}

impl BcKinds {
    pub const ALL_DIRICHLET: BcKinds = BcKinds {
        inflow: SideKind::Dirichlet,
        outflow: SideKind::Dirichlet,
        bottom: SideKind::Dirichlet,
        top: SideKind::Dirichlet,
    };

    /// Neumann on the Dirichlet-velocity part, Dirichlet on the outflow.
    pub const MIXED: BcKinds = BcKinds {
        inflow: SideKind::Neumann,
        outflow: SideKind::Dirichlet,
        bottom: SideKind::Neumann,
        top: SideKind::Neumann,
    };

    pub fn get(&self, b: Boundary) -> SideKind {
        match b {
            Boundary::Inflow => self.inflow,
            Boundary::Outflow => self.outflow,
            Boundary::Bottom => self.bottom,
            Boundary::Top => self.top,
        }
    }

    pub fn has_dirichlet(&self) -> bool {
        Boundary::ALL.iter().any(|&b| self.get(b) == SideKind::Dirichlet)
    }
}

/// Boundary data for a cell-centered scalar. Dirichlet entries are values on
/// the wall; Neumann entries are outward normal derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarBc {
    pub kinds: BcKinds,
    pub inflow: Vec<f64>,
    pub outflow: Vec<f64>,
    pub bottom: Vec<f64>,
    pub top: Vec<f64>,
}

impl ScalarBc {
    pub fn homogeneous(g: &Grid2D, kinds: BcKinds) -> Self {
        ScalarBc {
            kinds,
            inflow: vec![0.0; g.nz],
            outflow: vec![0.0; g.nz],
            bottom: vec![0.0; g.nx],
            top: vec![0.0; g.nx],
        }
    }

    pub fn side(&self, b: Boundary) -> &[f64] {
        match b {
            Boundary::Inflow => &self.inflow,
            Boundary::Outflow => &self.outflow,
            Boundary::Bottom => &self.bottom,
            Boundary::Top => &self.top,
        }
    }

    pub fn side_mut(&mut self, b: Boundary) -> &mut Vec<f64> {
        match b {
            Boundary::Inflow => &mut self.inflow,
            Boundary::Outflow => &mut self.outflow,
            Boundary::Bottom => &mut self.bottom,
            Boundary::Top => &mut self.top,
        }
    }
}

/// Cell divergence of a face field (all faces, boundary faces included).
pub fn divergence(v: &VectorField) -> ScalarField {
    let g = v.grid;
    let mut out = ScalarField::zeros(g, Stagger::Cell);
    for j in 0..g.nz {
        for i in 0..g.nx {
            out.data[g.cell(i, j)] = (v.u1[g.xf(i + 1, j)] - v.u1[g.xf(i, j)]) / g.dx
                + (v.u2[g.zf(i, j + 1)] - v.u2[g.zf(i, j)]) / g.dz;
        }
    }
    out
}

/// Face gradient of a cell field. Boundary faces use the one-sided
/// second-order difference through the three nearest cells.
pub fn gradient(p: &ScalarField) -> Result<VectorField> {
    check(Stagger::Cell, p.stagger)?;
    let g = p.grid;
    let mut v = interior_gradient(p);
    for j in 0..g.nz {
        let c = |i| p.data[g.cell(i, j)];
        v.u1[g.xf(0, j)] = (-2.0 * c(0) + 3.0 * c(1) - c(2)) / g.dx;
        let n = g.nx;
        v.u1[g.xf(n, j)] = (2.0 * c(n - 1) - 3.0 * c(n - 2) + c(n - 3)) / g.dx;
    }
    for i in 0..g.nx {
        let c = |j| p.data[g.cell(i, j)];
        v.u2[g.zf(i, 0)] = (-2.0 * c(0) + 3.0 * c(1) - c(2)) / g.dz;
        let n = g.nz;
        v.u2[g.zf(i, n)] = (2.0 * c(n - 1) - 3.0 * c(n - 2) + c(n - 3)) / g.dz;
    }
    Ok(v)
}

fn interior_gradient(p: &ScalarField) -> VectorField {
    let g = p.grid;
    let mut v = VectorField::zeros(g);
    for j in 0..g.nz {
        for i in 1..g.nx {
            v.u1[g.xf(i, j)] = (p.data[g.cell(i, j)] - p.data[g.cell(i - 1, j)]) / g.dx;
        }
    }
    for j in 1..g.nz {
        for i in 0..g.nx {
            v.u2[g.zf(i, j)] = (p.data[g.cell(i, j)] - p.data[g.cell(i, j - 1)]) / g.dz;
        }
    }
    v
}

/// Face gradient with boundary faces closed by the given data. A Dirichlet
/// face uses `(p_0 - d) / (h / 2)`; a Neumann face returns the prescribed
/// derivative. This is the closure every elliptic solve in the crate uses.
pub fn gradient_bc(p: &ScalarField, bc: &ScalarBc) -> Result<VectorField> {
    check(Stagger::Cell, p.stagger)?;
    let g = p.grid;
    let mut v = interior_gradient(p);
    let half_x = 0.5 * g.dx;
    let half_z = 0.5 * g.dz;
    for j in 0..g.nz {
        v.u1[g.xf(0, j)] = match bc.kinds.inflow {
            SideKind::Dirichlet => (p.data[g.cell(0, j)] - bc.inflow[j]) / half_x,
            SideKind::Neumann => -bc.inflow[j],
        };
        v.u1[g.xf(g.nx, j)] = match bc.kinds.outflow {
            SideKind::Dirichlet => (bc.outflow[j] - p.data[g.cell(g.nx - 1, j)]) / half_x,
            SideKind::Neumann => bc.outflow[j],
        };
    }
    for i in 0..g.nx {
        v.u2[g.zf(i, 0)] = match bc.kinds.bottom {
            SideKind::Dirichlet => (p.data[g.cell(i, 0)] - bc.bottom[i]) / half_z,
            SideKind::Neumann => -bc.bottom[i],
        };
        v.u2[g.zf(i, g.nz)] = match bc.kinds.top {
            SideKind::Dirichlet => (bc.top[i] - p.data[g.cell(i, g.nz - 1)]) / half_z,
            SideKind::Neumann => bc.top[i],
        };
    }
    Ok(v)
}

pub fn laplacian(p: &ScalarField, bc: &ScalarBc) -> Result<ScalarField> {
    Ok(divergence(&gradient_bc(p, bc)?))
}

// ---------------------------------------------------------------- field dumps

/// CSV dump: a header line `# nx nz L staggering`, one line with the values,
/// then `i,j,x,z,value` rows with 17 significant digits.
pub fn write_sites<W: Write>(
    w: &mut W,
    grid: &Grid2D,
    stagger_name: &str,
    rows: impl Iterator<Item = (usize, usize, f64, f64, f64)>,
) -> std::io::Result<()> {
    writeln!(w, "# nx nz L staggering")?;
    writeln!(w, "# {} {} {:.16e} {}", grid.nx, grid.nz, grid.length, stagger_name)?;
    writeln!(w, "i,j,x,z,value")?;
    for (i, j, x, z, v) in rows {
        writeln!(w, "{i},{j},{x:.16e},{z:.16e},{v:.16e}")?;
    }
    Ok(())
}

pub fn write_scalar_csv<W: Write>(w: &mut W, f: &ScalarField) -> std::io::Result<()> {
    let (ni, nj) = f.stagger.shape(&f.grid);
    let rows = (0..nj).flat_map(move |j| {
        (0..ni).map(move |i| {
            let (x, z) = f.stagger.position(&f.grid, i, j);
            (i, j, x, z, f.data[j * ni + i])
        })
    });
    write_sites(w, &f.grid, f.stagger.name(), rows)
}

pub fn write_beam_csv<W: Write>(w: &mut W, b: &BeamField) -> std::io::Result<()> {
    let rows = (0..b.data.len()).map(|j| (j, b.grid.nz, b.grid.xc(j), 1.0, b.data[j]));
    write_sites(w, &b.grid, "beam", rows)
}

/// Parsed dump: grid, staggering label and the values in row order.
pub fn read_sites<R: BufRead>(r: R) -> Result<(Grid2D, String, Vec<f64>)> {
    let mut lines = r.lines();
    let mut next = || -> Result<String> {
        lines.next().ok_or_else(|| Error::Parse("truncated dump".into()))?.map_err(Error::from)
    };
    let h0 = next()?;
    if h0.trim() != "# nx nz L staggering" {
        return Err(Error::Parse(format!("bad header: {h0}")));
    }
    let h1 = next()?;
    let parts: Vec<&str> = h1.trim_start_matches('#').split_whitespace().collect();
    if parts.len() != 4 {
        return Err(Error::Parse(format!("bad header values: {h1}")));
    }
    let p = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s}: {e}")));
    let nx = p(parts[0])? as usize;
    let nz = p(parts[1])? as usize;
    let grid = Grid2D::new(nx, nz, p(parts[2])?)?;
    let _columns = next()?;
    let mut vals = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let last = line.rsplit(',').next().ok_or_else(|| Error::Parse(line.clone()))?;
        vals.push(p(last)?);
    }
    Ok((grid, parts[3].to_string(), vals))
}

pub fn read_scalar_csv<R: BufRead>(r: R) -> Result<ScalarField> {
    let (grid, name, vals) = read_sites(r)?;
    let stagger = Stagger::parse(&name).ok_or_else(|| Error::Parse(format!("unknown staggering {name}")))?;
    ScalarField::from_vec(grid, stagger, vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grid(nx: usize, nz: usize) -> Grid2D {
        Grid2D::new(nx, nz, 2.0).unwrap()
    }

    #[test]
    fn rejects_small_grids() {
        assert!(matches!(Grid2D::new(3, 8, 1.0), Err(Error::InvalidConfig(_))));
        assert!(Grid2D::new(4, 4, 1.0).is_ok());
    }

    #[test]
    fn divergence_of_constant_and_linear_fields_vanishes() {
        let g = grid(12, 8);
        let c = VectorField::from_fn(g, |_, _| 1.0, |_, _| 2.0);
        assert!(divergence(&c).data.iter().all(|v| v.abs() < 1e-12));
        let l = VectorField::from_fn(g, |x, _| x, |_, z| -z);
        assert!(divergence(&l).data.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn divergence_converges_at_second_order() {
        let err = |n: usize| {
            let g = grid(n, n / 2);
            let v = VectorField::from_fn(g, |x, _| x.sin(), |_, _| 0.0);
            let d = divergence(&v);
            let ex = ScalarField::from_fn(g, Stagger::Cell, |x, _| x.cos());
            d.data.iter().zip(&ex.data).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        };
        let order = (err(16) / err(32)).log2();
        assert!(order >= 1.9, "order {order}");
    }

    #[test]
    fn gradient_is_exact_on_affine_fields() {
        let g = grid(10, 6);
        let c = ScalarField::from_fn(g, Stagger::Cell, |_, _| 3.5);
        assert!(gradient(&c).unwrap().max_abs() < 1e-12);
        let x = ScalarField::from_fn(g, Stagger::Cell, |x, _| x);
        let gx = gradient(&x).unwrap();
        assert!(gx.u1.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(gx.u2.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gradient_rejects_face_fields() {
        let g = grid(6, 6);
        let f = ScalarField::zeros(g, Stagger::XFace);
        assert!(matches!(gradient(&f), Err(Error::StaggerMismatch { .. })));
    }

    #[test]
    fn laplacian_converges_at_second_order_in_the_interior() {
        let err = |n: usize| {
            let g = grid(2 * n, n);
            let f = |x: f64, z: f64| (PI * x).sin() * (PI * z).sin();
            let p = ScalarField::from_fn(g, Stagger::Cell, f);
            let bc = ScalarBc::homogeneous(&g, BcKinds::ALL_DIRICHLET);
            let l = laplacian(&p, &bc).unwrap();
            let mut e = 0.0f64;
            for j in 2..g.nz - 2 {
                for i in 2..g.nx - 2 {
                    let (x, z) = (g.xc(i), g.zc(j));
                    e = e.max((l.data[g.cell(i, j)] + 2.0 * PI * PI * f(x, z)).abs());
                }
            }
            e
        };
        let order = (err(16) / err(32)).log2();
        assert!(order > 1.9, "order {order}");
    }

    #[test]
    fn div_grad_is_the_five_point_stencil_on_interior_cells() {
        let g = grid(9, 7);
        let p = ScalarField::from_fn(g, Stagger::Cell, |x, z| (3.0 * x).sin() * (z * z + 1.0).ln() + x * z);
        let l = divergence(&gradient(&p).unwrap());
        for j in 1..g.nz - 1 {
            for i in 1..g.nx - 1 {
                let c = |a: usize, b: usize| p.data[g.cell(a, b)];
                let five = (c(i + 1, j) - 2.0 * c(i, j) + c(i - 1, j)) / (g.dx * g.dx)
                    + (c(i, j + 1) - 2.0 * c(i, j) + c(i, j - 1)) / (g.dz * g.dz);
                let v = l.data[g.cell(i, j)];
                assert!((v - five).abs() <= 1e-12 * five.abs().max(1.0));
            }
        }
    }

    #[test]
    fn unit_impulse_has_single_site_mass() {
        let g = grid(8, 4);
        for st in [Stagger::Cell, Stagger::XFace, Stagger::ZFace, Stagger::Node] {
            let (ni, nj) = st.shape(&g);
            for &(i, j) in &[(0, 0), (ni - 1, nj - 1), (1, 1)] {
                let mut f = ScalarField::zeros(g, st);
                f.data[j * ni + i] = 1.0;
                assert_eq!(f.inner(&f).unwrap(), st.weight(&g, i, j));
                let z = ScalarField::zeros(g, st);
                assert_eq!(z.inner(&f).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn inner_product_rejects_mismatch() {
        let a = ScalarField::zeros(grid(8, 4), Stagger::Cell);
        let b = ScalarField::zeros(grid(8, 4), Stagger::XFace);
        let c = ScalarField::zeros(grid(8, 8), Stagger::Cell);
        assert!(a.inner(&b).is_err());
        assert!(a.inner(&c).is_err());
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let g = grid(7, 5);
        let f = ScalarField::from_fn(g, Stagger::ZFace, |x, z| (x * 1.234567).exp() / (z + 0.1) + 1e-300);
        let mut buf = Vec::new();
        write_scalar_csv(&mut buf, &f).unwrap();
        let back = read_scalar_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn clamped_ghost_matches_cubic() {
        // eta = x^2 (a + b x) is reproduced exactly by the cubic closure
        let g = grid(16, 4);
        let b = BeamField::from_fn(g, |x| x * x * (1.5 - 0.7 * x));
        let (gl, _) = b.clamped_ghosts();
        let x = -0.5 * g.dx;
        assert!((gl - x * x * (1.5 - 0.7 * x)).abs() < 1e-14);
    }

    fn interior_supported(g: &Grid2D, seed: &[f64]) -> VectorField {
        let mut v = VectorField::zeros(*g);
        let mut k = 0;
        for j in 0..g.nz {
            for i in 1..g.nx {
                v.u1[g.xf(i, j)] = seed[k % seed.len()];
                k += 1;
            }
        }
        for j in 1..g.nz {
            for i in 0..g.nx {
                v.u2[g.zf(i, j)] = seed[k % seed.len()];
                k += 1;
            }
        }
        v
    }

    proptest! {
        #[test]
        fn adjointness_for_interior_supported_fields(
            pv in prop::collection::vec(-1.0f64..1.0, 48),
            sv in prop::collection::vec(-1.0f64..1.0, 37),
        ) {
            let g = grid(8, 6);
            let p = ScalarField::from_vec(g, Stagger::Cell, pv).unwrap();
            let v = interior_supported(&g, &sv);
            let lhs = gradient(&p).unwrap().inner(&v).unwrap();
            let rhs = -p.inner(&divergence(&v)).unwrap();
            let scale = gradient(&p).unwrap().norm() * v.norm() + 1e-300;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
        }

        #[test]
        fn norms_are_positive_off_zero(vals in prop::collection::vec(-1.0f64..1.0, 63)) {
            let g = grid(9, 7);
            let f = ScalarField::from_vec(g, Stagger::Cell, vals.clone()).unwrap();
            let n = f.norm();
            prop_assert!(n >= 0.0);
            prop_assert_eq!(n == 0.0, vals.iter().all(|v| *v == 0.0));
            let h1 = f.h1_inner(&f).unwrap();
            prop_assert!(h1 >= n * n);
        }
    }
}
