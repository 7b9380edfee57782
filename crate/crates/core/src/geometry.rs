//! Structured space-time meshes: quadrilateral elements, oriented faces,
//! boundary tagging and the time partition.
//!
//! The z-direction is implicit with unit extent, so a face "area" is its
//! edge length and an element "volume" is its planar area.

use std::fmt;
use std::sync::Arc;

use crate::scalar::{Scalar, Vec3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("mesh needs at least one cell per direction, got {nx}x{ny}")]
    EmptyGrid { nx: usize, ny: usize },
    #[error("degenerate domain rectangle")]
    DegenerateDomain,
    #[error("invalid material at cell ({i}, {j}): eps and mu must be positive")]
    InvalidMaterial { i: usize, j: usize },
    #[error("opposite boundaries along {0:?} cannot be paired")]
    PeriodicMismatch(Axis),
    #[error("time partition needs T > 0 and at least one step")]
    InvalidTimePartition,
    #[error("time knots must be strictly increasing")]
    NonMonotoneKnots,
    #[error("wall segment is not axis aligned or does not lie on mesh lines")]
    MisalignedWall,
    #[error("negative impedance coefficient")]
    NegativeImpedance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialParams<S> {
    pub eps: S,
    pub mu: S,
}

impl<S: Scalar> MaterialParams<S> {
    pub fn new(eps: S, mu: S) -> Self {
        Self { eps, mu }
    }

    pub fn vacuum() -> Self {
        Self { eps: S::one(), mu: S::one() }
    }

    /// Wave impedance ratio `sqrt(eps/mu)` used by the first-order absorbing condition.
    pub fn admittance(&self) -> S {
        (self.eps / self.mu).sqrt()
    }

    pub fn is_valid(&self) -> bool {
        self.eps > S::zero() && self.mu > S::zero()
    }
}

/// Axis-aligned rectangle `(x_lo, x_hi) x (y_lo, y_hi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect<S> {
    pub x_lo: S,
    pub x_hi: S,
    pub y_lo: S,
    pub y_hi: S,
}

impl<S: Scalar> Rect<S> {
    pub fn new(x_lo: S, x_hi: S, y_lo: S, y_hi: S) -> Self {
        Self { x_lo, x_hi, y_lo, y_hi }
    }

    pub fn width(&self) -> S {
        self.x_hi - self.x_lo
    }

    pub fn height(&self) -> S {
        self.y_hi - self.y_lo
    }

    pub fn area(&self) -> S {
        self.width() * self.height()
    }

    pub fn center(&self) -> [S; 2] {
        let half = S::lit(0.5);
        [(self.x_lo + self.x_hi) * half, (self.y_lo + self.y_hi) * half]
    }

    pub fn contains(&self, x: S, y: S) -> bool {
        x >= self.x_lo && x <= self.x_hi && y >= self.y_lo && y <= self.y_hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
}

/// One of the four sides of a rectangle (domain or element).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    XLo,
    XHi,
    YLo,
    YHi,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::XLo, Side::XHi, Side::YLo, Side::YHi];

    pub fn index(self) -> usize {
        match self {
            Side::XLo => 0,
            Side::XHi => 1,
            Side::YLo => 2,
            Side::YHi => 3,
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::XLo => Side::XHi,
            Side::XHi => Side::XLo,
            Side::YLo => Side::YHi,
            Side::YHi => Side::YLo,
        }
    }

    pub fn outward_normal<S: Scalar>(self) -> [S; 2] {
        match self {
            Side::XLo => [-S::one(), S::zero()],
            Side::XHi => [S::one(), S::zero()],
            Side::YLo => [S::zero(), -S::one()],
            Side::YHi => [S::zero(), S::one()],
        }
    }

    /// Point on the reference square for face parameter `u` in [-1, 1].
    pub fn reference_point<S: Scalar>(self, u: S) -> [S; 2] {
        match self {
            Side::XLo => [-S::one(), u],
            Side::XHi => [S::one(), u],
            Side::YLo => [u, -S::one()],
            Side::YHi => [u, S::one()],
        }
    }

    pub fn axis(self) -> Axis {
        match self {
            Side::XLo | Side::XHi => Axis::X,
            Side::YLo | Side::YHi => Axis::Y,
        }
    }
}

/// Tangential excitation `g_3(x, y, t)` (z-component in TM mode).
#[derive(Clone)]
pub struct Excitation<S>(pub Arc<dyn Fn(S, S, S) -> S + Send + Sync>);

impl<S> Excitation<S> {
    pub fn new(f: impl Fn(S, S, S) -> S + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }
}

impl<S> fmt::Debug for Excitation<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Excitation(..)")
    }
}

/// Boundary condition carried by a boundary face.
///
/// `Impedance` realizes `n x E + beta n x (n x H) = n x g`; PEC is `beta = 0, g = 0`
/// and the first-order absorbing condition is `beta = sqrt(eps/mu), g = 0`.
/// `Symmetry` is the magnetic wall `n x H = 0` used on the lateral walls of the
/// plane-wave channel.
#[derive(Debug, Clone)]
pub enum BoundaryTag<S> {
    Impedance { beta: S, g: Option<Excitation<S>> },
    Symmetry,
}

impl<S: Scalar> BoundaryTag<S> {
    pub fn pec() -> Self {
        BoundaryTag::Impedance { beta: S::zero(), g: None }
    }

    pub fn absorbing(material: &MaterialParams<S>) -> Self {
        BoundaryTag::Impedance { beta: material.admittance(), g: None }
    }

    pub fn beta(&self) -> S {
        match self {
            BoundaryTag::Impedance { beta, .. } => *beta,
            BoundaryTag::Symmetry => S::zero(),
        }
    }

    pub fn excitation(&self) -> Option<&Excitation<S>> {
        match self {
            BoundaryTag::Impedance { g, .. } => g.as_ref(),
            BoundaryTag::Symmetry => None,
        }
    }
}

/// Per-side boundary specification used when tagging the domain boundary.
#[derive(Debug, Clone)]
pub enum BoundarySpec<S> {
    Pec,
    Absorbing,
    Impedance { beta: S, g: Option<Excitation<S>> },
    Symmetry,
}

#[derive(Debug, Clone)]
pub enum FaceKind<S> {
    /// `shift` maps points of the face as seen from `left` into the frame of `right`.
    Interior { left: usize, right: usize, shift: [S; 2] },
    Boundary { element: usize, tag: BoundaryTag<S> },
}

#[derive(Debug, Clone)]
pub struct Face<S> {
    pub kind: FaceKind<S>,
    /// Unit normal, from left to right (interior) or outward (boundary).
    pub normal: [S; 2],
    /// Endpoints in the frame of the left (or only) element.
    pub segment: [[S; 2]; 2],
}

impl<S: Scalar> Face<S> {
    pub fn normal3(&self) -> Vec3<S> {
        [self.normal[0], self.normal[1], S::zero()]
    }

    pub fn length(&self) -> S {
        let dx = self.segment[1][0] - self.segment[0][0];
        let dy = self.segment[1][1] - self.segment[0][1];
        (dx * dx + dy * dy).sqrt()
    }

    pub fn is_interior(&self) -> bool {
        matches!(self.kind, FaceKind::Interior { .. })
    }

    /// Side of the owning element this face lies on (left element for interior faces).
    pub fn owner_side(&self) -> Side {
        side_from_normal(self.normal)
    }
}

fn side_from_normal<S: Scalar>(n: [S; 2]) -> Side {
    if n[0] > S::lit(0.5) {
        Side::XHi
    } else if n[0] < S::lit(-0.5) {
        Side::XLo
    } else if n[1] > S::lit(0.5) {
        Side::YHi
    } else {
        Side::YLo
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element<S> {
    pub index: usize,
    pub bbox: Rect<S>,
    pub material: MaterialParams<S>,
}

impl<S: Scalar> Element<S> {
    /// Physical coordinates of reference point `(xr, yr)` in [-1, 1]^2.
    pub fn to_physical(&self, xr: S, yr: S) -> [S; 2] {
        let c = self.bbox.center();
        let half = S::lit(0.5);
        [c[0] + xr * self.bbox.width() * half, c[1] + yr * self.bbox.height() * half]
    }

    pub fn to_reference(&self, x: S, y: S) -> [S; 2] {
        let c = self.bbox.center();
        let two = S::lit(2.0);
        [(x - c[0]) * two / self.bbox.width(), (y - c[1]) * two / self.bbox.height()]
    }
}

/// Structured `nx x ny` grid of axis-aligned quadrilaterals.
#[derive(Debug, Clone)]
pub struct Mesh<S> {
    nx: usize,
    ny: usize,
    domain: Rect<S>,
    elements: Vec<Element<S>>,
    faces: Vec<Face<S>>,
    periodic: [bool; 2],
}

impl<S: Scalar> Mesh<S> {
    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn domain(&self) -> &Rect<S> {
        &self.domain
    }

    pub fn elements(&self) -> &[Element<S>] {
        &self.elements
    }

    pub fn element(&self, index: usize) -> &Element<S> {
        &self.elements[index]
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn faces(&self) -> &[Face<S>] {
        &self.faces
    }

    pub fn is_periodic(&self, axis: Axis) -> bool {
        match axis {
            Axis::X => self.periodic[0],
            Axis::Y => self.periodic[1],
        }
    }

    pub fn cell_size(&self) -> [S; 2] {
        [
            self.domain.width() / S::from_usize(self.nx),
            self.domain.height() / S::from_usize(self.ny),
        ]
    }

    fn x_line(&self, i: usize) -> S {
        self.domain.x_lo + self.domain.width() * S::from_usize(i) / S::from_usize(self.nx)
    }

    fn y_line(&self, j: usize) -> S {
        self.domain.y_lo + self.domain.height() * S::from_usize(j) / S::from_usize(self.ny)
    }

    /// Element containing `(x, y)`; points on shared edges go to the upper/right cell.
    pub fn locate(&self, x: S, y: S) -> Option<usize> {
        if !self.domain.contains(x, y) {
            return None;
        }
        let [hx, hy] = self.cell_size();
        let i = ((x - self.domain.x_lo) / hx).floor().to_usize()?.min(self.nx - 1);
        let j = ((y - self.domain.y_lo) / hy).floor().to_usize()?.min(self.ny - 1);
        Some(j * self.nx + i)
    }

    /// Tags every boundary face on a domain side.
    pub fn set_boundary(&mut self, side: Side, spec: BoundarySpec<S>) -> Result<(), GeometryError> {
        let domain = self.domain;
        let tol = self.coord_tol();
        for face in &mut self.faces {
            let FaceKind::Boundary { element, tag } = &mut face.kind else { continue };
            if !on_domain_side(&domain, side, &face.segment, tol) || side_from_normal(face.normal) != side {
                continue;
            }
            let material = self.elements[*element].material;
            *tag = match &spec {
                BoundarySpec::Pec => BoundaryTag::pec(),
                BoundarySpec::Absorbing => BoundaryTag::absorbing(&material),
                BoundarySpec::Impedance { beta, g } => {
                    if *beta < S::zero() {
                        return Err(GeometryError::NegativeImpedance);
                    }
                    BoundaryTag::Impedance { beta: *beta, g: g.clone() }
                }
                BoundarySpec::Symmetry => BoundaryTag::Symmetry,
            };
        }
        Ok(())
    }

    fn coord_tol(&self) -> S {
        let [hx, hy] = self.cell_size();
        hx.min(hy) * S::lit(1e-9)
    }

    /// Replaces an interior face lying on the given axis-aligned segment by two
    /// PEC boundary faces, one per side.
    pub fn insert_pec_wall(&mut self, a: [S; 2], b: [S; 2]) -> Result<usize, GeometryError> {
        let tol = self.coord_tol();
        let vertical = (a[0] - b[0]).abs() <= tol;
        let horizontal = (a[1] - b[1]).abs() <= tol;
        if vertical == horizontal {
            return Err(GeometryError::MisalignedWall);
        }
        let on_lines = |v: S, lines: &dyn Fn(usize) -> S, n: usize| (0..=n).any(|k| (lines(k) - v).abs() <= tol);
        let xl = |k| self.x_line(k);
        let yl = |k| self.y_line(k);
        let aligned = if vertical {
            on_lines(a[0], &xl, self.nx) && on_lines(a[1], &yl, self.ny) && on_lines(b[1], &yl, self.ny)
        } else {
            on_lines(a[1], &yl, self.ny) && on_lines(a[0], &xl, self.nx) && on_lines(b[0], &xl, self.nx)
        };
        if !aligned {
            return Err(GeometryError::MisalignedWall);
        }
        let (lo, hi) = if vertical { (a[1].min(b[1]), a[1].max(b[1])) } else { (a[0].min(b[0]), a[0].max(b[0])) };
        let mut replaced = Vec::new();
        let mut kept = Vec::with_capacity(self.faces.len());
        for face in self.faces.drain(..) {
            let hit = match face.kind {
                FaceKind::Interior { shift, .. } if shift == [S::zero(), S::zero()] => {
                    let s = &face.segment;
                    if vertical {
                        (s[0][0] - a[0]).abs() <= tol
                            && (s[1][0] - a[0]).abs() <= tol
                            && s[0][1].min(s[1][1]) >= lo - tol
                            && s[0][1].max(s[1][1]) <= hi + tol
                    } else {
                        (s[0][1] - a[1]).abs() <= tol
                            && (s[1][1] - a[1]).abs() <= tol
                            && s[0][0].min(s[1][0]) >= lo - tol
                            && s[0][0].max(s[1][0]) <= hi + tol
                    }
                }
                _ => false,
            };
            if hit {
                replaced.push(face);
            } else {
                kept.push(face);
            }
        }
        let count = replaced.len();
        for face in replaced {
            let FaceKind::Interior { left, right, .. } = face.kind else { unreachable!() };
            kept.push(Face {
                kind: FaceKind::Boundary { element: left, tag: BoundaryTag::pec() },
                normal: face.normal,
                segment: face.segment,
            });
            kept.push(Face {
                kind: FaceKind::Boundary { element: right, tag: BoundaryTag::pec() },
                normal: [-face.normal[0], -face.normal[1]],
                segment: face.segment,
            });
        }
        self.faces = kept;
        Ok(count)
    }

    /// Face-local lookup: for every element, the face index and orientation on each side.
    pub fn element_faces(&self) -> Vec<[Option<usize>; 4]> {
        let mut out = vec![[None; 4]; self.elements.len()];
        for (fi, face) in self.faces.iter().enumerate() {
            let side = side_from_normal(face.normal);
            match face.kind {
                FaceKind::Interior { left, right, .. } => {
                    out[left][side.index()] = Some(fi);
                    out[right][side.opposite().index()] = Some(fi);
                }
                FaceKind::Boundary { element, .. } => out[element][side.index()] = Some(fi),
            }
        }
        out
    }
}

fn on_domain_side<S: Scalar>(domain: &Rect<S>, side: Side, seg: &[[S; 2]; 2], tol: S) -> bool {
    let close = |a: S, b: S| (a - b).abs() <= tol;
    match side {
        Side::XLo => close(seg[0][0], domain.x_lo) && close(seg[1][0], domain.x_lo),
        Side::XHi => close(seg[0][0], domain.x_hi) && close(seg[1][0], domain.x_hi),
        Side::YLo => close(seg[0][1], domain.y_lo) && close(seg[1][1], domain.y_lo),
        Side::YHi => close(seg[0][1], domain.y_hi) && close(seg[1][1], domain.y_hi),
    }
}

/// Builds an `nx x ny` grid; element `(i, j)` gets index `j * nx + i` and the
/// material sampled at its center. All boundary faces start out as PEC.
pub fn build_structured_mesh<S: Scalar>(
    nx: usize,
    ny: usize,
    domain: Rect<S>,
    material_fn: impl Fn(S, S) -> MaterialParams<S>,
) -> Result<Mesh<S>, GeometryError> {
    if nx == 0 || ny == 0 {
        return Err(GeometryError::EmptyGrid { nx, ny });
    }
    if !(domain.x_hi > domain.x_lo && domain.y_hi > domain.y_lo) {
        return Err(GeometryError::DegenerateDomain);
    }
    let mut mesh = Mesh { nx, ny, domain, elements: Vec::with_capacity(nx * ny), faces: Vec::new(), periodic: [false; 2] };
    for j in 0..ny {
        for i in 0..nx {
            let bbox = Rect::new(mesh.x_line(i), mesh.x_line(i + 1), mesh.y_line(j), mesh.y_line(j + 1));
            let c = bbox.center();
            let material = material_fn(c[0], c[1]);
            if !material.is_valid() {
                return Err(GeometryError::InvalidMaterial { i, j });
            }
            mesh.elements.push(Element { index: j * nx + i, bbox, material });
        }
    }
    mesh.faces = build_faces(&mesh);
    Ok(mesh)
}

fn build_faces<S: Scalar>(mesh: &Mesh<S>) -> Vec<Face<S>> {
    let (nx, ny) = (mesh.nx, mesh.ny);
    let zero = [S::zero(), S::zero()];
    let mut faces = Vec::with_capacity(2 * nx * ny + nx + ny);
    // vertical edges, x-normal
    for j in 0..ny {
        for i in 0..=nx {
            let x = mesh.x_line(i);
            let segment = [[x, mesh.y_line(j)], [x, mesh.y_line(j + 1)]];
            let (kind, normal) = if i == 0 {
                (FaceKind::Boundary { element: j * nx, tag: BoundaryTag::pec() }, Side::XLo.outward_normal())
            } else if i == nx {
                (FaceKind::Boundary { element: j * nx + nx - 1, tag: BoundaryTag::pec() }, Side::XHi.outward_normal())
            } else {
                (FaceKind::Interior { left: j * nx + i - 1, right: j * nx + i, shift: zero }, Side::XHi.outward_normal())
            };
            faces.push(Face { kind, normal, segment });
        }
    }
    // horizontal edges, y-normal
    for j in 0..=ny {
        for i in 0..nx {
            let y = mesh.y_line(j);
            let segment = [[mesh.x_line(i), y], [mesh.x_line(i + 1), y]];
            let (kind, normal) = if j == 0 {
                (FaceKind::Boundary { element: i, tag: BoundaryTag::pec() }, Side::YLo.outward_normal())
            } else if j == ny {
                (FaceKind::Boundary { element: (ny - 1) * nx + i, tag: BoundaryTag::pec() }, Side::YHi.outward_normal())
            } else {
                (FaceKind::Interior { left: (j - 1) * nx + i, right: j * nx + i, shift: zero }, Side::YHi.outward_normal())
            };
            faces.push(Face { kind, normal, segment });
        }
    }
    faces
}

/// All faces of the mesh: interior (including periodic pairs) and boundary.
pub fn enumerate_faces<S: Scalar>(mesh: &Mesh<S>) -> &[Face<S>] {
    mesh.faces()
}

/// Merges matching boundary faces on opposite sides along `axis` into interior
/// faces carrying the translation between the two sides.
pub fn apply_periodic_pairing<S: Scalar>(mesh: &Mesh<S>, axis: Axis) -> Result<Mesh<S>, GeometryError> {
    let (lo_side, hi_side) = match axis {
        Axis::X => (Side::XLo, Side::XHi),
        Axis::Y => (Side::YLo, Side::YHi),
    };
    let tol = mesh.coord_tol();
    let domain = mesh.domain;
    let shift = match axis {
        Axis::X => [-domain.width(), S::zero()],
        Axis::Y => [S::zero(), -domain.height()],
    };
    let side_faces = |side: Side| -> Vec<usize> {
        mesh.faces
            .iter()
            .enumerate()
            .filter(|(_, f)| {
                matches!(f.kind, FaceKind::Boundary { .. })
                    && side_from_normal(f.normal) == side
                    && on_domain_side(&domain, side, &f.segment, tol)
            })
            .map(|(k, _)| k)
            .collect()
    };
    let lo = side_faces(lo_side);
    let hi = side_faces(hi_side);
    if lo.len() != hi.len() || lo.is_empty() {
        return Err(GeometryError::PeriodicMismatch(axis));
    }
    let mut pairs = Vec::with_capacity(hi.len());
    let mut used = vec![false; lo.len()];
    for &h in &hi {
        let hs = mesh.faces[h].segment;
        let shifted = [[hs[0][0] + shift[0], hs[0][1] + shift[1]], [hs[1][0] + shift[0], hs[1][1] + shift[1]]];
        let partner = lo.iter().enumerate().find(|(k, &l)| {
            let ls = mesh.faces[l].segment;
            !used[*k]
                && (0..2).all(|p| (0..2).all(|c| (ls[p][c] - shifted[p][c]).abs() <= tol))
        });
        let Some((k, &l)) = partner else {
            return Err(GeometryError::PeriodicMismatch(axis));
        };
        used[k] = true;
        pairs.push((h, l));
    }
    let mut out = mesh.clone();
    let remove: Vec<usize> = pairs.iter().flat_map(|&(h, l)| [h, l]).collect();
    let mut merged = Vec::with_capacity(pairs.len());
    for &(h, l) in &pairs {
        let (FaceKind::Boundary { element: left, .. }, FaceKind::Boundary { element: right, .. }) =
            (&mesh.faces[h].kind, &mesh.faces[l].kind)
        else {
            unreachable!()
        };
        merged.push(Face {
            kind: FaceKind::Interior { left: *left, right: *right, shift },
            normal: hi_side.outward_normal(),
            segment: mesh.faces[h].segment,
        });
    }
    out.faces = mesh
        .faces
        .iter()
        .enumerate()
        .filter(|(k, _)| !remove.contains(k))
        .map(|(_, f)| f.clone())
        .chain(merged)
        .collect();
    match axis {
        Axis::X => out.periodic[0] = true,
        Axis::Y => out.periodic[1] = true,
    }
    Ok(out)
}

/// Knots `t^0 = 0 < t^1 < ... < t^N = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimePartition<S> {
    knots: Vec<S>,
}

impl<S: Scalar> TimePartition<S> {
    pub fn from_knots(knots: Vec<S>) -> Result<Self, GeometryError> {
        if knots.len() < 2 {
            return Err(GeometryError::InvalidTimePartition);
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(GeometryError::NonMonotoneKnots);
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[S] {
        &self.knots
    }

    pub fn n_slabs(&self) -> usize {
        self.knots.len() - 1
    }

    /// Interval `[t^{n-1}, t^n]` of slab `n` (1-based).
    pub fn slab(&self, n: usize) -> (S, S) {
        (self.knots[n - 1], self.knots[n])
    }

    pub fn step(&self, n: usize) -> S {
        self.knots[n] - self.knots[n - 1]
    }

    pub fn end_time(&self) -> S {
        *self.knots.last().unwrap()
    }
}

/// Uniform partition `t^n = n T / N`.
pub fn build_time_partition<S: Scalar>(t_end: S, n_steps: usize) -> Result<TimePartition<S>, GeometryError> {
    if !(t_end > S::zero()) || n_steps == 0 {
        return Err(GeometryError::InvalidTimePartition);
    }
    let n = S::from_usize(n_steps);
    let knots = (0..=n_steps)
        .map(|k| if k == n_steps { t_end } else { t_end * S::from_usize(k) / n })
        .collect();
    TimePartition::from_knots(knots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unit(nx: usize, ny: usize, d: Rect<f64>) -> Mesh<f64> {
        build_structured_mesh(nx, ny, d, |_, _| MaterialParams::vacuum()).unwrap()
    }

    fn counts(m: &Mesh<f64>) -> (usize, usize) {
        let int = m.faces().iter().filter(|f| f.is_interior()).count();
        (int, m.faces().len() - int)
    }

    #[test]
    fn single_cell() {
        let m = unit(1, 1, Rect::new(0.0, 1.0, 0.0, 1.0));
        assert_eq!(m.n_elements(), 1);
        assert_eq!(m.element(0).bbox, Rect::new(0.0, 1.0, 0.0, 1.0));
        assert_eq!(counts(&m), (0, 4));
    }

    #[test]
    fn cavity_mesh_sizes() {
        let m = unit(10, 10, Rect::new(0.0, PI, 0.0, PI));
        assert_eq!(m.n_elements(), 100);
        for e in m.elements() {
            assert!((e.bbox.width() - PI / 10.0).abs() < 1e-14);
            assert!((e.bbox.height() - PI / 10.0).abs() < 1e-14);
        }
        // interior = nx(ny-1) + ny(nx-1)
        assert_eq!(counts(&m), (180, 40));
    }

    #[test]
    fn channel_mesh_unit_cells() {
        let m = unit(20, 3, Rect::new(-10.0, 10.0, 0.0, 3.0));
        assert_eq!(m.n_elements(), 60);
        assert!(m.elements().iter().all(|e| (e.bbox.area() - 1.0).abs() < 1e-14));
        assert_eq!(m.element(3 * 20 - 1).index, 59);
    }

    #[test]
    fn two_cells_share_face() {
        let m = unit(2, 1, Rect::new(0.0, 2.0, 0.0, 1.0));
        let int: Vec<_> = m.faces().iter().filter(|f| f.is_interior()).collect();
        assert_eq!(int.len(), 1);
        assert_eq!(int[0].normal3(), [1.0, 0.0, 0.0]);
        match int[0].kind {
            FaceKind::Interior { left, right, .. } => assert_eq!((left, right), (0, 1)),
            _ => unreachable!(),
        }
    }

    #[test]
    fn rejects_bad_input() {
        let d = Rect::new(0.0, 1.0, 0.0, 1.0);
        assert!(matches!(
            build_structured_mesh(0, 2, d, |_, _| MaterialParams::vacuum()),
            Err(GeometryError::EmptyGrid { .. })
        ));
        assert_eq!(
            build_structured_mesh(1, 1, Rect::new(1.0, 1.0, 0.0, 1.0), |_, _| MaterialParams::vacuum()).unwrap_err(),
            GeometryError::DegenerateDomain
        );
        assert!(build_structured_mesh(1, 1, d, |_, _| MaterialParams::new(-1.0, 1.0)).is_err());
    }

    #[test]
    fn periodic_pairing_two_cells() {
        let m = unit(2, 1, Rect::new(0.0, 2.0, 0.0, 1.0));
        let p = apply_periodic_pairing(&m, Axis::X).unwrap();
        let int: Vec<_> = p.faces().iter().filter(|f| f.is_interior()).collect();
        assert_eq!(int.len(), 2);
        let periodic = int
            .iter()
            .find_map(|f| match f.kind {
                FaceKind::Interior { left, right, shift } if shift != [0.0, 0.0] => Some((left, right, shift)),
                _ => None,
            })
            .unwrap();
        assert_eq!(periodic, (1, 0, [-2.0, 0.0]));
        assert_eq!(p.faces().len(), m.faces().len() - 1);
        assert!(p.is_periodic(Axis::X));
    }

    #[test]
    fn periodic_pairing_channel() {
        let m = unit(20, 3, Rect::new(-10.0, 10.0, 0.0, 3.0));
        let p = apply_periodic_pairing(&m, Axis::X).unwrap();
        let shifted = p
            .faces()
            .iter()
            .filter(|f| matches!(f.kind, FaceKind::Interior { shift, .. } if shift != [0.0, 0.0]))
            .count();
        assert_eq!(shifted, 3);
        // pairing twice has nothing left to match
        assert_eq!(apply_periodic_pairing(&p, Axis::X).unwrap_err(), GeometryError::PeriodicMismatch(Axis::X));
    }

    #[test]
    fn periodic_pairing_rejects_mismatch() {
        let mut m = unit(2, 2, Rect::new(0.0, 2.0, 0.0, 2.0));
        // shorten one right-hand face so the partition no longer matches
        let k = m
            .faces
            .iter()
            .position(|f| !f.is_interior() && f.normal == [1.0, 0.0])
            .unwrap();
        m.faces[k].segment[1][1] = 0.5;
        assert!(apply_periodic_pairing(&m, Axis::X).is_err());
    }

    #[test]
    fn pec_wall_splits_interior_faces() {
        let mut m = unit(4, 4, Rect::new(-2.0, 2.0, 0.0, 4.0));
        let before = counts(&m);
        let n = m.insert_pec_wall([0.0, 0.0], [0.0, 2.0]).unwrap();
        assert_eq!(n, 2);
        let after = counts(&m);
        assert_eq!(after, (before.0 - 2, before.1 + 4));
        assert_eq!(m.insert_pec_wall([0.3, 0.0], [0.3, 1.0]).unwrap_err(), GeometryError::MisalignedWall);
        assert_eq!(m.insert_pec_wall([0.0, 0.0], [1.0, 1.0]).unwrap_err(), GeometryError::MisalignedWall);
    }

    #[test]
    fn absorbing_tag_uses_adjacent_material() {
        let mut m = build_structured_mesh(2, 1, Rect::new(0.0, 2.0, 0.0, 1.0), |x, _| {
            if x > 1.0 { MaterialParams::new(4.0, 1.0) } else { MaterialParams::vacuum() }
        })
        .unwrap();
        m.set_boundary(Side::XHi, BoundarySpec::Absorbing).unwrap();
        m.set_boundary(Side::XLo, BoundarySpec::Absorbing).unwrap();
        let betas: Vec<f64> = m
            .faces()
            .iter()
            .filter_map(|f| match &f.kind {
                FaceKind::Boundary { tag, .. } if f.normal[1] == 0.0 => Some(tag.beta()),
                _ => None,
            })
            .collect();
        assert_eq!(betas.len(), 2);
        assert!(betas.contains(&1.0) && betas.contains(&2.0));
    }

    #[test]
    fn time_partitions() {
        let t = build_time_partition(5.0 * 2f64.sqrt(), 50).unwrap();
        assert!((t.step(1) - 2f64.sqrt() / 10.0).abs() < 1e-15);
        assert_eq!(t.n_slabs(), 50);
        assert_eq!(build_time_partition(1.0, 1).unwrap().knots(), &[0.0, 1.0]);
        let t = build_time_partition(20.0, 20).unwrap();
        assert!((1..=20).all(|n| (t.step(n) - 1.0f64).abs() < 1e-14));
        assert!(build_time_partition(0.0, 3).is_err());
        assert!(build_time_partition(1.0, 0).is_err());
        assert_eq!(TimePartition::from_knots(vec![0.0, 1.0, 1.0]).unwrap_err(), GeometryError::NonMonotoneKnots);
    }

    #[test]
    fn locate_points() {
        let m = unit(4, 2, Rect::new(0.0, 4.0, 0.0, 2.0));
        assert_eq!(m.locate(0.5, 0.5), Some(0));
        assert_eq!(m.locate(3.5, 1.5), Some(7));
        assert_eq!(m.locate(4.0, 2.0), Some(7));
        assert_eq!(m.locate(5.0, 0.0), None);
    }
}
