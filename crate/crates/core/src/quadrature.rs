//! Gauss–Legendre rules and their tensor products over element areas and
//! face-time rectangles.

use crate::geometry::{Element, Face, TimePartition};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QuadratureError {
    #[error("Gauss-Legendre rule needs 1..=32 nodes, got {0}")]
    NodeCount(usize),
}

pub const MAX_NODES: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule1D<S> {
    pub nodes: Vec<S>,
    pub weights: Vec<S>,
}

impl<S: Scalar> QuadRule1D<S> {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(S) -> S) -> S {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Legendre polynomial `P_n(x)` and its derivative, by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Standard `n`-point Gauss–Legendre rule on `[-1, 1]`, nodes ascending.
pub fn gauss_1d<S: Scalar>(n: usize) -> Result<QuadRule1D<S>, QuadratureError> {
    if n == 0 || n > MAX_NODES {
        return Err(QuadratureError::NodeCount(n));
    }
    let mut nodes = vec![0.0f64; n];
    let mut weights = vec![0.0f64; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok(QuadRule1D {
        nodes: nodes.into_iter().map(S::lit).collect(),
        weights: weights.into_iter().map(S::lit).collect(),
    })
}

/// Tensor rule on `[-1, 1]^2`; `jacobian` maps reference measure to physical.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule2D<S> {
    pub points: Vec<[S; 2]>,
    pub weights: Vec<S>,
    pub jacobian: S,
}

impl<S: Scalar> QuadRule2D<S> {
    pub fn tensor(a: &QuadRule1D<S>, b: &QuadRule1D<S>, jacobian: S) -> Self {
        let mut points = Vec::with_capacity(a.len() * b.len());
        let mut weights = Vec::with_capacity(a.len() * b.len());
        for (&xa, &wa) in a.nodes.iter().zip(&a.weights) {
            for (&xb, &wb) in b.nodes.iter().zip(&b.weights) {
                points.push([xa, xb]);
                weights.push(wa * wb);
            }
        }
        Self { points, weights, jacobian }
    }

    /// `n x n` Gauss rule with the given jacobian.
    pub fn square(n: usize, jacobian: S) -> Result<Self, QuadratureError> {
        let g = gauss_1d(n)?;
        Ok(Self::tensor(&g, &g, jacobian))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Physical integral of `f` given on reference coordinates.
    pub fn integrate(&self, f: impl Fn(S, S) -> S) -> S {
        self.jacobian * self.points.iter().zip(&self.weights).map(|(p, &w)| w * f(p[0], p[1])).sum::<S>()
    }
}

/// Tensor rule on `[-1, 1]^3` used for space-time volume integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule3D<S> {
    pub points: Vec<[S; 3]>,
    pub weights: Vec<S>,
    pub jacobian: S,
}

impl<S: Scalar> QuadRule3D<S> {
    pub fn cube(n: usize, jacobian: S) -> Result<Self, QuadratureError> {
        let g = gauss_1d::<S>(n)?;
        let mut points = Vec::with_capacity(n * n * n);
        let mut weights = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    points.push([g.nodes[i], g.nodes[j], g.nodes[k]]);
                    weights.push(g.weights[i] * g.weights[j] * g.weights[k]);
                }
            }
        }
        Ok(Self { points, weights, jacobian })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Rule over `face x I^n` with `n` nodes per direction; first coordinate runs
/// along the face, second in time.
pub fn face_time_rule_n<S: Scalar>(length: S, dt: S, n: usize) -> Result<QuadRule2D<S>, QuadratureError> {
    let half = S::lit(0.5);
    QuadRule2D::square(n, length * half * dt * half)
}

/// `(p+1) x (p+1)` rule over `face x I^n`, exact for products of degree-`p` traces.
pub fn face_time_rule<S: Scalar>(
    face: &Face<S>,
    partition: &TimePartition<S>,
    slab: usize,
    p: usize,
) -> Result<QuadRule2D<S>, QuadratureError> {
    face_time_rule_n(face.length(), partition.step(slab), p + 1)
}

/// `(p+1)^2` rule on an element, jacobian `area / 4` (unit z-extent).
pub fn element_rule<S: Scalar>(element: &Element<S>, p: usize) -> Result<QuadRule2D<S>, QuadratureError> {
    QuadRule2D::square(p + 1, element.bbox.area() / S::lit(4.0))
}
