//! Nonexpansive self-maps of convex subsets of `R^d`.

use std::fmt;
use std::ops::{Deref, Index};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::{CheckOutcome, VerificationReport, Witness};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Shape { expected: 1, found: 0 });
        }
        if let Some(pos) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::Domain {
                name: "point coordinate",
                value: format!("x[{pos}] = {}", coords[pos]),
                domain: "finite reals",
            });
        }
        Ok(Self(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub(crate) fn from_vec_unchecked(coords: Vec<f64>) -> Self {
        Self(coords)
    }
}

impl Deref for Point {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl Index<usize> for Point {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for Point {
    type Error = Error;

    fn try_from(coords: Vec<f64>) -> Result<Self> {
        Self::new(coords)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormSpec {
    #[default]
    Euclidean,
    Max,
    Sum,
}

impl NormSpec {
    pub fn norm(self, x: &[f64]) -> f64 {
        match self {
            NormSpec::Euclidean => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            NormSpec::Max => x.iter().fold(0.0, |m, v| m.max(v.abs())),
            NormSpec::Sum => x.iter().map(|v| v.abs()).sum(),
        }
    }

    /// `||x - y||` without allocating.
    pub fn distance(self, x: &[f64], y: &[f64]) -> f64 {
        let diffs = x.iter().zip(y).map(|(a, b)| a - b);
        match self {
            NormSpec::Euclidean => diffs.map(|v| v * v).sum::<f64>().sqrt(),
            NormSpec::Max => diffs.fold(0.0, |m, v| m.max(v.abs())),
            NormSpec::Sum => diffs.map(f64::abs).sum(),
        }
    }
}

impl fmt::Display for NormSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormSpec::Euclidean => "euclidean",
            NormSpec::Max => "max",
            NormSpec::Sum => "sum",
        })
    }
}

/// The selected norm of `x`.
pub fn norm_of(x: &Point, spec: NormSpec) -> f64 {
    spec.norm(x)
}

/// A rotation by `degrees` in the coordinate plane `(i, j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneRotation {
    pub i: usize,
    pub j: usize,
    pub degrees: f64,
}

impl PlaneRotation {
    /// `(cos, sin)`, exact at multiples of 90 degrees.
    fn cos_sin(&self) -> (f64, f64) {
        let turns = self.degrees / 90.0;
        if turns.fract() == 0.0 {
            return match (turns as i64).rem_euclid(4) {
                0 => (1.0, 0.0),
                1 => (0.0, 1.0),
                2 => (-1.0, 0.0),
                _ => (0.0, -1.0),
            };
        }
        let rad = self.degrees.to_radians();
        (rad.cos(), rad.sin())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OpKind {
    Identity,
    /// Euclidean projection onto the closed ball `B(center, radius)`.
    BallProjection { center: Vec<f64>, radius: f64 },
    /// Euclidean projection onto the box `[lo, hi]`.
    BoxProjection { lo: Vec<f64>, hi: Vec<f64> },
    /// Euclidean projection onto `{y : <normal, y> <= offset}`.
    HalfspaceProjection { normal: Vec<f64>, offset: f64 },
    /// Plane rotations, applied in order.
    Rotation { planes: Vec<PlaneRotation> },
    /// `x -> A x + b`, with `A` given row by row.
    AveragedAffine { matrix: Vec<Vec<f64>>, shift: Vec<f64> },
    /// `T_k o ... o T_1`: the first listed map is applied first.
    Composition { maps: Vec<OpKind> },
}

impl OpKind {
    fn is_projection(&self) -> bool {
        matches!(
            self,
            OpKind::BallProjection { .. } | OpKind::BoxProjection { .. } | OpKind::HalfspaceProjection { .. }
        )
    }

    fn uses_projection(&self) -> bool {
        match self {
            OpKind::Composition { maps } => maps.iter().any(OpKind::uses_projection),
            other => other.is_projection(),
        }
    }

    fn is_linear(&self) -> bool {
        match self {
            OpKind::Identity | OpKind::Rotation { .. } => true,
            OpKind::AveragedAffine { shift, .. } => shift.iter().all(|b| *b == 0.0),
            OpKind::Composition { maps } => maps.iter().all(OpKind::is_linear),
            _ => false,
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let shape = |found: usize| {
            if found == dim {
                Ok(())
            } else {
                Err(Error::Shape { expected: dim, found })
            }
        };
        let finite = |name: &'static str, v: &[f64]| {
            if v.iter().all(|c| c.is_finite()) {
                Ok(())
            } else {
                Err(Error::Domain { name, value: format!("{v:?}"), domain: "finite reals" })
            }
        };
        match self {
            OpKind::Identity => Ok(()),
            OpKind::BallProjection { center, radius } => {
                shape(center.len())?;
                finite("ball center", center)?;
                if !(radius.is_finite() && *radius >= 0.0) {
                    return Err(Error::Domain { name: "ball radius", value: radius.to_string(), domain: "[0, inf)" });
                }
                Ok(())
            }
            OpKind::BoxProjection { lo, hi } => {
                shape(lo.len())?;
                shape(hi.len())?;
                finite("box bound", lo)?;
                finite("box bound", hi)?;
                if lo.iter().zip(hi).any(|(l, h)| l > h) {
                    return Err(Error::Precondition("box has lo > hi in some coordinate".into()));
                }
                Ok(())
            }
            OpKind::HalfspaceProjection { normal, offset } => {
                shape(normal.len())?;
                finite("halfspace normal", normal)?;
                finite("halfspace offset", &[*offset])?;
                if normal.iter().all(|a| *a == 0.0) {
                    return Err(Error::Precondition("halfspace normal is zero".into()));
                }
                Ok(())
            }
            OpKind::Rotation { planes } => {
                for p in planes {
                    if p.i >= dim || p.j >= dim || p.i == p.j {
                        return Err(Error::Precondition(format!(
                            "rotation plane ({}, {}) invalid in dimension {dim}",
                            p.i, p.j
                        )));
                    }
                    finite("rotation angle", &[p.degrees])?;
                }
                Ok(())
            }
            OpKind::AveragedAffine { matrix, shift } => {
                shape(matrix.len())?;
                shape(shift.len())?;
                finite("affine shift", shift)?;
                for row in matrix {
                    shape(row.len())?;
                    finite("affine matrix", row)?;
                }
                Ok(())
            }
            OpKind::Composition { maps } => maps.iter().try_for_each(|m| m.validate(dim)),
        }
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            OpKind::Identity => out.copy_from_slice(x),
            OpKind::BallProjection { center, radius } => {
                let dist = NormSpec::Euclidean.distance(x, center);
                if dist <= *radius {
                    out.copy_from_slice(x);
                } else {
                    let scale = radius / dist;
                    for ((o, xi), ci) in out.iter_mut().zip(x).zip(center) {
                        *o = ci + (xi - ci) * scale;
                    }
                }
            }
            OpKind::BoxProjection { lo, hi } => {
                for (((o, xi), l), h) in out.iter_mut().zip(x).zip(lo).zip(hi) {
                    *o = xi.clamp(*l, *h);
                }
            }
            OpKind::HalfspaceProjection { normal, offset } => {
                let dot: f64 = normal.iter().zip(x).map(|(a, b)| a * b).sum();
                out.copy_from_slice(x);
                if dot > *offset {
                    let nn: f64 = normal.iter().map(|a| a * a).sum();
                    let t = (dot - offset) / nn;
                    for (o, a) in out.iter_mut().zip(normal) {
                        *o -= t * a;
                    }
                }
            }
            OpKind::Rotation { planes } => {
                out.copy_from_slice(x);
                for p in planes {
                    let (c, s) = p.cos_sin();
                    let (a, b) = (out[p.i], out[p.j]);
                    out[p.i] = c * a - s * b;
                    out[p.j] = s * a + c * b;
                }
            }
            OpKind::AveragedAffine { matrix, shift } => {
                for ((o, row), b) in out.iter_mut().zip(matrix).zip(shift) {
                    *o = row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b;
                }
            }
            OpKind::Composition { maps } => {
                out.copy_from_slice(x);
                let mut scratch = vec![0.0; x.len()];
                for map in maps {
                    map.apply_into(out, &mut scratch);
                    out.copy_from_slice(&scratch);
                }
            }
        }
    }
}

/// A map `T: C -> C` together with the data needed to iterate it: the
/// ambient dimension, the norm, and the radius `R` of a ball around the
/// origin that `T` maps into itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonexpansiveOp {
    map: OpKind,
    dim: usize,
    radius: Option<f64>,
    norm: NormSpec,
}

impl NonexpansiveOp {
    /// Projections are only accepted under the Euclidean norm; metric
    /// projections in the max or sum norm need not be nonexpansive.
    pub fn new(map: OpKind, dim: usize, radius: f64, norm: NormSpec) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape { expected: 1, found: 0 });
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::Domain {
                name: "invariant radius",
                value: radius.to_string(),
                domain: "(0, inf)",
            });
        }
        if norm != NormSpec::Euclidean && map.uses_projection() {
            return Err(Error::Precondition(format!(
                "projections are only nonexpansive under the euclidean norm, not {norm}"
            )));
        }
        map.validate(dim)?;
        Ok(Self { map, dim, radius: Some(radius), norm })
    }

    /// An operator with no declared invariant ball. Iterates are not known
    /// to stay bounded a priori, so any `M` derived from a run is empirical.
    pub fn without_invariant_ball(map: OpKind, dim: usize, norm: NormSpec) -> Result<Self> {
        let mut op = Self::new(map, dim, 1.0, norm)?;
        op.radius = None;
        Ok(op)
    }

    pub fn identity(dim: usize, radius: f64) -> Result<Self> {
        Self::new(OpKind::Identity, dim, radius, NormSpec::Euclidean)
    }

    /// The rotation by `degrees` in the plane, on the unit disk.
    pub fn planar_rotation(degrees: f64) -> Self {
        Self::new(
            OpKind::Rotation { planes: vec![PlaneRotation { i: 0, j: 1, degrees }] },
            2,
            1.0,
            NormSpec::Euclidean,
        )
        .expect("planar rotation is well formed")
    }

    /// A random linear map on `R^dim` with Euclidean operator norm at most 1:
    /// a uniform matrix divided by its Frobenius norm.
    pub fn random_linear(dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut matrix: Vec<Vec<f64>> = (0..dim)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let frob = matrix.iter().flatten().map(|a| a * a).sum::<f64>().sqrt();
        for a in matrix.iter_mut().flatten() {
            *a /= frob;
        }
        Self::new(OpKind::AveragedAffine { matrix, shift: vec![0.0; dim] }, dim, 1.0, NormSpec::Euclidean)
    }

    pub fn kind(&self) -> &OpKind {
        &self.map
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Radius of the declared invariant ball around the origin.
    pub fn radius(&self) -> Option<f64> {
        self.radius
    }

    pub fn norm(&self) -> NormSpec {
        self.norm
    }

    pub fn is_linear(&self) -> bool {
        self.map.is_linear()
    }

    pub fn name(&self) -> String {
        match &self.map {
            OpKind::Identity => "identity".into(),
            OpKind::BallProjection { .. } => "ball_projection".into(),
            OpKind::BoxProjection { .. } => "box_projection".into(),
            OpKind::HalfspaceProjection { .. } => "halfspace_projection".into(),
            OpKind::Rotation { .. } => "rotation".into(),
            OpKind::AveragedAffine { .. } => "averaged_affine".into(),
            OpKind::Composition { maps } => format!("composition[{}]", maps.len()),
        }
    }

    pub fn apply(&self, x: &Point) -> Result<Point> {
        if x.dim() != self.dim {
            return Err(Error::Shape { expected: self.dim, found: x.dim() });
        }
        let mut out = vec![0.0; self.dim];
        self.map.apply_into(x, &mut out);
        Ok(Point::from_vec_unchecked(out))
    }

    /// Writes `T x` into `out`. Both slices must have length `dim`.
    pub(crate) fn apply_slice(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        self.map.apply_into(x, out);
    }
}

fn sample_in_ball(rng: &mut ChaCha8Rng, dim: usize, radius: f64, norm: NormSpec) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let len = norm.norm(&v);
        if len < 1e-12 {
            continue;
        }
        // a quarter of the samples sit on the sphere itself
        let r = if rng.random_bool(0.25) { radius } else { radius * rng.random::<f64>() };
        return v.into_iter().map(|c| c * r / len).collect();
    }
}

/// Samples `trials` pairs from the invariant ball (seeded) and reports any
/// violation of `||Tx - Ty|| <= ||x - y|| + tol (1 + ||x - y||)`, and any
/// sample mapped outside the ball. Operators without a declared ball are
/// sampled from the unit ball and skip the invariance check.
pub fn check_nonexpansive(op: &NonexpansiveOp, trials: u64, seed: u64, tol: f64) -> VerificationReport {
    let mut report = VerificationReport::new(format!("nonexpansiveness of {}", op.name()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let norm = op.norm;
    let (mut tx, mut ty) = (vec![0.0; op.dim], vec![0.0; op.dim]);
    let mut expand = None;
    let mut escape = None;
    let radius = op.radius.unwrap_or(1.0);
    for trial in 0..trials {
        let x = sample_in_ball(&mut rng, op.dim, radius, norm);
        let y = sample_in_ball(&mut rng, op.dim, radius, norm);
        op.apply_slice(&x, &mut tx);
        op.apply_slice(&y, &mut ty);
        let d_in = norm.distance(&x, &y);
        let d_out = norm.distance(&tx, &ty);
        if expand.is_none() && d_out > d_in + tol * (1.0 + d_in) {
            expand = Some(Witness { index: trial, lhs: d_out, rhs: d_in });
        }
        if escape.is_none() && op.radius.is_some() {
            let bound = radius + tol * (1.0 + radius);
            for t in [&tx, &ty] {
                let len = norm.norm(t);
                if len > bound {
                    escape = Some(Witness { index: trial, lhs: len, rhs: radius });
                    break;
                }
            }
        }
    }
    let mut checks = vec![("nonexpansive", expand)];
    if op.radius.is_some() {
        checks.push(("invariant_ball", escape));
    }
    for (name, witness) in checks {
        report.push(match witness {
            None => CheckOutcome::pass(name, None, trials),
            Some(w) => CheckOutcome::fail(name, None, trials, w),
        });
    }
    report
}
