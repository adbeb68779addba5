//! Holonomy cocycle of the linear model.
//!
//! For the leaf through `x` and `y = phi_x(zeta)`, the derivative of the
//! holonomy from the transversal `T_x = x + (lambda x)^perp` to `T_y` is
//! `H = P_{(lambda y)^perp} diag(e^{lambda_j zeta})` restricted to
//! `(lambda x)^perp`. Frames store `H` in orthonormal bases of both normal
//! spaces, so operator norms of the matrix are those of `H`.

use crate::error::{Error, Result};
use crate::linear_model::{ambient_norm, AmbientPoint, LeafChart, LinearFoliationModel};
use crate::metrics::{ConformalDensity, LeafDensity};
use crate::brownian::{LeafPath, PathNode};
use crate::rng::{stream, PURPOSE_DIAGNOSTIC};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use std::io::Write;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

fn cvec(v: &[Complex64]) -> CVector {
    CVector::from_column_slice(v)
}

/// Orthonormal basis (as columns) of the complement of `w` in `C^k`.
///
/// Gram-Schmidt on the standard basis after `w / |w|`, taking at each stage
/// the candidate with the largest residual (lowest index on ties).
pub fn complement_basis(w: &CVector) -> Result<CMatrix> {
    let k = w.len();
    let norm = w.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::DegenerateTransversal);
    }
    let mut accepted: Vec<CVector> = vec![w / Complex64::new(norm, 0.0)];
    let mut used = vec![false; k];
    let mut columns = Vec::with_capacity(k - 1);
    for _ in 0..k - 1 {
        let mut best: Option<(usize, CVector, f64)> = None;
        for j in (0..k).filter(|&j| !used[j]) {
            let mut r = CVector::zeros(k);
            r[j] = Complex64::new(1.0, 0.0);
            // two passes of classical Gram-Schmidt
            for _ in 0..2 {
                for q in &accepted {
                    let coef = q.dotc(&r);
                    r -= q * coef;
                }
            }
            let rn = r.norm();
            if best.as_ref().is_none_or(|b| rn > b.2) {
                best = Some((j, r, rn));
            }
        }
        let (j, r, rn) = best.ok_or(Error::DegenerateTransversal)?;
        used[j] = true;
        let q = r / Complex64::new(rn, 0.0);
        columns.push(q.clone());
        accepted.push(q);
    }
    Ok(CMatrix::from_columns(&columns))
}

/// Holonomy between two normal spaces, in orthonormal bases.
#[derive(Debug, Clone, PartialEq)]
pub struct CocycleFrame {
    source: CMatrix,
    target: CMatrix,
    matrix: CMatrix,
}

impl CocycleFrame {
    pub fn source_basis(&self) -> &CMatrix {
        &self.source
    }

    pub fn target_basis(&self) -> &CMatrix {
        &self.target
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    /// Singular values, largest first.
    pub fn singular_values(&self) -> Vec<f64> {
        singular_values(&self.matrix)
    }

    /// `log ||H||`.
    pub fn log_norm(&self) -> f64 {
        self.singular_values()[0].ln()
    }

    /// `log ||H^{-1}||`.
    pub fn log_norm_inverse(&self) -> f64 {
        -self.singular_values().last().copied().unwrap_or(f64::NAN).ln()
    }

    pub fn inverse_matrix(&self) -> Result<CMatrix> {
        self.matrix.clone().try_inverse().ok_or_else(|| Error::NoConvergence("singular holonomy matrix".into()))
    }

    /// Same operator in other orthonormal bases `source * u`, `target * w`.
    pub fn rebased(&self, u: &CMatrix, w: &CMatrix) -> CocycleFrame {
        CocycleFrame {
            source: &self.source * u,
            target: &self.target * w,
            matrix: w.adjoint() * &self.matrix * u,
        }
    }
}

pub fn singular_values(m: &CMatrix) -> Vec<f64> {
    if m.nrows() == 1 && m.ncols() == 1 {
        return vec![m[(0, 0)].norm()];
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

fn check_point(model: &LinearFoliationModel, x: &AmbientPoint) -> Result<()> {
    if x.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), found: x.dim() });
    }
    if x.is_origin() {
        return Err(Error::AtSingularity);
    }
    Ok(())
}

fn flow(model: &LinearFoliationModel, x: &[Complex64], zeta: Complex64) -> Vec<Complex64> {
    x.iter().zip(model.lambdas()).map(|(xj, l)| xj * (l * zeta).exp()).collect()
}

/// `e^{lambda_j zeta - s}` with `s = max_j Re(lambda_j zeta)`, and `s`.
fn scaled_phases(lambdas: &[Complex64], zeta: Complex64) -> (CVector, f64) {
    let s = lambdas.iter().map(|l| (l * zeta).re).fold(f64::NEG_INFINITY, f64::max);
    (CVector::from_iterator(lambdas.len(), lambdas.iter().map(|l| (l * zeta - s).exp())), s)
}

/// `lambda * phi_x(zeta)` up to a positive factor; stays representable far
/// from the base point where the unscaled vector under- or overflows.
pub(crate) fn leaf_direction(model: &LinearFoliationModel, x: &[Complex64], zeta: Complex64) -> CVector {
    let logs: Vec<Complex64> = x
        .iter()
        .zip(model.lambdas())
        .map(|(xj, l)| if *xj == Complex64::new(0.0, 0.0) { Complex64::new(f64::NEG_INFINITY, 0.0) } else { (xj * l).ln() + l * zeta })
        .collect();
    let s = logs.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    CVector::from_iterator(
        x.len(),
        logs.iter().map(|z| if z.re == f64::NEG_INFINITY { Complex64::new(0.0, 0.0) } else { (z - s).exp() }),
    )
}

fn tangent(model: &LinearFoliationModel, x: &[Complex64]) -> CVector {
    CVector::from_iterator(x.len(), x.iter().zip(model.lambdas()).map(|(xj, l)| xj * l))
}

/// Holonomy frame from `x` to `phi_x(zeta)`.
pub fn holonomy_step(model: &LinearFoliationModel, x: &AmbientPoint, zeta: Complex64) -> Result<CocycleFrame> {
    check_point(model, x)?;
    let source = complement_basis(&tangent(model, x.coords()))?;
    let target = complement_basis(&leaf_direction(model, x.coords(), zeta))?;
    let d = CMatrix::from_diagonal(&CVector::from_iterator(
        model.dim(),
        model.lambdas().iter().map(|l| (l * zeta).exp()),
    ));
    // columns of target are orthogonal to lambda y, so the projection drops out
    let matrix = target.adjoint() * d * &source;
    Ok(CocycleFrame { source, target, matrix })
}

/// Frame from `phi_x(zeta_a)` to `phi_x(zeta_b)`.
///
/// Both endpoints are computed from `x`, so consecutive increments along a
/// path share bit-identical bases and chain by plain matrix products.
pub fn holonomy_between(
    model: &LinearFoliationModel,
    x: &AmbientPoint,
    zeta_a: Complex64,
    zeta_b: Complex64,
) -> Result<CocycleFrame> {
    check_point(model, x)?;
    let source = complement_basis(&leaf_direction(model, x.coords(), zeta_a))?;
    let target = complement_basis(&leaf_direction(model, x.coords(), zeta_b))?;
    let d = CMatrix::from_diagonal(&CVector::from_iterator(
        model.dim(),
        model.lambdas().iter().map(|l| (l * (zeta_b - zeta_a)).exp()),
    ));
    let matrix = target.adjoint() * d * &source;
    Ok(CocycleFrame { source, target, matrix })
}

/// Singular values of `H(x -> phi_x(zeta))` with the source basis cached.
#[derive(Debug, Clone)]
pub struct HolonomyEvaluator {
    model: LinearFoliationModel,
    x: Vec<Complex64>,
    source: CMatrix,
    /// `ln |lambda_j x_j|`, with zero coordinates dropped.
    log_tangent: Vec<(usize, f64)>,
    log_tangent_norm: f64,
}

impl HolonomyEvaluator {
    pub fn new(model: &LinearFoliationModel, x: &AmbientPoint) -> Result<Self> {
        check_point(model, x)?;
        let t = tangent(model, x.coords());
        let log_tangent = t.iter().enumerate().filter(|(_, v)| v.norm() > 0.0).map(|(j, v)| (j, v.norm().ln())).collect();
        let mut eval = Self {
            model: model.clone(),
            x: x.coords().to_vec(),
            source: complement_basis(&t)?,
            log_tangent,
            log_tangent_norm: 0.0,
        };
        // same rounding as the target norm, so zeta = 0 gives exactly 0
        eval.log_tangent_norm = eval.log_target_norm(Complex64::new(0.0, 0.0));
        Ok(eval)
    }

    fn log_target_norm(&self, zeta: Complex64) -> f64 {
        let lambdas = self.model.lambdas();
        let mut m = f64::NEG_INFINITY;
        for &(j, lt) in &self.log_tangent {
            m = m.max(lt + (lambdas[j] * zeta).re);
        }
        let sum: f64 = self.log_tangent.iter().map(|&(j, lt)| (2.0 * (lt + (lambdas[j] * zeta).re - m)).exp()).sum();
        m + 0.5 * sum.ln()
    }

    /// `ln |det H|`. `D` sends `lambda x` to `lambda y`, so
    /// `det D = (||lambda y|| / ||lambda x||) det H`.
    pub fn log_abs_det(&self, zeta: Complex64) -> f64 {
        let sum_re: f64 = self.model.lambdas().iter().map(|l| (l * zeta).re).sum();
        sum_re + self.log_tangent_norm - self.log_target_norm(zeta)
    }

    /// Target basis `F` of `(lambda y)^perp`, the holonomy block `F^* D E` divided
    /// by `e^s`, and `s`. Working with `F` directly (rather than projecting `D E`)
    /// avoids cancellation when the phases span many orders of magnitude.
    fn frame_block(&self, zeta: Complex64) -> Result<(CMatrix, CMatrix, f64)> {
        let (phase, scale) = scaled_phases(self.model.lambdas(), zeta);
        let target = complement_basis(&leaf_direction(&self.model, &self.x, zeta))?;
        let mut de = self.source.clone();
        for (j, mut row) in de.row_iter_mut().enumerate() {
            row *= phase[j];
        }
        let block = target.adjoint() * de;
        Ok((target, block, scale))
    }

    /// `(log sigma_max, log sigma_min)` of the holonomy to `phi_x(zeta)`.
    ///
    /// For `k > 2` the smallest singular value is taken as `1 / sigma_max` of the
    /// reverse holonomy, which stays accurate when the spread exceeds machine precision.
    pub fn log_singular_range(&self, zeta: Complex64) -> Result<(f64, f64)> {
        if self.model.dim() == 2 {
            let v = self.log_abs_det(zeta);
            return Ok((v, v));
        }
        let (target, block, scale) = self.frame_block(zeta)?;
        let hi = scale + singular_values(&block)[0].ln();
        let (back, back_scale) = scaled_phases(self.model.lambdas(), -zeta);
        let mut df = target;
        for (j, mut row) in df.row_iter_mut().enumerate() {
            row *= back[j];
        }
        let reverse = self.source.adjoint() * df;
        Ok((hi, -(back_scale + singular_values(&reverse)[0].ln())))
    }

    /// `log ||H e_b||` for each source basis vector `e_b`.
    fn log_column_norms(&self, zeta: Complex64) -> Result<Vec<f64>> {
        let (_, block, scale) = self.frame_block(zeta)?;
        Ok(block.column_iter().map(|c| scale + c.norm().ln()).collect())
    }

    /// Gram matrix `H^* H` in the source basis.
    fn gram(&self, zeta: Complex64) -> Result<CMatrix> {
        let (_, block, scale) = self.frame_block(zeta)?;
        Ok(block.adjoint() * block * Complex64::new((2.0 * scale).exp(), 0.0))
    }
}

/// Positions along a trajectory in chart coordinates.
pub trait Trajectory {
    /// Final time of the trajectory.
    fn end_time(&self) -> f64;
    /// Chart position at time `t`.
    fn zeta_at(&self, t: f64) -> Result<Complex64>;
}

impl Trajectory for LeafPath {
    fn end_time(&self) -> f64 {
        self.final_g_time()
    }

    fn zeta_at(&self, t: f64) -> Result<Complex64> {
        Ok(self.node_at(t)?.zeta)
    }
}

/// In the simply connected chart the holonomy depends only on `zeta(t)`.
pub fn cocycle_along<T: Trajectory + ?Sized>(
    model: &LinearFoliationModel,
    chart: &LeafChart,
    path: &T,
    t: f64,
) -> Result<CocycleFrame> {
    holonomy_step(model, chart.base(), path.zeta_at(t)?)
}

const SHOOT_STEP: f64 = 1e-5;

/// Point where the leaf of `p` meets the transversal `T_y`, by Newton in the
/// leaf coordinate starting from `zeta0`.
fn shoot(model: &LinearFoliationModel, p: &[Complex64], y: &[Complex64], zeta0: Complex64) -> Result<Vec<Complex64>> {
    let ly: Vec<Complex64> = y.iter().zip(model.lambdas()).map(|(a, l)| (a * l).conj()).collect();
    let scale: f64 = y.iter().zip(&ly).map(|(a, b)| (a * b).norm()).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut zeta = zeta0;
    for _ in 0..50 {
        let q = flow(model, p, zeta);
        let g: Complex64 = (0..q.len()).map(|j| (q[j] - y[j]) * ly[j]).sum();
        let dg: Complex64 = (0..q.len()).map(|j| model.lambdas()[j] * q[j] * ly[j]).sum();
        let delta = g / dg;
        zeta -= delta;
        if !zeta.is_finite() {
            break;
        }
        if delta.norm() < 1e-15 * (1.0 + zeta.norm()) || g.norm() < 1e-17 * scale {
            return Ok(flow(model, p, zeta));
        }
    }
    Err(Error::NoConvergence("transversal shooting".into()))
}

/// Finite-difference holonomy oracle: `D hol_{x,y}(u)` for `y = phi_x(zeta)`,
/// shooting the leaves of `x +- s u` onto `T_y` and taking a central difference.
pub fn shooting_derivative(
    model: &LinearFoliationModel,
    x: &AmbientPoint,
    zeta: Complex64,
    u: &[Complex64],
) -> Result<Vec<Complex64>> {
    check_point(model, x)?;
    if u.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), found: u.len() });
    }
    let y = flow(model, x.coords(), zeta);
    let side = |s: f64| {
        let p: Vec<Complex64> = x.coords().iter().zip(u).map(|(a, b)| a + b * s).collect();
        shoot(model, &p, &y, zeta)
    };
    let plus = side(SHOOT_STEP)?;
    let minus = side(-SHOOT_STEP)?;
    Ok(plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * SHOOT_STEP)).collect())
}

/// Frame matrix from the shooting oracle, in the bases of [`holonomy_step`].
pub fn shooting_frame(model: &LinearFoliationModel, x: &AmbientPoint, zeta: Complex64) -> Result<CMatrix> {
    let reference = holonomy_step(model, x, zeta)?;
    let k = model.dim();
    let mut m = CMatrix::zeros(k - 1, k - 1);
    for b in 0..k - 1 {
        let col: Vec<Complex64> = reference.source.column(b).iter().copied().collect();
        let image = cvec(&shooting_derivative(model, x, zeta, &col)?);
        let coords = reference.target.adjoint() * image;
        m.set_column(b, &coords);
    }
    Ok(m)
}

fn in_polydisc(p: &[Complex64]) -> Result<()> {
    match p.iter().enumerate().find(|(_, z)| z.norm() >= 1.0) {
        Some((index, z)) => Err(Error::OutsidePolydisc { index, modulus: z.norm() }),
        None => Ok(()),
    }
}

/// Relative deviation between `D hol_{tx,ty}(t u)` and `t D hol_{x,y}(u)`,
/// both from the shooting oracle. `u` is projected onto `(lambda x)^perp`.
pub fn homothety_check(
    model: &LinearFoliationModel,
    x: &AmbientPoint,
    zeta: Complex64,
    u: &[Complex64],
    t_scale: f64,
) -> Result<f64> {
    check_point(model, x)?;
    if !(t_scale > 0.0 && t_scale.is_finite()) {
        return Err(Error::InvalidParameter(format!("scale {t_scale} must be positive")));
    }
    if u.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), found: u.len() });
    }
    let w = tangent(model, x.coords());
    let w_hat = &w / Complex64::new(w.norm(), 0.0);
    let uv = cvec(u);
    let normal = &uv - &w_hat * w_hat.dotc(&uv);
    if !(normal.norm() > 1e-12 * uv.norm()) {
        return Err(Error::InvalidParameter("u has no normal component".into()));
    }
    let normal: Vec<Complex64> = normal.iter().copied().collect();
    let tx = x.scaled(t_scale);
    in_polydisc(tx.coords())?;
    in_polydisc(&flow(model, tx.coords(), zeta))?;

    let base = shooting_derivative(model, x, zeta, &normal)?;
    let tu: Vec<Complex64> = normal.iter().map(|v| v * t_scale).collect();
    let scaled = shooting_derivative(model, &tx, zeta, &tu)?;
    let diff: f64 = scaled.iter().zip(&base).map(|(a, b)| (a - b * t_scale).norm_sqr()).sum::<f64>().sqrt();
    let size: f64 = base.iter().map(|b| (b * t_scale).norm_sqr()).sum::<f64>().sqrt();
    Ok(diff / size)
}

/// Number of random phases added to `{1, i, -1, -i}` in [`d_log_h_norm`].
pub const EXTRA_DIRECTIONS: usize = 8;

/// `sup_{u, theta} |d/ds log ||H(x -> phi_x(s theta)) u|| |` at `s = 0`, per unit
/// of ambient displacement `||D phi_x(0) theta|| = ||lambda x||`.
///
/// For unit `u` the derivative is `<A'(0) u, u> / 2` with `A(s) = H^* H`, so the
/// sup over `u` is half the spectral radius of `A'(0)` (central differences).
pub fn d_log_h_norm(model: &LinearFoliationModel, x: &AmbientPoint) -> Result<f64> {
    let eval = HolonomyEvaluator::new(model, x)?;
    let speed = tangent(model, x.coords()).norm();
    let mut rng = stream(0, PURPOSE_DIAGNOSTIC, 0);
    let mut directions = vec![
        Complex64::new(1.0, 0.0),
        Complex64::new(0.0, 1.0),
        Complex64::new(-1.0, 0.0),
        Complex64::new(0.0, -1.0),
    ];
    directions.extend((0..EXTRA_DIRECTIONS).map(|_| Complex64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU)));
    let h = 1e-5;
    let mut best: f64 = 0.0;
    for theta in directions {
        let a = (eval.gram(theta * h)? - eval.gram(-theta * h)?) / Complex64::new(2.0 * h, 0.0);
        // Hermitian part, guarding against round-off asymmetry
        let herm = (&a + a.adjoint()) * Complex64::new(0.5, 0.0);
        let radius = herm.symmetric_eigenvalues().iter().fold(0.0f64, |m, e| m.max(e.abs()));
        best = best.max(0.5 * radius / speed);
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeodesicNode {
    pub arclength: f64,
    pub zeta: Complex64,
    pub velocity: Complex64,
}

/// Unit-speed geodesic of `lambda_g^2 |dzeta|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicPath {
    nodes: Vec<GeodesicNode>,
    reached_boundary: bool,
}

impl GeodesicPath {
    pub fn nodes(&self) -> &[GeodesicNode] {
        &self.nodes
    }

    /// Whether integration stopped at the domain boundary before the requested length.
    pub fn reached_boundary(&self) -> bool {
        self.reached_boundary
    }

    pub fn length(&self) -> f64 {
        self.nodes.last().map_or(0.0, |n| n.arclength)
    }
}

impl Trajectory for GeodesicPath {
    fn end_time(&self) -> f64 {
        self.length()
    }

    /// Position at the last node with arclength `<= t`.
    fn zeta_at(&self, t: f64) -> Result<Complex64> {
        let end = self.length();
        if !(t >= 0.0 && t <= end) {
            return Err(Error::TimeOutOfRange { t, end });
        }
        let i = self.nodes.partition_point(|n| n.arclength <= t) - 1;
        Ok(self.nodes[i].zeta)
    }
}

/// `zeta'' = -2 (d_zeta log lambda_g) zeta'^2` with `d_zeta = (d_u - i d_v) / 2`.
fn geodesic_rhs<D: ConformalDensity + ?Sized>(density: &D, z: Complex64, v: Complex64) -> Option<(Complex64, Complex64)> {
    if !density.contains(z) {
        return None;
    }
    let [gu, gv] = density.log_gradient(z);
    let dz_log = Complex64::new(0.5 * gu, -0.5 * gv);
    Some((v, -2.0 * dz_log * v * v))
}

/// RK4 in g-arclength with the velocity renormalized to unit g-speed after each step.
pub fn integrate_geodesic<D: ConformalDensity + ?Sized>(
    density: &D,
    zeta0: Complex64,
    dir0: Complex64,
    length: f64,
    step: f64,
) -> Result<GeodesicPath> {
    if !density.contains(zeta0) {
        return Err(Error::OutsideDomain { re: zeta0.re, im: zeta0.im });
    }
    if !(length > 0.0 && step > 0.0 && dir0.norm() > 0.0) {
        return Err(Error::InvalidParameter("length, step and direction must be nonzero".into()));
    }
    let unit = |z: Complex64, v: Complex64| v / (density.value(z) * v.norm());
    let mut z = zeta0;
    let mut v = unit(z, dir0);
    let mut s = 0.0;
    let mut nodes = vec![GeodesicNode { arclength: 0.0, zeta: z, velocity: v }];
    let n_steps = (length / step).ceil() as usize;
    let mut reached_boundary = false;
    for i in 0..n_steps {
        let h = if i + 1 == n_steps { length - s } else { step };
        let advanced = (|| {
            let (k1z, k1v) = geodesic_rhs(density, z, v)?;
            let (k2z, k2v) = geodesic_rhs(density, z + 0.5 * h * k1z, v + 0.5 * h * k1v)?;
            let (k3z, k3v) = geodesic_rhs(density, z + 0.5 * h * k2z, v + 0.5 * h * k2v)?;
            let (k4z, k4v) = geodesic_rhs(density, z + h * k3z, v + h * k3v)?;
            let nz = z + h / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z);
            let nv = v + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
            (density.contains(nz) && nv.is_finite() && nv.norm() > 0.0).then_some((nz, nv))
        })();
        match advanced {
            Some((nz, nv)) => {
                z = nz;
                v = unit(nz, nv);
                s += h;
                nodes.push(GeodesicNode { arclength: s, zeta: z, velocity: v });
            }
            None if i == 0 => return Err(Error::ImmediateExit),
            None => {
                reached_boundary = true;
                break;
            }
        }
    }
    Ok(GeodesicPath { nodes, reached_boundary })
}

/// `E(omega, t, v) = (1/t) log(||H v|| / ||v||)`, or `(1/t) log ||H||` without `v`.
/// `v` is an ambient vector, projected onto the normal space at the start.
pub fn expansion_rate<T: Trajectory + ?Sized>(
    model: &LinearFoliationModel,
    chart: &LeafChart,
    path: &T,
    t: f64,
    v: Option<&[Complex64]>,
) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("expansion rate needs t > 0, got {t}")));
    }
    let frame = cocycle_along(model, chart, path, t)?;
    match v {
        None => Ok(frame.log_norm() / t),
        Some(v) => {
            if v.len() != model.dim() {
                return Err(Error::DimensionMismatch { expected: model.dim(), found: v.len() });
            }
            let coords = frame.source.adjoint() * cvec(v);
            if coords.norm() == 0.0 {
                return Err(Error::InvalidParameter("v has no normal component".into()));
            }
            Ok(((&frame.matrix * &coords).norm() / coords.norm()).ln() / t)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionReport {
    /// `sup |df/dt| xi(omega(t)) / log* dist(omega(t), 0)`.
    pub c1: f64,
    /// `sup |df/dt| xi(x) / (log* dist(x, 0) e^t)`.
    pub c2: f64,
    pub passes: bool,
    /// `(t, f(t, e_b))` for each source basis vector `e_b`.
    pub profiles: Vec<Vec<(f64, f64)>>,
}

/// Fitted constants for the growth bounds on `f_x(t, v) = log(||H v|| / ||v||)`
/// along a unit-speed geodesic, over the source basis vectors.
pub fn check_expansion_lemmas(
    model: &LinearFoliationModel,
    chart: &LeafChart,
    density: &LeafDensity,
    geodesic: &GeodesicPath,
) -> Result<ExpansionReport> {
    let nodes = geodesic.nodes();
    if nodes.len() < 100 {
        return Err(Error::DegenerateGeodesic(format!("{} nodes, need at least 100", nodes.len())));
    }
    let x = chart.base();
    let eval = HolonomyEvaluator::new(model, x)?;
    let k = model.dim();
    let mut profiles = vec![Vec::with_capacity(nodes.len()); k - 1];
    for n in nodes {
        let logs = eval.log_column_norms(n.zeta)?;
        for (profile, v) in profiles.iter_mut().zip(logs) {
            profile.push((n.arclength, v));
        }
    }
    let log_star = |log_r: f64| 1.0 + log_r.abs();
    let base_log_r = ambient_norm(x).ln();
    let base_weight = density.profile().rho_of_log(base_log_r) / log_star(base_log_r);
    let (mut c1, mut c2) = (0.0f64, 0.0f64);
    for i in 1..nodes.len() - 1 {
        let (t0, t1) = (nodes[i - 1].arclength, nodes[i + 1].arclength);
        let log_r = density.chart().log_norm_at(nodes[i].zeta);
        let weight = density.profile().rho_of_log(log_r) / log_star(log_r);
        for profile in &profiles {
            let slope = ((profile[i + 1].1 - profile[i - 1].1) / (t1 - t0)).abs();
            c1 = c1.max(slope * weight);
            c2 = c2.max(slope * base_weight / nodes[i].arclength.exp());
        }
    }
    Ok(ExpansionReport { c1, c2, passes: c1.is_finite() && c2.is_finite(), profiles })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BigF {
    pub value: f64,
    /// Sup over all nodes minus sup over every other node.
    pub refinement_gap: f64,
}

/// Streaming `F = sup_{t <= 1} max(|log ||H||, |log ||H^{-1}||)` over path nodes.
#[derive(Debug, Clone)]
pub struct BigFTracker {
    eval: HolonomyEvaluator,
    all: f64,
    even: f64,
    count: usize,
}

impl BigFTracker {
    pub fn new(model: &LinearFoliationModel, x: &AmbientPoint) -> Result<Self> {
        Ok(Self { eval: HolonomyEvaluator::new(model, x)?, all: 0.0, even: 0.0, count: 0 })
    }

    pub fn push(&mut self, zeta: Complex64) -> Result<()> {
        let (hi, lo) = self.eval.log_singular_range(zeta)?;
        let v = hi.abs().max(lo.abs());
        self.all = self.all.max(v);
        if self.count.is_multiple_of(2) {
            self.even = self.even.max(v);
        }
        self.count += 1;
        Ok(())
    }

    pub fn finish(&self) -> BigF {
        BigF { value: self.all, refinement_gap: self.all - self.even }
    }
}

pub fn big_f(model: &LinearFoliationModel, chart: &LeafChart, path: &LeafPath) -> Result<BigF> {
    if path.final_g_time() < 1.0 {
        return Err(Error::PathTooShort { covered: path.final_g_time(), needed: 1.0 });
    }
    let mut tracker = BigFTracker::new(model, chart.base())?;
    for n in path.nodes().iter().take_while(|n: &&PathNode| n.g_time <= 1.0) {
        tracker.push(n.zeta)?;
    }
    Ok(tracker.finish())
}

pub const FRAME_CSV_HEADER: [&str; 5] = ["t", "log_norm", "log_norm_inverse", "smallest_sv", "largest_sv"];

pub fn write_frames_csv<W: Write>(out: W, rows: &[(f64, CocycleFrame)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FRAME_CSV_HEADER)?;
    for (t, frame) in rows {
        let s = frame.singular_values();
        let (largest, smallest) = (s[0], s[s.len() - 1]);
        w.write_record([
            t.to_string(),
            largest.ln().to_string(),
            // + 0.0 folds -0 into 0
            (-smallest.ln() + 0.0).to_string(),
            smallest.to_string(),
            largest.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))
}
