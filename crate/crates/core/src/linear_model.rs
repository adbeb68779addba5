//! Local model of a linearizable singularity.
//!
//! The foliation of the unit polydisc `D^k` by integral curves of the linear
//! vector field `sum_j lambda_j z_j d/dz_j`. The leaf through `x` is
//! parametrized by `phi_x(zeta) = (x_j exp(lambda_j zeta))_j`, and the chart
//! domain `Pi_x = phi_x^{-1}(D^k)` is the convex polygon
//! `{ s_j u - t_j v < -log|x_j| }` with `lambda_j = s_j + i t_j`,
//! `zeta = u + iv`. Coordinates with `x_j = 0` stay zero along the leaf and
//! contribute no constraint.

use crate::error::{Error, Result};
use num_complex::Complex64;

/// Eigenvalues of a generic linear vector field with an isolated zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFoliationModel {
    lambdas: Vec<Complex64>,
}

impl LinearFoliationModel {
    pub fn new(lambdas: Vec<Complex64>) -> Result<Self> {
        if lambdas.len() < 2 {
            return Err(Error::DimensionTooSmall(lambdas.len()));
        }
        if let Some(index) = lambdas.iter().position(|l| *l == Complex64::new(0.0, 0.0)) {
            return Err(Error::ZeroEigenvalue { index });
        }
        if lambdas.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { lambdas })
    }

    pub fn lambdas(&self) -> &[Complex64] {
        &self.lambdas
    }

    /// Ambient dimension `k`.
    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    /// `lambda x = (lambda_j x_j)_j`, the leaf tangent direction at `x`.
    pub fn tangent(&self, x: &AmbientPoint) -> Vec<Complex64> {
        self.lambdas.iter().zip(x.coords()).map(|(l, c)| l * c).collect()
    }
}

/// A point of `C^k`; the ambient metric is Euclidean.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbientPoint {
    coords: Vec<Complex64>,
}

impl AmbientPoint {
    pub fn new(coords: Vec<Complex64>) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { coords })
    }

    pub fn coords(&self) -> &[Complex64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn is_origin(&self) -> bool {
        self.coords.iter().all(|c| c.norm_sqr() == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> AmbientPoint {
        AmbientPoint { coords: self.coords.iter().map(|c| c * factor).collect() }
    }
}

/// Euclidean norm `||p||`. Inside the singular box this is also `dist(p, E)`.
pub fn ambient_norm(p: &AmbientPoint) -> f64 {
    // Scale before squaring so that points very close to the singularity do not underflow.
    let scale = p.coords.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    scale * p.coords.iter().map(|c| (c / scale).norm_sqr()).sum::<f64>().sqrt()
}

/// One side of the chart polygon: `s u - t v < bound`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfPlane {
    /// Index of the coordinate that produced this constraint.
    pub coord: usize,
    pub s: f64,
    pub t: f64,
    pub bound: f64,
}

impl HalfPlane {
    fn slack(&self, zeta: Complex64) -> f64 {
        self.bound - self.s * zeta.re + self.t * zeta.im
    }

    fn normal_len(&self) -> f64 {
        self.s.hypot(self.t)
    }

    /// Signed Euclidean distance to the boundary line (positive inside).
    pub fn signed_distance(&self, zeta: Complex64) -> f64 {
        self.slack(zeta) / self.normal_len()
    }
}

/// Base point `x` with its leaf parametrization and chart polygon `Pi_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafChart {
    base: AmbientPoint,
    lambdas: Vec<Complex64>,
    half_planes: Vec<HalfPlane>,
    /// `ln |x_j|^2` for the nonzero coordinates, used for `||phi_x(zeta)||`.
    log_moduli_sq: Vec<(usize, f64)>,
}

impl LeafChart {
    pub fn at(model: &LinearFoliationModel, base: AmbientPoint) -> Result<Self> {
        if base.dim() != model.dim() {
            return Err(Error::DimensionMismatch { expected: model.dim(), found: base.dim() });
        }
        if base.is_origin() {
            return Err(Error::AtSingularity);
        }
        let mut half_planes = Vec::new();
        let mut log_moduli_sq = Vec::new();
        for (j, (x, l)) in base.coords().iter().zip(model.lambdas()).enumerate() {
            let modulus = x.norm();
            if modulus == 0.0 {
                continue;
            }
            if modulus >= 1.0 {
                return Err(Error::OutsidePolydisc { index: j, modulus });
            }
            half_planes.push(HalfPlane { coord: j, s: l.re, t: l.im, bound: -modulus.ln() });
            log_moduli_sq.push((j, 2.0 * modulus.ln()));
        }
        Ok(Self { base, lambdas: model.lambdas().to_vec(), half_planes, log_moduli_sq })
    }

    /// Chart with explicitly given constraints, for tests and diagnostics.
    /// The base point is not checked against the constraints.
    pub fn from_half_planes(
        model: &LinearFoliationModel,
        base: AmbientPoint,
        half_planes: Vec<HalfPlane>,
    ) -> Result<Self> {
        let mut chart = Self::at(model, base)?;
        chart.half_planes = half_planes;
        Ok(chart)
    }

    pub fn base(&self) -> &AmbientPoint {
        &self.base
    }

    pub fn lambdas(&self) -> &[Complex64] {
        &self.lambdas
    }

    pub fn half_planes(&self) -> &[HalfPlane] {
        &self.half_planes
    }

    pub fn contains(&self, zeta: Complex64) -> bool {
        zeta.is_finite() && self.half_planes.iter().all(|h| h.slack(zeta) > 0.0)
    }

    /// Euclidean distance from `zeta` to the polygon boundary. Infinite when
    /// the chart has no constraints.
    pub fn boundary_distance(&self, zeta: Complex64) -> Result<f64> {
        if !self.contains(zeta) {
            return Err(Error::OutsideDomain { re: zeta.re, im: zeta.im });
        }
        Ok(self
            .half_planes
            .iter()
            .map(|h| h.signed_distance(zeta))
            .fold(f64::INFINITY, f64::min))
    }

    /// `phi_x(zeta)`.
    pub fn leaf_point(&self, zeta: Complex64) -> AmbientPoint {
        AmbientPoint {
            coords: self
                .base
                .coords()
                .iter()
                .zip(&self.lambdas)
                .map(|(x, l)| x * (l * zeta).exp())
                .collect(),
        }
    }

    /// `ln ||phi_x(zeta)||`, computed without forming the point.
    pub fn log_norm_at(&self, zeta: Complex64) -> f64 {
        let (m, sum) = self.log_norm_terms(zeta);
        0.5 * (m + sum.ln())
    }

    /// Returns `(max_j a_j, sum_j exp(a_j - max))` with
    /// `a_j = ln|x_j|^2 + 2 Re(lambda_j zeta)`.
    fn log_norm_terms(&self, zeta: Complex64) -> (f64, f64) {
        let exponent = |&(j, lm): &(usize, f64)| {
            let l = self.lambdas[j];
            lm + 2.0 * (l.re * zeta.re - l.im * zeta.im)
        };
        let m = self.log_moduli_sq.iter().map(exponent).fold(f64::NEG_INFINITY, f64::max);
        (m, self.log_moduli_sq.iter().map(|t| (exponent(t) - m).exp()).sum())
    }

    /// `ln ||phi_x(zeta)||` together with its gradient in `(u, v)`.
    pub fn log_norm_with_gradient(&self, zeta: Complex64) -> (f64, [f64; 2]) {
        let mut m = f64::NEG_INFINITY;
        let mut terms = Vec::with_capacity(self.log_moduli_sq.len());
        for &(j, lm) in &self.log_moduli_sq {
            let l = self.lambdas[j];
            let a = lm + 2.0 * (l.re * zeta.re - l.im * zeta.im);
            m = m.max(a);
            terms.push((a, l));
        }
        let mut total = 0.0;
        let mut du = 0.0;
        let mut dv = 0.0;
        for (a, l) in terms {
            let w = (a - m).exp();
            total += w;
            du += w * l.re;
            dv -= w * l.im;
        }
        (0.5 * (m + total.ln()), [du / total, dv / total])
    }
}

/// `phi_x(zeta)` for the chart at `x`.
pub fn leaf_point(chart: &LeafChart, zeta: Complex64) -> AmbientPoint {
    chart.leaf_point(zeta)
}

/// Whether `zeta` lies in the open polygon `Pi_x`.
pub fn contains_zeta(chart: &LeafChart, zeta: Complex64) -> bool {
    chart.contains(zeta)
}

pub fn boundary_distance(chart: &LeafChart, zeta: Complex64) -> Result<f64> {
    chart.boundary_distance(zeta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn point(xs: &[f64]) -> AmbientPoint {
        AmbientPoint::new(xs.iter().map(|&x| c(x, 0.0)).collect()).unwrap()
    }

    fn model_1_i() -> LinearFoliationModel {
        LinearFoliationModel::new(vec![c(1.0, 0.0), c(0.0, 1.0)]).unwrap()
    }

    fn e(p: f64) -> f64 {
        p.exp()
    }

    #[test]
    fn model_rejects_zero_eigenvalue_and_small_k() {
        assert_eq!(
            LinearFoliationModel::new(vec![c(1.0, 0.0), c(0.0, 0.0)]),
            Err(Error::ZeroEigenvalue { index: 1 })
        );
        assert_eq!(LinearFoliationModel::new(vec![c(1.0, 0.0)]), Err(Error::DimensionTooSmall(1)));
    }

    #[test]
    fn chart_rejects_singularity_and_outside_points() {
        let model = model_1_i();
        assert_eq!(LeafChart::at(&model, point(&[0.0, 0.0])), Err(Error::AtSingularity));
        assert!(matches!(
            LeafChart::at(&model, point(&[1.0, 0.5])),
            Err(Error::OutsidePolydisc { index: 0, .. })
        ));
        assert!(LeafChart::at(&model, point(&[0.5])).is_err());
    }

    #[test]
    fn leaf_point_examples() {
        let chart = LeafChart::at(&model_1_i(), point(&[e(-1.0), e(-1.0)])).unwrap();
        let p0 = chart.leaf_point(c(0.0, 0.0));
        assert_eq!(p0, *chart.base());

        // Reference from an independent 30-digit evaluation.
        let p1 = chart.leaf_point(c(1.0, 0.0));
        assert_relative_eq!(p1.coords()[0].re, 1.0, max_relative = 1e-15);
        assert_relative_eq!(p1.coords()[0].im, 0.0);
        assert_relative_eq!(p1.coords()[1].re, 0.19876611034641295, max_relative = 1e-14);
        assert_relative_eq!(p1.coords()[1].im, 0.309_559_875_653_112_2, max_relative = 1e-14);

        let model = LinearFoliationModel::new(vec![c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        let chart = LeafChart::at(&model, point(&[0.5, 0.5])).unwrap();
        let p = chart.leaf_point(c(0.0, std::f64::consts::PI));
        for z in p.coords() {
            assert!((z - c(-0.5, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn contains_examples() {
        let chart = LeafChart::at(&model_1_i(), point(&[e(-1.0), e(-1.0)])).unwrap();
        assert!(chart.contains(c(0.0, 0.0)));
        assert!(!chart.contains(c(2.0, 0.0)));
        assert!(chart.contains(c(-5.0, -0.5)));
        assert!(!chart.contains(c(0.0, -1.5)));
        assert!(!chart.contains(c(f64::NAN, 0.0)));
    }

    #[test]
    fn boundary_distance_examples() {
        let chart = LeafChart::at(&model_1_i(), point(&[e(-1.0), e(-1.0)])).unwrap();
        assert_relative_eq!(chart.boundary_distance(c(0.0, 0.0)).unwrap(), 1.0, epsilon = 1e-15);

        let chart = LeafChart::at(&model_1_i(), point(&[e(-2.0), e(-1.0)])).unwrap();
        assert_relative_eq!(chart.boundary_distance(c(0.0, 0.0)).unwrap(), 1.0, epsilon = 1e-15);

        // single constraint u < 1
        let model = model_1_i();
        let single = LeafChart::from_half_planes(
            &model,
            point(&[e(-1.0), e(-1.0)]),
            vec![HalfPlane { coord: 0, s: 1.0, t: 0.0, bound: 1.0 }],
        )
        .unwrap();
        assert_relative_eq!(single.boundary_distance(c(0.5, 0.0)).unwrap(), 0.5, epsilon = 1e-15);

        assert!(chart.boundary_distance(c(5.0, 0.0)).is_err());
    }

    #[test]
    fn zero_coordinate_contributes_no_constraint() {
        let chart = LeafChart::at(&model_1_i(), point(&[0.0, 0.5])).unwrap();
        assert_eq!(chart.half_planes().len(), 1);
        assert_eq!(chart.half_planes()[0].coord, 1);
        let p = chart.leaf_point(c(3.0, -0.2));
        assert_eq!(p.coords()[0], c(0.0, 0.0));
    }

    #[test]
    fn ambient_norm_examples() {
        assert_eq!(ambient_norm(&point(&[1.0, 0.0])), 1.0);
        assert_relative_eq!(ambient_norm(&point(&[0.3, 0.4])), 0.5, epsilon = 1e-16);
        assert_relative_eq!(
            ambient_norm(&point(&[e(-1.0), e(-1.0)])),
            2f64.sqrt() * e(-1.0),
            max_relative = 1e-15
        );
        assert_eq!(ambient_norm(&point(&[0.0, 0.0])), 0.0);
        assert_relative_eq!(ambient_norm(&point(&[1e-200, 1e-200])), 2f64.sqrt() * 1e-200, max_relative = 1e-14);
    }

    #[test]
    fn log_norm_matches_direct_evaluation() {
        let model = LinearFoliationModel::new(vec![c(2.0, 0.0), c(-1.0, 1.0), c(0.5, -0.3)]).unwrap();
        let chart = LeafChart::at(&model, point(&[0.1, 0.2, 0.05])).unwrap();
        for zeta in [c(0.0, 0.0), c(0.3, -0.2), c(-1.0, 0.7)] {
            let direct = ambient_norm(&chart.leaf_point(zeta)).ln();
            assert_relative_eq!(chart.log_norm_at(zeta), direct, max_relative = 1e-13);
            let (value, grad) = chart.log_norm_with_gradient(zeta);
            assert_relative_eq!(value, direct, max_relative = 1e-13);
            let h = 1e-6;
            let du = (chart.log_norm_at(zeta + c(h, 0.0)) - chart.log_norm_at(zeta - c(h, 0.0))) / (2.0 * h);
            let dv = (chart.log_norm_at(zeta + c(0.0, h)) - chart.log_norm_at(zeta - c(0.0, h))) / (2.0 * h);
            assert_relative_eq!(grad[0], du, epsilon = 1e-8);
            assert_relative_eq!(grad[1], dv, epsilon = 1e-8);
        }
    }

    fn arb_chart() -> impl Strategy<Value = LeafChart> {
        (
            prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 2..4),
            prop::collection::vec((0.05f64..0.9, 0.0f64..std::f64::consts::TAU), 4),
        )
            .prop_filter_map("zero eigenvalue", |(ls, xs)| {
                let lambdas: Vec<_> = ls.iter().map(|&(a, b)| c(a, b)).collect();
                let model = LinearFoliationModel::new(lambdas).ok()?;
                let coords = xs[..model.dim()].iter().map(|&(r, th)| Complex64::from_polar(r, th)).collect();
                LeafChart::at(&model, AmbientPoint::new(coords).ok()?).ok()
            })
    }

    proptest! {
        #[test]
        fn origin_is_always_inside(chart in arb_chart()) {
            prop_assert!(chart.contains(c(0.0, 0.0)));
        }

        #[test]
        fn leaf_invariance_under_rebasing(chart in arb_chart(), a in (-0.5f64..0.5, -0.5f64..0.5), b in (-0.5f64..0.5, -0.5f64..0.5)) {
            let z1 = c(a.0, a.1);
            let z2 = c(b.0, b.1);
            prop_assume!(chart.contains(z1) && chart.contains(z1 + z2));
            let model = LinearFoliationModel::new(chart.lambdas().to_vec()).unwrap();
            let rebased = LeafChart::at(&model, chart.leaf_point(z1)).unwrap();
            let lhs = rebased.leaf_point(z2);
            let rhs = chart.leaf_point(z1 + z2);
            let scale = ambient_norm(&rhs);
            for (p, q) in lhs.coords().iter().zip(rhs.coords()) {
                prop_assert!((p - q).norm() <= 1e-12 * scale);
            }
        }

        #[test]
        fn boundary_distance_is_one_lipschitz(chart in arb_chart(), a in (-1.0f64..1.0, -1.0f64..1.0), b in (-1.0f64..1.0, -1.0f64..1.0)) {
            let z1 = c(a.0, a.1);
            let z2 = c(b.0, b.1);
            prop_assume!(chart.contains(z1) && chart.contains(z2));
            let d1 = chart.boundary_distance(z1).unwrap();
            let d2 = chart.boundary_distance(z2).unwrap();
            prop_assert!((d1 - d2).abs() <= (z1 - z2).norm() * (1.0 + 1e-12) + 1e-14);
        }

        #[test]
        fn polygon_is_convex(chart in arb_chart(), a in (-3.0f64..3.0, -3.0f64..3.0), b in (-3.0f64..3.0, -3.0f64..3.0)) {
            // pull both points toward the origin until they land inside
            let pull = |mut z: Complex64| {
                while !chart.contains(z) {
                    z *= 0.5;
                }
                z
            };
            let (z1, z2) = (pull(c(a.0, a.1)), pull(c(b.0, b.1)));
            prop_assert!(chart.contains((z1 + z2) * 0.5));
        }
    }
}
