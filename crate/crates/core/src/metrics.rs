//! Leafwise metrics on chart polygons.
//!
//! A leafwise metric `g = xi^2 g_P` is pulled back to `Pi_x` as the conformal
//! metric `lambda_g(zeta)^2 |dzeta|^2` with
//! `lambda_g(zeta) = xi(phi_x(zeta)) * tau(zeta)` and
//! `tau(zeta) = 1 / log*(||phi_x(zeta)||)`, `log*(s) = 1 + |log s|`.
//!
//! For the accelerating family `xi = rho(dist(., 0))` with
//! `rho(r) = (-log r)^delta` below the crossover radius `r* = e^{-2}`, and
//! `rho` frozen at `rho(r*) = 2^delta` above it.

use crate::error::{Error, Result};
use crate::linear_model::{ambient_norm, LeafChart, LinearFoliationModel};
use crate::quadrature;
use num_complex::Complex64;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// `-ln r*` for the crossover radius of the accelerating family.
pub const CROSSOVER_LOG_RADIUS: f64 = 2.0;

/// `log*(s) = 1 + |log s|`.
pub fn log_star(s: f64) -> f64 {
    1.0 + s.ln().abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProfileKind {
    Poincare,
    Accelerating,
}

/// Conformal factor `xi` relative to the Poincaré metric, as a radial profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricProfile {
    kind: ProfileKind,
    delta: f64,
}

impl MetricProfile {
    pub fn poincare() -> Self {
        Self { kind: ProfileKind::Poincare, delta: 0.0 }
    }

    pub fn accelerating(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidParameter(format!("delta = {delta} is outside (0, 1)")));
        }
        Ok(Self { kind: ProfileKind::Accelerating, delta })
    }

    pub fn kind(&self) -> ProfileKind {
        self.kind
    }

    /// Exponent `delta`; zero for the Poincaré profile.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Value of `rho` above the crossover radius.
    pub fn rho_floor(&self) -> f64 {
        match self.kind {
            ProfileKind::Poincare => 1.0,
            ProfileKind::Accelerating => CROSSOVER_LOG_RADIUS.powf(self.delta),
        }
    }

    /// `rho` as a function of `ln r`.
    pub fn rho_of_log(&self, log_r: f64) -> f64 {
        match self.kind {
            ProfileKind::Poincare => 1.0,
            ProfileKind::Accelerating if log_r < -CROSSOVER_LOG_RADIUS => (-log_r).powf(self.delta),
            ProfileKind::Accelerating => self.rho_floor(),
        }
    }

    /// `d ln rho / d ln r`.
    fn log_rho_slope(&self, log_r: f64) -> f64 {
        match self.kind {
            ProfileKind::Accelerating if log_r < -CROSSOVER_LOG_RADIUS => self.delta / log_r,
            _ => 0.0,
        }
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            ProfileKind::Poincare => "poincare",
            ProfileKind::Accelerating => "accelerating",
        }
    }
}

/// `xi` at ambient distance `r` from the singularity.
pub fn xi_value(profile: &MetricProfile, r: f64) -> Result<f64> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::InvalidParameter(format!("radius {r} must be positive")));
    }
    Ok(profile.rho_of_log(r.ln()))
}

/// A conformal density `lambda_g > 0` on a planar domain.
pub trait ConformalDensity: Send + Sync {
    fn value(&self, zeta: Complex64) -> f64;

    fn contains(&self, zeta: Complex64) -> bool;

    /// Euclidean distance to the domain boundary (infinite for the whole plane).
    fn boundary_distance(&self, zeta: Complex64) -> f64;

    /// Gradient of `ln lambda_g` in `(u, v)`.
    fn log_gradient(&self, zeta: Complex64) -> [f64; 2] {
        let h = 1e-6 * (1.0 + zeta.norm());
        let f = |z: Complex64| self.value(z).ln();
        [
            (f(zeta + Complex64::new(h, 0.0)) - f(zeta - Complex64::new(h, 0.0))) / (2.0 * h),
            (f(zeta + Complex64::new(0.0, h)) - f(zeta - Complex64::new(0.0, h))) / (2.0 * h),
        ]
    }
}

/// `lambda_g = xi(phi_x(zeta)) tau(zeta)` on the chart polygon.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafDensity {
    chart: LeafChart,
    profile: MetricProfile,
}

impl LeafDensity {
    pub fn new(chart: LeafChart, profile: MetricProfile) -> Self {
        Self { chart, profile }
    }

    pub fn chart(&self) -> &LeafChart {
        &self.chart
    }

    pub fn profile(&self) -> &MetricProfile {
        &self.profile
    }

    /// `tau(zeta) = 1 / log* ||phi_x(zeta)||`.
    pub fn tau(&self, zeta: Complex64) -> f64 {
        1.0 / (1.0 + self.chart.log_norm_at(zeta).abs())
    }

    /// `xi(phi_x(zeta))`.
    pub fn xi(&self, zeta: Complex64) -> f64 {
        self.profile.rho_of_log(self.chart.log_norm_at(zeta))
    }
}

impl ConformalDensity for LeafDensity {
    fn value(&self, zeta: Complex64) -> f64 {
        let log_r = self.chart.log_norm_at(zeta);
        self.profile.rho_of_log(log_r) / (1.0 + log_r.abs())
    }

    fn contains(&self, zeta: Complex64) -> bool {
        self.chart.contains(zeta)
    }

    fn boundary_distance(&self, zeta: Complex64) -> f64 {
        self.chart.boundary_distance(zeta).unwrap_or(0.0)
    }

    fn log_gradient(&self, zeta: Complex64) -> [f64; 2] {
        let (log_r, grad) = self.chart.log_norm_with_gradient(zeta);
        let slope = self.profile.log_rho_slope(log_r) - log_r.signum() / (1.0 + log_r.abs());
        [slope * grad[0], slope * grad[1]]
    }
}

/// Constant density, on a chart polygon or on the whole plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantDensity {
    value: f64,
    chart: Option<LeafChart>,
}

impl ConstantDensity {
    pub fn new(value: f64, chart: Option<LeafChart>) -> Result<Self> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::InvalidParameter(format!("density {value} must be positive")));
        }
        Ok(Self { value, chart })
    }
}

impl ConformalDensity for ConstantDensity {
    fn value(&self, _zeta: Complex64) -> f64 {
        self.value
    }

    fn contains(&self, zeta: Complex64) -> bool {
        match &self.chart {
            Some(c) => c.contains(zeta),
            None => zeta.is_finite(),
        }
    }

    fn boundary_distance(&self, zeta: Complex64) -> f64 {
        match &self.chart {
            Some(c) => c.boundary_distance(zeta).unwrap_or(0.0),
            None => f64::INFINITY,
        }
    }

    fn log_gradient(&self, _zeta: Complex64) -> [f64; 2] {
        [0.0, 0.0]
    }
}

/// The hyperbolic metric `|dzeta| / Im zeta` on the upper half-plane.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpperHalfPlane;

impl ConformalDensity for UpperHalfPlane {
    fn value(&self, zeta: Complex64) -> f64 {
        1.0 / zeta.im
    }

    fn contains(&self, zeta: Complex64) -> bool {
        zeta.is_finite() && zeta.im > 0.0
    }

    fn boundary_distance(&self, zeta: Complex64) -> f64 {
        zeta.im.max(0.0)
    }

    fn log_gradient(&self, zeta: Complex64) -> [f64; 2] {
        [0.0, -1.0 / zeta.im]
    }
}

/// How a density is attached to each chart in batch runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DensityRule {
    Profile(MetricProfile),
    /// Constant density on the chart polygon.
    Constant(f64),
}

impl DensityRule {
    pub fn build(&self, chart: LeafChart) -> Result<ChartDensity> {
        Ok(match *self {
            DensityRule::Profile(p) => ChartDensity::Leaf(LeafDensity::new(chart, p)),
            DensityRule::Constant(v) => ChartDensity::Constant(ConstantDensity::new(v, Some(chart))?),
        })
    }
}

/// Density built by a [`DensityRule`].
#[derive(Debug, Clone, PartialEq)]
pub enum ChartDensity {
    Leaf(LeafDensity),
    Constant(ConstantDensity),
}

impl ConformalDensity for ChartDensity {
    fn value(&self, zeta: Complex64) -> f64 {
        match self {
            ChartDensity::Leaf(d) => d.value(zeta),
            ChartDensity::Constant(d) => d.value(zeta),
        }
    }

    fn contains(&self, zeta: Complex64) -> bool {
        match self {
            ChartDensity::Leaf(d) => d.contains(zeta),
            ChartDensity::Constant(d) => d.contains(zeta),
        }
    }

    fn boundary_distance(&self, zeta: Complex64) -> f64 {
        match self {
            ChartDensity::Leaf(d) => d.boundary_distance(zeta),
            ChartDensity::Constant(d) => d.boundary_distance(zeta),
        }
    }

    fn log_gradient(&self, zeta: Complex64) -> [f64; 2] {
        match self {
            ChartDensity::Leaf(d) => d.log_gradient(zeta),
            ChartDensity::Constant(d) => d.log_gradient(zeta),
        }
    }
}

/// Two-sided estimate of `eta(x)` from the Koebe bounds on the polygon's
/// Poincaré density at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaInterval {
    pub lower: f64,
    pub upper: f64,
}

pub fn eta_estimate(chart: &LeafChart, model: &LinearFoliationModel) -> Result<EtaInterval> {
    let base = chart.base();
    if base.is_origin() {
        return Err(Error::AtSingularity);
    }
    let d = chart.boundary_distance(Complex64::new(0.0, 0.0))?;
    let speed = ambient_norm(&crate::linear_model::AmbientPoint::new(model.tangent(base))?);
    Ok(EtaInterval { lower: 0.5 * speed * d, upper: 2.0 * speed * d })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeCheck {
    pub passes: bool,
    /// Supremum of `|rho'(r)| r (-log r) / rho(r)^2` over the grid.
    pub fitted_c: f64,
    /// `(r, ratio)` pairs in decreasing `r`.
    pub samples: Vec<(f64, f64)>,
}

/// Growth condition `|rho'| / rho^2 <= c / (-r log r)` on a log-spaced grid.
pub fn check_derivative_condition(
    profile: &MetricProfile,
    r_min: f64,
    r_max: f64,
    samples: usize,
) -> Result<DerivativeCheck> {
    if !(r_min > 0.0 && r_min < r_max && r_max < 1.0) || samples < 2 {
        return Err(Error::InvalidParameter(format!(
            "need 0 < r_min < r_max < 1 and samples >= 2 (got {r_min}, {r_max}, {samples})"
        )));
    }
    let (t_hi, t_lo) = (r_max.ln(), r_min.ln());
    let grid: Vec<(f64, f64)> = (0..samples)
        .map(|i| {
            let t = t_hi + (t_lo - t_hi) * i as f64 / (samples - 1) as f64;
            // d rho / d ln r by central differences in ln r
            let h = 1e-6 * t.abs().max(1.0);
            let drho = (profile.rho_of_log(t + h) - profile.rho_of_log(t - h)) / (2.0 * h);
            let rho = profile.rho_of_log(t);
            (t.exp(), drho.abs() * (-t) / (rho * rho))
        })
        .collect();

    let fitted_c = grid.iter().map(|s| s.1).fold(0.0, f64::max);
    let half = samples / 2;
    let outer = grid[..half.max(1)].iter().map(|s| s.1).fold(0.0, f64::max);
    let inner = grid[half..].iter().map(|s| s.1).fold(0.0, f64::max);
    let finite = grid.iter().all(|s| s.1.is_finite());
    let passes = finite && inner <= outer * (1.0 + 1e-6) + 1e-12;
    Ok(DerivativeCheck { passes, fitted_c, samples: grid })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Converges,
    Diverges,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerdictWithValues {
    pub verdict: Verdict,
    /// `(epsilon, integral from epsilon to r*)`.
    pub values: Vec<(f64, f64)>,
    /// Local growth exponents of the truncation increments per e-fold of `ln(1/epsilon)`.
    pub tail_exponents: Vec<f64>,
    /// Tail-extrapolated limit when the verdict is `Converges`.
    pub limit_estimate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrabilityCheck {
    /// `int rho^2(r) dr / (r (log r)^2)`
    pub first: VerdictWithValues,
    /// `int dr / (rho^2(r) r |log r|)`
    pub second: VerdictWithValues,
}

/// Increments decaying slower than this power of `ln(1/epsilon)` count as non-decaying.
pub const TAIL_EXPONENT_TOL: f64 = 0.05;
/// Relative Cauchy tolerance on the tail-extrapolated limits.
pub const CAUCHY_REL_TOL: f64 = 0.01;

/// Truncations at `epsilon_k = exp(-4 * 2^k)`, `k = 0..8`.
pub fn default_epsilon_sequence() -> Vec<f64> {
    (0..8).map(|k| (-4.0 * 2f64.powi(k)).exp()).collect()
}

/// Integrability conditions on `(0, r*)` via truncated integrals.
pub fn check_integrability(
    profile: &MetricProfile,
    epsilon_sequence: &[f64],
) -> Result<IntegrabilityCheck> {
    validate_epsilons(epsilon_sequence)?;
    let first = truncated_values(epsilon_sequence, |t| {
        let rho = profile.rho_of_log(t);
        rho * rho / (t * t)
    })?;
    let second = truncated_values(epsilon_sequence, |t| {
        let rho = profile.rho_of_log(t);
        1.0 / (rho * rho * t.abs())
    })?;
    Ok(IntegrabilityCheck {
        first: classify(epsilon_sequence, first),
        second: classify(epsilon_sequence, second),
    })
}

fn validate_epsilons(eps: &[f64]) -> Result<()> {
    if eps.len() < 5 {
        return Err(Error::InvalidParameter("need at least 5 truncation points".into()));
    }
    let r_star = (-CROSSOVER_LOG_RADIUS).exp();
    if eps.iter().any(|&e| !(e >= 1e-300 && e < r_star)) {
        return Err(Error::InvalidParameter(format!(
            "truncation points must lie in [1e-300, {r_star})"
        )));
    }
    if eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter("truncation points must strictly decrease".into()));
    }
    Ok(())
}

/// Integrals from each epsilon up to `r*`, with the integrand given in `t = ln r`
/// (so `f(t) dt` is the original `integrand(r) dr`).
fn truncated_values<F: Fn(f64) -> f64>(eps: &[f64], f: F) -> Result<Vec<f64>> {
    let mut upper = -CROSSOVER_LOG_RADIUS;
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(eps.len());
    for &e in eps {
        let lower = e.ln();
        acc += quadrature::integrate(&f, lower, upper, 1e-14, 1e-12)?.value;
        upper = lower;
        out.push(acc);
    }
    Ok(out)
}

fn classify(eps: &[f64], values: Vec<f64>) -> VerdictWithValues {
    let logs: Vec<f64> = eps.iter().map(|e| (-e.ln()).ln()).collect();
    // increment per e-fold of ln(1/eps), located at the log-midpoint
    let densities: Vec<(f64, f64)> = (0..values.len() - 1)
        .map(|k| {
            let d = (values[k + 1] - values[k]) / (logs[k + 1] - logs[k]);
            (0.5 * (logs[k] + logs[k + 1]), d)
        })
        .collect();
    let exponents: Vec<f64> = densities
        .windows(2)
        .map(|w| {
            if w[0].1 <= 0.0 || w[1].1 <= 0.0 {
                f64::NEG_INFINITY
            } else {
                (w[1].1 / w[0].1).ln() / (w[1].0 - w[0].0)
            }
        })
        .collect();

    let last = &exponents[exponents.len().saturating_sub(3)..];
    let limit_at = |k: usize| -> f64 {
        // extrapolate from the increment density between truncations k and k+1
        let q = exponents[k - 1];
        let (mid, d) = densities[k];
        if q == f64::NEG_INFINITY {
            return values[k + 1];
        }
        values[k + 1] + d * (q * (logs[k + 1] - mid)).exp() / (-q)
    };

    let values_out: Vec<(f64, f64)> = eps.iter().copied().zip(values.iter().copied()).collect();
    if last.iter().all(|&q| q >= -TAIL_EXPONENT_TOL) {
        return VerdictWithValues {
            verdict: Verdict::Diverges,
            values: values_out,
            tail_exponents: exponents,
            limit_estimate: None,
        };
    }
    if last.iter().all(|&q| q < -TAIL_EXPONENT_TOL) {
        let n = densities.len();
        let (a, b) = (limit_at(n - 2), limit_at(n - 1));
        if (b - a).abs() <= CAUCHY_REL_TOL * b.abs() {
            return VerdictWithValues {
                verdict: Verdict::Converges,
                values: values_out,
                tail_exponents: exponents,
                limit_estimate: Some(b),
            };
        }
    }
    VerdictWithValues {
        verdict: Verdict::Inconclusive,
        values: values_out,
        tail_exponents: exponents,
        limit_estimate: None,
    }
}

/// Smallest stencil step accepted by [`gaussian_curvature`].
pub const MIN_CURVATURE_STEP: f64 = 1e-7;

/// `K = -Delta ln lambda_g / lambda_g^2` with a five-point Laplacian.
pub fn gaussian_curvature<D: ConformalDensity + ?Sized>(density: &D, zeta: Complex64, h: f64) -> Result<f64> {
    if !(h >= MIN_CURVATURE_STEP) {
        return Err(Error::InvalidParameter(format!("stencil step {h} below {MIN_CURVATURE_STEP}")));
    }
    let offsets = [
        Complex64::new(h, 0.0),
        Complex64::new(-h, 0.0),
        Complex64::new(0.0, h),
        Complex64::new(0.0, -h),
    ];
    if !density.contains(zeta) || offsets.iter().any(|o| !density.contains(zeta + o)) {
        return Err(Error::StencilOutsideDomain);
    }
    let center = density.value(zeta);
    let ln_center = center.ln();
    let laplacian = offsets
        .iter()
        .map(|o| density.value(zeta + o).ln() - ln_center)
        .sum::<f64>()
        / (h * h);
    Ok(-laplacian / (center * center))
}

/// [`gaussian_curvature`] with step `1e-3 * boundary_distance(zeta)`.
pub fn gaussian_curvature_default<D: ConformalDensity + ?Sized>(density: &D, zeta: Complex64) -> Result<f64> {
    let d = density.boundary_distance(zeta);
    let h = if d.is_finite() { 1e-3 * d } else { 1e-3 };
    gaussian_curvature(density, zeta, h)
}

#[derive(Clone, Copy, PartialEq)]
struct Frontier(f64, usize);

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// 16-neighbourhood: axis, diagonal and knight moves.
const MOVES: [(i64, i64); 16] = [
    (1, 0), (-1, 0), (0, 1), (0, -1),
    (1, 1), (1, -1), (-1, 1), (-1, -1),
    (1, 2), (2, 1), (-1, 2), (-2, 1),
    (1, -2), (2, -1), (-1, -2), (-2, -1),
];

/// g-area of the g-disc of radius `radius_g` about `zeta = 0`.
///
/// Distances come from Dijkstra on a square grid with 16-neighbour moves and
/// trapezoidal edge weights. The window starts at `1.25 radius_g / lambda_g(0)`
/// and grows while the sublevel set touches its edge.
pub fn disc_volume<D: ConformalDensity + ?Sized>(density: &D, radius_g: f64, grid: usize) -> Result<f64> {
    if grid < 16 {
        return Err(Error::InvalidParameter(format!("grid {grid} must be at least 16")));
    }
    if !(radius_g > 0.0 && radius_g.is_finite()) {
        return Err(Error::InvalidParameter(format!("radius {radius_g} must be positive")));
    }
    let origin = Complex64::new(0.0, 0.0);
    if !density.contains(origin) {
        return Err(Error::OutsideDomain { re: 0.0, im: 0.0 });
    }
    let grid = grid + grid % 2;
    let mut half_width = 1.25 * radius_g / density.value(origin);
    for _ in 0..8 {
        match grid_disc_area(density, radius_g, grid, half_width) {
            Some(area) => return Ok(area),
            None => half_width *= 1.5,
        }
    }
    Err(Error::WindowEscape)
}

fn grid_disc_area<D: ConformalDensity + ?Sized>(density: &D, radius: f64, grid: usize, half_width: f64) -> Option<f64> {
    let n = grid + 1;
    let spacing = 2.0 * half_width / grid as f64;
    let at = |i: usize, j: usize| Complex64::new(-half_width + i as f64 * spacing, -half_width + j as f64 * spacing);
    let lambda: Vec<f64> = (0..n * n)
        .map(|idx| {
            let z = at(idx % n, idx / n);
            if density.contains(z) {
                density.value(z)
            } else {
                f64::NAN
            }
        })
        .collect();

    let mut dist = vec![f64::INFINITY; n * n];
    let start = (grid / 2) * n + grid / 2;
    dist[start] = 0.0;
    let mut heap = BinaryHeap::from([Frontier(0.0, start)]);
    while let Some(Frontier(d, idx)) = heap.pop() {
        if d > dist[idx] {
            continue;
        }
        if d >= radius {
            break;
        }
        let (i, j) = ((idx % n) as i64, (idx / n) as i64);
        for (di, dj) in MOVES {
            let (ni, nj) = (i + di, j + dj);
            if ni < 0 || nj < 0 || ni >= n as i64 || nj >= n as i64 {
                continue;
            }
            let nidx = nj as usize * n + ni as usize;
            if lambda[nidx].is_nan() {
                continue;
            }
            let len = spacing * ((di * di + dj * dj) as f64).sqrt();
            let nd = d + len * 0.5 * (lambda[idx] + lambda[nidx]);
            if nd < dist[nidx] {
                dist[nidx] = nd;
                heap.push(Frontier(nd, nidx));
            }
        }
    }

    let mut area = 0.0;
    for j in 0..n {
        let mut row = 0.0;
        for i in 0..n {
            let idx = j * n + i;
            if dist[idx] < radius {
                if i == 0 || j == 0 || i == grid || j == grid {
                    return None;
                }
                row += lambda[idx] * lambda[idx];
            }
        }
        area += row;
    }
    Some(area * spacing * spacing)
}
