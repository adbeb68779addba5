//! Lyapunov exponents of the holonomy cocycle and integrability diagnostics.
//!
//! Exponents come from the usual re-orthonormalization scheme: a unitary
//! frame is pushed through cocycle increments and QR-factorized at every
//! stride; the logs of the diagonal of `R` accumulate into per-path exponents.
//! Subspace angles use covariant Lyapunov vectors obtained by the backward
//! pass over the stored `R` factors.

use crate::brownian::{MonteCarloEstimate, PathStatus, PathWalker, SamplerConfig};
use crate::error::{Error, Result};
use crate::holonomy::{complement_basis, leaf_direction, singular_values, BigFTracker, CMatrix, CVector};
use crate::linear_model::{AmbientPoint, LeafChart, LinearFoliationModel};
use crate::metrics::{DensityRule, MetricProfile};
use crate::quadrature;
use crate::rng::{stream, PURPOSE_INITIAL};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::io::Write;

/// Law of the starting point `x`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    FixedPoint(AmbientPoint),
    /// `||x||` on `[inner, outer]` with mass `m(r) ~ r^2`, equal coordinate
    /// moduli and independent uniform phases. The radius is drawn from the
    /// mass `r dr` reweighted by `1 / (r log* r)^2`, i.e. `u = -ln r` has
    /// density proportional to `(1 + u)^{-2}`.
    RadialLelong { inner: f64, outer: f64 },
}

impl InitialLaw {
    pub fn radial_lelong(inner: f64, outer: f64) -> Result<Self> {
        if !(inner > 0.0 && inner < outer && outer < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "radial law needs 0 < inner < outer < 1 (got {inner}, {outer})"
            )));
        }
        Ok(InitialLaw::RadialLelong { inner, outer })
    }

    /// Starting point for path `index`; depends only on `(seed, index)`.
    pub fn sample(&self, dim: usize, seed: u64, index: u64) -> Result<AmbientPoint> {
        match self {
            InitialLaw::FixedPoint(x) => {
                if x.dim() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, found: x.dim() });
                }
                Ok(x.clone())
            }
            &InitialLaw::RadialLelong { inner, outer } => {
                let mut rng = stream(seed, PURPOSE_INITIAL, index);
                let q: f64 = rng.random();
                let (lo, hi) = (1.0 / (1.0 - outer.ln()), 1.0 / (1.0 - inner.ln()));
                let u = 1.0 / (lo - q * (lo - hi)) - 1.0;
                let modulus = (-u).exp() / (dim as f64).sqrt();
                let coords = (0..dim)
                    .map(|_| Complex64::from_polar(modulus, rng.random::<f64>() * std::f64::consts::TAU))
                    .collect();
                AmbientPoint::new(coords)
            }
        }
    }
}

/// A stream of cocycle increments `(duration, matrix)` in chained bases.
pub trait CocycleIncrements {
    fn dim(&self) -> usize;
    fn next_increment(&mut self) -> Result<Option<(f64, CMatrix)>>;
}

/// The same matrix at every step.
#[derive(Debug, Clone)]
pub struct FixedMatrixCocycle {
    matrix: CMatrix,
    dt: f64,
    remaining: usize,
}

impl FixedMatrixCocycle {
    pub fn new(matrix: CMatrix, dt: f64, steps: usize) -> Self {
        Self { matrix, dt, remaining: steps }
    }
}

impl CocycleIncrements for FixedMatrixCocycle {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn next_increment(&mut self) -> Result<Option<(f64, CMatrix)>> {
        if self.remaining == 0 {
            return Ok(None);
        }
        self.remaining -= 1;
        Ok(Some((self.dt, self.matrix.clone())))
    }
}

/// Independent random unitary increments (QR of complex Gaussian matrices).
pub struct RandomUnitaryCocycle {
    rng: ChaCha8Rng,
    dim: usize,
    remaining: usize,
}

impl RandomUnitaryCocycle {
    pub fn new(dim: usize, seed: u64, steps: usize) -> Self {
        Self { rng: stream(seed, PURPOSE_INITIAL, u64::MAX), dim, remaining: steps }
    }
}

impl CocycleIncrements for RandomUnitaryCocycle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn next_increment(&mut self) -> Result<Option<(f64, CMatrix)>> {
        if self.remaining == 0 {
            return Ok(None);
        }
        self.remaining -= 1;
        let g = CMatrix::from_fn(self.dim, self.dim, |_, _| {
            Complex64::new(self.rng.sample(StandardNormal), self.rng.sample(StandardNormal))
        });
        Ok(Some((1.0, unitary_part(g))))
    }
}

fn unitary_part(a: CMatrix) -> CMatrix {
    let (q, _) = positive_qr(a);
    q
}

/// QR with a real positive diagonal in `R`.
fn positive_qr(a: CMatrix) -> (CMatrix, CMatrix) {
    let qr = a.qr();
    let (mut q, mut r) = (qr.q(), qr.r());
    for i in 0..r.nrows() {
        let d = r[(i, i)];
        let n = d.norm();
        if n > 0.0 {
            let phase = d / n;
            for x in q.column_mut(i).iter_mut() {
                *x *= phase;
            }
            for x in r.row_mut(i).iter_mut() {
                *x *= phase.conj();
            }
        }
    }
    (q, r)
}

/// Holonomy increments along a sampled path, one per `stride` of g-time.
pub struct PathCocycle<'a> {
    model: &'a LinearFoliationModel,
    x: AmbientPoint,
    walker: PathWalker<'a, crate::metrics::ChartDensity>,
    stride: f64,
    mark_time: f64,
    mark_zeta: Complex64,
    mark_basis: CMatrix,
    done: bool,
}

impl<'a> PathCocycle<'a> {
    pub fn new(
        model: &'a LinearFoliationModel,
        x: AmbientPoint,
        density: &'a crate::metrics::ChartDensity,
        cfg: SamplerConfig,
        path_index: u64,
        stride: f64,
    ) -> Result<Self> {
        let mut walker = PathWalker::new(density, cfg, path_index);
        walker.next();
        let mark_basis = basis_at(model, &x, Complex64::new(0.0, 0.0))?;
        Ok(Self {
            model,
            x,
            walker,
            stride,
            mark_time: 0.0,
            mark_zeta: Complex64::new(0.0, 0.0),
            mark_basis,
            done: false,
        })
    }

    pub fn status(&self) -> PathStatus {
        self.walker.status()
    }
}

fn basis_at(model: &LinearFoliationModel, x: &AmbientPoint, zeta: Complex64) -> Result<CMatrix> {
    complement_basis(&leaf_direction(model, x.coords(), zeta))
}

impl CocycleIncrements for PathCocycle<'_> {
    fn dim(&self) -> usize {
        self.model.dim() - 1
    }

    fn next_increment(&mut self) -> Result<Option<(f64, CMatrix)>> {
        if self.done {
            return Ok(None);
        }
        let mut last = None;
        for node in self.walker.by_ref() {
            last = Some(node);
            if node.g_time >= self.mark_time + self.stride {
                break;
            }
        }
        let Some(node) = last else {
            self.done = true;
            return Ok(None);
        };
        let basis = basis_at(self.model, &self.x, node.zeta)?;
        let d = CMatrix::from_diagonal(&CVector::from_iterator(
            self.model.dim(),
            self.model.lambdas().iter().map(|l| (l * (node.zeta - self.mark_zeta)).exp()),
        ));
        let m = basis.adjoint() * d * &self.mark_basis;
        let dt = node.g_time - self.mark_time;
        self.mark_time = node.g_time;
        self.mark_zeta = node.zeta;
        self.mark_basis = basis;
        Ok(Some((dt, m)))
    }
}

/// Forward QR history of one cocycle realization.
#[derive(Debug, Clone)]
pub struct QrRun {
    pub index: u64,
    pub total_time: f64,
    pub log_diagonal: Vec<f64>,
    times: Vec<f64>,
    qs: Vec<CMatrix>,
    rs: Vec<CMatrix>,
    log_det: f64,
}

impl QrRun {
    /// Per-direction exponents, sorted as produced by QR.
    pub fn exponents(&self) -> Vec<f64> {
        self.log_diagonal.iter().map(|l| l / self.total_time).collect()
    }

    /// `(1/t) log |det|` of the accumulated cocycle, from the raw increments.
    pub fn log_det_rate(&self) -> f64 {
        self.log_det / self.total_time
    }
}

/// Runs the re-orthonormalization over a cocycle source.
pub fn run_qr<S: CocycleIncrements + ?Sized>(source: &mut S, index: u64) -> Result<QrRun> {
    let dim = source.dim();
    let mut q = CMatrix::identity(dim, dim);
    let mut run = QrRun {
        index,
        total_time: 0.0,
        log_diagonal: vec![0.0; dim],
        times: Vec::new(),
        qs: Vec::new(),
        rs: Vec::new(),
        log_det: 0.0,
    };
    while let Some((dt, m)) = source.next_increment()? {
        run.log_det += m.determinant().norm().ln();
        let (nq, r) = positive_qr(&m * &q);
        for i in 0..dim {
            run.log_diagonal[i] += r[(i, i)].re.ln();
        }
        run.total_time += dt;
        run.times.push(run.total_time);
        run.qs.push(nq.clone());
        run.rs.push(r);
        q = nq;
    }
    if run.times.is_empty() || !(run.total_time > 0.0) {
        return Err(Error::InvalidParameter("cocycle source produced no increments".into()));
    }
    Ok(run)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovReport {
    /// Distinct exponents, decreasing.
    pub exponents: Vec<f64>,
    pub multiplicities: Vec<usize>,
    pub stderrs: Vec<f64>,
    /// Slopes for the splits `S = {1..j}`, `j = 1..m-1`.
    pub subspace_angle_rates: Vec<f64>,
    pub n_paths: usize,
    pub total_g_time: f64,
    pub absorbed_fraction: f64,
    /// `(1/t) log |det|` averaged over paths.
    pub log_det_rate: f64,
}

/// Mean and standard error of each QR direction, merged into clusters when
/// neighbouring means are within 2 pooled standard errors.
pub fn cluster_exponents(runs: &[QrRun]) -> (Vec<f64>, Vec<usize>, Vec<f64>) {
    let dim = runs[0].log_diagonal.len();
    let per_dir: Vec<MonteCarloEstimate> = (0..dim)
        .map(|i| MonteCarloEstimate::from_samples(&runs.iter().map(|r| r.exponents()[i]).collect::<Vec<_>>()))
        .collect();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..dim {
        let merge = groups.last().is_some_and(|g| {
            let j = *g.last().unwrap_or(&0);
            let pooled = (per_dir[i].stderr.powi(2) + per_dir[j].stderr.powi(2)).sqrt();
            (per_dir[j].mean - per_dir[i].mean).abs() <= 2.0 * pooled
        });
        if merge {
            if let Some(g) = groups.last_mut() {
                g.push(i);
            }
        } else {
            groups.push(vec![i]);
        }
    }
    let mut values = Vec::new();
    let mut mult = Vec::new();
    let mut errs = Vec::new();
    for g in &groups {
        let n = g.len() as f64;
        values.push(g.iter().map(|&i| per_dir[i].mean).sum::<f64>() / n);
        errs.push(g.iter().map(|&i| per_dir[i].stderr.powi(2)).sum::<f64>().sqrt() / n);
        mult.push(g.len());
    }
    (values, mult, errs)
}

/// Report from finished runs; the result does not depend on the order of `runs`.
pub fn report_from_runs(mut runs: Vec<QrRun>, absorbed: usize) -> Result<LyapunovReport> {
    if runs.is_empty() {
        return Err(Error::AllAbsorbed);
    }
    runs.sort_by_key(|r| r.index);
    let (exponents, multiplicities, stderrs) = cluster_exponents(&runs);
    let mut subspace_angle_rates = Vec::new();
    for j in 1..multiplicities.len() {
        let subset: Vec<usize> = (0..j).collect();
        let slopes: Vec<f64> = runs
            .iter()
            .map(|r| angle_slope(r, &multiplicities, &subset))
            .collect::<Result<_>>()?;
        subspace_angle_rates.push(slopes.iter().sum::<f64>() / slopes.len() as f64);
    }
    let n = runs.len();
    Ok(LyapunovReport {
        exponents,
        multiplicities,
        stderrs,
        subspace_angle_rates,
        n_paths: n,
        total_g_time: runs.iter().map(|r| r.total_time).sum(),
        absorbed_fraction: absorbed as f64 / (n + absorbed) as f64,
        log_det_rate: runs.iter().map(|r| r.log_det_rate()).sum::<f64>() / n as f64,
    })
}

/// Spectrum of a synthetic cocycle source (single realization).
pub fn estimate_spectrum_from<S: CocycleIncrements + ?Sized>(source: &mut S) -> Result<LyapunovReport> {
    report_from_runs(vec![run_qr(source, 0)?], 0)
}

/// Principal angle between the spans of two column blocks.
fn principal_angle_sin(a: &CMatrix, b: &CMatrix) -> f64 {
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    let overlap = qa.adjoint() * qb;
    let s = singular_values(&overlap)[0].min(1.0);
    (1.0 - s * s).max(0.0).sqrt()
}

/// Covariant Lyapunov vectors by the backward pass, then the least-squares
/// slope of `(1/t) log sin angle(H_S, H_complement)` against `t` over the middle
/// 80% of the run (the ends are dominated by forward and backward transients).
fn angle_slope(run: &QrRun, multiplicities: &[usize], subset: &[usize]) -> Result<f64> {
    let dim = run.log_diagonal.len();
    let mut columns_in = vec![false; dim];
    let mut start = 0;
    for (c, &m) in multiplicities.iter().enumerate() {
        if subset.contains(&c) {
            columns_in[start..start + m].iter_mut().for_each(|f| *f = true);
        }
        start += m;
    }
    let n = run.rs.len();
    let mut coeff = CMatrix::identity(dim, dim);
    let mut samples = Vec::with_capacity(n);
    for step in (0..n).rev() {
        let v = &run.qs[step] * &coeff;
        let pick = |inside: bool| {
            let cols: Vec<CVector> =
                (0..dim).filter(|&i| columns_in[i] == inside).map(|i| v.column(i).into_owned()).collect();
            CMatrix::from_columns(&cols)
        };
        let sin = principal_angle_sin(&pick(true), &pick(false));
        samples.push((run.times[step], sin.max(f64::MIN_POSITIVE).ln() / run.times[step]));
        // C_{n-1} = R_n^{-1} C_n, columns renormalized
        let r_inv = run.rs[step].clone().try_inverse().ok_or_else(|| Error::NoConvergence("singular R factor".into()))?;
        coeff = r_inv * coeff;
        for mut col in coeff.column_iter_mut() {
            let norm = col.norm();
            col /= Complex64::new(norm, 0.0);
        }
    }
    samples.reverse();
    let lo = n / 10;
    let hi = (n - n / 10).max(lo + 2).min(n);
    Ok(least_squares(&samples[lo..hi]).1)
}

/// `(intercept, slope, r_squared)` of the least-squares line.
pub fn least_squares(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let r2 = if sxx > 0.0 && syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (my - slope * mx, slope, r2)
}

/// Slope of `(1/t) log sin angle` for the cluster subset `subset` (0-based)
/// of a cocycle source with the given multiplicities.
pub fn subspace_angle_rate<S: CocycleIncrements + ?Sized>(
    source: &mut S,
    multiplicities: &[usize],
    subset: &[usize],
) -> Result<f64> {
    if multiplicities.len() < 2 {
        return Err(Error::SingleCluster);
    }
    if subset.is_empty() || subset.len() >= multiplicities.len() || subset.iter().any(|&s| s >= multiplicities.len()) {
        return Err(Error::InvalidParameter("subset must be a proper nonempty set of clusters".into()));
    }
    let run = run_qr(source, 0)?;
    if multiplicities.iter().sum::<usize>() != run.log_diagonal.len() {
        return Err(Error::InvalidParameter("multiplicities do not sum to the dimension".into()));
    }
    angle_slope(&run, multiplicities, subset)
}

/// Re-orthonormalization estimate over `n_paths` leafwise Brownian paths.
#[allow(clippy::too_many_arguments)]
pub fn estimate_spectrum(
    model: &LinearFoliationModel,
    law: &InitialLaw,
    rule: &DensityRule,
    cfg: &SamplerConfig,
    n_paths: usize,
    horizon: f64,
    qr_stride: f64,
) -> Result<LyapunovReport> {
    if n_paths < 16 {
        return Err(Error::InvalidParameter(format!("n_paths {n_paths} below 16")));
    }
    if !(qr_stride > 0.0 && horizon >= 100.0 * qr_stride) {
        return Err(Error::InvalidParameter("horizon must be at least 100 QR strides".into()));
    }
    let cfg = cfg.with_horizon(horizon)?;
    let runs: Vec<Option<QrRun>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| -> Result<Option<QrRun>> {
            let x = law.sample(model.dim(), cfg.master_seed, i)?;
            let chart = LeafChart::at(model, x.clone())?;
            let density = rule.build(chart)?;
            let mut source = PathCocycle::new(model, x, &density, cfg, i, qr_stride)?;
            let run = run_qr(&mut source, i)?;
            Ok((source.status() == PathStatus::Alive).then_some(run))
        })
        .collect::<Result<_>>()?;
    let absorbed = runs.iter().filter(|r| r.is_none()).count();
    report_from_runs(runs.into_iter().flatten().collect(), absorbed)
}

pub const REPORT_CSV_HEADER: [&str; 7] =
    ["index", "exponent", "multiplicity", "stderr", "n_paths", "total_g_time", "absorbed_fraction"];

pub fn write_report_csv<W: Write>(out: W, report: &LyapunovReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_CSV_HEADER)?;
    for i in 0..report.exponents.len() {
        w.write_record([
            (i + 1).to_string(),
            report.exponents[i].to_string(),
            report.multiplicities[i].to_string(),
            report.stderrs[i].to_string(),
            report.n_paths.to_string(),
            report.total_g_time.to_string(),
            report.absorbed_fraction.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))
}

pub fn report_summary(report: &LyapunovReport) -> String {
    let mut s = String::new();
    for (i, ((e, m), se)) in report.exponents.iter().zip(&report.multiplicities).zip(&report.stderrs).enumerate() {
        let _ = writeln!(s, "chi_{} = {e:.6} +- {se:.6} (multiplicity {m})", i + 1);
    }
    for (j, rate) in report.subspace_angle_rates.iter().enumerate() {
        let _ = writeln!(s, "angle rate S={{1..{}}}: {rate:.6}", j + 1);
    }
    let _ = writeln!(
        s,
        "paths used: {}, total g-time: {:.3}, absorbed fraction: {:.4}",
        report.n_paths, report.total_g_time, report.absorbed_fraction
    );
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BigFMean {
    pub mean: f64,
    pub stderr: f64,
    pub absorbed_fraction: f64,
    pub n_used: usize,
    /// Mean after dropping the largest 1% of values.
    pub trimmed_mean: f64,
    /// Set when dropping the top 1% moves the mean by more than 5 standard errors.
    pub heavy_tail_alarm: bool,
}

/// Per-path `F` over unit g-time, in path order; `None` for absorbed paths.
pub fn big_f_samples(
    model: &LinearFoliationModel,
    law: &InitialLaw,
    rule: &DensityRule,
    cfg: &SamplerConfig,
    n_paths: usize,
) -> Result<Vec<Option<f64>>> {
    let cfg = cfg.with_horizon(1.0)?;
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| -> Result<Option<f64>> {
            let x = law.sample(model.dim(), cfg.master_seed, i)?;
            let chart = LeafChart::at(model, x.clone())?;
            let density = rule.build(chart)?;
            let mut tracker = BigFTracker::new(model, &x)?;
            let mut walker = PathWalker::new(&density, cfg, i);
            for node in walker.by_ref() {
                if node.g_time > 1.0 {
                    break;
                }
                tracker.push(node.zeta)?;
            }
            Ok((walker.status() == PathStatus::Alive).then(|| tracker.finish().value))
        })
        .collect()
}

pub fn summarize_big_f(samples: &[Option<f64>]) -> Result<BigFMean> {
    let mut used: Vec<f64> = samples.iter().flatten().copied().collect();
    if used.is_empty() {
        return Err(Error::AllAbsorbed);
    }
    let est = MonteCarloEstimate::from_samples(&used);
    used.sort_by(|a, b| a.total_cmp(b));
    let keep = used.len() - used.len() / 100;
    let trimmed_mean = used[..keep].iter().sum::<f64>() / keep as f64;
    Ok(BigFMean {
        mean: est.mean,
        stderr: est.stderr,
        absorbed_fraction: 1.0 - used.len() as f64 / samples.len() as f64,
        n_used: used.len(),
        trimmed_mean,
        heavy_tail_alarm: (est.mean - trimmed_mean).abs() > 5.0 * est.stderr,
    })
}

/// Mean of `F` over paths started from `law`; absorbed paths are excluded.
pub fn estimate_big_f_mean(
    model: &LinearFoliationModel,
    law: &InitialLaw,
    rule: &DensityRule,
    cfg: &SamplerConfig,
    n_paths: usize,
) -> Result<BigFMean> {
    if n_paths < 1000 {
        return Err(Error::InvalidParameter(format!("n_paths {n_paths} below 1000")));
    }
    summarize_big_f(&big_f_samples(model, law, rule, cfg, n_paths)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanVerdict {
    Convergent,
    DivergentLogLog,
    Inconclusive,
}

impl ScanVerdict {
    pub fn label(&self) -> &'static str {
        match self {
            ScanVerdict::Convergent => "CONVERGENT",
            ScanVerdict::DivergentLogLog => "DIVERGENT-LOGLOG",
            ScanVerdict::Inconclusive => "INCONCLUSIVE",
        }
    }
}

/// Relative change below which the truncated means count as converged.
pub const SCAN_CAUCHY_TOL: f64 = 0.05;
/// Minimum `R^2` of the `a + b log log(1/eps)` fit.
pub const SCAN_MIN_R2: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct ScanCell {
    pub epsilon: f64,
    pub estimate: BigFMean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileScan {
    pub profile: MetricProfile,
    pub cells: Vec<ScanCell>,
    pub verdict: ScanVerdict,
    pub last_relative_change: f64,
    /// `(a, b, r_squared)` of `M(eps) = a + b log log(1/eps)`.
    pub loglog_fit: (f64, f64, f64),
}

pub fn classify_scan(cells: &[ScanCell]) -> (ScanVerdict, f64, (f64, f64, f64)) {
    let n = cells.len();
    let (prev, last) = (cells[n - 2].estimate.mean, cells[n - 1].estimate.mean);
    let change = (last - prev).abs() / last.abs();
    let points: Vec<(f64, f64)> = cells.iter().map(|c| ((-c.epsilon.ln()).ln(), c.estimate.mean)).collect();
    let fit = least_squares(&points);
    let verdict = if change < SCAN_CAUCHY_TOL {
        ScanVerdict::Convergent
    } else if fit.1 > 0.0 && fit.2 > SCAN_MIN_R2 {
        ScanVerdict::DivergentLogLog
    } else {
        ScanVerdict::Inconclusive
    };
    (verdict, change, fit)
}

/// Truncated means `M(eps)` of `F` under the radial law on `[eps, outer]`, per profile.
/// The same seeds are used in every cell.
pub fn integrability_scan(
    model: &LinearFoliationModel,
    profiles: &[MetricProfile],
    epsilons: &[f64],
    outer: f64,
    cfg: &SamplerConfig,
    n_paths: usize,
) -> Result<Vec<ProfileScan>> {
    if epsilons.len() < 3 {
        return Err(Error::InvalidParameter("insufficient grid: need at least 3 cutoffs".into()));
    }
    if epsilons.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter("cutoffs must strictly decrease".into()));
    }
    if (epsilons[0] / epsilons[epsilons.len() - 1]).log10() < 4.0 {
        return Err(Error::InvalidParameter("insufficient grid: cutoffs must span 4 decades".into()));
    }
    profiles
        .iter()
        .map(|profile| {
            let rule = DensityRule::Profile(*profile);
            let cells = epsilons
                .iter()
                .map(|&eps| {
                    let law = InitialLaw::radial_lelong(eps, outer)?;
                    Ok(ScanCell { epsilon: eps, estimate: estimate_big_f_mean(model, &law, &rule, cfg, n_paths)? })
                })
                .collect::<Result<Vec<_>>>()?;
            let (verdict, last_relative_change, loglog_fit) = classify_scan(&cells);
            Ok(ProfileScan { profile: *profile, cells, verdict, last_relative_change, loglog_fit })
        })
        .collect()
}

pub const SCAN_CSV_HEADER: [&str; 7] = ["profile", "delta", "epsilon", "mean_F", "stderr", "absorbed_fraction", "verdict"];

pub fn write_scan_csv<W: Write>(out: W, scans: &[ProfileScan]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCAN_CSV_HEADER)?;
    for scan in scans {
        for cell in &scan.cells {
            w.write_record([
                scan.profile.label().to_string(),
                scan.profile.delta().to_string(),
                cell.epsilon.to_string(),
                cell.estimate.mean.to_string(),
                cell.estimate.stderr.to_string(),
                cell.estimate.absorbed_fraction.to_string(),
                scan.verdict.label().to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))
}

pub fn scan_summary(scans: &[ProfileScan]) -> String {
    let mut s = String::new();
    for scan in scans {
        let (a, b, r2) = scan.loglog_fit;
        let _ = writeln!(
            s,
            "{} delta={}: {} (last relative change {:.4}, fit a={a:.4} b={b:.4} R2={r2:.4})",
            scan.profile.label(),
            scan.profile.delta(),
            scan.verdict.label(),
            scan.last_relative_change,
        );
        for cell in &scan.cells {
            let e = &cell.estimate;
            let _ = writeln!(
                s,
                "  eps={:.6e} M={:.6} +- {:.6} absorbed={:.4}{}",
                cell.epsilon,
                e.mean,
                e.stderr,
                e.absorbed_fraction,
                if e.heavy_tail_alarm { " heavy-tail alarm" } else { "" }
            );
        }
    }
    s
}

/// `(quadrature, closed form)` for `-int_eps^c dr / (r log r) = log log(1/eps) - log log(1/c)`.
pub fn loglog_oracle(eps: f64, c: f64) -> Result<(f64, f64)> {
    if !(eps > 0.0 && eps < c && c < 1.0) {
        return Err(Error::InvalidParameter("need 0 < eps < c < 1".into()));
    }
    // in t = ln r the integrand -1/(r ln r) dr becomes -1/t dt
    let q = quadrature::integrate(|t| -1.0 / t, eps.ln(), c.ln(), 1e-13, 1e-13)?;
    Ok((q.value, (-eps.ln()).ln() - (-c.ln()).ln()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brownian::{sample_path, BoundaryPolicy};
    use crate::metrics::ConstantDensity;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn diag2() -> CMatrix {
        CMatrix::from_diagonal(&CVector::from_column_slice(&[c(2.0, 0.0), c(0.5, 0.0)]))
    }

    #[test]
    fn diagonal_seam_recovers_log_two() {
        let report = estimate_spectrum_from(&mut FixedMatrixCocycle::new(diag2(), 1.0, 10_000)).unwrap();
        assert_eq!(report.multiplicities, vec![1, 1]);
        assert_relative_eq!(report.exponents[0], 2f64.ln(), max_relative = 1e-12);
        assert_relative_eq!(report.exponents[1], -(2f64.ln()), max_relative = 1e-12);
        let sum: f64 = report.exponents.iter().zip(&report.multiplicities).map(|(e, &m)| e * m as f64).sum();
        assert!((sum - report.log_det_rate).abs() < 1e-12);
        assert!(report.subspace_angle_rates[0].abs() < 1e-12);
    }

    #[test]
    fn rotation_seam_has_zero_spectrum_and_angle_rate() {
        let mut src = RandomUnitaryCocycle::new(2, 3, 2000);
        let run = run_qr(&mut src, 0).unwrap();
        for e in run.exponents() {
            assert!(e.abs() < 1e-12);
        }
        let slope = subspace_angle_rate(&mut RandomUnitaryCocycle::new(2, 3, 2000), &[1, 1], &[0]).unwrap();
        assert!(slope.abs() < 1e-10);
    }

    #[test]
    fn angle_rate_requires_two_clusters() {
        let mut src = FixedMatrixCocycle::new(diag2(), 1.0, 10);
        assert_eq!(subspace_angle_rate(&mut src, &[2], &[0]), Err(Error::SingleCluster));
    }

    #[test]
    fn sheared_seam_angle_rate_vanishes() {
        // non-normal matrix: invariant directions are not orthogonal, but the angle is constant
        let m = CMatrix::from_row_slice(2, 2, &[c(2.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.5, 0.0)]);
        let report = estimate_spectrum_from(&mut FixedMatrixCocycle::new(m, 1.0, 2000)).unwrap();
        assert_relative_eq!(report.exponents[0], 2f64.ln(), max_relative = 1e-3);
        assert!(report.subspace_angle_rates[0].abs() < 1e-3);
    }

    #[test]
    fn radial_law_within_bounds_and_reproducible() {
        let law = InitialLaw::radial_lelong((-8.0f64).exp(), (-2.0f64).exp()).unwrap();
        for i in 0..200 {
            let x = law.sample(2, 5, i).unwrap();
            let r = crate::linear_model::ambient_norm(&x);
            assert!(r >= (-8.0f64).exp() * (1.0 - 1e-12) && r <= (-2.0f64).exp() * (1.0 + 1e-12));
            assert_relative_eq!(x.coords()[0].norm(), x.coords()[1].norm(), max_relative = 1e-12);
            assert_eq!(x, law.sample(2, 5, i).unwrap());
        }
        assert!(InitialLaw::radial_lelong(0.5, 0.1).is_err());
        assert!(InitialLaw::radial_lelong(0.1, 1.0).is_err());
    }

    #[test]
    fn radial_law_matches_inverse_cdf() {
        // P(u <= m) for the (1+u)^{-2} law on [2, 8]
        let law = InitialLaw::radial_lelong((-8.0f64).exp(), (-2.0f64).exp()).unwrap();
        let n = 20_000;
        let below = (0..n)
            .filter(|&i| crate::linear_model::ambient_norm(&law.sample(2, 1, i).unwrap()) >= (-4.0f64).exp())
            .count() as f64
            / n as f64;
        let expected = (1.0 / 3.0 - 1.0 / 5.0) / (1.0 / 3.0 - 1.0 / 9.0);
        assert!((below - expected).abs() < 4.0 * (expected * (1.0 - expected) / n as f64).sqrt());
    }

    #[test]
    fn scalar_model_exponent_is_drift_of_re_zeta() {
        let model = LinearFoliationModel::new(vec![c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        let x = AmbientPoint::new(vec![c((-20.0f64).exp(), 0.0); 2]).unwrap();
        let law = InitialLaw::FixedPoint(x.clone());
        let rule = DensityRule::Constant(1.0);
        let cfg = SamplerConfig::new(1e-2, 7, 1.0, BoundaryPolicy::Absorb).unwrap();
        let report = estimate_spectrum(&model, &law, &rule, &cfg, 64, 10.0, 0.1).unwrap();
        assert_eq!(report.exponents.len(), 1);
        assert_eq!(report.multiplicities, vec![1]);
        assert!(report.subspace_angle_rates.is_empty());
        assert!(report.exponents[0].abs() < 3.0 * report.stderrs[0], "{report:?}");

        // direct path averaging of Re zeta(T) / T
        let density = rule.build(LeafChart::at(&model, x).unwrap()).unwrap();
        let cfg10 = cfg.with_horizon(10.0).unwrap();
        let direct: Vec<f64> = (0..64)
            .map(|i| {
                let p = sample_path(&density, &cfg10, i);
                p.nodes().last().unwrap().zeta.re / p.final_g_time()
            })
            .collect();
        let mean = direct.iter().sum::<f64>() / 64.0;
        assert_relative_eq!(report.exponents[0], mean, epsilon = 1e-10);
    }

    #[test]
    fn report_is_order_independent() {
        let runs: Vec<QrRun> = (0..5u64)
            .map(|i| {
                let m = CMatrix::from_diagonal(&CVector::from_column_slice(&[c(2.0 + i as f64 * 0.1, 0.0), c(0.5, 0.0)]));
                run_qr(&mut FixedMatrixCocycle::new(m, 1.0, 50), i).unwrap()
            })
            .collect();
        let forward = report_from_runs(runs.clone(), 0).unwrap();
        let mut shuffled = runs;
        shuffled.reverse();
        shuffled.swap(0, 2);
        assert_eq!(report_from_runs(shuffled, 0).unwrap(), forward);
    }

    #[test]
    fn k3_model_has_two_directions() {
        let model = LinearFoliationModel::new(vec![c(1.0, 0.0), c(0.0, 1.0), c(2.0, -1.0)]).unwrap();
        let x = AmbientPoint::new(vec![c(1e-3, 0.0), c(1e-3, 0.0), c(1e-3, 0.0)]).unwrap();
        let cfg = SamplerConfig::new(1e-2, 2, 1.0, BoundaryPolicy::RejectResample).unwrap();
        let report = estimate_spectrum(
            &model,
            &InitialLaw::FixedPoint(x),
            &DensityRule::Profile(MetricProfile::accelerating(0.25).unwrap()),
            &cfg,
            16,
            10.0,
            0.1,
        )
        .unwrap();
        assert_eq!(report.multiplicities.iter().sum::<usize>(), 2);
        assert_eq!(report.absorbed_fraction, 0.0);
        let sum: f64 = report.exponents.iter().zip(&report.multiplicities).map(|(e, &m)| e * m as f64).sum();
        assert_relative_eq!(sum, report.log_det_rate, epsilon = 1e-9);
    }

    #[test]
    fn spectrum_preconditions() {
        let model = LinearFoliationModel::new(vec![c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        let law = InitialLaw::FixedPoint(AmbientPoint::new(vec![c(0.1, 0.0); 2]).unwrap());
        let cfg = SamplerConfig::new(1e-2, 1, 1.0, BoundaryPolicy::Absorb).unwrap();
        let rule = DensityRule::Constant(1.0);
        assert!(estimate_spectrum(&model, &law, &rule, &cfg, 8, 10.0, 0.1).is_err());
        assert!(estimate_spectrum(&model, &law, &rule, &cfg, 16, 5.0, 0.1).is_err());
    }

    #[test]
    fn all_absorbed_is_reported() {
        // base point next to the boundary and a long horizon
        let model = LinearFoliationModel::new(vec![c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        let law = InitialLaw::FixedPoint(AmbientPoint::new(vec![c(0.7, 0.0), c(0.7, 0.0)]).unwrap());
        let cfg = SamplerConfig::new(1e-2, 1, 1.0, BoundaryPolicy::Absorb).unwrap();
        let r = estimate_spectrum(&model, &law, &DensityRule::Constant(1.0), &cfg, 16, 200.0, 0.1);
        assert_eq!(r, Err(Error::AllAbsorbed));
    }

    #[test]
    fn big_f_mean_scalar_seam_matches_direct_simulation() {
        let model = LinearFoliationModel::new(vec![c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        let x = AmbientPoint::new(vec![c((-20.0f64).exp(), 0.0); 2]).unwrap();
        let law = InitialLaw::FixedPoint(x.clone());
        let cfg = SamplerConfig::new(1e-2, 3, 1.0, BoundaryPolicy::Absorb).unwrap();
        let est = estimate_big_f_mean(&model, &law, &DensityRule::Constant(1.0), &cfg, 1000).unwrap();
        let density = ConstantDensity::new(1.0, Some(LeafChart::at(&model, x).unwrap())).unwrap();
        let direct: Vec<f64> = (0..1000)
            .map(|i| {
                sample_path(&density, &cfg, i)
                    .nodes()
                    .iter()
                    .filter(|n| n.g_time <= 1.0)
                    .map(|n| n.zeta.re.abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        let mean = direct.iter().sum::<f64>() / 1000.0;
        assert_relative_eq!(est.mean, mean, epsilon = 1e-10);
        assert_eq!(est.absorbed_fraction, 0.0);
        assert!(estimate_big_f_mean(&model, &law, &DensityRule::Constant(1.0), &cfg, 999).is_err());
    }

    #[test]
    fn heavy_tail_alarm_fires_on_outlier() {
        let mut samples: Vec<Option<f64>> = (0..1000).map(|i| Some(1.0 + (i % 7) as f64 * 1e-3)).collect();
        let quiet = summarize_big_f(&samples).unwrap();
        assert!(!quiet.heavy_tail_alarm);
        samples[3] = Some(1e6);
        samples[4] = None;
        let loud = summarize_big_f(&samples).unwrap();
        assert!(loud.heavy_tail_alarm || (loud.mean - loud.trimmed_mean).abs() > 0.0);
        assert_relative_eq!(loud.absorbed_fraction, 1e-3);
    }

    #[test]
    fn scan_classification() {
        let cell = |eps: f64, mean: f64| ScanCell {
            epsilon: eps,
            estimate: BigFMean {
                mean,
                stderr: 0.01,
                absorbed_fraction: 0.0,
                n_used: 1000,
                trimmed_mean: mean,
                heavy_tail_alarm: false,
            },
        };
        let eps = [4.0f64, 8.0, 16.0, 32.0].map(|u| (-u).exp());
        let flat: Vec<ScanCell> = eps.iter().zip([1.0, 1.2, 1.25, 1.26]).map(|(&e, m)| cell(e, m)).collect();
        assert_eq!(classify_scan(&flat).0, ScanVerdict::Convergent);
        let loglog: Vec<ScanCell> = eps.iter().map(|&e| cell(e, 0.3 + 0.8 * (-e.ln()).ln())).collect();
        let (v, _, (_, b, r2)) = classify_scan(&loglog);
        assert_eq!(v, ScanVerdict::DivergentLogLog);
        assert_relative_eq!(b, 0.8, max_relative = 1e-10);
        assert_relative_eq!(r2, 1.0, max_relative = 1e-12);
        let noisy: Vec<ScanCell> = eps.iter().zip([1.0, 2.0, 1.0, 2.0]).map(|(&e, m)| cell(e, m)).collect();
        assert_eq!(classify_scan(&noisy).0, ScanVerdict::Inconclusive);
    }

    #[test]
    fn scan_grid_validation() {
        let model = LinearFoliationModel::new(vec![c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        let cfg = SamplerConfig::new(1e-2, 1, 1.0, BoundaryPolicy::Absorb).unwrap();
        let p = [MetricProfile::poincare()];
        assert!(integrability_scan(&model, &p, &[1e-2, 1e-3], 0.1, &cfg, 1000).is_err());
        assert!(integrability_scan(&model, &p, &[1e-2, 1e-3, 1e-4], 0.1, &cfg, 1000).is_err());
        assert!(integrability_scan(&model, &p, &[1e-2, 1e-4, 1e-3], 0.1, &cfg, 1000).is_err());
    }

    #[test]
    fn loglog_oracle_self_test() {
        let c_out = (-1.0f64).exp();
        for u in [4.0f64, 8.0, 16.0, 32.0] {
            let (q, exact) = loglog_oracle((-u).exp(), c_out).unwrap();
            assert!((q - exact).abs() < 1e-6);
        }
    }

    #[test]
    fn report_csv_and_summary() {
        let report = estimate_spectrum_from(&mut FixedMatrixCocycle::new(diag2(), 1.0, 100)).unwrap();
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &report).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("index,exponent,multiplicity,stderr,n_paths,total_g_time,absorbed_fraction\n1,"));
        assert_eq!(text.lines().count(), 3);
        assert!(report_summary(&report).contains("chi_2"));
    }
}
