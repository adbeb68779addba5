//! Leafwise Brownian motion on chart polygons.
//!
//! For a conformal metric `lambda_g^2 |dzeta|^2` the g-Laplacian is
//! `lambda_g^{-2} Delta`, so g-Brownian motion is planar Brownian motion run
//! on the additive clock `dT_g = lambda_g(zeta_s)^2 ds`. Paths are produced by
//! Euler increments `sqrt(step) (N1 + i N2)` in Euclidean time; the g-clock is
//! accumulated with the left-point density. This is exact in law for the
//! spatial path and only discretizes the clock.

use crate::error::{Error, Result};
use crate::linear_model::{AmbientPoint, LeafChart};
use crate::metrics::{ConformalDensity, DensityRule};
use crate::quadrature::{fixed_unit, gauss_legendre, gauss_legendre_128};
use crate::rng::path_stream;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::io::{Read, Write};
use std::sync::OnceLock;

/// Largest Euclidean time step accepted by [`SamplerConfig::new`].
pub const MAX_STEP: f64 = 1e-2;
/// Redraws of an increment that leaves the domain under `RejectResample`.
pub const MAX_REDRAWS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryPolicy {
    Absorb,
    RejectResample,
}

impl BoundaryPolicy {
    pub fn label(&self) -> &'static str {
        match self {
            BoundaryPolicy::Absorb => "absorb",
            BoundaryPolicy::RejectResample => "reject_resample",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "absorb" => Ok(BoundaryPolicy::Absorb),
            "reject_resample" => Ok(BoundaryPolicy::RejectResample),
            other => Err(Error::Parse(format!("unknown boundary policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub step: f64,
    pub master_seed: u64,
    pub max_g_time: f64,
    pub boundary_policy: BoundaryPolicy,
}

impl SamplerConfig {
    pub fn new(step: f64, master_seed: u64, max_g_time: f64, boundary_policy: BoundaryPolicy) -> Result<Self> {
        if !(step > 0.0 && step <= MAX_STEP) {
            return Err(Error::InvalidParameter(format!("step {step} must lie in (0, {MAX_STEP}]")));
        }
        if !(max_g_time > 0.0 && max_g_time.is_finite()) {
            return Err(Error::InvalidParameter(format!("max_g_time {max_g_time} must be positive")));
        }
        Ok(Self { step, master_seed, max_g_time, boundary_policy })
    }

    /// Same configuration with another horizon.
    pub fn with_horizon(&self, max_g_time: f64) -> Result<Self> {
        Self::new(self.step, self.master_seed, max_g_time, self.boundary_policy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PathStatus {
    Alive,
    Exited,
}

impl PathStatus {
    pub fn label(&self) -> &'static str {
        match self {
            PathStatus::Alive => "alive",
            PathStatus::Exited => "exited",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathNode {
    pub euclid_time: f64,
    pub g_time: f64,
    pub zeta: Complex64,
}

impl PathNode {
    const START: PathNode = PathNode { euclid_time: 0.0, g_time: 0.0, zeta: Complex64::new(0.0, 0.0) };
}

/// A sampled path in chart coordinates, started at `zeta = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafPath {
    path_index: u64,
    nodes: Vec<PathNode>,
    status: PathStatus,
}

impl LeafPath {
    /// Path from explicit nodes; checks the start point and the clock.
    pub fn from_nodes(path_index: u64, nodes: Vec<PathNode>, status: PathStatus) -> Result<Self> {
        let first = nodes.first().ok_or_else(|| Error::InvalidParameter("path has no nodes".into()))?;
        if first.g_time != 0.0 || first.euclid_time != 0.0 || first.zeta != Complex64::new(0.0, 0.0) {
            return Err(Error::InvalidParameter("path must start at zeta = 0 with zero clocks".into()));
        }
        if nodes.windows(2).any(|w| !(w[1].g_time > w[0].g_time) || !(w[1].euclid_time >= w[0].euclid_time)) {
            return Err(Error::InvalidParameter("path clocks must increase".into()));
        }
        if nodes.iter().any(|n| !n.zeta.is_finite() || !n.g_time.is_finite() || !n.euclid_time.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { path_index, nodes, status })
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    pub fn nodes(&self) -> &[PathNode] {
        &self.nodes
    }

    pub fn status(&self) -> PathStatus {
        self.status
    }

    pub fn final_g_time(&self) -> f64 {
        self.nodes.last().map_or(0.0, |n| n.g_time)
    }

    /// Index of the last node with `g_time <= t`.
    pub fn node_index_at(&self, t: f64) -> Result<usize> {
        let end = self.final_g_time();
        if !(t >= 0.0 && t <= end) {
            return Err(Error::TimeOutOfRange { t, end });
        }
        Ok(self.nodes.partition_point(|n| n.g_time <= t) - 1)
    }

    pub fn node_at(&self, t: f64) -> Result<&PathNode> {
        Ok(&self.nodes[self.node_index_at(t)?])
    }
}

/// Lazily generated path; yields the start node first.
pub struct PathWalker<'a, D: ConformalDensity + ?Sized> {
    density: &'a D,
    cfg: SamplerConfig,
    rng: ChaCha8Rng,
    current: PathNode,
    lambda_sq: f64,
    status: PathStatus,
    started: bool,
    finished: bool,
}

impl<'a, D: ConformalDensity + ?Sized> PathWalker<'a, D> {
    pub fn new(density: &'a D, cfg: SamplerConfig, path_index: u64) -> Self {
        let start = PathNode::START;
        let inside = density.contains(start.zeta);
        Self {
            density,
            cfg,
            rng: path_stream(cfg.master_seed, path_index),
            current: start,
            lambda_sq: if inside { density.value(start.zeta).powi(2) } else { 0.0 },
            status: if inside { PathStatus::Alive } else { PathStatus::Exited },
            started: false,
            finished: !inside,
        }
    }

    /// Status so far; final once the iterator is exhausted.
    pub fn status(&self) -> PathStatus {
        self.status
    }

    fn propose(&mut self) -> Complex64 {
        let a: f64 = self.rng.sample(StandardNormal);
        let b: f64 = self.rng.sample(StandardNormal);
        self.current.zeta + self.cfg.step.sqrt() * Complex64::new(a, b)
    }
}

impl<D: ConformalDensity + ?Sized> Iterator for PathWalker<'_, D> {
    type Item = PathNode;

    fn next(&mut self) -> Option<PathNode> {
        if !self.started {
            self.started = true;
            return Some(self.current);
        }
        if self.finished || self.current.g_time >= self.cfg.max_g_time {
            self.finished = true;
            return None;
        }
        let mut zeta = self.propose();
        let mut redraws = 0;
        while !self.density.contains(zeta) {
            if self.cfg.boundary_policy == BoundaryPolicy::Absorb || redraws == MAX_REDRAWS {
                self.status = PathStatus::Exited;
                self.finished = true;
                return None;
            }
            redraws += 1;
            zeta = self.propose();
        }
        self.current = PathNode {
            euclid_time: self.current.euclid_time + self.cfg.step,
            g_time: self.current.g_time + self.lambda_sq * self.cfg.step,
            zeta,
        };
        self.lambda_sq = self.density.value(zeta).powi(2);
        Some(self.current)
    }
}

pub fn sample_path<D: ConformalDensity + ?Sized>(density: &D, cfg: &SamplerConfig, path_index: u64) -> LeafPath {
    let mut walker = PathWalker::new(density, *cfg, path_index);
    let nodes: Vec<PathNode> = walker.by_ref().collect();
    LeafPath { path_index, nodes, status: walker.status() }
}

/// Paths `first_index .. first_index + n_paths`, in index order.
pub fn sample_paths<D: ConformalDensity + ?Sized>(
    density: &D,
    cfg: &SamplerConfig,
    first_index: u64,
    n_paths: usize,
) -> Vec<LeafPath> {
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| sample_path(density, cfg, first_index + i))
        .collect()
}

/// g-length of the straight segment `a -> b`, or infinity if a quadrature
/// node leaves the domain.
pub fn segment_g_length<D: ConformalDensity + ?Sized>(density: &D, a: Complex64, b: Complex64) -> f64 {
    segment_with_rule(density, a, b, gauss_legendre_128())
}

fn segment_with_rule<D: ConformalDensity + ?Sized>(
    density: &D,
    a: Complex64,
    b: Complex64,
    rule: &(Vec<f64>, Vec<f64>),
) -> f64 {
    let len = (b - a).norm();
    if len == 0.0 {
        return 0.0;
    }
    let mut outside = false;
    let integral = fixed_unit(rule, |s| {
        let z = a + (b - a) * s;
        if density.contains(z) {
            density.value(z)
        } else {
            outside = true;
            0.0
        }
    });
    if outside {
        f64::INFINITY
    } else {
        len * integral
    }
}

fn screening_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(8))
}

/// Running `sup_t` of the distance proxy `min(segment, polyline)` from the start.
pub struct SupDistance<'a, D: ConformalDensity + ?Sized> {
    density: &'a D,
    previous: Complex64,
    polyline: f64,
    sup: f64,
}

impl<'a, D: ConformalDensity + ?Sized> SupDistance<'a, D> {
    pub fn new(density: &'a D) -> Self {
        Self { density, previous: Complex64::new(0.0, 0.0), polyline: 0.0, sup: 0.0 }
    }

    pub fn push(&mut self, zeta: Complex64) {
        let mid = 0.5 * (self.previous + zeta);
        self.polyline += self.density.value(mid) * (zeta - self.previous).norm();
        self.previous = zeta;
        if self.polyline <= self.sup {
            return;
        }
        // cheap screen first; the 128-point rule only when the sup may move
        let origin = Complex64::new(0.0, 0.0);
        let rough = segment_with_rule(self.density, origin, zeta, screening_rule());
        if rough.is_finite() && rough < self.sup * (1.0 - 1e-3) {
            return;
        }
        let exact = segment_g_length(self.density, origin, zeta);
        self.sup = self.sup.max(exact.min(self.polyline));
    }

    pub fn polyline(&self) -> f64 {
        self.polyline
    }

    pub fn sup(&self) -> f64 {
        self.sup
    }
}

/// Upper-bound proxy for `dist_g(omega(0), omega(t))`: the smaller of the
/// g-length of the straight segment to `zeta(t)` (128-point Gauss-Legendre)
/// and the midpoint-rule g-length of the sampled polyline up to `t`.
pub fn g_distance_along<D: ConformalDensity + ?Sized>(path: &LeafPath, density: &D, t: f64) -> Result<f64> {
    let end = path.node_index_at(t)?;
    let nodes = &path.nodes[..=end];
    let polyline: f64 = nodes
        .windows(2)
        .map(|w| density.value(0.5 * (w[0].zeta + w[1].zeta)) * (w[1].zeta - w[0].zeta).norm())
        .sum();
    let segment = segment_g_length(density, Complex64::new(0.0, 0.0), nodes[end].zeta);
    Ok(segment.min(polyline))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailPoint {
    pub s: f64,
    pub frequency: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailReport {
    pub points: Vec<TailPoint>,
    /// Paths that left their chart before unit g-time, over all paths.
    pub absorbed_fraction: f64,
    /// Surviving paths per chart.
    pub used_per_chart: Vec<usize>,
}

/// Exceedance frequencies of `sup_{t <= 1} dist_g(omega(0), omega(t))`.
///
/// Each chart gets `n_paths` paths over unit g-time (the configured horizon is
/// replaced by 1). Paths that exit first are excluded and counted in
/// `absorbed_fraction`. Frequencies are averaged over charts.
pub fn empirical_tail(
    charts: &[LeafChart],
    rule: &DensityRule,
    cfg: &SamplerConfig,
    n_paths: usize,
    thresholds: &[f64],
) -> Result<TailReport> {
    if n_paths < 1000 {
        return Err(Error::InvalidParameter(format!("n_paths {n_paths} below 1000")));
    }
    if charts.is_empty() {
        return Err(Error::InvalidParameter("no charts".into()));
    }
    if thresholds.iter().any(|s| !(*s >= 0.0)) || thresholds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("thresholds must be nonnegative and increasing".into()));
    }
    let cfg = cfg.with_horizon(1.0)?;
    let mut frequencies = vec![0.0; thresholds.len()];
    let mut variances = vec![0.0; thresholds.len()];
    let mut absorbed = 0usize;
    let mut used_per_chart = Vec::with_capacity(charts.len());
    for (c, chart) in charts.iter().enumerate() {
        let density = rule.build(chart.clone())?;
        let first = (c * n_paths) as u64;
        let sups: Vec<Option<f64>> = (0..n_paths as u64)
            .into_par_iter()
            .map(|i| {
                let mut walker = PathWalker::new(&density, cfg, first + i);
                let mut tracker = SupDistance::new(&density);
                for node in walker.by_ref().skip(1) {
                    if node.g_time > 1.0 {
                        break;
                    }
                    tracker.push(node.zeta);
                }
                (walker.status() == PathStatus::Alive).then(|| tracker.sup())
            })
            .collect();
        let used: Vec<f64> = sups.iter().flatten().copied().collect();
        absorbed += n_paths - used.len();
        used_per_chart.push(used.len());
        if used.is_empty() {
            continue;
        }
        let n = used.len() as f64;
        for (k, &s) in thresholds.iter().enumerate() {
            let p = used.iter().filter(|&&d| d > s).count() as f64 / n;
            frequencies[k] += p;
            variances[k] += p * (1.0 - p) / n;
        }
    }
    if used_per_chart.iter().all(|&u| u == 0) {
        return Err(Error::AllAbsorbed);
    }
    let m = charts.len() as f64;
    let points = thresholds
        .iter()
        .zip(frequencies.iter().zip(&variances))
        .map(|(&s, (&f, &v))| TailPoint { s, frequency: f / m, stderr: v.sqrt() / m })
        .collect();
    Ok(TailReport {
        points,
        absorbed_fraction: absorbed as f64 / (charts.len() * n_paths) as f64,
        used_per_chart,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl MonteCarloEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        // shifted by the first sample so constant samples give an exact mean
        let shift = samples.first().copied().unwrap_or(0.0);
        let mean = shift + samples.iter().map(|x| x - shift).sum::<f64>() / n as f64;
        let var = if n > 1 {
            samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self { mean, stderr: (var / n as f64).sqrt(), n }
    }
}

/// Monte Carlo estimate of `D_t f(x) = E f(phi_x(zeta(t)))` over g-time `t`.
/// Paths that exit earlier contribute `f` at the frozen point.
pub fn diffusion_expectation<D, F>(
    chart: &LeafChart,
    density: &D,
    cfg: &SamplerConfig,
    f: F,
    t: f64,
    n_paths: usize,
) -> Result<MonteCarloEstimate>
where
    D: ConformalDensity + ?Sized,
    F: Fn(&AmbientPoint) -> f64 + Sync,
{
    if n_paths < 100 {
        return Err(Error::InvalidParameter(format!("n_paths {n_paths} below 100")));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("time {t} must be nonnegative")));
    }
    let values: Vec<f64> = if t == 0.0 {
        vec![f(chart.base()); n_paths]
    } else {
        let cfg = cfg.with_horizon(t)?;
        (0..n_paths as u64)
            .into_par_iter()
            .map(|i| {
                let end = PathWalker::new(density, cfg, i)
                    .take_while(|n| n.g_time <= t)
                    .last()
                    .map_or(Complex64::new(0.0, 0.0), |n| n.zeta);
                f(&chart.leaf_point(end))
            })
            .collect()
    };
    Ok(MonteCarloEstimate::from_samples(&values))
}

pub const PATH_CSV_HEADER: [&str; 7] =
    ["path_index", "node_index", "euclid_time", "g_time", "re_zeta", "im_zeta", "status"];

pub fn write_paths_csv<W: Write>(out: W, paths: &[LeafPath]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PATH_CSV_HEADER)?;
    for path in paths {
        for (k, n) in path.nodes.iter().enumerate() {
            w.write_record([
                path.path_index.to_string(),
                k.to_string(),
                n.euclid_time.to_string(),
                n.g_time.to_string(),
                n.zeta.re.to_string(),
                n.zeta.im.to_string(),
                path.status.label().to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))
}

/// Reads a path dump; rows of a path must be contiguous and in node order.
pub fn read_paths_csv<R: Read>(input: R) -> Result<Vec<LeafPath>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers()?.clone();
    if header.iter().ne(PATH_CSV_HEADER.iter().copied()) {
        return Err(Error::Csv(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut paths: Vec<LeafPath> = Vec::new();
    let mut pending: Option<(u64, Vec<PathNode>, PathStatus)> = None;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let bad = |what: &str| Error::Csv(format!("row {}: {what}", line + 2));
        let field = |i: usize| record.get(i).ok_or_else(|| bad("missing field"));
        let real = |i: usize| -> Result<f64> {
            field(i)?.parse::<f64>().map_err(|_| bad("invalid number"))
        };
        let path_index: u64 = field(0)?.parse().map_err(|_| bad("invalid path_index"))?;
        let node_index: usize = field(1)?.parse().map_err(|_| bad("invalid node_index"))?;
        let status = match field(6)? {
            "alive" => PathStatus::Alive,
            "exited" => PathStatus::Exited,
            _ => return Err(bad("invalid status")),
        };
        let node = PathNode { euclid_time: real(2)?, g_time: real(3)?, zeta: Complex64::new(real(4)?, real(5)?) };

        if let Some((i, nodes, s)) = pending.take_if(|p| p.0 != path_index) {
            paths.push(LeafPath::from_nodes(i, nodes, s)?);
        }
        match pending.as_mut() {
            Some((_, nodes, s)) => {
                if node_index != nodes.len() || *s != status {
                    return Err(bad("node out of order or status changed within a path"));
                }
                nodes.push(node);
            }
            None => {
                if node_index != 0 {
                    return Err(bad("path does not start at node 0"));
                }
                if paths.iter().any(|p| p.path_index == path_index) {
                    return Err(bad("path rows are not contiguous"));
                }
                pending = Some((path_index, vec![node], status));
            }
        }
    }
    if let Some((i, nodes, s)) = pending {
        paths.push(LeafPath::from_nodes(i, nodes, s)?);
    }
    Ok(paths)
}
