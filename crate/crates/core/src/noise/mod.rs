//! Trace-class Wiener processes and the noise operators `g1`, `g21`, `g22`.
//!
//! Both processes use the same eigenbasis of `L2(D)^2`: normalized sine products
//! times a unit component vector, ordered by total degree. Mode `j` (1-based) has
//! scalar index `k = ceil(j / 2)` and component `(j - 1) % 2`.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::quadrature::{lerp, GAUSS3};
use crate::geometry::{CellGeometry, PerforatedMesh, Rect};

/// Uniform time grid `t_m = m * dt`, `m = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_final: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, steps: usize) -> Result<Self> {
        if !(t_final > 0.0 && t_final.is_finite()) || steps == 0 {
            return Err(Error::Config(format!("invalid time grid T={t_final}, steps={steps}")));
        }
        Ok(Self { t_final, steps })
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    pub fn time(&self, m: usize) -> f64 {
        self.t_final * m as f64 / self.steps as f64
    }
}

/// One scalar sine mode `2/sqrt|D| sin(k1 pi x~) sin(k2 pi y~)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SineMode {
    pub k1: u32,
    pub k2: u32,
}

/// First `n` sine modes ordered by total degree, then by `k1`.
pub fn sine_modes(n: usize) -> Vec<SineMode> {
    let mut out = Vec::with_capacity(n);
    let mut deg = 2;
    while out.len() < n {
        for k1 in 1..deg {
            if out.len() == n {
                break;
            }
            out.push(SineMode { k1, k2: deg - k1 });
        }
        deg += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpec {
    pub domain: Rect,
    pub j: usize,
    pub lambda_decay: f64,
    modes: Vec<SineMode>,
}

impl CovarianceSpec {
    pub fn new(domain: Rect, j: usize, lambda_decay: f64) -> Result<Self> {
        if j == 0 {
            return Err(Error::Config("noise truncation J must be at least 1".into()));
        }
        if !(lambda_decay > 1.0) {
            return Err(Error::DivergentNoise(format!("eigenvalue decay {lambda_decay} <= 1 is not summable")));
        }
        Ok(Self { domain, j, lambda_decay, modes: sine_modes(j.div_ceil(2)) })
    }

    /// Same spec with another truncation.
    pub fn with_j(&self, j: usize) -> Result<Self> {
        Self::new(self.domain, j, self.lambda_decay)
    }

    /// `lambda_j = j^{-decay}`, `j` 1-based.
    pub fn eigenvalue(&self, j: usize) -> f64 {
        (j as f64).powf(-self.lambda_decay)
    }

    pub fn scalar_index(j: usize) -> usize {
        j.div_ceil(2)
    }

    pub fn component(j: usize) -> usize {
        (j - 1) % 2
    }

    pub fn mode(&self, j: usize) -> SineMode {
        self.modes[Self::scalar_index(j) - 1]
    }

    /// Dirichlet Laplacian eigenvalue of mode `j`.
    pub fn laplace_eigenvalue(&self, j: usize) -> f64 {
        let m = self.mode(j);
        let (lx, ly) = (self.domain.width(), self.domain.height());
        std::f64::consts::PI.powi(2) * ((m.k1 as f64 / lx).powi(2) + (m.k2 as f64 / ly).powi(2))
    }

    /// Scalar profile of mode `j` at `x`.
    pub fn scalar(&self, j: usize, x: [f64; 2]) -> f64 {
        use std::f64::consts::PI;
        let m = self.mode(j);
        let d = &self.domain;
        let sx = (m.k1 as f64 * PI * (x[0] - d.min[0]) / d.width()).sin();
        let sy = (m.k2 as f64 * PI * (x[1] - d.min[1]) / d.height()).sin();
        2.0 / d.area().sqrt() * sx * sy
    }

    /// `e_j(x)`.
    pub fn eval(&self, j: usize, x: [f64; 2]) -> [f64; 2] {
        let mut v = [0.0; 2];
        v[Self::component(j)] = self.scalar(j, x);
        v
    }

    pub fn trace_sum(&self) -> f64 {
        (1..=self.j).map(|j| self.eigenvalue(j)).sum()
    }
}

/// Choice of `g21` multiplier per mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum G21Kind {
    /// `sigma2 (1+t)^{-1} (1 + mu_j)^{-1/2} e_j`: unit H1 norm per mode.
    #[default]
    Smoothed,
    /// `sigma2 (1+t)^{-1} e_j`.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    #[serde(rename = "J")]
    pub j: usize,
    pub lambda_decay: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
    pub seed: u64,
    pub g21: G21Kind,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { j: 32, lambda_decay: 2.1, sigma1: 1.0, sigma2: 1.0, sigma3: 1.0, seed: 1, g21: G21Kind::Smoothed }
    }
}

impl NoiseConfig {
    pub fn is_off(&self) -> bool {
        self.sigma1 == 0.0 && self.sigma2 == 0.0 && self.sigma3 == 0.0
    }
}

/// Increments of `W1` and `W2` on a time grid, stored step-major (`m * J + j - 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct WienerPath {
    pub grid: TimeGrid,
    pub j1: usize,
    pub j2: usize,
    pub seed: u64,
    dw1: Vec<f64>,
    dw2: Vec<f64>,
}

const STREAM_KEY: u64 = 0x5f0c_4a3e_91d2_7b68;

fn rng_for(seed: u64, process: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(STREAM_KEY);
    rng.set_stream(seed.wrapping_mul(2).wrapping_add(process));
    rng
}

/// Draws both paths; `W1` and `W2` use disjoint ChaCha streams of the same key.
pub fn sample_wiener(q1: &CovarianceSpec, q2: &CovarianceSpec, grid: &TimeGrid, seed: u64) -> WienerPath {
    let sd = grid.dt().sqrt();
    let draw = |process: u64, j: usize| {
        let mut rng = rng_for(seed, process);
        (0..grid.steps * j).map(|_| sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect()
    };
    WienerPath { grid: *grid, j1: q1.j, j2: q2.j, seed, dw1: draw(0, q1.j), dw2: draw(1, q2.j) }
}

impl WienerPath {
    /// A path with all increments zero.
    pub fn zero(grid: &TimeGrid, j1: usize, j2: usize) -> Self {
        Self { grid: *grid, j1, j2, seed: 0, dw1: vec![0.0; grid.steps * j1], dw2: vec![0.0; grid.steps * j2] }
    }

    /// Increments `dbeta_j` over `[t_m, t_{m+1}]` of `W1`.
    pub fn dw1(&self, m: usize) -> &[f64] {
        &self.dw1[m * self.j1..(m + 1) * self.j1]
    }

    pub fn dw2(&self, m: usize) -> &[f64] {
        &self.dw2[m * self.j2..(m + 1) * self.j2]
    }

    /// Same Brownian paths on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.grid.steps % factor != 0 {
            return Err(Error::Mismatch(format!("cannot coarsen {} steps by {factor}", self.grid.steps)));
        }
        let steps = self.grid.steps / factor;
        let sum = |src: &[f64], j: usize| {
            let mut out = vec![0.0; steps * j];
            for m in 0..self.grid.steps {
                for k in 0..j {
                    out[(m / factor) * j + k] += src[m * j + k];
                }
            }
            out
        };
        Ok(Self {
            grid: TimeGrid { t_final: self.grid.t_final, steps },
            j1: self.j1,
            j2: self.j2,
            seed: self.seed,
            dw1: sum(&self.dw1, self.j1),
            dw2: sum(&self.dw2, self.j2),
        })
    }

    /// Rows `process,t,j,dbeta`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "process,t,j,dbeta")?;
        for (name, j, data) in [("W1", self.j1, &self.dw1), ("W2", self.j2, &self.dw2)] {
            for m in 0..self.grid.steps {
                for k in 0..j {
                    writeln!(out, "{name},{:?},{},{:?}", self.grid.time(m), k + 1, data[m * j + k])?;
                }
            }
        }
        Ok(())
    }
}

/// Concrete noise operators on a domain and a reference hole.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseOperators {
    pub q1: CovarianceSpec,
    pub q2: CovarianceSpec,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
    pub g21_kind: G21Kind,
    pub geometry: CellGeometry,
}

impl NoiseOperators {
    pub fn new(cfg: &NoiseConfig, domain: Rect, geometry: CellGeometry) -> Result<Self> {
        for (name, s) in [("sigma1", cfg.sigma1), ("sigma2", cfg.sigma2), ("sigma3", cfg.sigma3)] {
            if !s.is_finite() {
                return Err(Error::NonFinite(format!("noise amplitude {name}")));
            }
        }
        let q = CovarianceSpec::new(domain, cfg.j, cfg.lambda_decay)?;
        Ok(Self {
            q1: q.clone(),
            q2: q,
            sigma1: cfg.sigma1,
            sigma2: cfg.sigma2,
            sigma3: cfg.sigma3,
            g21_kind: cfg.g21,
            geometry,
        })
    }

    pub fn with_j(&self, j: usize) -> Result<Self> {
        Ok(Self { q1: self.q1.with_j(j)?, q2: self.q2.with_j(j)?, ..self.clone() })
    }

    fn decay(t: f64) -> f64 {
        1.0 / (1.0 + t)
    }

    /// Common time factor: every multiplier is `temporal_factor(t)` times its value at `t = 0`.
    pub fn temporal_factor(t: f64) -> f64 {
        Self::decay(t)
    }

    /// `g1(t) e_j = g1_coeff(t) e_j`.
    pub fn g1_coeff(&self, t: f64) -> f64 {
        self.sigma1 * Self::decay(t)
    }

    /// `g21(t) e_j = g21_coeff(t, j) e_j`.
    pub fn g21_coeff(&self, t: f64, j: usize) -> f64 {
        let s = match self.g21_kind {
            G21Kind::Smoothed => (1.0 + self.q2.laplace_eigenvalue(j)).powf(-0.5),
            G21Kind::Identity => 1.0,
        };
        self.sigma2 * Self::decay(t) * s
    }

    /// `g22(t) e_j` at boundary angle `theta`: `sigma3 (1+t)^{-1} j^{-2} cos((k-1) theta) c_j`.
    pub fn g22_value(&self, t: f64, j: usize, theta: f64) -> [f64; 2] {
        let k = CovarianceSpec::scalar_index(j);
        let a = self.sigma3 * Self::decay(t) / (j as f64).powi(2) * ((k - 1) as f64 * theta).cos();
        let mut v = [0.0; 2];
        v[CovarianceSpec::component(j)] = a;
        v
    }

    /// `int_{dO} g22(t) e_j dsigma` per mode (polygon-edge quadrature).
    pub fn boundary_average_g22(&self, t: f64) -> Vec<[f64; 2]> {
        (1..=self.q2.j)
            .map(|j| {
                let c = CovarianceSpec::component(j);
                let mut v = [0.0; 2];
                v[c] = self.geometry.boundary_integral(|_, th| self.g22_value(t, j, th)[c]);
                v
            })
            .collect()
    }

    /// `sum_j lambda_j ||g(t) e_j||^2` for `g1` (L2), `g21` (H1) and `g22` (boundary L2).
    pub fn trace_sums(&self, t: f64) -> [f64; 3] {
        let l2: f64 = (1..=self.q1.j).map(|j| self.q1.eigenvalue(j)).sum::<f64>() * self.g1_coeff(t).powi(2);
        let h1: f64 = (1..=self.q2.j)
            .map(|j| self.q2.eigenvalue(j) * self.g21_coeff(t, j).powi(2) * (1.0 + self.q2.laplace_eigenvalue(j)))
            .sum();
        let bd: f64 = (1..=self.q2.j)
            .map(|j| {
                let c = CovarianceSpec::component(j);
                self.q2.eigenvalue(j) * self.geometry.boundary_integral(|_, th| self.g22_value(t, j, th)[c].powi(2))
            })
            .sum();
        [l2, h1, bd]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceClassReport {
    pub j: usize,
    /// Sup over the grid of the L2, H1 and boundary sums.
    pub sums: [f64; 3],
    /// Time attaining each sup.
    pub argmax_t: [f64; 3],
    /// Same sums at truncation `2J`.
    pub sums_doubled: [f64; 3],
    /// `|S(2J) - S(J)| / S(2J)`.
    pub relative_change: [f64; 3],
    /// Certificate constant `C_T = max(sums_doubled)`.
    pub c_t: f64,
}

/// Evaluates the three trace-class sums and rejects specs that fail to saturate
/// (relative change above `saturation_tol` when `J` doubles).
pub fn verify_trace_class(ops: &NoiseOperators, grid: &TimeGrid, saturation_tol: f64) -> Result<TraceClassReport> {
    let sup = |o: &NoiseOperators| {
        let mut best = [0.0f64; 3];
        let mut at = [0.0; 3];
        for m in 0..=grid.steps {
            let t = grid.time(m);
            let s = o.trace_sums(t);
            for c in 0..3 {
                if s[c] > best[c] {
                    best[c] = s[c];
                    at[c] = t;
                }
            }
        }
        (best, at)
    };
    let (sums, argmax_t) = sup(ops);
    let (sums_doubled, _) = sup(&ops.with_j(2 * ops.q1.j.max(ops.q2.j))?);
    let mut relative_change = [0.0; 3];
    for c in 0..3 {
        if !sums[c].is_finite() || !sums_doubled[c].is_finite() {
            return Err(Error::NonFinite("trace-class sum".into()));
        }
        relative_change[c] = if sums_doubled[c] > 0.0 { (sums_doubled[c] - sums[c]).abs() / sums_doubled[c] } else { 0.0 };
        if relative_change[c] > saturation_tol {
            let name = ["L2", "H1", "boundary"][c];
            return Err(Error::DivergentNoise(format!(
                "{name} sum changes by {:.2}% when J doubles ({} -> {})",
                100.0 * relative_change[c],
                sums[c],
                sums_doubled[c]
            )));
        }
    }
    let c_t = sums_doubled.iter().copied().fold(0.0, f64::max);
    Ok(TraceClassReport { j: ops.q1.j, sums, argmax_t, sums_doubled, relative_change, c_t })
}

/// Values of a lifted boundary field at the 3-point Gauss nodes of every hole edge.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedBoundaryField {
    /// Boundary-edge indices into the perforated mesh.
    pub edges: Vec<usize>,
    /// Owning hole of each edge.
    pub hole_of: Vec<usize>,
    pub values: Vec<[[f64; 2]; 3]>,
    pub lengths: Vec<f64>,
}

impl LiftedBoundaryField {
    /// `||R h||^2_{L2(dO^eps)}`.
    pub fn norm_sq(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.lengths)
            .map(|(v, len)| GAUSS3.iter().zip(v).map(|((_, w), x)| w * len * (x[0] * x[0] + x[1] * x[1])).sum::<f64>())
            .sum()
    }

    /// `int R h` over one hole.
    pub fn hole_integral(&self, hole: usize) -> [f64; 2] {
        let mut s = [0.0; 2];
        for (e, v) in self.values.iter().enumerate().filter(|(e, _)| self.hole_of[*e] == hole) {
            for ((_, w), x) in GAUSS3.iter().zip(v) {
                s[0] += w * self.lengths[e] * x[0];
                s[1] += w * self.lengths[e] * x[1];
            }
        }
        s
    }
}

/// `(R^eps h)(x) = h(x/eps mod Y)` on every hole boundary; `h` receives the reference point and angle.
pub fn lift_boundary_noise<H>(h: H, mesh: &PerforatedMesh) -> LiftedBoundaryField
where
    H: Fn([f64; 2], f64) -> [f64; 2],
{
    let mut out = LiftedBoundaryField { edges: vec![], hole_of: vec![], values: vec![], lengths: vec![] };
    for (hi, hole) in mesh.holes.iter().enumerate() {
        for &e in &hole.edges {
            let [a, b] = mesh.mesh.boundary_edges[e].vertices;
            let (pa, pb) = (mesh.mesh.vertices[a], mesh.mesh.vertices[b]);
            let vals = GAUSS3.map(|(s, _)| {
                let y = mesh.to_reference(hole, lerp(pa, pb, s));
                h(y, mesh.geometry.angle_of(y))
            });
            out.edges.push(e);
            out.hole_of.push(hi);
            out.values.push(vals);
            out.lengths.push(crate::geometry::dist(pa, pb));
        }
    }
    out
}

/// Monte-Carlo check of the Ito isometry for `int_0^T g1 dW1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItoCheck {
    pub estimate: f64,
    pub standard_error: f64,
    pub exact: f64,
    pub samples: usize,
}

impl ItoCheck {
    pub fn within(&self, k: f64) -> bool {
        (self.estimate - self.exact).abs() <= k * self.standard_error
    }
}

/// `E || sum_m g1(t_m) dW1_m ||^2` against `sum_j lambda_j sum_m g1(t_m)^2 dt`.
pub fn ito_isometry_check(ops: &NoiseOperators, grid: &TimeGrid, samples: usize, seed0: u64) -> ItoCheck {
    let coeff: Vec<f64> = (0..grid.steps).map(|m| ops.g1_coeff(grid.time(m))).collect();
    let exact = ops.q1.trace_sum() * coeff.iter().map(|c| c * c).sum::<f64>() * grid.dt();
    let vals: Vec<f64> = (0..samples as u64)
        .map(|s| {
            let path = sample_wiener(&ops.q1, &ops.q2, grid, seed0 + s);
            (1..=ops.q1.j)
                .map(|j| {
                    let i: f64 = (0..grid.steps).map(|m| coeff[m] * path.dw1(m)[j - 1]).sum();
                    ops.q1.eigenvalue(j) * i * i
                })
                .sum()
        })
        .collect();
    let (mean, se) = mean_se(&vals);
    ItoCheck { estimate: mean, standard_error: se, exact, samples }
}

/// Sample mean and its standard error.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_perforated_mesh, cell_measures, Epsilon};

    fn ops() -> NoiseOperators {
        NoiseOperators::new(&NoiseConfig::default(), Rect::unit(), CellGeometry::new(0.25, 32)).unwrap()
    }

    #[test]
    fn modes_are_ordered_and_orthonormal() {
        let m = sine_modes(6);
        assert_eq!((m[0].k1, m[0].k2), (1, 1));
        assert_eq!((m[1].k1, m[1].k2), (1, 2));
        assert_eq!((m[3].k1, m[3].k2), (1, 3));
        let q = CovarianceSpec::new(Rect::unit(), 8, 2.1).unwrap();
        // tensor Gauss-Legendre is overkill; midpoint with many points is exact for trig products
        let n = 64;
        for a in 1..=8 {
            for b in 1..=8 {
                let mut s = 0.0;
                for i in 0..n {
                    for k in 0..n {
                        let x = [(i as f64 + 0.5) / n as f64, (k as f64 + 0.5) / n as f64];
                        let (ea, eb) = (q.eval(a, x), q.eval(b, x));
                        s += (ea[0] * eb[0] + ea[1] * eb[1]) / (n * n) as f64;
                    }
                }
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((s - expect).abs() < 1e-12, "({a},{b}) {s}");
            }
        }
    }

    #[test]
    fn same_seed_same_path() {
        let o = ops();
        let g = TimeGrid::new(1.0, 16).unwrap();
        let p1 = sample_wiener(&o.q1, &o.q2, &g, 7);
        let p2 = sample_wiener(&o.q1, &o.q2, &g, 7);
        assert_eq!(p1, p2);
        assert_ne!(p1.dw1(0), p2.dw2(0));
        assert_ne!(p1, sample_wiener(&o.q1, &o.q2, &g, 8));
    }

    #[test]
    fn coarsen_sums_increments() {
        let o = ops();
        let g = TimeGrid::new(1.0, 8).unwrap();
        let p = sample_wiener(&o.q1, &o.q2, &g, 3);
        let c = p.coarsen(4).unwrap();
        assert_eq!(c.grid.steps, 2);
        let s: f64 = (4..8).map(|m| p.dw2(m)[5]).sum();
        assert!((c.dw2(1)[5] - s).abs() < 1e-15);
        assert!(p.coarsen(3).is_err());
    }

    #[test]
    fn increment_statistics() {
        let o = ops().with_j(5).unwrap();
        let g = TimeGrid::new(0.1, 1).unwrap();
        let n = 4000;
        let mut s1 = vec![0.0; 5];
        let mut s2 = vec![0.0; 5];
        let mut cross = 0.0;
        for seed in 0..n {
            let p = sample_wiener(&o.q1, &o.q2, &g, seed);
            for j in 0..5 {
                s1[j] += p.dw1(0)[j];
                s2[j] += p.dw1(0)[j].powi(2);
            }
            cross += p.dw1(0)[0] * p.dw2(0)[0];
        }
        let nf = n as f64;
        for j in 0..5 {
            assert!((s1[j] / nf).abs() <= 3.0 * (0.1 / nf).sqrt());
            assert!((s2[j] / nf - 0.1).abs() < 0.1 * 0.1);
        }
        assert!((cross / nf).abs() <= 3.0 * 0.1 / nf.sqrt());
    }

    #[test]
    fn trace_sums_sup_at_zero() {
        let o = ops();
        let g = TimeGrid::new(1.0, 10).unwrap();
        let r = verify_trace_class(&o, &g, 0.01).unwrap();
        let expect: f64 = (1..=32).map(|j| (j as f64).powf(-2.1)).sum();
        assert!((r.sums[0] - expect).abs() < 1e-12);
        assert!((r.sums[1] - expect).abs() < 1e-12);
        assert_eq!(r.argmax_t, [0.0; 3]);
        let tail: f64 = (33..=64).map(|j| (j as f64).powf(-2.1)).sum();
        assert!(r.sums_doubled[0] - r.sums[0] <= tail + 1e-14);
    }

    #[test]
    fn identity_g21_fails_saturation() {
        let cfg = NoiseConfig { g21: G21Kind::Identity, ..NoiseConfig::default() };
        let o = NoiseOperators::new(&cfg, Rect::unit(), CellGeometry::new(0.25, 32)).unwrap();
        let err = verify_trace_class(&o, &TimeGrid::new(1.0, 4).unwrap(), 0.01).unwrap_err();
        assert!(matches!(err, Error::DivergentNoise(_)));
    }

    #[test]
    fn boundary_average() {
        let o = ops();
        let avg = o.boundary_average_g22(0.0);
        let perim = cell_measures(&o.geometry).discrete_perim_hole;
        assert!((avg[0][0] - perim).abs() < 1e-13 && avg[0][1] == 0.0);
        assert!((avg[1][1] - perim / 4.0).abs() < 1e-13);
        for j in 3..=32 {
            assert!(avg[j - 1][0].abs() + avg[j - 1][1].abs() < 1e-10, "mode {j}");
        }
    }

    #[test]
    fn lift_identity() {
        let g = CellGeometry::new(0.25, 16);
        let ref_norm = g.boundary_integral(|_, th| 1.0 + th.cos().powi(2));
        for n in [4, 8] {
            let m = build_perforated_mesh(&g, Epsilon::new(n).unwrap(), Rect::unit(), 0.08).unwrap();
            let lifted = lift_boundary_noise(|_, th| [1.0, th.cos()], &m);
            let eps = 1.0 / n as f64;
            let expect = m.num_holes() as f64 * eps * ref_norm;
            assert!((lifted.norm_sq() - expect).abs() < 1e-12 * expect);
            let zero_mean = lift_boundary_noise(|_, th| [th.cos(), (2.0 * th).sin()], &m);
            for hole in 0..m.num_holes() {
                let s = zero_mean.hole_integral(hole);
                assert!(s[0].abs() < 1e-12 && s[1].abs() < 1e-12);
            }
        }
    }
}
