//! Bounded derivative-free maximization of log marginal likelihoods.
//!
//! Parameters are searched in log space. Each start runs parabola line
//! searches over a direction set that begins at the coordinate axes, with a
//! step that plays the role of a trust radius, and a Nelder–Mead polish once
//! the step has collapsed. Starts are the caller's initial point plus a seeded
//! three-point Latin grid over the box.

use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gp::{gp_log_marginal, gp_log_marginal_independent, ObservationSet};
use crate::mesh::Mesh;
use crate::parallel::map_indexed;
use crate::spde::{build_field, MaternParams};
use crate::statfem::{statfem_log_marginal, MismatchField, SolutionPrior};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HyperName {
    Sigma,
    Ell,
    SigmaD,
    EllD,
    SigmaE,
}

impl HyperName {
    pub const ALL: [HyperName; 5] = [
        HyperName::Sigma,
        HyperName::Ell,
        HyperName::SigmaD,
        HyperName::EllD,
        HyperName::SigmaE,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HyperName::Sigma => "sigma",
            HyperName::Ell => "ell",
            HyperName::SigmaD => "sigma_d",
            HyperName::EllD => "ell_d",
            HyperName::SigmaE => "sigma_e",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown hyperparameter `{s}`")))
    }
}

impl fmt::Display for HyperName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Full set of hyperparameter values; the smoothness is never among them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperPoint {
    pub sigma: f64,
    pub ell: f64,
    pub sigma_d: f64,
    pub ell_d: f64,
    pub sigma_e: f64,
}

impl HyperPoint {
    pub fn get(&self, n: HyperName) -> f64 {
        match n {
            HyperName::Sigma => self.sigma,
            HyperName::Ell => self.ell,
            HyperName::SigmaD => self.sigma_d,
            HyperName::EllD => self.ell_d,
            HyperName::SigmaE => self.sigma_e,
        }
    }

    pub fn set(&mut self, n: HyperName, v: f64) {
        match n {
            HyperName::Sigma => self.sigma = v,
            HyperName::Ell => self.ell = v,
            HyperName::SigmaD => self.sigma_d = v,
            HyperName::EllD => self.ell_d = v,
            HyperName::SigmaE => self.sigma_e = v,
        }
    }
}

/// What to optimize, within which bounds, and the values of everything else.
#[derive(Clone, Debug)]
pub struct HyperSpec {
    names: Vec<HyperName>,
    bounds: Vec<(f64, f64)>,
    fixed: HyperPoint,
    pub seed: u64,
    /// Number of Latin-grid restarts besides the initial point (0 disables).
    pub restarts: usize,
    /// Stop a start once the log-space step falls below this.
    pub tol: f64,
    pub max_evals: usize,
}

impl HyperSpec {
    /// `fixed` supplies the values of parameters not in `free`.
    pub fn new(free: &[(HyperName, f64, f64)], fixed: HyperPoint) -> Result<Self> {
        if free.is_empty() {
            return Err(Error::InvalidParameter("no hyperparameters to optimize".into()));
        }
        let mut names = Vec::new();
        let mut bounds = Vec::new();
        for &(n, lo, hi) in free {
            if names.contains(&n) {
                return Err(Error::InvalidParameter(format!("hyperparameter {n} listed twice")));
            }
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "bounds for {n} must satisfy 0 < lo < hi < inf, got [{lo}, {hi}]"
                )));
            }
            names.push(n);
            bounds.push((lo, hi));
        }
        Ok(Self {
            names,
            bounds,
            fixed,
            seed: 0,
            restarts: 3,
            tol: 1e-4,
            max_evals: 200,
        })
    }

    pub fn names(&self) -> &[HyperName] {
        &self.names
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn fixed(&self) -> &HyperPoint {
        &self.fixed
    }

    /// Completes free values (in `names()` order) with the fixed ones.
    pub fn point(&self, x: &[f64]) -> HyperPoint {
        let mut p = self.fixed;
        for (n, v) in self.names.iter().zip(x) {
            p.set(*n, *v);
        }
        p
    }

    /// Free values of `p` in `names()` order.
    pub fn free_values(&self, p: &HyperPoint) -> Vec<f64> {
        self.names.iter().map(|n| p.get(*n)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub start: usize,
    pub eval: usize,
    pub params: Vec<f64>,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct HyperResult {
    pub params: Vec<f64>,
    pub value: f64,
    /// Index of the start that produced the optimum (0 is the initial point).
    pub start: usize,
    /// Per-start optima, in start order.
    pub per_start: Vec<(Vec<f64>, f64)>,
    pub trace: Vec<TraceRow>,
}

impl HyperResult {
    pub fn point(&self, spec: &HyperSpec) -> HyperPoint {
        spec.point(&self.params)
    }
}

/// Writes `eval,start,<names>,objective` rows.
pub fn write_trace<W: Write>(out: W, names: &[HyperName], trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["eval".to_string(), "start".to_string()];
    header.extend(names.iter().map(|n| n.to_string()));
    header.push("objective".into());
    w.write_record(&header)?;
    for (i, row) in trace.iter().enumerate() {
        let mut rec = vec![i.to_string(), row.start.to_string()];
        rec.extend(row.params.iter().map(|v| format!("{v:.16e}")));
        rec.push(format!("{:.16e}", row.value));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Maximizes `objective` over the box of `spec`, starting from `init`
/// (natural scale, `spec.names()` order). Non-finite objective values count
/// as worse than any finite one.
pub fn maximize<F>(objective: F, spec: &HyperSpec, init: &[f64]) -> Result<HyperResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dim = spec.names.len();
    if init.len() != dim {
        return Err(Error::DimensionMismatch {
            context: "hyperparameter initial point",
            expected: dim,
            found: init.len(),
        });
    }
    let lo: Vec<f64> = spec.bounds.iter().map(|b| b.0.ln()).collect();
    let hi: Vec<f64> = spec.bounds.iter().map(|b| b.1.ln()).collect();
    for (k, &v) in init.iter().enumerate() {
        if !(v > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "initial {} must be positive, got {v}",
                spec.names[k]
            )));
        }
    }
    let mut starts = vec![init
        .iter()
        .zip(lo.iter().zip(&hi))
        .map(|(v, (l, h))| v.ln().clamp(*l, *h))
        .collect::<Vec<_>>()];
    starts.extend(latin_starts(&lo, &hi, spec.restarts, spec.seed));

    let bounds = Bounds { lo: &lo, hi: &hi };
    let runs = map_indexed(starts.len(), |s| {
        let mut run = Run {
            f: &objective,
            trace: Vec::new(),
            budget: spec.max_evals,
            start: s,
            natural: &spec.bounds,
        };
        let best = run.search(&bounds, starts[s].clone(), spec.tol);
        (best, run.trace)
    });

    let mut trace = Vec::new();
    let mut per_start = Vec::new();
    let mut best: Option<(usize, Vec<f64>, f64)> = None;
    for (s, (b, t)) in runs.into_iter().enumerate() {
        trace.extend(t);
        let nat = to_natural(&b.0, &spec.bounds);
        per_start.push((nat.clone(), b.1));
        if b.1.is_finite() && best.as_ref().is_none_or(|(_, _, v)| b.1 > *v) {
            best = Some((s, nat, b.1));
        }
    }
    match best {
        Some((start, params, value)) => Ok(HyperResult {
            params,
            value,
            start,
            per_start,
            trace,
        }),
        None => Err(Error::NonFiniteObjective {
            last_finite: trace
                .iter()
                .rev()
                .find(|r| r.value.is_finite())
                .map(|r| r.params.clone()),
        }),
    }
}

fn latin_starts(lo: &[f64], hi: &[f64], n: usize, seed: u64) -> Vec<Vec<f64>> {
    if n == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = vec![vec![0.0; lo.len()]; n];
    for k in 0..lo.len() {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        for (p, s) in pts.iter_mut().zip(strata) {
            let u: f64 = rng.random();
            p[k] = lo[k] + (s as f64 + u) / n as f64 * (hi[k] - lo[k]);
        }
    }
    pts
}

struct Bounds<'a> {
    lo: &'a [f64],
    hi: &'a [f64],
}

impl Bounds<'_> {
    fn clamp(&self, z: &mut [f64]) {
        for (k, v) in z.iter_mut().enumerate() {
            *v = v.clamp(self.lo[k], self.hi[k]);
        }
    }
}

/// `exp` can round one ulp past a bound, so the result is clamped again.
fn to_natural(z: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    z.iter()
        .zip(bounds)
        .map(|(v, (lo, hi))| v.exp().clamp(*lo, *hi))
        .collect()
}

struct Run<'a, F> {
    f: &'a F,
    trace: Vec<TraceRow>,
    budget: usize,
    start: usize,
    natural: &'a [(f64, f64)],
}

/// Sort key where non-finite values lose to everything.
fn key(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::NEG_INFINITY
    }
}

impl<F: Fn(&[f64]) -> f64> Run<'_, F> {
    fn left(&self) -> usize {
        self.budget.saturating_sub(self.trace.len())
    }

    fn eval(&mut self, z: &[f64]) -> f64 {
        let x = to_natural(z, self.natural);
        let v = (self.f)(&x);
        self.trace.push(TraceRow {
            start: self.start,
            eval: self.trace.len(),
            params: x,
            value: v,
        });
        key(v)
    }

    fn search(&mut self, b: &Bounds, z0: Vec<f64>, tol: f64) -> (Vec<f64>, f64) {
        let width = b.lo.iter().zip(b.hi).map(|(l, h)| h - l).fold(f64::INFINITY, f64::min);
        let mut delta = (0.25 * width).min(0.5).max(tol);
        let mut z = z0;
        let mut fz = self.eval(&z);
        for _ in 0..3 {
            let (zc, fc) = self.coordinate(b, z, fz, delta, tol);
            z = zc;
            fz = fc;
            // Coordinate steps crawl along ridges oblique to the axes; a
            // simplex from the converged point can find the way along them.
            if self.left() < 2 * (z.len() + 1) {
                break;
            }
            let (zn, fn_) = self.nelder_mead(b, &z, fz, 0.1, tol);
            if fn_ > fz + 1e-10 * fz.abs().max(1.0) {
                z = zn;
                fz = fn_;
                delta = 0.1;
            } else {
                break;
            }
        }
        (z, fz)
    }

    /// Parabola line search along the unit direction `d`: probes at `±delta`
    /// and the model vertex within `2 delta`, all inside the box.
    fn line(&mut self, b: &Bounds, z: &[f64], fz: f64, d: &[f64], delta: f64) -> Option<(f64, f64)> {
        let (mut tmin, mut tmax) = (f64::NEG_INFINITY, f64::INFINITY);
        for k in 0..z.len() {
            if d[k] != 0.0 {
                let (p, q) = ((b.lo[k] - z[k]) / d[k], (b.hi[k] - z[k]) / d[k]);
                tmin = tmin.max(p.min(q));
                tmax = tmax.min(p.max(q));
            }
        }
        let at = |t: f64| -> Vec<f64> {
            let mut x: Vec<f64> = z.iter().zip(d).map(|(a, e)| a + t * e).collect();
            b.clamp(&mut x);
            x
        };
        let mut pts = vec![(0.0, fz)];
        for s in [-delta, delta] {
            let t = s.clamp(tmin, tmax);
            if t.abs() > 0.0 {
                if self.left() == 0 {
                    return None;
                }
                pts.push((t, self.eval(&at(t))));
            }
        }
        if pts.len() == 3 && self.left() > 0 {
            if let Some(v) = parabola_vertex(&pts) {
                let v = v.clamp((-2.0 * delta).max(tmin), (2.0 * delta).min(tmax));
                if pts.iter().all(|p| (p.0 - v).abs() > 1e-3 * delta) {
                    pts.push((v, self.eval(&at(v))));
                }
            }
        }
        let best = pts
            .iter()
            .copied()
            .fold((0.0, fz), |a, p| if p.1 > a.1 { p } else { a });
        (best.1 > fz).then_some(best)
    }

    /// Direction-set search: parabola line searches along each direction,
    /// after which the net move of an improving sweep replaces the direction
    /// that gained most. Starts from the coordinate axes, which come back
    /// whenever the step shrinks.
    fn coordinate(&mut self, b: &Bounds, mut z: Vec<f64>, mut fz: f64, mut delta: f64, tol: f64) -> (Vec<f64>, f64) {
        let dim = z.len();
        let axes = || -> Vec<Vec<f64>> {
            (0..dim)
                .map(|i| (0..dim).map(|k| if k == i { 1.0 } else { 0.0 }).collect())
                .collect()
        };
        let mut dirs = axes();
        let cap = b.lo.iter().zip(b.hi).map(|(l, h)| h - l).fold(0.0, f64::max);
        while delta >= tol && self.left() > 0 {
            let (z_prev, f_prev) = (z.clone(), fz);
            let mut expand = false;
            let (mut top, mut top_gain) = (0, 0.0);
            for (i, d) in dirs.iter().enumerate() {
                if let Some((t, ft)) = self.line(b, &z, fz, d, delta) {
                    if ft - fz > top_gain {
                        top = i;
                        top_gain = ft - fz;
                    }
                    if t.abs() > 1.5 * delta {
                        expand = true;
                    }
                    z.iter_mut().zip(d).for_each(|(a, e)| *a += t * e);
                    b.clamp(&mut z);
                    fz = ft;
                }
            }
            if fz > f_prev {
                let mv: Vec<f64> = z.iter().zip(&z_prev).map(|(a, p)| a - p).collect();
                let norm = mv.iter().map(|v| v * v).sum::<f64>().sqrt();
                if dim > 1 && norm > 0.0 {
                    let u: Vec<f64> = mv.iter().map(|v| v / norm).collect();
                    if let Some((t, ft)) = self.line(b, &z, fz, &u, norm.max(delta)) {
                        z.iter_mut().zip(&u).for_each(|(a, e)| *a += t * e);
                        b.clamp(&mut z);
                        fz = ft;
                    }
                    dirs.remove(top);
                    dirs.push(u);
                }
                if expand {
                    delta = (2.0 * delta).min(cap);
                }
            } else {
                delta *= 0.5;
                dirs = axes();
            }
        }
        (z, fz)
    }

    fn nelder_mead(&mut self, b: &Bounds, z0: &[f64], f0: f64, size: f64, tol: f64) -> (Vec<f64>, f64) {
        let n = z0.len();
        let mut simplex = vec![(z0.to_vec(), f0)];
        for i in 0..n {
            let mut z = z0.to_vec();
            z[i] += if z[i] + size <= b.hi[i] { size } else { -size };
            b.clamp(&mut z);
            let f = self.eval(&z);
            simplex.push((z, f));
        }
        let limit = self.trace.len() + (40 * n).min(self.left());
        while self.trace.len() + 2 <= limit {
            simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
            let spread = simplex[1..]
                .iter()
                .map(|(z, _)| {
                    z.iter()
                        .zip(&simplex[0].0)
                        .map(|(a, c)| (a - c).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            if spread < tol {
                break;
            }
            let centroid: Vec<f64> = (0..n)
                .map(|k| simplex[..n].iter().map(|p| p.0[k]).sum::<f64>() / n as f64)
                .collect();
            let worst = simplex[n].clone();
            let along = |t: f64| {
                let mut z: Vec<f64> = centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect();
                b.clamp(&mut z);
                z
            };
            let zr = along(1.0);
            let fr = self.eval(&zr);
            if fr > simplex[0].1 {
                let ze = along(2.0);
                let fe = self.eval(&ze);
                simplex[n] = if fe > fr { (ze, fe) } else { (zr, fr) };
            } else if fr > simplex[n - 1].1 {
                simplex[n] = (zr, fr);
            } else {
                let zc = if fr > worst.1 { along(0.5) } else { along(-0.5) };
                let fc = self.eval(&zc);
                if fc > worst.1.max(fr) {
                    simplex[n] = (zc, fc);
                } else {
                    if self.trace.len() + n > limit {
                        break;
                    }
                    let best = simplex[0].0.clone();
                    for p in simplex.iter_mut().skip(1) {
                        p.0 = p.0.iter().zip(&best).map(|(a, c)| c + 0.5 * (a - c)).collect();
                        p.1 = self.eval(&p.0);
                    }
                }
            }
        }
        simplex
            .into_iter()
            .fold((z0.to_vec(), f0), |a, p| if p.1 > a.1 { p } else { a })
    }
}

/// Vertex of the parabola through three points, if it opens downward.
fn parabola_vertex(p: &[(f64, f64)]) -> Option<f64> {
    if p.iter().any(|q| !q.1.is_finite()) {
        return None;
    }
    let (x0, f0) = p[0];
    let (x1, f1) = p[1];
    let (x2, f2) = p[2];
    // Divided differences.
    let d01 = (f1 - f0) / (x1 - x0);
    let d02 = (f2 - f0) / (x2 - x0);
    let c = (d02 - d01) / (x2 - x1);
    if !(c < 0.0) {
        return None;
    }
    // f ≈ f0 + d01 (x − x0) + c (x − x0)(x − x1)
    let v = 0.5 * (x0 + x1) - d01 / (2.0 * c);
    v.is_finite().then_some(v)
}

/// How repeated readings enter a GP marginal likelihood.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Readings {
    /// All readings observe one realization of the field.
    Shared,
    /// Every reading is an independent realization.
    Independent,
}

/// GP log marginal at `(σ, ℓ, σ_e)` of `p` with smoothness `nu`.
pub fn gp_objective(
    mesh: &Mesh,
    nu: f64,
    degree: usize,
    obs: &ObservationSet,
    readings: Readings,
    p: &HyperPoint,
) -> Result<f64> {
    let field = build_field(mesh, &MaternParams::new(p.sigma, p.ell, nu, mesh.dim_param())?, degree)?;
    let obs = obs.clone().with_sigma_e(p.sigma_e)?;
    match readings {
        Readings::Shared => gp_log_marginal(&field, &obs),
        Readings::Independent => gp_log_marginal_independent(&field, &obs),
    }
}

/// statFEM log marginal at `(σ_d, ℓ_d, σ_e)` of `p`, mismatch smoothness
/// `nu_d`, for a fixed solution prior.
pub fn statfem_objective(
    prior: &SolutionPrior,
    mesh: &Mesh,
    nu_d: f64,
    obs: &ObservationSet,
    p: &HyperPoint,
) -> Result<f64> {
    let d = MismatchField::new(mesh, &MaternParams::new(p.sigma_d, p.ell_d, nu_d, mesh.dim_param())?)?;
    let obs = obs.clone().with_sigma_e(p.sigma_e)?;
    statfem_log_marginal(prior, &d, &obs)
}

/// Turns a fallible objective into the plain form [`maximize`] takes.
pub fn or_nan(r: Result<f64>) -> f64 {
    r.unwrap_or(f64::NAN)
}
