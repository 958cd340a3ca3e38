//! Flat Poisson solve on the disk and the conformal change `H ↦ e^{−ψ}H`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{curvature_field, MetricField};
use crate::grid::{DiskGrid, ScalarField};
use crate::linalg::{hermitian_part, CMat, C64};
use crate::report::{Check, VerificationReport};

/// `Δψ = (4/n)k` in the disk with `ψ = ρ` on the circle.
#[derive(Clone, Debug)]
pub struct PoissonProblem {
    /// `k` per grid node.
    pub rhs: Vec<f64>,
    /// `ρ` at the `M` boundary angles.
    pub boundary: Vec<f64>,
    pub n: usize,
}

impl PoissonProblem {
    pub fn constant(grid: &DiskGrid, k: f64, rho: f64, n: usize) -> Self {
        PoissonProblem { rhs: vec![k; grid.len()], boundary: vec![rho; grid.boundary_samples()], n }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub rel_tol: f64,
    pub target_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { rel_tol: 1e-10, target_tol: 1e-14, max_iter: 40_000 }
    }
}

#[derive(Clone, Debug)]
pub struct PoissonSolution {
    pub psi: ScalarField,
    pub iterations: usize,
    /// `‖b − Au‖/‖b‖` of the row-scaled system.
    pub rel_residual: f64,
    /// `sup |Δ_h ψ − (4/n)k|` with the assembled operator.
    pub operator_residual: f64,
}

struct Trig {
    coef: Vec<(i64, C64)>,
}

impl Trig {
    fn new(samples: &[f64]) -> Self {
        let m = samples.len();
        let half = (m / 2) as i64;
        let coef = (-half..=half)
            .map(|j| {
                let acc: C64 = samples
                    .iter()
                    .enumerate()
                    .map(|(k, &x)| C64::from_polar(x, -2.0 * PI * (j as f64) * k as f64 / m as f64))
                    .sum();
                let w = if j.abs() == half { 0.5 } else { 1.0 };
                (j, acc * (w / m as f64))
            })
            .filter(|(_, c)| c.norm() > 0.0)
            .collect();
        Trig { coef }
    }
    fn eval(&self, theta: f64) -> f64 {
        self.coef.iter().map(|&(j, c)| (c * C64::from_polar(1.0, j as f64 * theta)).re).sum()
    }
}

struct Csr {
    ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl Csr {
    fn mul(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for p in self.ptr[r]..self.ptr[r + 1] {
                acc += self.val[p] * x[self.col[p]];
            }
            *yr = acc;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Shortley–Weller five-point discretization, exact for quadratics, solved by BiCGSTAB on the
/// Jacobi-scaled system.
pub fn solve_poisson(grid: &DiskGrid, p: &PoissonProblem, opts: SolverOptions) -> Result<PoissonSolution> {
    if p.rhs.len() != grid.len() {
        return Err(Error::GridMismatch { expected: grid.len(), got: p.rhs.len() });
    }
    if p.n == 0 {
        return Err(Error::RankTooSmall { n: 0, what: "Poisson right-hand side uses 4/n".into() });
    }
    if p.rhs.iter().chain(&p.boundary).any(|x| !x.is_finite()) {
        return Err(Error::Precondition("Poisson data must be finite".into()));
    }
    let rho = Trig::new(&p.boundary);
    let r = grid.radius();
    let h = grid.spacing();
    let on_circle = |z: C64| r - z.norm() < 1e-6 * h;
    let mut unknown_of = vec![usize::MAX; grid.len()];
    let mut unknowns = Vec::new();
    for k in 0..grid.len() {
        if !on_circle(grid.node(k)) {
            unknown_of[k] = unknowns.len();
            unknowns.push(k);
        }
    }
    let nu = unknowns.len();
    let mut ptr = vec![0];
    let mut col = Vec::new();
    let mut val = Vec::new();
    let mut b = vec![0.0; nu];
    let dirs = [(1, 0), (-1, 0), (0, 1), (0, -1)];
    for (row, &k) in unknowns.iter().enumerate() {
        let z = grid.node(k);
        let (i, j) = grid.lattice(k);
        // (arm length, unknown column or boundary value)
        let mut arms = [(0.0, Ok(0usize)); 4];
        for (a, &(di, dj)) in arms.iter_mut().zip(&dirs) {
            match grid.index_of(i + di, j + dj) {
                Some(q) if unknown_of[q] != usize::MAX => *a = (h, Ok(unknown_of[q])),
                Some(q) => *a = (h, Err(rho.eval(grid.node(q).arg()))),
                None => {
                    let d = C64::new(di as f64, dj as f64);
                    let zd = z.re * d.re + z.im * d.im;
                    let t = -zd + (zd * zd + r * r - z.norm_sqr()).sqrt();
                    let hit = z + d * t;
                    *a = (t.min(h), Err(rho.eval(hit.arg())));
                }
            }
        }
        let mut diag = 0.0;
        let mut rhs = 4.0 / p.n as f64 * p.rhs[k];
        for axis in 0..2 {
            let (plus, minus) = (arms[2 * axis], arms[2 * axis + 1]);
            let (hp, hm) = (plus.0, minus.0);
            diag -= 2.0 / (hp * hm);
            for (arm, other) in [(plus, hm), (minus, hp)] {
                let c = 2.0 / (arm.0 * (arm.0 + other));
                match arm.1 {
                    Ok(q) => {
                        col.push(q);
                        val.push(c);
                    }
                    Err(g) => rhs -= c * g,
                }
            }
        }
        col.push(row);
        val.push(diag);
        b[row] = rhs;
        ptr.push(col.len());
    }
    let a = Csr { ptr, col, val };
    // Jacobi row scaling
    let mut dinv = vec![0.0; nu];
    for (rw, d) in dinv.iter_mut().enumerate() {
        let p = a.ptr[rw + 1] - 1;
        *d = 1.0 / a.val[p];
    }
    let scaled = Csr {
        ptr: a.ptr.clone(),
        col: a.col.clone(),
        val: (0..nu).flat_map(|rw| (a.ptr[rw]..a.ptr[rw + 1]).map(move |p| (rw, p))).map(|(rw, p)| a.val[p] * dinv[rw]).collect(),
    };
    let bs: Vec<f64> = b.iter().zip(&dinv).map(|(x, d)| x * d).collect();
    let (u, iterations, rel_residual) = bicgstab(&scaled, &bs, opts)?;
    let mut psi = vec![0.0; grid.len()];
    for k in 0..grid.len() {
        psi[k] = if unknown_of[k] == usize::MAX { rho.eval(grid.node(k).arg()) } else { u[unknown_of[k]] };
    }
    let mut au = vec![0.0; nu];
    a.mul(&u, &mut au);
    let operator_residual = au.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    Ok(PoissonSolution { psi: ScalarField::from_real(psi), iterations, rel_residual, operator_residual })
}

fn bicgstab(a: &Csr, b: &[f64], opts: SolverOptions) -> Result<(Vec<f64>, usize, f64)> {
    let n = b.len();
    let bn = norm(b);
    let mut x = vec![0.0; n];
    if bn == 0.0 {
        return Ok((x, 0, 0.0));
    }
    let mut r = b.to_vec();
    let mut best = (x.clone(), 1.0);
    let mut it = 0;
    let mut ax = vec![0.0; n];
    'restart: while it < opts.max_iter {
        let r0 = r.clone();
        let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        let mut v = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut s = vec![0.0; n];
        let mut t = vec![0.0; n];
        while it < opts.max_iter {
            it += 1;
            let rho1 = dot(&r0, &r);
            if rho1.abs() < 1e-300 || omega == 0.0 {
                continue 'restart;
            }
            let beta = (rho1 / rho) * (alpha / omega);
            rho = rho1;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            a.mul(&p, &mut v);
            let den = dot(&r0, &v);
            if den == 0.0 {
                continue 'restart;
            }
            alpha = rho / den;
            for i in 0..n {
                s[i] = r[i] - alpha * v[i];
            }
            a.mul(&s, &mut t);
            let tt = dot(&t, &t);
            omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
            for i in 0..n {
                x[i] += alpha * p[i] + omega * s[i];
                r[i] = s[i] - omega * t[i];
            }
            let rel = norm(&r) / bn;
            if rel < best.1 {
                best = (x.clone(), rel);
            }
            if rel <= opts.target_tol || it % 500 == 0 {
                // refresh the recursive residual against the true one
                a.mul(&x, &mut ax);
                for i in 0..n {
                    r[i] = b[i] - ax[i];
                }
                let true_rel = norm(&r) / bn;
                if true_rel <= opts.target_tol {
                    return Ok((x, it, true_rel));
                }
                continue 'restart;
            }
        }
    }
    let (x, _) = best;
    a.mul(&x, &mut ax);
    let rel = norm(&b.iter().zip(&ax).map(|(p, q)| p - q).collect::<Vec<_>>()) / bn;
    if rel <= opts.rel_tol {
        return Ok((x, it, rel));
    }
    Err(Error::SolverDiverged { iterations: it, residual: rel })
}

/// Outcome of `tweak_metric`.
#[derive(Clone, Debug)]
pub struct TweakResult {
    pub metric: MetricField,
    pub psi: ScalarField,
    pub theta: f64,
    pub c: f64,
    pub report: VerificationReport,
}

/// `H_ψ = e^{−ψ}H` with `Δψ = (4/n)k`, `k = n(θ + target)`, so every eigenvalue of the curvature
/// relative to `H_ψ` clears `target`.
pub fn tweak_metric(grid: &DiskGrid, h: &MetricField, target: f64, tol: f64, opts: SolverOptions) -> Result<TweakResult> {
    let n = h.rank();
    let curv = curvature_field(grid, h, None)?;
    let min_before = curv.min_relative_eigenvalue(grid, h)?;
    let theta = (-min_before).max(0.0);
    let c = theta + target;
    let r = grid.radius();
    let prob = PoissonProblem::constant(grid, n as f64 * c, c * r * r, n);
    let sol = solve_poisson(grid, &prob, opts)?;
    let psi_vals = sol.psi.re();
    let hp = h.conformal_change(&psi_vals)?;
    let after = curvature_field(grid, &hp, None)?.min_relative_eigenvalue(grid, &hp)?;
    let (lo, hi) = psi_vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let closed = (0..grid.len()).map(|k| (psi_vals[k] - c * grid.node(k).norm_sqr()).abs()).fold(0.0, f64::max);
    let mut rep = VerificationReport::new();
    rep.push(Check::info("theta", theta));
    rep.push(Check::info("k", n as f64 * c).note("k = n(theta + target), constant"));
    rep.push(Check::info("min_relative_curvature_before", min_before));
    rep.push(Check::le("solver_rel_residual", sol.rel_residual, opts.rel_tol, 0.0));
    rep.push(Check::info("solver_iterations", sol.iterations as f64));
    rep.push(Check::le("radial_branch_error", closed, 0.0, 1e-6).note("psi = C|z|^2 with C = theta + target"));
    rep.push(Check::ge("min_relative_curvature_after", after, target, tol));
    rep.push(Check::info("osc_psi", hi - lo));
    Ok(TweakResult { metric: hp, psi: sol.psi, theta, c, report: rep })
}

/// `sup |R(e^{−ψ}H) − e^{−ψ}(R(H) + ∂∂̄ψ·H)|` over the interior mask.
pub fn transformation_law_residual(grid: &DiskGrid, h: &MetricField, psi: &ScalarField) -> Result<f64> {
    let psi_re = psi.re();
    let hp = h.conformal_change(&psi_re)?;
    let lhs = curvature_field(grid, &hp, None)?;
    let base = curvature_field(grid, h, None)?;
    let ddb = grid.dz_dzbar(psi)?;
    let mut worst = 0.0f64;
    for k in (0..grid.len()).filter(|&k| grid.is_interior(k)) {
        let want: CMat = (base.r(k) + h.at(k) * C64::new(ddb.get(k).re, 0.0)) * C64::new((-psi_re[k]).exp(), 0.0);
        worst = worst.max(hermitian_part(&(lhs.r(k) - want)).iter().map(|z| z.norm()).fold(0.0, f64::max));
    }
    Ok(worst)
}
