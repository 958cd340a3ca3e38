//! Diagonal model bundle with Gaussian metric and its isotropic peak sections.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::cauchy::{cauchy_transform, dbar_residual};
use crate::error::{Error, Result};
use crate::geometry::{covariant_d01, curvature_field, ConnectionField, Metric};
use crate::grid::{DiskGrid, ScalarField, SectionField};
use crate::isotropy::{isotropy_residual, make_isotropic_line_on, phase_normalize, PhaseNormalization};
use crate::linalg::{diag, CMat, C64};
use crate::report::{Check, VerificationReport};

/// Weights `k₁ ≥ … ≥ kₙ ≥ 0` and constants `Cᵢ > 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    k: Vec<f64>,
    c: Vec<f64>,
}

impl ModelBundle {
    pub fn new(k: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        if k.is_empty() || k.len() != c.len() {
            return Err(Error::Precondition(format!("K has {} entries but C has {}", k.len(), c.len())));
        }
        if k.windows(2).any(|w| w[0] < w[1]) || k.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::Precondition(format!("K must be nonincreasing and nonnegative, got {k:?}")));
        }
        if c.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::Precondition(format!("C must be positive, got {c:?}")));
        }
        Ok(ModelBundle { k, c })
    }
    pub fn rank(&self) -> usize {
        self.k.len()
    }
    pub fn k(&self) -> &[f64] {
        &self.k
    }
    pub fn c(&self) -> &[f64] {
        &self.c
    }
    pub fn kappa(&self) -> f64 {
        self.c.iter().copied().fold(0.0, f64::max)
    }
    pub fn k_min(&self) -> f64 {
        *self.k.last().unwrap()
    }

    /// Indices of equal weight carrying `σ₀`. Isotropy for `g_{K,C}` at every `z` splits over
    /// blocks of equal `kᵢ`, so a block needs at least two entries; the `kₙ` block is preferred,
    /// then the largest remaining one.
    pub fn isotropic_block(&self) -> Result<Vec<usize>> {
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        for (i, &k) in self.k.iter().enumerate() {
            match blocks.last_mut() {
                Some(b) if self.k[b[0]] == k => b.push(i),
                _ => blocks.push(vec![i]),
            }
        }
        let last = blocks.pop().unwrap();
        if last.len() >= 2 {
            return Ok(last);
        }
        blocks
            .into_iter()
            .filter(|b| b.len() >= 2)
            .max_by_key(|b| (b.len(), b[0]))
            .ok_or_else(|| Error::Precondition(format!("no two equal weights in K = {:?}; isotropic sections vanish", self.k)))
    }

    /// Rescale coordinates so that `kₙ = 1`; returns the bundle and the length factor `√kₙ`.
    pub fn normalized(&self) -> Result<(ModelBundle, f64)> {
        let kn = self.k_min();
        if kn == 0.0 {
            return Ok((self.clone(), 1.0));
        }
        Ok((ModelBundle { k: self.k.iter().map(|x| x / kn).collect(), c: self.c.clone() }, kn.sqrt()))
    }

    /// `H_{K,C} = diag(Cᵢ e^{−kᵢ|z|²/2})`.
    pub fn metric(&self) -> Metric {
        let fs: Vec<Arc<dyn Fn(C64) -> f64 + Send + Sync>> = self
            .k
            .iter()
            .zip(&self.c)
            .map(|(&k, &c)| Arc::new(move |z: C64| c * (-k * z.norm_sqr() / 2.0).exp()) as Arc<_>)
            .collect();
        Metric::diagonal(fs)
    }

    /// `H_{0,K} = diag(Cᵢ e^{−(kᵢ−kₙ)|z|²/2})`, so that `H_{K,C} = e^{−kₙ|z|²/2} H_{0,K}`.
    pub fn reduced_metric(&self) -> Metric {
        let kn = self.k_min();
        let fs: Vec<Arc<dyn Fn(C64) -> f64 + Send + Sync>> = self
            .k
            .iter()
            .zip(&self.c)
            .map(|(&k, &c)| Arc::new(move |z: C64| c * (-(k - kn) * z.norm_sqr() / 2.0).exp()) as Arc<_>)
            .collect();
        Metric::diagonal(fs)
    }

    /// Constant bilinear form `diag(C)`, the companion of `H_{0,K}` at the origin.
    pub fn gc_origin(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.c.clone()))
    }

    /// `A_K = ⊕ (kᵢ/2)(z dz̄ − z̄ dz)`.
    pub fn connection(&self, grid: &DiskGrid) -> ConnectionField {
        let n = self.rank();
        let dz = grid.nodes().iter().map(|&z| self.diag_of(|k| -z.conj() * (k / 2.0))).collect();
        let dzbar = grid.nodes().iter().map(|&z| self.diag_of(|k| z * (k / 2.0))).collect();
        ConnectionField::from_parts(n, dz, Some(dzbar))
    }

    fn diag_of(&self, f: impl Fn(f64) -> C64) -> CMat {
        let n = self.rank();
        CMat::from_fn(n, n, |i, j| if i == j { f(self.k[i]) } else { C64::default() })
    }

    /// `∂(A^{0,1}) − ∂̄(A^{1,0})` per diagonal entry, the `dz∧dz̄` coefficient of `F_{A_K}`.
    pub fn connection_curvature(&self, grid: &DiskGrid) -> Result<Vec<ScalarField>> {
        let a = self.connection(grid);
        (0..self.rank())
            .map(|i| {
                let a10 = ScalarField::new((0..grid.len()).map(|k| a.dz(k)[(i, i)]).collect());
                let a01 = ScalarField::new((0..grid.len()).map(|k| a.dzbar(k).unwrap()[(i, i)]).collect());
                let d01 = grid.wirtinger(&a01)?.0;
                let d10 = grid.dbar(&a10)?;
                Ok(d01.zip_map(&d10, |x, y| x - y))
            })
            .collect()
    }
}

/// Residual gates applied to `σ₀` before building the Gaussian section.
#[derive(Clone, Copy, Debug)]
pub struct GaussianGates {
    pub dbar_tol: f64,
    pub iso_tol: f64,
}

impl Default for GaussianGates {
    fn default() -> Self {
        GaussianGates { dbar_tol: 1e-6, iso_tol: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct GaussianSection {
    /// Holomorphic datum in the holomorphic frame.
    pub sigma0: SectionField,
    /// Representative `σᵢ = e^{−kᵢ|z|²/2}σ₀ᵢ` in the `A_K` gauge.
    pub sigma: SectionField,
    /// `|σ|²_{H_{K,C}} = Σ Cᵢ e^{−kᵢ|z|²/2}|σ₀ᵢ|²`.
    pub norm_sq: ScalarField,
    /// Euclidean sup of the boundary trace of `σ₀`; the interior sup when no trace is known.
    pub trace_sup: f64,
}

/// Isotropic holomorphic `σ₀` from seeded twisted-constant data on the circle of radius `R/0.9`.
pub fn model_sigma0(mb: &ModelBundle, grid: &DiskGrid, seed: u64) -> Result<(SectionField, PhaseNormalization)> {
    let rb = grid.radius() / 0.9;
    let g = vec![mb.gc_origin(); grid.boundary_samples()];
    let pair = make_isotropic_line_on(&g, &mb.isotropic_block()?, seed)?;
    let chi = pair.chi_tilde(C64::default(), rb)?;
    let h0 = diag(mb.c());
    let pn = phase_normalize(&chi, &h0)?;
    let s = cauchy_transform(&pn.chi, grid)?;
    Ok((s, pn))
}

/// `σ = e^{−K|z|²/2}σ₀`, refusing `σ₀` that fails its holomorphy or isotropy gate.
pub fn gaussian_section(
    mb: &ModelBundle,
    grid: &DiskGrid,
    sigma0: &SectionField,
    gates: GaussianGates,
) -> Result<GaussianSection> {
    sigma0.check(grid)?;
    let n = mb.rank();
    if sigma0.rank() != n {
        return Err(Error::Precondition(format!("sigma0 has rank {} but the bundle has rank {n}", sigma0.rank())));
    }
    if mb.k_min() != 0.0 && mb.k_min() != 1.0 {
        return Err(Error::Precondition("normalize the bundle so that k_n = 1 first".into()));
    }
    let scale = sigma0.comps().iter().map(|c| c.sup()).fold(0.0, f64::max).max(1e-300);
    let d = dbar_residual(grid, sigma0, None)?;
    if d.sup > gates.dbar_tol * scale {
        return Err(Error::GateFailed { gate: "sigma0 holomorphy".into(), measured: d.sup, tol: gates.dbar_tol * scale });
    }
    if n >= 2 {
        let iso = isotropy_residual(sigma0, &mb.gc_origin());
        if iso > gates.iso_tol * scale * scale {
            return Err(Error::GateFailed { gate: "sigma0 isotropy".into(), measured: iso, tol: gates.iso_tol * scale * scale });
        }
    }
    let comps = (0..n)
        .map(|i| {
            let k = mb.k[i];
            ScalarField::new(
                grid.nodes().iter().zip(sigma0.comp(i).values()).map(|(z, v)| v * (-k * z.norm_sqr() / 2.0).exp()).collect(),
            )
        })
        .collect();
    let sigma = SectionField::new(comps)?;
    let norm_sq = ScalarField::new(
        (0..grid.len())
            .map(|p| {
                let r2 = grid.node(p).norm_sqr();
                let v: f64 = (0..n).map(|i| mb.c[i] * (-mb.k[i] * r2 / 2.0).exp() * sigma0.comp(i).get(p).norm_sqr()).sum();
                C64::new(v, 0.0)
            })
            .collect(),
    );
    let trace_sup = sigma0.norm_sq_field(None).values().iter().map(|v| v.re.sqrt()).fold(0.0, f64::max);
    Ok(GaussianSection { sigma0: sigma0.clone(), sigma, norm_sq, trace_sup })
}

/// Measured items of the Gaussian lemma for a section on `D_R`, `R` the grid radius.
pub fn verify_gaussian(mb: &ModelBundle, grid: &DiskGrid, gs: &GaussianSection, a: f64) -> Result<VerificationReport> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Precondition(format!("a must lie in (0,1), got {a}")));
    }
    let mut rep = VerificationReport::new();
    let n = mb.rank();
    let r = grid.radius();
    let kappa = mb.kappa();
    let kn = mb.k_min();
    let int = grid.interior();
    rep.env("convention", "F_{A_K} = k dz^dz-bar is twice the Chern coefficient k/2 of H_{K,C}; norms use H_{K,C} on sigma0");

    // (1) curvature of A_K and of H_{K,C}
    let f = mb.connection_curvature(grid)?;
    let e1 = (0..n)
        .map(|i| grid.sup_masked(&f[i].map(|v| v - mb.k[i]), int))
        .fold(0.0, f64::max);
    rep.push(Check::le("connection_curvature_error", e1, 0.0, 1e-9));
    let hm = mb.metric().sample(grid)?;
    let curv = curvature_field(grid, &hm, None)?;
    let e1b = (0..grid.len())
        .filter(|&p| int[p])
        .map(|p| (0..n).map(|i| (curv.r(p)[(i, i)].re - 0.5 * mb.k[i] * hm.at(p)[(i, i)].re).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    rep.push(Check::le("chern_curvature_error", e1b, 0.0, 1e-6));

    // (2) A_K-holomorphy
    let conn = mb.connection(grid);
    let d = covariant_d01(grid, &gs.sigma, Some(&conn))?;
    let e2 = grid.sup_masked(&d.norm_sq_field(None), int).sqrt();
    rep.push(Check::le("covariant_dbar_residual", e2, 0.0, 1e-7));

    // (3) isotropy for g_{K,C}
    let e3 = if n >= 2 {
        (0..grid.len())
            .map(|p| {
                let r2 = grid.node(p).norm_sqr();
                (0..n)
                    .map(|i| gs.sigma0.comp(i).get(p).powi(2) * (mb.c[i] * (-mb.k[i] * r2 / 2.0).exp()))
                    .sum::<C64>()
                    .norm()
            })
            .fold(0.0, f64::max)
    } else {
        0.0
    };
    if n >= 2 {
        rep.push(Check::le("isotropy_residual", e3, 0.0, 1e-8));
    }

    // (4) normalization at the center
    let origin = grid.index_of(0, 0).ok_or_else(|| Error::Precondition("origin is not a node".into()))?;
    rep.push(Check::near("center_norm", gs.norm_sq.get(origin).re.sqrt(), 1.0, 1e-8));

    // (5) factorization and reduced bound
    let red = mb.reduced_metric().sample(grid)?;
    let reduced = gs.sigma0.norm_sq_field(Some(&red));
    let mut fact = 0.0f64;
    let mut red_sup = 0.0f64;
    for p in 0..grid.len() {
        let want = (-kn * grid.node(p).norm_sqr() / 2.0).exp() * reduced.get(p).re;
        let got = gs.norm_sq.get(p).re;
        fact = fact.max((got - want).abs() / want.abs().max(1e-300));
        red_sup = red_sup.max(reduced.get(p).re.sqrt());
    }
    rep.push(Check::le("factorization_rel_error", fact, 0.0, 1e-12));
    // κ presumes a unit boundary trace; scale by the measured one. The slack is the maximum
    // principle tolerance, above the 0.9^M quadrature error of the transform.
    rep.push(Check::le("reduced_norm_sup", red_sup, kappa * gs.trace_sup, 1e-10).note("bound is kappa times sup of the boundary trace"));
    rep.push(Check::info("reduced_norm_sup_over_kappa", red_sup / kappa));
    rep.push(Check::info("trace_sup", gs.trace_sup));

    // (6) pointwise lower bound, recorded only
    let r6 = a * r / kappa.sqrt();
    let ball6 = grid.ball_mask(C64::default(), r6);
    let min6 = (0..grid.len()).filter(|&p| ball6[p]).map(|p| gs.norm_sq.get(p).re.sqrt()).fold(f64::INFINITY, f64::min);
    rep.push(Check::info("pointwise_min_on_ball", min6));
    rep.push(Check::info("printed_lower_bound", (-kn * a * a * r / kappa).exp() * (1.0 - a)));

    // (7) L² window
    let total = grid.integrate(&gs.norm_sq)?.re;
    rep.push(Check::inside("l2_norm_sq", total, PI, 2.0 * PI));

    // (8) concentration
    let r8 = a * r / (2.0 * kappa.sqrt());
    let inner = grid.integrate_masked(&gs.norm_sq, &grid.ball_mask(C64::default(), r8))?.re;
    rep.push(Check::le("concentration_ratio", total / inner, 2.0 * kappa / (1.0 - a), 0.0));
    Ok(rep)
}

/// Gaussian section of the normalized bundle on `D_R`; the `n = 1` case uses `σ₀ ≡ 1`.
pub fn build_gaussian(mb: &ModelBundle, grid: &DiskGrid, seed: u64, gates: GaussianGates) -> Result<(GaussianSection, Option<PhaseNormalization>)> {
    if mb.rank() == 1 {
        let s0 = SectionField::constant(grid, &[C64::new(1.0 / mb.c()[0].sqrt(), 0.0)]);
        return Ok((gaussian_section(mb, grid, &s0, gates)?, None));
    }
    let (s0, pn) = model_sigma0(mb, grid, seed)?;
    let mut gs = gaussian_section(mb, grid, &s0, gates)?;
    gs.trace_sup = pn.chi.holomorphic_part().sup_norm(None);
    Ok((gs, Some(pn)))
}

/// Smallest radius in `radii` for which every item passes.
pub fn smallest_passing_radius(
    mb: &ModelBundle,
    radii: &[f64],
    h: f64,
    m: usize,
    seed: u64,
    a: f64,
) -> Result<(Option<f64>, Vec<(f64, bool)>)> {
    let mut table = Vec::new();
    for &r in radii {
        let grid = DiskGrid::new(r, h, m)?;
        let (gs, _) = build_gaussian(mb, &grid, seed, GaussianGates::default())?;
        table.push((r, verify_gaussian(mb, &grid, &gs, a)?.passed()));
    }
    Ok((table.iter().find(|t| t.1).map(|t| t.0), table))
}
