//! Cut-off, rescaling, k-th roots and the compactly supported isotropic test section.

use std::f64::consts::PI;

use crate::cauchy::{cauchy_eval, cauchy_transform_masked, dbar_residual};
use crate::error::{Error, Result};
use crate::geometry::{bilinear_companion, covariant_d01, ConnectionField, Metric, MetricField};
use crate::grid::{DiskGrid, ScalarField, SectionField};
use crate::isotropy::{isotropy_residual_field, make_isotropic_pair, phase_normalize, PhaseNormalization};
use crate::linalg::{hermitian_eigenvalues, hermitian_power, sesq, C64};
use crate::report::{Check, VerificationReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RampShape {
    /// Linear ramp on `[0.52r, 0.88r]` smoothed by a biweight mollifier of half-width `0.015r`.
    MollifiedLinear,
    /// Cubic smoothstep on `[r/2, 9r/10]`; its peak slope `3.75/r` breaks the budget.
    Smoothstep,
}

/// Radial cut-off `η` with `η = 1` on `B_{r/2}` and `η = 0` off `B_{9r/10}`.
#[derive(Clone, Debug)]
pub struct CutoffProfile {
    pub r: f64,
    pub center: C64,
    pub shape: RampShape,
    pub ramp: (f64, f64),
    pub width: f64,
    /// `(ρ, η(ρ))` on a uniform sampling of `[0, r]`.
    pub samples: Vec<(f64, f64)>,
    pub max_slope: f64,
    pub max_second_difference: f64,
}

const SLOPE_BUDGET: f64 = 3.0;
const PROFILE_SAMPLES: usize = 4001;

// antiderivative of the clamped unit biweight CDF
fn g_unit(u: f64) -> f64 {
    if u <= -1.0 {
        0.0
    } else if u >= 1.0 {
        u
    } else {
        let u2 = u * u;
        15.0 / 16.0 * (u2 / 2.0 - u2 * u2 / 6.0 + u2 * u2 * u2 / 30.0) + u / 2.0 + 5.0 / 32.0
    }
}

fn phi_unit(u: f64) -> f64 {
    if u <= -1.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        15.0 / 16.0 * (u - 2.0 * u.powi(3) / 3.0 + u.powi(5) / 5.0) + 0.5
    }
}

impl CutoffProfile {
    pub fn new(r: f64, center: C64, grid: &DiskGrid) -> Result<Self> {
        Self::with_shape(r, center, grid, RampShape::MollifiedLinear)
    }

    pub fn with_shape(r: f64, center: C64, grid: &DiskGrid, shape: RampShape) -> Result<Self> {
        if !(r > 0.0) || r > grid.radius() * (1.0 + 1e-12) {
            return Err(Error::Precondition(format!("radius exceeds grid: r = {r} > R = {}", grid.radius())));
        }
        let (ramp, width) = match shape {
            RampShape::MollifiedLinear => ((0.52 * r, 0.88 * r), 0.015 * r),
            RampShape::Smoothstep => ((0.5 * r, 0.9 * r), 0.0),
        };
        let across = (ramp.1 - ramp.0) / grid.spacing();
        if across < 8.0 {
            return Err(Error::Precondition(format!(
                "cut-off ramp of radius {r} spans {across:.2} grid spacings; at least 8 are needed"
            )));
        }
        let mut p = CutoffProfile { r, center, shape, ramp, width, samples: Vec::new(), max_slope: 0.0, max_second_difference: 0.0 };
        let d = r / (PROFILE_SAMPLES - 1) as f64;
        p.samples = (0..PROFILE_SAMPLES).map(|i| (i as f64 * d, p.eta(i as f64 * d))).collect();
        let analytic = p.samples.iter().map(|&(x, _)| p.deta(x).abs()).fold(0.0, f64::max);
        let fd = p.samples.windows(2).map(|w| ((w[1].1 - w[0].1) / d).abs()).fold(0.0, f64::max);
        p.max_slope = analytic.max(fd);
        p.max_second_difference = p
            .samples
            .windows(2)
            .map(|w| ((p.deta(w[1].0) - p.deta(w[0].0)) / d).abs())
            .fold(0.0, f64::max);
        if p.max_slope > SLOPE_BUDGET / r {
            return Err(Error::GateFailed { gate: "cut-off slope budget".into(), measured: p.max_slope * r, tol: SLOPE_BUDGET });
        }
        Ok(p)
    }

    pub fn eta(&self, rho: f64) -> f64 {
        let (a, b) = self.ramp;
        match self.shape {
            RampShape::MollifiedLinear => {
                let w = self.width;
                let g = |x: f64| w * g_unit(x / w);
                1.0 - (g(rho - a) - g(rho - b)) / (b - a)
            }
            RampShape::Smoothstep => {
                let x = ((rho - a) / (b - a)).clamp(0.0, 1.0);
                1.0 - x * x * (3.0 - 2.0 * x)
            }
        }
    }

    pub fn deta(&self, rho: f64) -> f64 {
        let (a, b) = self.ramp;
        match self.shape {
            RampShape::MollifiedLinear => {
                let w = self.width;
                -(phi_unit((rho - a) / w) - phi_unit((rho - b) / w)) / (b - a)
            }
            RampShape::Smoothstep => {
                let x = (rho - a) / (b - a);
                if x <= 0.0 || x >= 1.0 {
                    0.0
                } else {
                    -6.0 * x * (1.0 - x) / (b - a)
                }
            }
        }
    }

    /// `η(|z − center|)` on the grid.
    pub fn field(&self, grid: &DiskGrid) -> ScalarField {
        ScalarField::from_fn(grid, |z| C64::new(self.eta((z - self.center).norm()), 0.0))
    }

    /// `∂η/∂z̄ = η′(ρ)(z − p)/(2ρ)`.
    pub fn dbar_field(&self, grid: &DiskGrid) -> ScalarField {
        ScalarField::from_fn(grid, |z| {
            let w = z - self.center;
            let rho = w.norm();
            if rho == 0.0 {
                C64::default()
            } else {
                w * (self.deta(rho) / (2.0 * rho))
            }
        })
    }
}

/// `Φ(z) = z₀ + z/R`, carrying `D_R` onto the disk of radius 1 about `z₀`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RescalingMap {
    pub scale: f64,
    pub center: C64,
}

impl RescalingMap {
    pub fn new(scale: f64, center: C64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::Precondition(format!("rescaling factor must be positive, got {scale}")));
        }
        Ok(RescalingMap { scale, center })
    }
    pub fn apply(&self, z: C64) -> C64 {
        self.center + z / self.scale
    }
    pub fn inverse(&self, w: C64) -> C64 {
        (w - self.center) * self.scale
    }
    pub fn jacobian(&self) -> f64 {
        1.0 / (self.scale * self.scale)
    }
    /// `s ∘ Φ`.
    pub fn pullback<F: Fn(C64) -> Vec<C64>>(&self, f: F) -> impl Fn(C64) -> Vec<C64> {
        let m = *self;
        move |z| f(m.apply(z))
    }
}

/// `∫|∇^{0,1}s|²_H dx dy`, with the flat metric when `h` is `None`.
pub fn conformal_energy(grid: &DiskGrid, s: &SectionField, a: Option<&ConnectionField>, h: Option<&MetricField>) -> Result<f64> {
    let d = covariant_d01(grid, s, a)?;
    d.l2_sq(grid, h, None)
}

/// `conformal_energy / ‖s‖²` for a compactly supported section.
pub fn rayleigh_quotient(grid: &DiskGrid, s: &SectionField, a: Option<&ConnectionField>, h: Option<&MetricField>) -> Result<f64> {
    s.check(grid)?;
    let ring: Vec<bool> = grid.interior().iter().map(|&i| !i).collect();
    let outer = grid.sup_masked(&s.norm_sq_field(None), &ring).sqrt();
    if outer > 0.0 {
        return Err(Error::NotCompact(outer));
    }
    let den = s.l2_sq(grid, h, None)?;
    if !(den > 0.0) {
        return Err(Error::ZeroNorm("section has zero L2 norm".into()));
    }
    Ok(conformal_energy(grid, s, a, h)? / den)
}

#[derive(Clone, Debug)]
pub struct KthRoot {
    pub section: SectionField,
    /// Adjacent node pairs where the continued branch is not the nearest root.
    pub jumps: usize,
}

/// Componentwise `σᵢ^{1/k}`, continued along grid rows from the node nearest `base`.
pub fn kth_root_section(grid: &DiskGrid, sigma: &SectionField, k: u32, base: C64, mask: Option<&[bool]>) -> Result<KthRoot> {
    sigma.check(grid)?;
    if k == 0 {
        return Err(Error::Precondition("root order must be at least 1".into()));
    }
    let region: Vec<bool> = match mask {
        Some(m) => m.to_vec(),
        None => vec![true; grid.len()],
    };
    for (node, _) in region.iter().enumerate().filter(|(_, &m)| m) {
        if sigma.at(node).iter().any(|v| v.norm() < 1e-12) {
            return Err(Error::VanishingSection { node });
        }
    }
    let start = (0..grid.len())
        .filter(|&q| region[q])
        .min_by(|&a, &b| (grid.node(a) - base).norm().total_cmp(&(grid.node(b) - base).norm()))
        .ok_or_else(|| Error::Precondition("empty root region".into()))?;
    let kf = k as f64;
    let omega: Vec<C64> = (0..k).map(|m| C64::from_polar(1.0, 2.0 * PI * m as f64 / kf)).collect();
    let n = sigma.rank();
    let principal = |v: C64| v.powf(1.0 / kf);
    let closest = |v: C64, reference: C64| {
        let r0 = principal(v);
        omega.iter().map(|w| r0 * w).min_by(|a, b| (a - reference).norm().total_cmp(&(b - reference).norm())).unwrap()
    };
    let mut roots: Vec<Option<Vec<C64>>> = vec![None; grid.len()];
    roots[start] = Some(sigma.at(start).into_iter().map(principal).collect());
    let in_region = |i: i32, j: i32| grid.index_of(i, j).filter(|&q| region[q]);
    let continue_from = |roots: &mut Vec<Option<Vec<C64>>>, q: usize, from: usize| {
        let reference = roots[from].clone().unwrap();
        let v = sigma.at(q);
        roots[q] = Some((0..n).map(|c| closest(v[c], reference[c])).collect());
    };
    let (i0, j0) = grid.lattice(start);
    let half = (grid.radius() / grid.spacing()).floor() as i32 + 1;
    let sweep_row = |roots: &mut Vec<Option<Vec<C64>>>, j: i32| {
        for dir in [1, -1] {
            let range: Vec<i32> = if dir == 1 { (-half..=half).collect() } else { (-half..=half).rev().collect() };
            for i in range {
                if let (Some(q), Some(p)) = (in_region(i, j), in_region(i - dir, j)) {
                    if roots[q].is_none() && roots[p].is_some() {
                        continue_from(roots, q, p);
                    }
                }
            }
        }
    };
    let _ = i0;
    sweep_row(&mut roots, j0);
    for dj in [1, -1] {
        let mut j = j0 + dj;
        while j.abs() <= half {
            for i in -half..=half {
                if let (Some(q), Some(p)) = (in_region(i, j), in_region(i, j - dj)) {
                    if roots[p].is_some() {
                        continue_from(&mut roots, q, p);
                    }
                }
            }
            sweep_row(&mut roots, j);
            j += dj;
        }
    }
    if let Some(q) = (0..grid.len()).find(|&q| region[q] && roots[q].is_none()) {
        return Err(Error::Precondition(format!("root region is not row-connected at node {q}")));
    }
    let mut jumps = 0;
    for q in (0..grid.len()).filter(|&q| region[q]) {
        let (i, j) = grid.lattice(q);
        for nb in [in_region(i + 1, j), in_region(i, j + 1)].into_iter().flatten() {
            let (a, b) = (roots[q].as_ref().unwrap(), roots[nb].as_ref().unwrap());
            for c in 0..n {
                let best = closest(sigma.comp(c).get(nb), a[c]);
                if (best - b[c]).norm() > 1e-12 * b[c].norm().max(1.0) {
                    jumps += 1;
                }
            }
        }
    }
    let comps = (0..n)
        .map(|c| ScalarField::new(roots.iter().map(|r| r.as_ref().map(|v| v[c]).unwrap_or_default()).collect()))
        .collect();
    Ok(KthRoot { section: SectionField::new(comps)?, jumps })
}

/// Range of `|σ_k|²_H / (|σ|²_{H^k})^{1/k}` over masked nodes; the sandwich asks for `[1, n]`.
pub fn root_sandwich(sigma: &SectionField, root: &SectionField, h: &MetricField, k: u32, mask: Option<&[bool]>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for q in 0..sigma.len() {
        if mask.is_none_or(|m| m[q]) {
            let hk = hermitian_power(h.at(q), k as f64);
            let (s, r) = (sigma.at(q), root.at(q));
            let ratio = sesq(&r, h.at(q), &r).re / sesq(&s, &hk, &s).re.powf(1.0 / k as f64);
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
    }
    (lo, hi)
}

/// Gates and constants for the destabilizing section.
#[derive(Clone, Copy, Debug)]
pub struct DestabilizerOptions {
    pub iso_tol: f64,
    pub dbar_tol: f64,
    pub norm_tol: f64,
    pub leibniz_tol: f64,
    pub a: f64,
    pub kappa: f64,
}

impl Default for DestabilizerOptions {
    fn default() -> Self {
        DestabilizerOptions { iso_tol: 1e-8, dbar_tol: 1e-6, norm_tol: 1e-8, leibniz_tol: 5e-2, a: 5.0 / 9.0, kappa: 1.0 }
    }
}

#[derive(Clone, Debug)]
pub struct Destabilizer {
    pub s: SectionField,
    pub sigma: SectionField,
    pub cutoff: CutoffProfile,
    pub phase: PhaseNormalization,
    pub quotient: f64,
    pub report: VerificationReport,
}

/// `s = η_r σ` on `B_r(p)` with `σ` holomorphic and isotropic, normalized to `‖s‖² = 3π/2`.
pub fn build_destabilizing_section(
    grid: &DiskGrid,
    metric: &Metric,
    p: C64,
    r: f64,
    seed: u64,
    opts: DestabilizerOptions,
) -> Result<Destabilizer> {
    let n = metric.rank();
    if n < 2 {
        return Err(Error::RankTooSmall { n, what: "isotropic sections need n >= 2".into() });
    }
    if p.norm() + r > grid.radius() * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!("radius exceeds grid: |p| + r = {} > R = {}", p.norm() + r, grid.radius())));
    }
    let cutoff = CutoffProfile::new(r, p, grid)?;
    let h = metric.sample(grid)?;
    let ball = grid.ball_mask(p, r);
    let mut worst_cmp = 0.0f64;
    for q in (0..grid.len()).filter(|&q| ball[q]) {
        let ev = hermitian_eigenvalues(h.at(q));
        worst_cmp = worst_cmp.max((ev[0] / 0.5).recip()).max(ev[ev.len() - 1] / 2.0);
    }
    if worst_cmp > 1.0 {
        return Err(Error::GateFailed { gate: "metric comparison 1/2 <= H <= 2".into(), measured: worst_cmp, tol: 1.0 });
    }

    let rb = r / 0.9;
    let m = grid.boundary_samples();
    let pts: Vec<C64> = crate::grid::boundary_angles(m).iter().map(|&t| p + C64::from_polar(rb, t)).collect();
    let g = pts.iter().enumerate().map(|(i, &z)| bilinear_companion(&metric.at(z), i)).collect::<Result<Vec<_>>>()?;
    let pair = make_isotropic_pair(&g, seed)?;
    let chi = pair.chi_tilde(p, rb)?;
    let phase = phase_normalize(&chi, &metric.at(p))?;
    let sigma = cauchy_transform_masked(&phase.chi, grid, &ball)?;

    let sup_sigma = sigma.norm_sq_field(None).values().iter().map(|v| v.re.sqrt()).fold(0.0, f64::max);
    let iso = isotropy_residual_field(&sigma, &h, Some(&ball))?;
    if iso > opts.iso_tol * sup_sigma * sup_sigma {
        return Err(Error::GateFailed { gate: "sigma isotropy".into(), measured: iso, tol: opts.iso_tol * sup_sigma * sup_sigma });
    }
    let inner_ball = grid.ball_mask(p, r - 2.0 * grid.spacing());
    let dres = dbar_residual(grid, &sigma, Some(&inner_ball))?;
    if dres.sup > opts.dbar_tol * sup_sigma {
        return Err(Error::GateFailed { gate: "sigma holomorphy".into(), measured: dres.sup, tol: opts.dbar_tol * sup_sigma });
    }
    let s0 = cauchy_eval(&phase.chi, p)?;
    let c0 = sesq(&s0, &metric.at(p), &s0).re.sqrt();
    if (c0 - 1.0).abs() > opts.norm_tol {
        return Err(Error::GateFailed { gate: "center normalization".into(), measured: (c0 - 1.0).abs(), tol: opts.norm_tol });
    }

    let eta = cutoff.field(grid);
    let raw = sigma.mul_field(&eta);
    let raw_norm = raw.l2_sq(grid, Some(&h), None)?;
    if !(raw_norm > 0.0) {
        return Err(Error::ZeroNorm("cut-off section vanishes".into()));
    }
    let scale = C64::new((1.5 * PI / raw_norm).sqrt(), 0.0);
    let s = raw.scale(scale);
    let sigma = sigma.scale(scale);

    let nf = n as f64;
    let mut rep = VerificationReport::new();
    rep.env("r", r);
    rep.env("p_re", p.re);
    rep.env("p_im", p.im);
    rep.env("n", n as u64);
    rep.env("phase_branch", phase.branch.as_str());
    rep.env("phase_lambda", phase.lambda);
    rep.push(Check::le("sigma_dbar_sup", dres.sup, opts.dbar_tol * sup_sigma, 0.0));
    rep.push(Check::le("sigma_isotropy_sup", iso, opts.iso_tol * sup_sigma * sup_sigma, 0.0));
    rep.push(Check::near("sigma_center_norm", c0, 1.0, opts.norm_tol));

    // (1) support
    let outside: Vec<bool> = grid.nodes().iter().map(|z| (z - p).norm() > 0.9 * r).collect();
    let sup_out = grid.sup_masked(&s.norm_sq_field(None), &outside).sqrt();
    rep.push(Check::le("support_outside_sup", sup_out, 0.0, 0.0));
    // (2) window
    let total = s.l2_sq(grid, Some(&h), None)?;
    rep.push(Check::inside("l2_norm_sq", total, PI, 2.0 * PI));
    // (3) energy
    let energy = conformal_energy(grid, &s, None, Some(&h))?;
    let on_ball = s.l2_sq(grid, Some(&h), Some(&ball))?;
    let c3 = energy * r * r / on_ball;
    rep.push(Check::le("dbar_energy", energy, 9.0 / (r * r) * on_ball, 0.0));
    rep.push(Check::info("item3_constant", c3));
    // (4) inner mass
    let inner = s.l2_sq(grid, Some(&h), Some(&grid.ball_mask(p, r / 2.0)))?;
    let sigma_ball = sigma.l2_sq(grid, Some(&h), Some(&ball))?;
    let c4 = sigma_ball / inner;
    rep.push(Check::ge("inner_mass", 81.0 * nf * PI / 4.0 * inner, sigma_ball, 0.0));
    rep.push(Check::info("item4_constant", c4));
    rep.push(Check::le("chained_constant", c3 * c4, 729.0 * nf * PI / 4.0, 0.0));
    let quotient = energy / total;
    rep.push(Check::le("rayleigh_quotient", quotient, 729.0 * nf * PI / (4.0 * r * r), 0.0));
    rep.push(Check::info("rayleigh_quotient_r2", quotient * r * r));
    // Leibniz: the finite-difference energy against (∂̄η)σ
    let leib = sigma.mul_field(&cutoff.dbar_field(grid)).l2_sq(grid, Some(&h), None)?;
    rep.push(Check::le("leibniz_rel_gap", (energy - leib).abs() / leib, 0.0, opts.leibniz_tol));
    // concentration on both candidate balls
    let ka = opts.a / opts.kappa.sqrt();
    for (name, rad) in [("concentration_half_ball", ka * r / 2.0), ("concentration_nine_tenths_ball", 0.9 * opts.a * r)] {
        let part = sigma.l2_sq(grid, Some(&h), Some(&grid.ball_mask(p, rad)))?;
        rep.push(Check::info(name, sigma_ball / part));
    }
    rep.push(Check::le("cutoff_max_slope", cutoff.max_slope * r, 3.0, 0.0));
    Ok(Destabilizer { s, sigma, cutoff, phase, quotient, report: rep })
}
