//! End-to-end runs behind the CLI subcommands.

use std::f64::consts::PI;

use serde_json::Value;

use crate::cauchy::{cauchy_eval, cauchy_transform, dbar_residual, derivative_bound_check, max_principle_check};
use crate::config::RunConfig;
use crate::destabilizer::{build_destabilizing_section, conformal_energy, kth_root_section, root_sandwich, DestabilizerOptions, RescalingMap};
use crate::error::Result;
use crate::gaussian::{build_gaussian, verify_gaussian, GaussianGates, ModelBundle};
use crate::geometry::{bochner_residual, quotient_curvature_gap, Metric};
use crate::grid::{DiskGrid, ScalarField, SectionField};
use crate::isotropy::{isotropy_residual_field, make_isotropic_pair, phase_normalize};
use crate::linalg::{identity, sesq, C64};
use crate::report::{num, Check, VerificationReport};
use crate::stability::{crossover_sweep, default_radii, resolvable, ModelGeometry};
use crate::tweak::{transformation_law_residual, tweak_metric, SolverOptions};

/// A report plus named scalar fields for CSV dumps.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: VerificationReport,
    pub nodes: Vec<C64>,
    pub fields: Vec<(String, ScalarField)>,
}

impl RunOutput {
    fn new(report: VerificationReport, grid: &DiskGrid) -> Self {
        RunOutput { report, nodes: grid.nodes().to_vec(), fields: Vec::new() }
    }
    fn section(mut self, name: &str, s: &SectionField) -> Self {
        for (i, c) in s.comps().iter().enumerate() {
            self.fields.push((format!("{name}_{i}"), c.clone()));
        }
        self
    }
    fn field(mut self, name: &str, f: &ScalarField) -> Self {
        self.fields.push((name.into(), f.clone()));
        self
    }
}

fn base_env(rep: &mut VerificationReport, cmd: &str, cfg: &RunConfig) {
    rep.env("command", cmd);
    rep.env("version", env!("CARGO_PKG_VERSION"));
    rep.env("seed", cfg.seed);
    rep.env("R", num(cfg.radius));
    rep.env("h", num(cfg.h));
    rep.env("M", cfg.m as u64);
    rep.env("n", cfg.n as u64);
}

fn grid_of(cfg: &RunConfig) -> Result<DiskGrid> {
    DiskGrid::new(cfg.radius, cfg.h, cfg.m)
}

fn destab_opts(cfg: &RunConfig) -> DestabilizerOptions {
    DestabilizerOptions {
        iso_tol: cfg.tol.iso,
        dbar_tol: cfg.tol.dbar,
        norm_tol: cfg.tol.norm,
        leibniz_tol: cfg.tol.leibniz,
        a: cfg.a,
        kappa: 1.0,
    }
}

/// Isotropic holomorphic section on the flat disk from seeded boundary data on `|z| = R/0.9`.
pub fn run_construct(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let grid = grid_of(cfg)?;
    let n = cfg.n;
    let g = vec![identity(n).map(|v| v.re); grid.boundary_samples()];
    let pair = make_isotropic_pair(&g, cfg.seed)?;
    let chi = pair.chi_tilde(C64::default(), grid.radius() / 0.9)?;
    let pn = phase_normalize(&chi, &identity(n))?;
    let s = cauchy_transform(&pn.chi, &grid)?;
    let h = Metric::flat(n).sample(&grid)?;

    let mut rep = VerificationReport::new();
    base_env(&mut rep, "construct", cfg);
    rep.env("phase_branch", pn.branch.as_str());
    rep.env("phase_lambda", num(pn.lambda));
    let sup = s.norm_sq_field(None).values().iter().map(|v| v.re.sqrt()).fold(0.0, f64::max);
    rep.push(Check::le("boundary_isotropy_defect", pair.invariant_defect(), 0.0, 1e-12));
    rep.push(Check::le("dbar_sup", dbar_residual(&grid, &s, None)?.sup, 0.0, cfg.tol.dbar * sup));
    rep.push(Check::le("isotropy_sup", isotropy_residual_field(&s, &h, None)?, 0.0, cfg.tol.iso * sup * sup));
    let s0 = cauchy_eval(&pn.chi, C64::default())?;
    rep.push(Check::near("center_norm", sesq(&s0, &identity(n), &s0).re.sqrt(), 1.0, cfg.tol.norm));
    rep.absorb("max_principle", max_principle_check(&grid, &s, &pn.chi, None)?);
    rep.absorb("derivative", derivative_bound_check(&grid, &s, &pn.chi, Some((&h, 1.0)), 1e-9)?);
    Ok(RunOutput::new(rep, &grid).section("s", &s))
}

/// Gaussian peak section of the model bundle `(K, C)` on `D_R`.
pub fn run_gaussian(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let grid = grid_of(cfg)?;
    let mb = ModelBundle::new(cfg.k_vec(), cfg.c_vec())?;
    let (mb, length) = mb.normalized()?;
    let gates = GaussianGates { dbar_tol: cfg.tol.dbar, iso_tol: cfg.tol.iso };
    let (gs, pn) = build_gaussian(&mb, &grid, cfg.seed, gates)?;
    let mut rep = VerificationReport::new();
    base_env(&mut rep, "gaussian", cfg);
    rep.env("K", mb.k().iter().map(|&x| num(x)).collect::<Vec<_>>());
    rep.env("C", mb.c().iter().map(|&x| num(x)).collect::<Vec<_>>());
    rep.env("length_scale", num(length));
    rep.env("a", num(cfg.a));
    rep.env("curvature_convention", "F_A = k dz^dzbar, twice the Chern coefficient k/2");
    if let Some(pn) = pn {
        rep.env("phase_branch", pn.branch.as_str());
    }
    rep.absorb("gaussian", verify_gaussian(&mb, &grid, &gs, cfg.a)?);
    Ok(RunOutput::new(rep, &grid).section("sigma", &gs.sigma).field("norm_sq", &gs.norm_sq))
}

/// Conformal tweak of `H = e^{|z|²/2}·Id`, whose curvature is `−1/2`.
pub fn run_tweak(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let grid = grid_of(cfg)?;
    let h = Metric::conformal(cfg.n, |z| (z.norm_sqr() / 2.0).exp()).sample(&grid)?;
    let opts = SolverOptions { rel_tol: cfg.tol.solver, ..SolverOptions::default() };
    let t = tweak_metric(&grid, &h, cfg.target, cfg.tol.tweak, opts)?;
    let mut rep = VerificationReport::new();
    base_env(&mut rep, "tweak", cfg);
    rep.env("target", num(cfg.target));
    rep.absorb("tweak", t.report);
    let law = transformation_law_residual(&grid, &h, &t.psi)?;
    rep.push(Check::info("tweak/transformation_law_residual", law));
    Ok(RunOutput::new(rep, &grid).field("psi", &t.psi))
}

/// Destabilizing section of radius `r` about `p` for the flat rank-`n` bundle.
pub fn run_destabilize(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let grid = grid_of(cfg)?;
    let p = C64::new(cfg.p[0], cfg.p[1]);
    let d = build_destabilizing_section(&grid, &Metric::flat(cfg.n), p, cfg.r, cfg.seed, destab_opts(cfg))?;
    let mut rep = VerificationReport::new();
    base_env(&mut rep, "destabilize", cfg);
    rep.env("r", num(cfg.r));
    rep.env("p", vec![num(p.re), num(p.im)]);
    rep.env("quotient_bound_constant", "729 n pi / 4");
    rep.absorb("destabilize", d.report);
    let eta = d.cutoff.field(&grid);
    Ok(RunOutput::new(rep, &grid).section("s", &d.s).field("eta", &eta))
}

/// Crossover sweep for the synthetic model with `κ₀ = ε⁻²` over the resolvable `r = 0.25·2^{k/4} ≤ R`.
pub fn run_sweep(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let grid = grid_of(cfg)?;
    let e = cfg.eps_inv_sq();
    let radii = resolvable(&grid, &default_radii(grid.radius()));
    let c = crossover_sweep(&grid, &ModelGeometry::synthetic(e), e, &radii, cfg.n, cfg.seed, destab_opts(cfg))?;
    let mut rep = VerificationReport::new();
    base_env(&mut rep, "sweep", cfg);
    rep.env("eps", num(cfg.eps));
    rep.env("radii", radii.iter().map(|&r| num(r)).collect::<Vec<_>>());
    let rows: Vec<Value> = c
        .rows
        .iter()
        .map(|row| serde_json::json!({"r": num(row.r), "quotient": num(row.quotient), "violated": row.violated}))
        .collect();
    rep.extra("rows", rows);
    rep.extra("first_violation", c.first_violation.map(num).unwrap_or(Value::Null));
    rep.extra("crossover_interpolated", c.interpolated.map(num).unwrap_or(Value::Null));
    rep.extra("crossover_bound", c.bound.map(num).unwrap_or(Value::Null));
    rep.absorb("sweep", c.report);
    Ok(RunOutput::new(rep, &grid))
}

/// Ratio of the sup Bochner residual at `h` and `h/2` for `s = (1, z)` under `H = e^{−|z|²/2}·Id`.
pub fn bochner_order(h: f64) -> Result<(f64, f64, f64)> {
    let res = |step: f64| -> Result<f64> {
        let g = DiskGrid::new(1.0, step, 64)?;
        let m = Metric::conformal(2, |z| (-z.norm_sqr() / 2.0).exp()).sample(&g)?;
        let s = SectionField::from_fn(&g, 2, |z| vec![C64::new(1.0, 0.0), z]);
        let b = bochner_residual(&g, &s, &m)?;
        Ok(g.sup_masked(&b, &g.interior_ball_mask(C64::default(), 0.5)))
    };
    let (a, b) = (res(h)?, res(h / 2.0)?);
    Ok((a, b, a / b))
}

/// Relative gap between the energy of an analytic test section on the unit disk about `z0`
/// and of its pullback to `D_R`.
pub fn conformal_invariance_gap(scale: f64, z0: C64, h_unit: f64, h_big: f64) -> Result<f64> {
    let wc = z0 + C64::new(0.1, -0.05);
    let f = move |w: C64| {
        let g = (-20.0 * (w - wc).norm_sqr()).exp();
        vec![C64::new(g, 0.0) * (1.0 + w * w), C64::new(0.0, g) * (w - 0.3)]
    };
    let unit = DiskGrid::new(1.0, h_unit, 64)?;
    let s1 = SectionField::from_fn(&unit, 2, |z| f(z + z0));
    let map = RescalingMap::new(scale, z0)?;
    let big = DiskGrid::new(scale, h_big, 64)?;
    let s2 = SectionField::from_fn(&big, 2, map.pullback(f));
    let (e1, e2) = (conformal_energy(&unit, &s1, None, None)?, conformal_energy(&big, &s2, None, None)?);
    Ok((e1 - e2).abs() / e1)
}

/// Every module's invariant suite in one report.
pub fn verify_all(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let grid = grid_of(cfg)?;
    let mut rep = VerificationReport::new();
    base_env(&mut rep, "verify-all", cfg);

    // disk_grid
    let area = grid.integrate(&ScalarField::from_fn(&grid, |_| C64::new(1.0, 0.0)))?.re;
    let r = grid.radius();
    let full = PI * r * r;
    rep.push(Check::ge("grid/area_lower", area, full * (1.0 - 4.0 * grid.spacing() / r), 0.0));
    rep.push(Check::le("grid/area_upper", area, full, 0.0));

    rep.absorb("construct", run_construct(cfg)?.report);

    // dbar_cauchy: maximum principle over several seeds
    let mut mp_fail = 0u32;
    for k in 0..10u64 {
        let g = vec![identity(cfg.n).map(|v| v.re); grid.boundary_samples()];
        let chi = make_isotropic_pair(&g, cfg.seed.wrapping_add(k))?.chi_tilde(C64::default(), r / 0.9)?;
        let s = cauchy_transform(&chi, &grid)?;
        if !max_principle_check(&grid, &s, &chi, None)?.passed() {
            mp_fail += 1;
        }
    }
    rep.push(Check::le("cauchy/max_principle_failures", mp_fail as f64, 0.0, 0.0));

    // bundle_geometry
    let (b1, b2, ratio) = bochner_order(1.0 / 32.0)?;
    rep.push(Check::info("geometry/bochner_residual_h", b1));
    rep.push(Check::info("geometry/bochner_residual_h2", b2));
    rep.push(Check::inside("geometry/bochner_order_ratio", ratio, 3.5, 4.5));
    let flat = Metric::flat(2).sample(&grid)?;
    let sub = SectionField::from_fn(&grid, 2, |z| vec![C64::new(1.0, 0.0), z]);
    let gap = quotient_curvature_gap(&grid, &flat, &sub)?;
    let mut gap_err = 0.0f64;
    for k in (0..grid.len()).filter(|&k| grid.is_interior(k)) {
        gap_err = gap_err.max((gap.get(k).re - (1.0 + grid.node(k).norm_sqr()).powi(-3)).abs());
    }
    rep.push(Check::le("geometry/quotient_gap_error", gap_err, 0.0, 1e-6));

    // gaussian_model on D_4
    let gcfg = RunConfig { radius: 4.0, ..cfg.clone() };
    rep.absorb("gaussian", run_gaussian(&gcfg)?.report);

    // conformal_tweak
    rep.absorb("tweak", run_tweak(cfg)?.report);

    // destabilizer
    let dcfg = RunConfig { r: r.min(cfg.r), p: [0.0, 0.0], ..cfg.clone() };
    rep.absorb("destabilize", run_destabilize(&dcfg)?.report);
    rep.push(Check::le("destabilizer/conformal_invariance", conformal_invariance_gap(3.0, C64::new(0.13, -0.07), 1.0 / 256.0, 1.0 / 128.0)?, 0.0, 1e-6));
    let s = SectionField::from_fn(&grid, 2, |z| vec![C64::new((-z.norm_sqr() / 2.0).exp(), 0.0), z.exp()]);
    let root = kth_root_section(&grid, &s, 2, C64::default(), None)?;
    let (lo, hi) = root_sandwich(&s, &root.section, &flat, 2, None);
    rep.push(Check::le("destabilizer/root_jumps", root.jumps as f64, 0.0, 0.0));
    rep.push(Check::ge("destabilizer/root_sandwich_lower", lo, 1.0, 1e-12));
    rep.push(Check::le("destabilizer/root_sandwich_upper", hi, 2.0, 1e-12));

    // stability_models
    rep.absorb("sweep", run_sweep(cfg)?.report);
    Ok(RunOutput::new(rep, &grid))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construct_passes_on_defaults() {
        let cfg = RunConfig { h: 1.0 / 32.0, ..Default::default() };
        let out = run_construct(&cfg).unwrap();
        assert!(out.report.passed(), "{:?}", out.report.failures());
        assert_eq!(out.fields.len(), 2);
    }

    #[test]
    fn conformal_gap_is_small() {
        // lattices that do not correspond node for node
        let gap = conformal_invariance_gap(3.0, C64::new(0.13, -0.07), 1.0 / 128.0, 1.0 / 64.0).unwrap();
        assert!(gap > 0.0 && gap < 1e-4, "{gap}");
    }
}
