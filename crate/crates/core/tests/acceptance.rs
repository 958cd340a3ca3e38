//! Acceptance criteria, one PASS/FAIL line each.

use std::f64::consts::PI;
use std::process::Command;
use std::time::Instant;

use isosec::cauchy::{cauchy_transform, dbar_residual, max_principle_check, BoundaryData};
use isosec::destabilizer::{build_destabilizing_section, DestabilizerOptions};
use isosec::gaussian::{build_gaussian, verify_gaussian, GaussianGates, ModelBundle};
use isosec::geometry::{bochner_residual, curvature_field, Metric};
use isosec::grid::{DiskGrid, SectionField};
use isosec::isotropy::{isotropy_residual_field, make_isotropic_pair};
use isosec::linalg::C64;
use isosec::pipeline::conformal_invariance_gap;
use isosec::stability::{crossover_sweep, default_radii, resolvable, ModelGeometry};
use isosec::tweak::{tweak_metric, SolverOptions};

type Outcome = Result<(bool, String), String>;

fn flat_g(n: usize, m: usize) -> Vec<nalgebra::DMatrix<f64>> {
    vec![nalgebra::DMatrix::identity(n, n); m]
}

fn sup_euclid(s: &SectionField) -> f64 {
    s.norm_sq_field(None).values().iter().map(|v| v.re.sqrt()).fold(0.0, f64::max)
}

fn c1_cauchy() -> Outcome {
    let t = Instant::now();
    let grid = DiskGrid::new(0.9, 1.0 / 128.0, 256).map_err(|e| e.to_string())?;
    let mut worst_rel = 0.0f64;
    let mut worst_dbar = 0.0f64;
    for m in 0..=10 {
        let chi = BoundaryData::from_fn(C64::default(), 1.0, 256, 1, |t| vec![C64::from_polar(1.0, m as f64 * t)])
            .map_err(|e| e.to_string())?;
        let s = cauchy_transform(&chi, &grid).map_err(|e| e.to_string())?;
        let scale = 0.9f64.powi(m);
        for k in 0..grid.len() {
            worst_rel = worst_rel.max((s.at(k)[0] - grid.node(k).powi(m)).norm() / scale);
        }
        worst_dbar = worst_dbar.max(dbar_residual(&grid, &s, None).map_err(|e| e.to_string())?.sup);
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = worst_rel <= 1e-10 && worst_dbar <= 1e-9 && secs <= 5.0;
    Ok((pass, format!("max rel error {worst_rel:.3e} (<= 1e-10), dbar sup {worst_dbar:.3e} (<= 1e-9), {secs:.2}s (<= 5s)")))
}

fn c2_isotropy() -> Outcome {
    let grid = DiskGrid::new(1.0, 1.0 / 64.0, 256).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for n in [2usize, 4] {
        let h = Metric::flat(n).sample(&grid).map_err(|e| e.to_string())?;
        for seed in 0..5u64 {
            let chi = make_isotropic_pair(&flat_g(n, 256), seed)
                .and_then(|p| p.chi_tilde(C64::default(), 1.0 / 0.9))
                .map_err(|e| e.to_string())?;
            let s = cauchy_transform(&chi, &grid).map_err(|e| e.to_string())?;
            worst = worst.max(isotropy_residual_field(&s, &h, None).map_err(|e| e.to_string())?);
        }
    }
    Ok((worst <= 1e-8, format!("n in {{2,4}}, 5 seeds each: sup |g(s,s)| = {worst:.3e} (<= 1e-8)")))
}

fn gaussian_n1() -> Result<(f64, f64), String> {
    let grid = DiskGrid::new(4.0, 1.0 / 128.0, 512).map_err(|e| e.to_string())?;
    let mb = ModelBundle::new(vec![1.0], vec![1.0]).map_err(|e| e.to_string())?;
    let (gs, _) = build_gaussian(&mb, &grid, 7, GaussianGates::default()).map_err(|e| e.to_string())?;
    let rep = verify_gaussian(&mb, &grid, &gs, 5.0 / 9.0).map_err(|e| e.to_string())?;
    let get = |n: &str| rep.get(n).map(|c| c.measured).ok_or(format!("missing check {n}"));
    Ok((get("l2_norm_sq")?, get("concentration_ratio")?))
}

fn c3_window(l2: f64) -> Outcome {
    let exact = 2.0 * PI * (1.0 - (-8.0f64).exp());
    let rel = (l2 - exact).abs() / exact;
    let pass = rel <= 1e-3 && PI < l2 && l2 < 2.0 * PI;
    Ok((pass, format!("||sigma||^2 = {l2:.6} vs 2pi(1-e^-8) = {exact:.6}, rel {rel:.2e} (<= 1e-3), strictly inside (pi, 2pi)")))
}

fn c4_concentration(ratio: f64) -> Outcome {
    let bound = 2.0 / (1.0 - 5.0 / 9.0);
    let pass = ratio <= 0.9 * bound;
    Ok((pass, format!("ratio {ratio:.4} <= 0.9 * {bound} = {:.3} (10% slack); slack {:.1}%", 0.9 * bound, 100.0 * (1.0 - ratio / bound))))
}

fn c5_destabilizer() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    let mut q_by_r = Vec::new();
    for n in [2usize, 4] {
        for r in [1.0, 2.0] {
            let t = Instant::now();
            let grid = DiskGrid::new(r, 1.0 / 64.0, 256).map_err(|e| e.to_string())?;
            let d = build_destabilizing_section(&grid, &Metric::flat(n), C64::default(), r, 7, DestabilizerOptions::default())
                .map_err(|e| e.to_string())?;
            let secs = t.elapsed().as_secs_f64();
            let get = |name: &str| d.report.get(name).cloned().ok_or(format!("missing check {name}"));
            let (e3, e4, chain) = (get("dbar_energy")?, get("inner_mass")?, get("rayleigh_quotient")?);
            let item3 = d.quotient <= 9.0 / (r * r);
            let ok = item3 && e3.pass && e4.pass && chain.pass && secs <= 60.0;
            pass &= ok;
            q_by_r.push((n, r, d.quotient));
            lines.push(format!(
                "n={n} r={r}: q={:.4} (<= 9/r^2 = {:.3}), 81n*pi/4*||s||^2_(r/2) = {:.2} >= ||sigma||^2_r = {:.2}, bound 729n*pi/(4r^2) = {:.1}, {secs:.1}s",
                d.quotient,
                9.0 / (r * r),
                e4.measured,
                e4.bound.unwrap_or(f64::NAN),
                chain.bound.unwrap_or(f64::NAN)
            ));
        }
    }
    for n in [2usize, 4] {
        let q: Vec<f64> = q_by_r.iter().filter(|t| t.0 == n).map(|t| t.2).collect();
        lines.push(format!("n={n}: q(1)/q(2) = {:.4} (1/r^2 law predicts 4)", q[0] / q[1]));
    }
    Ok((pass, lines.join("; ")))
}

fn c6_bochner() -> Outcome {
    let sections: [(&str, fn(C64) -> Vec<C64>); 3] = [
        ("(1, z)", |z| vec![C64::new(1.0, 0.0), z]),
        ("(z^2, 1 + z)", |z| vec![z * z, 1.0 + z]),
        ("(z^3 - z, 2i)", |z| vec![z.powi(3) - z, C64::new(0.0, 2.0)]),
    ];
    let res = |h: f64, f: fn(C64) -> Vec<C64>| -> Result<f64, String> {
        let g = DiskGrid::new(1.0, h, 64).map_err(|e| e.to_string())?;
        let m = Metric::conformal(2, |z| (-z.norm_sqr() / 2.0).exp()).sample(&g).map_err(|e| e.to_string())?;
        let s = SectionField::from_fn(&g, 2, f);
        let b = bochner_residual(&g, &s, &m).map_err(|e| e.to_string())?;
        Ok(g.sup_masked(&b, &g.interior_ball_mask(C64::default(), 0.5)))
    };
    let mut pass = true;
    let mut out = Vec::new();
    for (name, f) in sections {
        let ratio = res(1.0 / 32.0, f)? / res(1.0 / 64.0, f)?;
        pass &= (3.5..=4.5).contains(&ratio);
        out.push(format!("{name}: {ratio:.4}"));
    }
    Ok((pass, format!("residual ratio h=1/32 vs 1/64 in [3.5, 4.5]: {}", out.join(", "))))
}

fn c7_tweak() -> Outcome {
    let grid = DiskGrid::new(1.0, 1.0 / 64.0, 256).map_err(|e| e.to_string())?;
    let h = Metric::conformal(2, |z| (z.norm_sqr() / 2.0).exp()).sample(&grid).map_err(|e| e.to_string())?;
    let target = 1.0;
    let t = tweak_metric(&grid, &h, target, 1e-6, SolverOptions::default()).map_err(|e| e.to_string())?;
    let err = (0..grid.len()).map(|k| (t.psi.get(k).re - t.c * grid.node(k).norm_sqr()).abs()).fold(0.0, f64::max);
    let after = curvature_field(&grid, &t.metric, None)
        .and_then(|c| c.min_relative_eigenvalue(&grid, &t.metric))
        .map_err(|e| e.to_string())?;
    let pass = err <= 1e-6 && after >= target - 1e-6;
    Ok((pass, format!("psi = C|z|^2 with C = {}: sup error {err:.3e} (<= 1e-6); min curvature eigenvalue {after:.9} (>= {target} - 1e-6)", t.c)))
}

fn c8_conformal() -> Outcome {
    let cases = [(2.0, C64::new(0.13, -0.07), 1.0 / 100.0), (3.0, C64::new(-0.2, 0.1), 1.0 / 128.0), (1.5, C64::new(0.0, 0.25), 1.0 / 160.0)];
    let mut worst = 0.0f64;
    let mut out = Vec::new();
    for (scale, z0, hb) in cases {
        let gap = conformal_invariance_gap(scale, z0, 1.0 / 256.0, hb).map_err(|e| e.to_string())?;
        worst = worst.max(gap);
        out.push(format!("R={scale}: {gap:.2e}"));
    }
    Ok((worst <= 1e-6, format!("relative energy gap after pullback (<= 1e-6): {}", out.join(", "))))
}

fn c9_max_principle() -> Outcome {
    let grid = DiskGrid::new(1.0, 1.0 / 32.0, 256).map_err(|e| e.to_string())?;
    let mut failures = 0;
    let mut worst_margin = f64::INFINITY;
    for seed in 0..100u64 {
        let n = 2 + (seed % 3) as usize;
        let chi = make_isotropic_pair(&flat_g(n, 256), seed)
            .and_then(|p| p.chi_tilde(C64::default(), 1.0 / 0.9))
            .map_err(|e| e.to_string())?;
        let s = cauchy_transform(&chi, &grid).map_err(|e| e.to_string())?;
        let rep = max_principle_check(&grid, &s, &chi, None).map_err(|e| e.to_string())?;
        let c = &rep.checks[0];
        worst_margin = worst_margin.min(c.bound.unwrap() - c.measured);
        if !rep.passed() {
            failures += 1;
        }
        debug_assert!(sup_euclid(&s) <= c.bound.unwrap() + 1e-10 || !rep.passed());
    }
    Ok((failures == 0, format!("100 seeded transforms (n = 2, 3, 4): {failures} failures; smallest margin {worst_margin:.3e}")))
}

fn c10_crossover() -> Outcome {
    let grid = DiskGrid::new(2.0, 1.0 / 128.0, 256).map_err(|e| e.to_string())?;
    let radii = resolvable(&grid, &default_radii(2.0));
    let n = 2;
    let sweep = |e: f64| crossover_sweep(&grid, &ModelGeometry::synthetic(e), e, &radii, n, 7, DestabilizerOptions::default());
    let a = sweep(4.0).map_err(|e| e.to_string())?;
    let b = sweep(1.0).map_err(|e| e.to_string())?;
    let bound = (729.0 * n as f64 * PI / 4.0).sqrt() * 0.5;
    let (Some(ra), Some(ia), Some(ib)) = (a.first_violation, a.interpolated, b.interpolated) else {
        return Ok((false, "no crossover found".into()));
    };
    let ratio = ib / ia;
    let pass = ra <= bound && (ratio - 2.0).abs() <= 0.25 * 2.0 && a.report.passed() && b.report.passed();
    Ok((
        pass,
        format!(
            "eps^-2 = 4: first violating r = {ra:.4} (<= {bound:.3}), interpolated r* = {ia:.4}; eps^-2 = 1: r* = {ib:.4}; ratio {ratio:.4} (2 +- 25%)"
        ),
    ))
}

fn c11_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outs = Vec::new();
    for threads in ["1", "2"] {
        let path = dir.path().join(format!("report_{threads}.json"));
        let st = Command::new(env!("CARGO_BIN_EXE_isosec"))
            .args(["verify-all", "--n", "2", "--seed", "7", "--out"])
            .arg(&path)
            .env("ISOSEC_THREADS", threads)
            .status()
            .map_err(|e| e.to_string())?;
        if !st.success() {
            return Ok((false, format!("verify-all exited with {st} at ISOSEC_THREADS={threads}")));
        }
        outs.push(std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    Ok((outs[0] == outs[1], format!("verify-all at ISOSEC_THREADS=1 and 2: {} bytes, identical = {}", outs[0].len(), outs[0] == outs[1])))
}

fn main() {
    let (l2, ratio) = match gaussian_n1() {
        Ok(v) => v,
        Err(e) => (f64::NAN, f64::NAN).tap(|_| eprintln!("gaussian build failed: {e}")),
    };
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("Cauchy solver on monomials", Box::new(c1_cauchy)),
        ("isotropy propagation", Box::new(c2_isotropy)),
        ("Gaussian L2 window", Box::new(move || c3_window(l2))),
        ("Gaussian concentration", Box::new(move || c4_concentration(ratio))),
        ("destabilizer chain", Box::new(c5_destabilizer)),
        ("Bochner residual order", Box::new(c6_bochner)),
        ("conformal tweak", Box::new(c7_tweak)),
        ("conformal invariance", Box::new(c8_conformal)),
        ("maximum principle", Box::new(c9_max_principle)),
        ("crossover", Box::new(c10_crossover)),
        ("determinism", Box::new(c11_determinism)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (ok, detail) = match f() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failed += 1;
        }
        println!("criterion {:>2} {:<28} {}  {detail}", i + 1, name, if ok { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

trait Tap: Sized {
    fn tap(self, f: impl FnOnce(&Self)) -> Self {
        f(&self);
        self
    }
}
impl<T> Tap for T {}
