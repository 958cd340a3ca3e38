//! Model geometries with an isotropic curvature floor, both sides of the stability inequality,
//! and the destabilization crossover.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;

use crate::destabilizer::{build_destabilizing_section, conformal_energy, DestabilizerOptions};
use crate::error::{Error, Result};
use crate::geometry::{Metric, MetricField};
use crate::grid::{DiskGrid, ScalarField, SectionField};
use crate::linalg::C64;
use crate::report::{Check, VerificationReport};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ModelKind {
    Flat,
    /// Constant sectional curvature `c`; `∂f/∂z` lies in the plane of coordinates `tangent`.
    ConstantSectional { c: f64, tangent: [usize; 2] },
    /// Curvature term equal to `κ₀ λ |s|²` on isotropic sections.
    SyntheticIsotropic { kappa0: f64 },
}

/// Model geometry seen through the disk: conformal factor `λ` and curvature oracle.
#[derive(Clone)]
pub struct ModelGeometry {
    pub kind: ModelKind,
    lambda: Arc<dyn Fn(C64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for ModelGeometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelGeometry").field("kind", &self.kind).finish()
    }
}

/// Pointwise isotropy tolerance for models that only accept isotropic sections.
pub const MODEL_ISO_TOL: f64 = 1e-8;

impl ModelGeometry {
    pub fn new(kind: ModelKind) -> Self {
        ModelGeometry { kind, lambda: Arc::new(|_| 1.0) }
    }
    pub fn flat() -> Self {
        Self::new(ModelKind::Flat)
    }
    pub fn synthetic(kappa0: f64) -> Self {
        Self::new(ModelKind::SyntheticIsotropic { kappa0 })
    }
    pub fn constant_sectional(c: f64, tangent: [usize; 2]) -> Self {
        Self::new(ModelKind::ConstantSectional { c, tangent })
    }
    pub fn with_lambda(mut self, lambda: impl Fn(C64) -> f64 + Send + Sync + 'static) -> Self {
        self.lambda = Arc::new(lambda);
        self
    }
    pub fn lambda(&self, z: C64) -> f64 {
        (self.lambda)(z)
    }
    /// Isotropic curvature floor `ε⁻²` that the model certifies.
    pub fn eps_inv_sq(&self) -> f64 {
        match self.kind {
            ModelKind::Flat => 0.0,
            ModelKind::ConstantSectional { c, .. } => c.max(0.0),
            ModelKind::SyntheticIsotropic { kappa0 } => kappa0,
        }
    }
    pub fn name(&self) -> &'static str {
        match self.kind {
            ModelKind::Flat => "flat",
            ModelKind::ConstantSectional { .. } => "constant-sectional",
            ModelKind::SyntheticIsotropic { .. } => "synthetic-isotropic",
        }
    }

    /// `∂f/∂z = √(λ/2)(e_a − i e_b)` in rank `n`.
    pub fn fz(&self, z: C64, n: usize) -> Result<Vec<C64>> {
        let [a, b] = match self.kind {
            ModelKind::ConstantSectional { tangent, .. } => tangent,
            _ => return Err(Error::Precondition(format!("{} model has no tangent frame", self.name()))),
        };
        if a == b || a >= n || b >= n {
            return Err(Error::Precondition(format!("tangent frame {a},{b} invalid for rank {n}")));
        }
        let w = (self.lambda(z) / 2.0).sqrt();
        let mut f = vec![C64::default(); n];
        f[a] = C64::new(w, 0.0);
        f[b] = C64::new(0.0, -w);
        Ok(f)
    }

    /// `⟨R(s, f_z) f_z̄, s̄⟩` at one point, signed so that positive curvature gives a nonnegative value.
    pub fn oracle(&self, s: &[C64], z: C64) -> Result<f64> {
        let s2: f64 = s.iter().map(|v| v.norm_sqr()).sum();
        match self.kind {
            ModelKind::Flat => Ok(0.0),
            ModelKind::SyntheticIsotropic { kappa0 } => {
                let gc: C64 = s.iter().map(|v| v * v).sum();
                if gc.norm() > MODEL_ISO_TOL * s2.max(f64::MIN_POSITIVE) {
                    return Err(Error::GateFailed { gate: "model isotropy".into(), measured: gc.norm(), tol: MODEL_ISO_TOL * s2 });
                }
                Ok(kappa0 * self.lambda(z) * s2)
            }
            ModelKind::ConstantSectional { c, .. } => {
                let f = self.fz(z, s.len())?;
                let f2: f64 = f.iter().map(|v| v.norm_sqr()).sum();
                let sf: C64 = s.iter().zip(&f).map(|(a, b)| a * b.conj()).sum();
                Ok(c * (s2 * f2 - sf.norm_sqr()))
            }
        }
    }
}

/// Nodewise curvature term.
pub fn curvature_term(grid: &DiskGrid, s: &SectionField, mg: &ModelGeometry) -> Result<ScalarField> {
    s.check(grid)?;
    let vals = (0..grid.len())
        .into_par_iter()
        .map(|k| mg.oracle(&s.at(k), grid.node(k)).map(|v| C64::new(v, 0.0)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScalarField::new(vals))
}

/// Removes the components along the real tangent plane; identity for models without one.
pub fn normal_projection(s: &SectionField, mg: &ModelGeometry) -> Result<SectionField> {
    let tangent = match mg.kind {
        ModelKind::ConstantSectional { tangent, .. } => tangent,
        _ => return Ok(s.clone()),
    };
    if tangent.iter().any(|&t| t >= s.rank()) {
        return Err(Error::Precondition(format!("tangent frame {tangent:?} invalid for rank {}", s.rank())));
    }
    let comps = (0..s.rank())
        .map(|i| if tangent.contains(&i) { ScalarField::new(vec![C64::default(); s.len()]) } else { s.comp(i).clone() })
        .collect();
    SectionField::new(comps)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StabilitySides {
    /// `ε⁻² ∫ |s|² λ`.
    pub lhs: f64,
    /// `ε⁻² ∫ |s|²`.
    pub lhs_unweighted: f64,
    /// `∫ ⟨R(s, f_z) f_z̄, s̄⟩`.
    pub curvature: f64,
    /// `∫ |∇^{0,1}s|²`.
    pub rhs: f64,
}

impl StabilitySides {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs
    }
}

/// Both sides of `ε⁻² ∫|s|² ≤ ∫|∇^{0,1}s|²`.
pub fn stability_sides(
    grid: &DiskGrid,
    s: &SectionField,
    mg: &ModelGeometry,
    eps_inv_sq: f64,
    h: Option<&MetricField>,
) -> Result<StabilitySides> {
    s.check(grid)?;
    let ring: Vec<bool> = grid.interior().iter().map(|&i| !i).collect();
    let outer = grid.sup_masked(&s.norm_sq_field(None), &ring).sqrt();
    if outer > 0.0 {
        return Err(Error::NotCompact(outer));
    }
    let s2 = s.norm_sq_field(h);
    let weighted = ScalarField::new(grid.nodes().iter().zip(s2.values()).map(|(&z, v)| v * mg.lambda(z)).collect());
    let curvature = grid.integrate(&curvature_term(grid, s, mg)?)?.re;
    Ok(StabilitySides {
        lhs: eps_inv_sq * grid.integrate(&weighted)?.re,
        lhs_unweighted: eps_inv_sq * grid.integrate(&s2)?.re,
        curvature,
        rhs: conformal_energy(grid, s, None, h)?,
    })
}

/// `r_k = 0.25·2^{k/4}` up to `r_max`.
pub fn default_radii(r_max: f64) -> Vec<f64> {
    (0..).map(|k| 0.25 * 2f64.powf(k as f64 / 4.0)).take_while(|&r| r <= r_max * (1.0 + 1e-12)).collect()
}

/// Radii whose cut-off ramp `0.36r` spans at least 8 spacings of `grid`.
pub fn resolvable(grid: &DiskGrid, radii: &[f64]) -> Vec<f64> {
    radii.iter().copied().filter(|&r| 0.36 * r / grid.spacing() >= 8.0).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub r: f64,
    pub quotient: f64,
    pub sides: StabilitySides,
    /// Stability fails for this section: `ε⁻² ∫|s|² > ∫|∇^{0,1}s|²`.
    pub violated: bool,
}

#[derive(Clone, Debug)]
pub struct Crossover {
    pub rows: Vec<SweepRow>,
    pub first_violation: Option<f64>,
    /// Radius where `q(r) = ε⁻²`, by log-log interpolation of the bracketing rows.
    pub interpolated: Option<f64>,
    pub bound: Option<f64>,
    pub report: VerificationReport,
}

/// Destabilizing sections of rank `n` centred at the origin of `grid`, one per radius.
pub fn crossover_sweep(
    grid: &DiskGrid,
    mg: &ModelGeometry,
    eps_inv_sq: f64,
    radii: &[f64],
    n: usize,
    seed: u64,
    opts: DestabilizerOptions,
) -> Result<Crossover> {
    if radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("radii must be strictly increasing".into()));
    }
    let metric = Metric::flat(n);
    let rows = radii
        .par_iter()
        .map(|&r| {
            let d = build_destabilizing_section(grid, &metric, C64::default(), r, seed, opts)?;
            let sides = stability_sides(grid, &d.s, mg, eps_inv_sq, None)?;
            Ok(SweepRow { r, quotient: d.quotient, violated: sides.lhs > sides.rhs, sides })
        })
        .collect::<Result<Vec<_>>>()?;

    let nf = n as f64;
    let c = 729.0 * nf * PI / 4.0;
    let mut rep = VerificationReport::new();
    rep.env("model", mg.name());
    rep.env("eps_inv_sq", eps_inv_sq);
    rep.env("n", n as u64);
    for row in &rows {
        let bound = c / (row.r * row.r);
        rep.push(Check::le(format!("quotient_r{:.4}", row.r), row.quotient, bound, 0.0));
        if eps_inv_sq > bound {
            rep.push(Check::flag(format!("forced_violation_r{:.4}", row.r), row.violated));
        }
    }
    let first = rows.iter().position(|row| row.violated);
    let interpolated = first.map(|i| {
        if i == 0 {
            rows[0].r
        } else {
            let (a, b) = (&rows[i - 1], &rows[i]);
            let (la, lb) = (a.quotient.ln(), b.quotient.ln());
            let t = (la - eps_inv_sq.ln()) / (la - lb);
            (a.r.ln() + t * (b.r.ln() - a.r.ln())).exp()
        }
    });
    let bound = (eps_inv_sq > 0.0).then(|| c.sqrt() / eps_inv_sq.sqrt());
    match (first, bound) {
        (Some(i), Some(b)) => {
            rep.push(Check::le("crossover_radius", rows[i].r, b, 0.0));
            rep.push(Check::info("crossover_interpolated", interpolated.unwrap()));
        }
        (None, Some(b)) => {
            // a sweep that reaches the bound must have crossed
            let reached = radii.last().is_some_and(|&r| r >= b);
            rep.push(Check::flag("crossover_found_or_bound_unreached", !reached).note("no violating radius in sweep"));
        }
        (_, None) => rep.push(Check::flag("no_crossover_without_curvature", first.is_none())),
    }
    Ok(Crossover { first_violation: first.map(|i| rows[i].r), rows, interpolated, bound, report: rep })
}
