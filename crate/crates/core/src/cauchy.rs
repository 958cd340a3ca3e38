//! Boundary data on a circle and the trapezoid Cauchy transform.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::MetricField;
use crate::grid::{boundary_angles, DiskGrid, ScalarField, SectionField};
use crate::linalg::{bilinear, sesq, CMat, C64};
use crate::report::{Check, VerificationReport};

/// ℂⁿ-valued samples at `M` equispaced angles on the circle `|z − center| = radius`.
#[derive(Clone, Debug)]
pub struct BoundaryData {
    center: C64,
    radius: f64,
    // [component][sample]
    chi: Vec<Vec<C64>>,
    isotropy: Option<(f64, f64)>,
}

impl BoundaryData {
    pub fn new(center: C64, radius: f64, chi: Vec<Vec<C64>>) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Precondition(format!("boundary radius must be positive, got {radius}")));
        }
        let Some(first) = chi.first() else {
            return Err(Error::RankTooSmall { n: 0, what: "boundary data needs a component".into() });
        };
        let m = first.len();
        if m < 64 || !m.is_power_of_two() || chi.iter().any(|c| c.len() != m) {
            return Err(Error::Precondition(format!("boundary sample count {m} must be a power of two >= 64")));
        }
        Ok(BoundaryData { center, radius, chi, isotropy: None })
    }

    pub fn from_fn(center: C64, radius: f64, m: usize, n: usize, f: impl Fn(f64) -> Vec<C64>) -> Result<Self> {
        let rows: Vec<Vec<C64>> = boundary_angles(m).into_iter().map(f).collect();
        let chi = (0..n).map(|i| rows.iter().map(|r| r[i]).collect()).collect();
        BoundaryData::new(center, radius, chi)
    }

    pub fn center(&self) -> C64 {
        self.center
    }
    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn rank(&self) -> usize {
        self.chi.len()
    }
    pub fn samples(&self) -> usize {
        self.chi[0].len()
    }
    pub fn angles(&self) -> Vec<f64> {
        boundary_angles(self.samples())
    }
    /// Points `center + R e^{iθ_m}`.
    pub fn points(&self) -> Vec<C64> {
        self.angles().iter().map(|&t| self.center + C64::from_polar(self.radius, t)).collect()
    }
    pub fn component(&self, i: usize) -> &[C64] {
        &self.chi[i]
    }
    pub fn value(&self, m: usize) -> Vec<C64> {
        self.chi.iter().map(|c| c[m]).collect()
    }
    /// `Σ_i |χ_i|²` per sample.
    pub fn euclidean_profile(&self) -> Vec<f64> {
        (0..self.samples()).map(|m| self.chi.iter().map(|c| c[m].norm_sqr()).sum()).collect()
    }
    /// `sup_θ |g(χ,χ)|` for one real symmetric form per sample.
    pub fn isotropy_residual(&self, g: &[DMatrix<f64>]) -> f64 {
        (0..self.samples())
            .map(|m| {
                let gm = g[m.min(g.len() - 1)].map(|x| C64::new(x, 0.0));
                bilinear(&self.value(m), &gm, &self.value(m)).norm()
            })
            .fold(0.0, f64::max)
    }
    /// Flag the data isotropic, refusing if the residual exceeds `tol`.
    pub fn flag_isotropic(mut self, g: &[DMatrix<f64>], tol: f64) -> Result<Self> {
        let res = self.isotropy_residual(g);
        if res > tol {
            return Err(Error::GateFailed { gate: "boundary isotropy".into(), measured: res, tol });
        }
        self.isotropy = Some((res, tol));
        Ok(self)
    }
    /// `(residual, tolerance)` when flagged isotropic.
    pub fn isotropy(&self) -> Option<(f64, f64)> {
        self.isotropy
    }
    pub fn scaled(&self, a: C64) -> Self {
        let chi = self.chi.iter().map(|c| c.iter().map(|v| a * v).collect()).collect();
        BoundaryData { chi, isotropy: self.isotropy.map(|(r, t)| (r * a.norm_sqr(), t)), ..self.clone() }
    }
    /// Multiply by `e^{iλθ}`.
    pub fn twisted(&self, lambda: f64) -> Self {
        let ang = self.angles();
        let chi = self
            .chi
            .iter()
            .map(|c| c.iter().zip(&ang).map(|(v, &t)| v * C64::from_polar(1.0, lambda * t)).collect())
            .collect();
        BoundaryData { chi, ..self.clone() }
    }
    /// Trapezoid average of each component.
    pub fn mean(&self) -> Vec<C64> {
        let m = self.samples() as f64;
        self.chi.iter().map(|c| c.iter().sum::<C64>() / m).collect()
    }

    /// Nonnegative Fourier modes `0 ≤ j < M/2` of the samples: the boundary trace of the Cauchy transform.
    pub fn holomorphic_part(&self) -> Self {
        let m = self.samples();
        let roots: Vec<C64> = (0..m).map(|k| C64::from_polar(1.0, 2.0 * PI * k as f64 / m as f64)).collect();
        let chi = self
            .chi
            .iter()
            .map(|c| {
                let coef: Vec<C64> = (0..m / 2)
                    .map(|j| c.iter().enumerate().map(|(k, x)| x * roots[(j * k) % m].conj()).sum::<C64>() / m as f64)
                    .collect();
                (0..m).map(|k| coef.iter().enumerate().map(|(j, a)| a * roots[(j * k) % m]).sum()).collect()
            })
            .collect();
        BoundaryData { chi, isotropy: None, ..self.clone() }
    }

    /// `sup_θ |χ|_{H₀}` from the samples and a 4× oversampled trigonometric interpolant.
    pub fn sup_norm(&self, h0: Option<&CMat>) -> f64 {
        let m = self.samples();
        let fine = 4 * m;
        let interp: Vec<Vec<C64>> = self.chi.iter().map(|c| trig_oversample(c, fine)).collect();
        let norm = |v: &[C64]| match h0 {
            Some(h) => sesq(v, h, v).re.max(0.0).sqrt(),
            None => v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
        };
        let coarse = (0..m).map(|k| norm(&self.value(k))).fold(0.0, f64::max);
        let fine_sup = (0..fine)
            .map(|k| norm(&interp.iter().map(|c| c[k]).collect::<Vec<_>>()))
            .fold(0.0, f64::max);
        coarse.max(fine_sup)
    }
}

/// Evaluate the trigonometric interpolant of `samples` at `fine` equispaced angles.
pub fn trig_oversample(samples: &[C64], fine: usize) -> Vec<C64> {
    let m = samples.len();
    let half = (m / 2) as i64;
    let roots: Vec<C64> = (0..m).map(|k| C64::from_polar(1.0, -2.0 * PI * k as f64 / m as f64)).collect();
    let mut coef = Vec::with_capacity(m);
    for j in -half..=half {
        let mut acc = C64::default();
        for (k, x) in samples.iter().enumerate() {
            acc += x * roots[((j.rem_euclid(m as i64) as usize) * k) % m];
        }
        let w = if j.abs() == half { 0.5 } else { 1.0 };
        coef.push((j, acc * (w / m as f64)));
    }
    let froots: Vec<C64> = (0..fine).map(|k| C64::from_polar(1.0, 2.0 * PI * k as f64 / fine as f64)).collect();
    (0..fine)
        .map(|q| {
            coef.iter()
                .map(|&(j, c)| c * froots[((j.rem_euclid(fine as i64) as usize) * q) % fine])
                .sum()
        })
        .collect()
}

struct Kernel {
    u: Vec<C64>,
    limit: f64,
}

impl Kernel {
    fn new(chi: &BoundaryData) -> Self {
        let m = chi.samples();
        let u = chi.angles().iter().map(|&t| C64::from_polar(chi.radius, t)).collect();
        Kernel { u, limit: chi.radius * (1.0 - 4.0 / m as f64) }
    }

    fn admissible(&self, chi: &BoundaryData, zeta: C64) -> Result<C64> {
        let w = zeta - chi.center;
        if w.norm() > self.limit * (1.0 + 1e-12) {
            return Err(Error::NearBoundary { point: format!("{zeta}"), dist: w.norm(), limit: self.limit });
        }
        Ok(w)
    }

    fn eval(&self, chi: &BoundaryData, w: C64, power: i32) -> Vec<C64> {
        let m = self.u.len() as f64;
        let mut acc = vec![C64::default(); chi.rank()];
        for (k, &u) in self.u.iter().enumerate() {
            let t = u / (u - w).powi(power);
            for (a, c) in acc.iter_mut().zip(&chi.chi) {
                *a += c[k] * t;
            }
        }
        acc.into_iter().map(|a| a / m).collect()
    }
}

/// `s(ζ) = (1/2πi)∮ χ(z)/(z − ζ) dz` by the trapezoid rule at a single point.
pub fn cauchy_eval(chi: &BoundaryData, zeta: C64) -> Result<Vec<C64>> {
    let k = Kernel::new(chi);
    let w = k.admissible(chi, zeta)?;
    Ok(k.eval(chi, w, 1))
}

/// `∂s/∂z` of the Cauchy transform at a single point.
pub fn cauchy_derivative(chi: &BoundaryData, zeta: C64) -> Result<Vec<C64>> {
    let k = Kernel::new(chi);
    let w = k.admissible(chi, zeta)?;
    Ok(k.eval(chi, w, 2))
}

/// Cauchy transform at every grid node.
pub fn cauchy_transform(chi: &BoundaryData, grid: &DiskGrid) -> Result<SectionField> {
    cauchy_transform_masked(chi, grid, &vec![true; grid.len()])
}

/// Cauchy transform at masked nodes, zero elsewhere.
pub fn cauchy_transform_masked(chi: &BoundaryData, grid: &DiskGrid, mask: &[bool]) -> Result<SectionField> {
    if mask.len() != grid.len() {
        return Err(Error::GridMismatch { expected: grid.len(), got: mask.len() });
    }
    let k = Kernel::new(chi);
    for (i, &z) in grid.nodes().iter().enumerate() {
        if mask[i] {
            k.admissible(chi, z)?;
        }
    }
    let n = chi.rank();
    let rows: Vec<Vec<C64>> = (0..grid.len())
        .into_par_iter()
        .map(|i| if mask[i] { k.eval(chi, grid.node(i) - chi.center, 1) } else { vec![C64::default(); n] })
        .collect();
    let comps = (0..n).map(|c| ScalarField::new(rows.iter().map(|r| r[c]).collect())).collect();
    Ok(SectionField::new(comps)?.with_trace(chi.clone()))
}

/// Sup and L² norms of `∂̄s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DbarResidual {
    pub sup: f64,
    pub l2: f64,
}

/// `∂̄s` measured on `mask` (the interior mask by default).
pub fn dbar_residual(grid: &DiskGrid, s: &SectionField, mask: Option<&[bool]>) -> Result<DbarResidual> {
    s.check(grid)?;
    let mask: Vec<bool> = match mask {
        Some(m) => m.iter().zip(grid.interior()).map(|(&a, &b)| a && b).collect(),
        None => grid.interior().to_vec(),
    };
    let d = s.try_map_comps(|c| grid.dbar(c))?;
    let f = d.norm_sq_field(None);
    let sup = grid.sup_masked(&f, &mask).sqrt();
    let l2 = grid.integrate_masked(&f, &mask)?.re.max(0.0).sqrt();
    Ok(DbarResidual { sup, l2 })
}

/// Cauchy estimate for `∂s`: exactly `sup|χ|/R` at the center, weighted by `R/(R − |ζ − c|)²` elsewhere.
///
/// With `metric = Some((H, κ))` also checks `|∂s|²_H ≤ κ|∂s|²` under `H ≤ κ·Id`.
pub fn derivative_bound_check(
    grid: &DiskGrid,
    s: &SectionField,
    chi: &BoundaryData,
    metric: Option<(&MetricField, f64)>,
    tol: f64,
) -> Result<VerificationReport> {
    s.check(grid)?;
    let mut rep = VerificationReport::new();
    let r = chi.radius();
    let sup_chi = chi.sup_norm(None);
    let d0 = cauchy_derivative(chi, chi.center())?;
    let d0n = d0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    rep.push(Check::le("center_derivative", d0n, sup_chi / r, tol * sup_chi / r));
    let ds = s.try_map_comps(|c| Ok(grid.wirtinger(c)?.0))?;
    let mut worst = 0.0f64;
    let mut worst_metric = 0.0f64;
    let mut worst_premise = 0.0f64;
    for k in (0..grid.len()).filter(|&k| grid.is_interior(k)) {
        let dist = (grid.node(k) - chi.center()).norm();
        if dist >= r {
            continue;
        }
        let w = (r - dist).powi(2) / r;
        let v = ds.at(k);
        let e = v.iter().map(|z| z.norm_sqr()).sum::<f64>();
        worst = worst.max(e.sqrt() * w);
        if let Some((h, kappa)) = metric {
            let hv = sesq(&v, h.at(k), &v).re;
            worst_metric = worst_metric.max(hv * w * w / (kappa * sup_chi * sup_chi));
            worst_premise = worst_premise.max(crate::linalg::hermitian_eigenvalues(h.at(k)).last().copied().unwrap_or(0.0) / kappa);
        }
    }
    rep.push(Check::le("interior_weighted_derivative", worst, sup_chi, tol * sup_chi));
    if metric.is_some() {
        rep.push(Check::le("metric_comparison_premise", worst_premise, 1.0, tol));
        rep.push(Check::le("metric_weighted_derivative", worst_metric, 1.0, tol));
    }
    Ok(rep)
}

/// `sup_interior |s|_{H₀} ≤ sup_boundary |s|_{H₀} + 1e−10`, the boundary trace of `s` being the
/// holomorphic part of `χ`; Euclidean when `h0` is `None`.
pub fn max_principle_check(grid: &DiskGrid, s: &SectionField, chi: &BoundaryData, h0: Option<&CMat>) -> Result<VerificationReport> {
    s.check(grid)?;
    let interior = (0..grid.len())
        .map(|k| {
            let v = s.at(k);
            match h0 {
                Some(h) => sesq(&v, h, &v).re.max(0.0).sqrt(),
                None => v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
            }
        })
        .fold(0.0, f64::max);
    let boundary = chi.holomorphic_part().sup_norm(h0);
    let mut rep = VerificationReport::new();
    rep.push(Check::le("max_principle", interior, boundary, 1e-10));
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn monomial(m: i32, n: usize) -> BoundaryData {
        BoundaryData::from_fn(C64::default(), 1.0, 256, n, |t| {
            let mut v = vec![C64::default(); n];
            v[0] = C64::from_polar(1.0, m as f64 * t);
            v
        })
        .unwrap()
    }

    #[test]
    fn reproduces_monomials_and_kills_negative_modes() {
        let g = DiskGrid::new(0.9, 1.0 / 64.0, 256).unwrap();
        let s = cauchy_transform(&monomial(3, 2), &g).unwrap();
        let err = (0..g.len()).map(|k| (s.at(k)[0] - g.node(k).powi(3)).norm() + s.at(k)[1].norm()).fold(0.0, f64::max);
        assert!(err < 1e-10 * 0.9f64.powi(3), "{err}");
        let s = cauchy_transform(&monomial(-1, 1), &g).unwrap();
        assert!(s.comp(0).sup() < 1e-10);
    }

    #[test]
    fn constant_data_is_reproduced() {
        let g = DiskGrid::new(0.9, 1.0 / 32.0, 256).unwrap();
        let v = [C64::new(1.0, 0.0) / 2f64.sqrt(), C64::new(0.0, 1.0) / 2f64.sqrt(), C64::default()];
        let chi = BoundaryData::from_fn(C64::default(), 1.0, 256, 3, |_| v.to_vec()).unwrap();
        let s = cauchy_transform(&chi, &g).unwrap();
        let err = (0..g.len()).map(|k| s.at(k).iter().zip(&v).map(|(a, b)| (a - b).norm()).sum::<f64>()).fold(0.0, f64::max);
        // discrete transform of a constant is c/(1 − (ζ/R)^M)
        assert!(err < 2.0 * 0.9f64.powi(256), "{err}");
    }

    #[test]
    fn near_boundary_is_an_error() {
        let g = DiskGrid::new(1.0, 1.0 / 32.0, 256).unwrap();
        assert!(matches!(cauchy_transform(&monomial(1, 1), &g), Err(Error::NearBoundary { .. })));
    }

    #[test]
    fn doubling_m_squares_the_error() {
        let err = |m: usize| {
            let chi = BoundaryData::from_fn(C64::default(), 1.0, m, 1, |t| vec![C64::from_polar(1.0, 2.0 * t)]).unwrap();
            let z = C64::new(0.9, 0.0);
            (cauchy_eval(&chi, z).unwrap()[0] - z * z).norm()
        };
        let (e1, e2) = (err(64), err(128));
        // exact: z²·z^M/(1 − z^M)
        let want = |m: i32| 0.81 * 0.9f64.powi(m) / (1.0 - 0.9f64.powi(m));
        assert!((e1 / want(64) - 1.0).abs() < 1e-8 && (e2 / want(128) - 1.0).abs() < 1e-6);
        assert!(((e2 / 0.81) / (e1 / 0.81).powi(2) - 1.0).abs() < 1e-2);
    }

    #[test]
    fn dbar_examples() {
        let g = DiskGrid::new(1.0, 1.0 / 128.0, 256).unwrap();
        let s = SectionField::from_fn(&g, 1, |z| vec![z.conj()]);
        let r = dbar_residual(&g, &s, None).unwrap();
        assert!((r.sup - 1.0).abs() < 1e-12);
        assert!((r.l2 - PI.sqrt()).abs() < 4.0 / 128.0);
    }

    #[test]
    fn derivative_bound_examples() {
        let g = DiskGrid::new(0.9, 1.0 / 64.0, 256).unwrap();
        let chi = monomial(1, 2);
        let s = cauchy_transform(&chi, &g).unwrap();
        let rep = derivative_bound_check(&g, &s, &chi, None, 1e-9).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert!((rep.get("center_derivative").unwrap().measured - 1.0).abs() < 1e-12);
        let chi = monomial(0, 2);
        let s = cauchy_transform(&chi, &g).unwrap();
        let rep = derivative_bound_check(&g, &s, &chi, None, 1e-9).unwrap();
        assert!(rep.get("interior_weighted_derivative").unwrap().measured < 1e-12);
    }

    #[test]
    fn max_principle_on_monomial() {
        let g = DiskGrid::new(0.9, 0.9 / 64.0, 256).unwrap();
        let chi = monomial(4, 1);
        let s = cauchy_transform(&chi, &g).unwrap();
        let rep = max_principle_check(&g, &s, &chi, None).unwrap();
        assert!(rep.passed());
        assert!((rep.checks[0].measured - 0.9f64.powi(4)).abs() < 1e-10);
    }

    #[test]
    fn max_principle_uses_the_holomorphic_trace() {
        // χ = e^{iθ}/2 + 1/2 + e^{−iθ}/2; the transform keeps z/2 + 1/2, whose boundary sup is 1
        let g = DiskGrid::new(0.9, 0.9 / 64.0, 256).unwrap();
        let chi = BoundaryData::from_fn(C64::default(), 1.0, 256, 1, |t| {
            vec![C64::from_polar(0.5, t) + 0.5 + C64::from_polar(0.5, -t)]
        })
        .unwrap();
        assert!((chi.sup_norm(None) - 1.5).abs() < 1e-12);
        let hol = chi.holomorphic_part();
        assert!((hol.sup_norm(None) - 1.0).abs() < 1e-12);
        assert!((hol.value(0)[0] - C64::new(1.0, 0.0)).norm() < 1e-12);
        let s = cauchy_transform(&chi, &g).unwrap();
        let rep = max_principle_check(&g, &s, &chi, None).unwrap();
        assert!(rep.passed(), "{:?}", rep.checks);
        let h0 = crate::linalg::diag(&[4.0]);
        assert!(max_principle_check(&g, &s, &chi, Some(&h0)).unwrap().passed());
    }

    #[test]
    fn oversampling_reproduces_bandlimited_data() {
        let s: Vec<C64> = boundary_angles(64).iter().map(|&t| C64::from_polar(1.0, 3.0 * t) + 0.5).collect();
        let f = trig_oversample(&s, 256);
        for (q, v) in f.iter().enumerate() {
            let t = 2.0 * PI * q as f64 / 256.0;
            assert!((v - (C64::from_polar(1.0, 3.0 * t) + 0.5)).norm() < 1e-12);
        }
    }
}
