//! Hermitian metrics on the trivial bundle, Chern connection and curvature, Bochner and quotient checks.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{DiskGrid, ScalarField, SectionField};
use crate::linalg::{generalized_eigenvalues, hermitian_defect, hermitian_eigenvalues, inverse_guarded, sesq, CMat, C64};

type MetricFn = dyn Fn(C64) -> CMat + Send + Sync;

/// A Hermitian metric given as a function of the base point.
#[derive(Clone)]
pub struct Metric {
    rank: usize,
    eval: Arc<MetricFn>,
}

impl fmt::Debug for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Metric(rank {})", self.rank)
    }
}

impl Metric {
    pub fn new(rank: usize, f: impl Fn(C64) -> CMat + Send + Sync + 'static) -> Self {
        Metric { rank, eval: Arc::new(f) }
    }
    pub fn flat(n: usize) -> Self {
        Metric::new(n, move |_| CMat::identity(n, n))
    }
    /// `φ(z)·Id`.
    pub fn conformal(n: usize, phi: impl Fn(C64) -> f64 + Send + Sync + 'static) -> Self {
        Metric::new(n, move |z| CMat::identity(n, n) * C64::new(phi(z), 0.0))
    }
    /// `diag(φ₁(z), …, φₙ(z))`.
    pub fn diagonal(entries: Vec<Arc<dyn Fn(C64) -> f64 + Send + Sync>>) -> Self {
        let n = entries.len();
        Metric::new(n, move |z| {
            CMat::from_fn(n, n, |i, j| if i == j { C64::new(entries[i](z), 0.0) } else { C64::default() })
        })
    }
    pub fn rank(&self) -> usize {
        self.rank
    }
    pub fn at(&self, z: C64) -> CMat {
        (self.eval)(z)
    }
    pub fn sample(&self, grid: &DiskGrid) -> Result<MetricField> {
        MetricField::from_values(self.rank, grid.nodes().par_iter().map(|&z| self.at(z)).collect())
    }
}

/// Real symmetric bilinear companion of a real metric matrix, `H(v,w) = g(v, w̄)`.
pub fn bilinear_companion(h: &CMat, node: usize) -> Result<DMatrix<f64>> {
    let scale = h.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if h.iter().any(|z| z.im.abs() > 1e-14 * scale.max(1.0)) {
        return Err(Error::NotReal { node });
    }
    Ok(DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| 0.5 * (h[(i, j)].re + h[(j, i)].re)))
}

/// Hermitian positive-definite matrix per node.
#[derive(Clone, Debug)]
pub struct MetricField {
    n: usize,
    values: Vec<CMat>,
}

impl MetricField {
    pub fn from_values(n: usize, values: Vec<CMat>) -> Result<Self> {
        let bad = values.par_iter().enumerate().find_first(|(_, h)| {
            let scale = h.iter().map(|z| z.norm()).fold(0.0, f64::max);
            h.nrows() != n
                || h.ncols() != n
                || hermitian_defect(h) > 1e-12 * scale
                || !(hermitian_eigenvalues(h)[0] > 0.0)
        });
        if let Some((node, _)) = bad {
            return Err(Error::NotPositive { node });
        }
        Ok(MetricField { n, values })
    }
    pub fn constant(grid: &DiskGrid, h: &CMat) -> Result<Self> {
        MetricField::from_values(h.nrows(), vec![h.clone(); grid.len()])
    }
    pub fn rank(&self) -> usize {
        self.n
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn at(&self, k: usize) -> &CMat {
        &self.values[k]
    }
    pub fn values(&self) -> &[CMat] {
        &self.values
    }
    /// Bilinear companion at node `k`; only real metrics have one.
    pub fn gc_at(&self, k: usize) -> Result<DMatrix<f64>> {
        bilinear_companion(&self.values[k], k)
    }
    pub fn entry(&self, i: usize, j: usize) -> ScalarField {
        ScalarField::new(self.values.iter().map(|h| h[(i, j)]).collect())
    }
    /// `e^{-ψ} H` nodewise.
    pub fn conformal_change(&self, psi: &[f64]) -> Result<Self> {
        if psi.len() != self.len() {
            return Err(Error::GridMismatch { expected: self.len(), got: psi.len() });
        }
        let values = self.values.iter().zip(psi).map(|(h, p)| h * C64::new((-p).exp(), 0.0)).collect();
        MetricField::from_values(self.n, values)
    }
    fn check(&self, grid: &DiskGrid) -> Result<()> {
        if self.len() != grid.len() {
            return Err(Error::GridMismatch { expected: grid.len(), got: self.len() });
        }
        Ok(())
    }
}

/// dz- and dz̄-coefficients of a connection matrix per node.
#[derive(Clone, Debug)]
pub struct ConnectionField {
    n: usize,
    dz: Vec<CMat>,
    dzbar: Option<Vec<CMat>>,
}

impl ConnectionField {
    pub fn from_parts(n: usize, dz: Vec<CMat>, dzbar: Option<Vec<CMat>>) -> Self {
        ConnectionField { n, dz, dzbar }
    }
    pub fn zero(grid: &DiskGrid, n: usize) -> Self {
        ConnectionField { n, dz: vec![CMat::zeros(n, n); grid.len()], dzbar: None }
    }
    pub fn rank(&self) -> usize {
        self.n
    }
    pub fn dz(&self, k: usize) -> &CMat {
        &self.dz[k]
    }
    pub fn dzbar(&self, k: usize) -> Option<&CMat> {
        self.dzbar.as_ref().map(|v| &v[k])
    }
    pub fn sup_norm(&self) -> f64 {
        let a = self.dz.iter().flat_map(|m| m.iter()).map(|z| z.norm()).fold(0.0, f64::max);
        let b = self.dzbar.iter().flatten().flat_map(|m| m.iter()).map(|z| z.norm()).fold(0.0, f64::max);
        a.max(b)
    }
}

/// Chern curvature coefficient of `dz∧dz̄` with its traces.
#[derive(Clone, Debug)]
pub struct CurvatureField {
    n: usize,
    r: Vec<CMat>,
    ricci: Vec<f64>,
    mean_k: Vec<CMat>,
}

impl CurvatureField {
    pub fn rank(&self) -> usize {
        self.n
    }
    pub fn r(&self, k: usize) -> &CMat {
        &self.r[k]
    }
    pub fn ricci(&self, k: usize) -> f64 {
        self.ricci[k]
    }
    pub fn mean_k(&self, k: usize) -> &CMat {
        &self.mean_k[k]
    }
    /// Smallest eigenvalue of `R` relative to `H` over interior nodes.
    pub fn min_relative_eigenvalue(&self, grid: &DiskGrid, h: &MetricField) -> Result<f64> {
        let vals: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .filter(|&k| grid.is_interior(k))
            .map(|k| generalized_eigenvalues(&self.r[k], h.at(k), k).map(|e| e[0]))
            .collect::<Result<_>>()?;
        Ok(vals.into_iter().fold(f64::INFINITY, f64::min))
    }
}

struct Derivatives {
    d: Vec<CMat>,
    dbar: Vec<CMat>,
    ddbar: Vec<CMat>,
}

fn derivatives(grid: &DiskGrid, h: &MetricField, second: bool) -> Result<Derivatives> {
    h.check(grid)?;
    let n = h.rank();
    let mut d = vec![CMat::zeros(n, n); grid.len()];
    let mut dbar = d.clone();
    let mut ddbar = if second { d.clone() } else { Vec::new() };
    for i in 0..n {
        for j in 0..n {
            let e = h.entry(i, j);
            let (a, b) = grid.wirtinger(&e)?;
            for k in 0..grid.len() {
                d[k][(i, j)] = a.get(k);
                dbar[k][(i, j)] = b.get(k);
            }
            if second {
                let c = grid.dz_dzbar(&e)?;
                for (k, m) in ddbar.iter_mut().enumerate() {
                    m[(i, j)] = c.get(k);
                }
            }
        }
    }
    Ok(Derivatives { d, dbar, ddbar })
}

/// `A = ∂H·H⁻¹` on the interior mask, zero elsewhere.
pub fn connection_form(grid: &DiskGrid, h: &MetricField) -> Result<ConnectionField> {
    let der = derivatives(grid, h, false)?;
    let n = h.rank();
    let dz = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            if !grid.is_interior(k) {
                return Ok(CMat::zeros(n, n));
            }
            Ok(&der.d[k] * inverse_guarded(h.at(k), k)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConnectionField { n, dz, dzbar: None })
}

fn curvature_values(grid: &DiskGrid, h: &MetricField) -> Result<Vec<CMat>> {
    let der = derivatives(grid, h, true)?;
    let n = h.rank();
    (0..grid.len())
        .into_par_iter()
        .map(|k| {
            if !grid.is_interior(k) {
                return Ok(CMat::zeros(n, n));
            }
            let inv = inverse_guarded(h.at(k), k)?;
            Ok(-&der.ddbar[k] + &der.d[k] * inv * &der.dbar[k])
        })
        .collect()
}

/// `R = −∂∂̄H + ∂H·H⁻¹·∂̄H` with `ricci = tr(H⁻¹R)` and `meanK = R/λ` (λ ≡ 1 by default).
pub fn curvature_field(
    grid: &DiskGrid,
    h: &MetricField,
    lambda: Option<&(dyn Fn(C64) -> f64 + Sync)>,
) -> Result<CurvatureField> {
    let r = curvature_values(grid, h)?;
    let n = h.rank();
    let ricci = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            if !grid.is_interior(k) {
                return Ok(0.0);
            }
            Ok((inverse_guarded(h.at(k), k)? * &r[k]).trace().re)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_k = r
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let l = lambda.map(|f| f(grid.node(k))).unwrap_or(1.0);
            m * C64::new(1.0 / l, 0.0)
        })
        .collect();
    Ok(CurvatureField { n, r, ricci, mean_k })
}

/// `∇^{0,1}s = ∂̄s + A^{0,1}s`.
pub fn covariant_d01(grid: &DiskGrid, s: &SectionField, a: Option<&ConnectionField>) -> Result<SectionField> {
    s.check(grid)?;
    let d = s.try_map_comps(|c| grid.dbar(c))?;
    let Some(a01) = a.filter(|a| a.dzbar.is_some()) else {
        return Ok(d);
    };
    if a01.rank() != s.rank() {
        return Err(Error::Precondition(format!("connection rank {} != section rank {}", a01.rank(), s.rank())));
    }
    let n = s.rank();
    let rows: Vec<Vec<C64>> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let sv = s.at(k);
            let dv = d.at(k);
            let m = a01.dzbar(k).unwrap();
            (0..n).map(|i| dv[i] + (0..n).map(|j| m[(i, j)] * sv[j]).sum::<C64>()).collect()
        })
        .collect();
    SectionField::new((0..n).map(|i| ScalarField::new(rows.iter().map(|r| r[i]).collect())).collect())
}

/// `|∂∂̄|s|²_H − (−sᵀR s̄ + |∂s + Aᵀs|²_H)|` on the interior mask.
///
/// The left side uses the five-point Laplacian, so the residual is second order in `h`.
pub fn bochner_residual(grid: &DiskGrid, s: &SectionField, h: &MetricField) -> Result<ScalarField> {
    s.check(grid)?;
    if s.rank() != h.rank() {
        return Err(Error::Precondition("section and metric ranks differ".into()));
    }
    let n = s.rank();
    let f = s.norm_sq_field(Some(h));
    let lhs = grid.flat_laplacian(&f)?;
    let curv = curvature_values(grid, h)?;
    let conn = connection_form(grid, h)?;
    let ds = s.try_map_comps(|c| Ok(grid.wirtinger(c)?.0))?;
    let vals = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            if !grid.is_interior(k) {
                return C64::default();
            }
            let sv = s.at(k);
            let a = conn.dz(k);
            let dsv: Vec<C64> =
                (0..n).map(|i| ds.comp(i).get(k) + (0..n).map(|j| a[(j, i)] * sv[j]).sum::<C64>()).collect();
            let rhs = -sesq(&sv, &curv[k], &sv).re + sesq(&dsv, h.at(k), &dsv).re;
            C64::new((0.25 * lhs.get(k).re - rhs).abs(), 0.0)
        })
        .collect();
    Ok(ScalarField::new(vals))
}

/// Minimum eigenvalue of `Θ(H_Q) − Θ(H)|_{F⊥}` for the quotient by the line spanned by `sub`.
pub fn quotient_curvature_gap(grid: &DiskGrid, h: &MetricField, sub: &SectionField) -> Result<ScalarField> {
    sub.check(grid)?;
    let n = h.rank();
    if n < 2 {
        return Err(Error::RankTooSmall { n, what: "a quotient by a line needs n >= 2".into() });
    }
    if sub.rank() != n {
        return Err(Error::Precondition("sub-bundle section rank differs from metric rank".into()));
    }
    let norms = sub.norm_sq_field(None);
    if let Some(node) = norms.values().iter().position(|v| v.re.sqrt() < 1e-12) {
        return Err(Error::VanishingSection { node });
    }
    let mins: Vec<f64> = (0..n).map(|i| sub.comp(i).values().iter().map(|v| v.norm()).fold(f64::INFINITY, f64::min)).collect();
    let pivot = (0..n).max_by(|&a, &b| mins[a].total_cmp(&mins[b])).unwrap();
    if mins[pivot] < 1e-12 {
        return Err(Error::Precondition("no single component of the sub-bundle section is nowhere zero".into()));
    }
    let others: Vec<usize> = (0..n).filter(|&i| i != pivot).collect();
    // H-orthogonal projections of the frame vectors e_a, a != pivot.
    let proj: Vec<Vec<Vec<C64>>> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let f = sub.at(k);
            let hk = h.at(k);
            let ff = sesq(&f, hk, &f).re;
            others
                .iter()
                .map(|&a| {
                    let mut e = vec![C64::default(); n];
                    e[a] = C64::new(1.0, 0.0);
                    let c = sesq(&e, hk, &f) / ff;
                    e.iter().zip(&f).map(|(x, y)| x - c * y).collect()
                })
                .collect()
        })
        .collect();
    let q = n - 1;
    let hq_vals: Vec<CMat> = (0..grid.len())
        .map(|k| CMat::from_fn(q, q, |a, b| sesq(&proj[k][a], h.at(k), &proj[k][b])))
        .collect();
    let hq = MetricField::from_values(q, hq_vals)?;
    let rq = curvature_values(grid, &hq)?;
    let re = curvature_values(grid, h)?;
    let vals = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            if !grid.is_interior(k) {
                return C64::default();
            }
            let restricted = CMat::from_fn(q, q, |a, b| sesq(&proj[k][a], &re[k], &proj[k][b]));
            C64::new(hermitian_eigenvalues(&(&rq[k] - restricted))[0], 0.0)
        })
        .collect();
    Ok(ScalarField::new(vals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::diag;

    fn gaussian(k: f64) -> impl Fn(C64) -> f64 + Send + Sync + Clone {
        move |z: C64| (-k * z.norm_sqr() / 2.0).exp()
    }

    fn sup_over_interior(grid: &DiskGrid, f: impl Fn(usize) -> f64) -> f64 {
        (0..grid.len()).filter(|&k| grid.is_interior(k)).map(f).fold(0.0, f64::max)
    }

    #[test]
    fn flat_metric_is_flat() {
        let g = DiskGrid::new(1.0, 1.0 / 32.0, 64).unwrap();
        let h = Metric::flat(3).sample(&g).unwrap();
        assert_eq!(connection_form(&g, &h).unwrap().sup_norm(), 0.0);
        let r = curvature_field(&g, &h, None).unwrap();
        assert_eq!(sup_over_interior(&g, |k| r.r(k).norm()), 0.0);
    }

    #[test]
    fn gaussian_line_connection_and_curvature() {
        let g = DiskGrid::new(1.0, 1.0 / 64.0, 64).unwrap();
        for k in [1.0, 2.5] {
            let f = gaussian(k);
            let h = Metric::conformal(1, f.clone()).sample(&g).unwrap();
            let a = connection_form(&g, &h).unwrap();
            let r = curvature_field(&g, &h, None).unwrap();
            let ea = sup_over_interior(&g, |i| (a.dz(i)[(0, 0)] + k / 2.0 * g.node(i).conj()).norm());
            let er = sup_over_interior(&g, |i| (r.r(i)[(0, 0)] - k / 2.0 * f(g.node(i))).norm());
            assert!(ea < 1e-6 && er < 1e-5, "{ea} {er}");
            let eric = sup_over_interior(&g, |i| (r.ricci(i) - k / 2.0).abs());
            assert!(eric < 1e-5);
        }
    }

    #[test]
    fn diagonal_metric_blocks() {
        let g = DiskGrid::new(1.0, 1.0 / 64.0, 64).unwrap();
        let (f1, f2) = (gaussian(1.0), gaussian(2.0));
        let h = Metric::diagonal(vec![Arc::new(f1.clone()), Arc::new(f2.clone())]).sample(&g).unwrap();
        let a = connection_form(&g, &h).unwrap();
        let r = curvature_field(&g, &h, None).unwrap();
        let err = sup_over_interior(&g, |i| {
            let z = g.node(i);
            let want = diag(&[0.5 * f1(z), f2(z)]);
            let wa = CMat::from_fn(2, 2, |p, q| if p == q { -z.conj() * (0.5 * (p + 1) as f64) } else { C64::default() });
            (r.r(i) - want).norm() + (a.dz(i) - wa).norm()
        });
        assert!(err < 1e-5, "{err}");
        let sym = sup_over_interior(&g, |i| hermitian_defect(r.r(i)));
        assert!(sym < 1e-12);
    }

    #[test]
    fn curvature_is_hermitian_for_non_diagonal_metric() {
        let g = DiskGrid::new(1.0, 1.0 / 32.0, 64).unwrap();
        let h = Metric::new(2, |z| {
            let w = C64::new(0.3, 0.1) * z;
            let mut m = diag(&[1.0 + z.norm_sqr(), 2.0]);
            m[(0, 1)] = w;
            m[(1, 0)] = w.conj();
            m
        })
        .sample(&g)
        .unwrap();
        let r = curvature_field(&g, &h, None).unwrap();
        assert!(sup_over_interior(&g, |i| hermitian_defect(r.r(i))) < 1e-10);
    }

    #[test]
    fn covariant_examples() {
        let g = DiskGrid::new(1.0, 1.0 / 128.0, 64).unwrap();
        let s = SectionField::from_fn(&g, 2, |z| vec![z.powi(6) - z * 2.0, z.powi(3)]);
        let d = covariant_d01(&g, &s, None).unwrap();
        let sup = sup_over_interior(&g, |k| d.at(k).iter().map(|v| v.norm()).fold(0.0, f64::max));
        assert!(sup <= 1e-10, "{sup}");
        let s = SectionField::from_fn(&g, 2, |z| vec![z.conj(), C64::default()]);
        let d = covariant_d01(&g, &s, None).unwrap();
        assert!(sup_over_interior(&g, |k| (d.at(k)[0] - 1.0).norm() + d.at(k)[1].norm()) < 1e-12);
        let s = SectionField::from_fn(&g, 1, |z| vec![C64::new((-z.norm_sqr() / 2.0).exp(), 0.0)]);
        let dzbar = g.nodes().iter().map(|&z| CMat::from_element(1, 1, z * 0.5)).collect();
        let a = ConnectionField::from_parts(1, vec![CMat::zeros(1, 1); g.len()], Some(dzbar));
        let d = covariant_d01(&g, &s, Some(&a)).unwrap();
        assert!(sup_over_interior(&g, |k| d.at(k)[0].norm()) < 1e-9);
    }

    #[test]
    fn bochner_examples() {
        let g = DiskGrid::new(1.0, 1.0 / 32.0, 64).unwrap();
        let flat = Metric::flat(2).sample(&g).unwrap();
        let s = SectionField::constant(&g, &[C64::new(0.3, 0.2), C64::new(1.0, 0.0)]);
        assert!(bochner_residual(&g, &s, &flat).unwrap().sup() < 1e-12);
        let s = SectionField::from_fn(&g, 2, |z| vec![z, C64::new(1.0, 0.0)]);
        assert!(bochner_residual(&g, &s, &flat).unwrap().sup() < 1e-9);
        let res = |h: f64| {
            let g = DiskGrid::new(1.0, h, 64).unwrap();
            let m = Metric::conformal(2, gaussian(1.0)).sample(&g).unwrap();
            let s = SectionField::constant(&g, &[C64::new(1.0, 0.0), C64::default()]);
            bochner_residual(&g, &s, &m).unwrap().sup()
        };
        let ratio = res(1.0 / 32.0) / res(1.0 / 64.0);
        assert!((3.5..=4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn quotient_gap_examples() {
        let g = DiskGrid::new(1.0, 1.0 / 64.0, 64).unwrap();
        let flat = Metric::flat(2).sample(&g).unwrap();
        let sub = SectionField::constant(&g, &[C64::new(1.0, 0.0), C64::default()]);
        assert!(quotient_curvature_gap(&g, &flat, &sub).unwrap().sup() < 1e-12);
        let sub = SectionField::from_fn(&g, 2, |z| vec![C64::new(1.0, 0.0), z]);
        let gap = quotient_curvature_gap(&g, &flat, &sub).unwrap();
        let err = sup_over_interior(&g, |k| (gap.get(k).re - (1.0 + g.node(k).norm_sqr()).powi(-3)).abs());
        assert!(err < 1e-6, "{err}");
        let gm = Metric::conformal(2, gaussian(1.0)).sample(&g).unwrap();
        let sub = SectionField::constant(&g, &[C64::new(1.0, 0.0), C64::default()]);
        assert!(quotient_curvature_gap(&g, &gm, &sub).unwrap().sup() < 1e-8);
    }

    #[test]
    fn quotient_gap_rejects_vanishing_sub() {
        let g = DiskGrid::new(1.0, 1.0 / 32.0, 64).unwrap();
        let flat = Metric::flat(2).sample(&g).unwrap();
        let sub = SectionField::from_fn(&g, 2, |z| vec![z, z * z]);
        assert!(matches!(quotient_curvature_gap(&g, &flat, &sub), Err(Error::VanishingSection { .. })));
    }

    #[test]
    fn non_real_metric_has_no_companion() {
        let mut m = diag(&[1.0, 1.0]);
        m[(0, 1)] = C64::new(0.0, 0.5);
        m[(1, 0)] = C64::new(0.0, -0.5);
        assert!(matches!(bilinear_companion(&m, 4), Err(Error::NotReal { node: 4 })));
        let g = bilinear_companion(&diag(&[2.0, 3.0]), 0).unwrap();
        // H(v, w) = g(v, w̄) with g symmetric
        assert_eq!(g[(0, 0)], 2.0);
        assert_eq!(g[(0, 1)], g[(1, 0)]);
    }
}
