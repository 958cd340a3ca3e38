//! Masked Cartesian lattice on the disk, quadrature and finite-difference operators.

use rayon::prelude::*;

use crate::cauchy::BoundaryData;
use crate::error::{Error, Result};
use crate::geometry::MetricField;
use crate::linalg::{sesq, C64};

const ABSENT: u32 = u32::MAX;
const SLACK: f64 = 1e-12;

/// Uniform lattice of spacing `h` masked to `|z| ≤ R`, plus `M` boundary angles.
#[derive(Clone, Debug)]
pub struct DiskGrid {
    radius: f64,
    h: f64,
    m: usize,
    half: i32,
    nodes: Vec<C64>,
    lattice: Vec<(i32, i32)>,
    lookup: Vec<u32>,
    interior: Vec<bool>,
    // x-2, x-1, x+1, x+2, y-2, y-1, y+1, y+2 for interior nodes
    stencil: Vec<[u32; 8]>,
}

impl DiskGrid {
    pub fn new(radius: f64, h: f64, m: usize) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidGrid(format!("radius must be positive, got {radius}")));
        }
        if !(h > 0.0) || h > radius / 16.0 {
            return Err(Error::InvalidGrid(format!(
                "grid too coarse: h = {h} exceeds R/16 = {} (fewer than 3 interior stencil layers)",
                radius / 16.0
            )));
        }
        if m < 64 || !m.is_power_of_two() {
            return Err(Error::InvalidGrid(format!("boundary sample count M = {m} must be a power of two >= 64")));
        }
        let rh = radius / h;
        let half = (rh * (1.0 + SLACK)).floor() as i32;
        let width = (2 * half + 1) as usize;
        let outer = rh * rh * (1.0 + SLACK);
        let inner_r = (radius - 2.0 * h) / h;
        let inner = inner_r * inner_r * (1.0 + SLACK);
        let mut nodes = Vec::new();
        let mut lattice = Vec::new();
        let mut interior = Vec::new();
        let mut lookup = vec![ABSENT; width * width];
        for j in -half..=half {
            for i in -half..=half {
                let d2 = (i as f64).powi(2) + (j as f64).powi(2);
                if d2 <= outer {
                    lookup[(j + half) as usize * width + (i + half) as usize] = nodes.len() as u32;
                    nodes.push(C64::new(i as f64 * h, j as f64 * h));
                    lattice.push((i, j));
                    interior.push(d2 <= inner);
                }
            }
        }
        let mut grid = DiskGrid { radius, h, m, half, nodes, lattice, lookup, interior, stencil: Vec::new() };
        let stencil: Vec<[u32; 8]> = (0..grid.len())
            .map(|k| {
                if !grid.interior[k] {
                    return [ABSENT; 8];
                }
                let (i, j) = grid.lattice[k];
                let offs = [(-2, 0), (-1, 0), (1, 0), (2, 0), (0, -2), (0, -1), (0, 1), (0, 2)];
                let mut out = [ABSENT; 8];
                for (o, (di, dj)) in out.iter_mut().zip(offs) {
                    *o = grid.index_of(i + di, j + dj).map(|x| x as u32).unwrap_or(ABSENT);
                }
                out
            })
            .collect();
        if stencil.iter().zip(&grid.interior).any(|(s, &int)| int && s.contains(&ABSENT)) {
            return Err(Error::InvalidGrid("interior stencil leaves the node list".into()));
        }
        grid.stencil = stencil;
        Ok(grid)
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn spacing(&self) -> f64 {
        self.h
    }
    pub fn cell_area(&self) -> f64 {
        self.h * self.h
    }
    pub fn boundary_samples(&self) -> usize {
        self.m
    }
    pub fn boundary_angles(&self) -> Vec<f64> {
        boundary_angles(self.m)
    }
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    pub fn nodes(&self) -> &[C64] {
        &self.nodes
    }
    pub fn node(&self, k: usize) -> C64 {
        self.nodes[k]
    }
    pub fn lattice(&self, k: usize) -> (i32, i32) {
        self.lattice[k]
    }
    pub fn interior(&self) -> &[bool] {
        &self.interior
    }
    pub fn is_interior(&self, k: usize) -> bool {
        self.interior[k]
    }
    pub fn interior_count(&self) -> usize {
        self.interior.iter().filter(|&&b| b).count()
    }

    pub fn index_of(&self, i: i32, j: i32) -> Option<usize> {
        if i.abs() > self.half || j.abs() > self.half {
            return None;
        }
        let width = (2 * self.half + 1) as usize;
        let v = self.lookup[(j + self.half) as usize * width + (i + self.half) as usize];
        (v != ABSENT).then_some(v as usize)
    }

    /// Node closest to `z`, if any lattice node lies within the disk near it.
    pub fn nearest_node(&self, z: C64) -> Option<usize> {
        let i = (z.re / self.h).round() as i32;
        let j = (z.im / self.h).round() as i32;
        self.index_of(i, j).or_else(|| {
            (0..self.len()).min_by(|&a, &b| (self.nodes[a] - z).norm().total_cmp(&(self.nodes[b] - z).norm()))
        })
    }

    /// Nodes with `|z - center| ≤ r`.
    pub fn ball_mask(&self, center: C64, r: f64) -> Vec<bool> {
        let lim = r * (1.0 + SLACK);
        self.nodes.iter().map(|z| (z - center).norm() <= lim).collect()
    }

    /// Interior nodes with `|z - center| ≤ r`.
    pub fn interior_ball_mask(&self, center: C64, r: f64) -> Vec<bool> {
        let lim = r * (1.0 + SLACK);
        self.nodes.iter().zip(&self.interior).map(|(z, &i)| i && (z - center).norm() <= lim).collect()
    }

    pub fn check(&self, f: &ScalarField) -> Result<()> {
        if f.len() != self.len() {
            return Err(Error::GridMismatch { expected: self.len(), got: f.len() });
        }
        Ok(())
    }

    /// `Σ f h²` in fixed pairwise order.
    pub fn integrate(&self, f: &ScalarField) -> Result<C64> {
        self.check(f)?;
        Ok(pairwise_sum(f.values()) * self.cell_area())
    }

    /// Quadrature restricted to a node mask.
    pub fn integrate_masked(&self, f: &ScalarField, mask: &[bool]) -> Result<C64> {
        self.check(f)?;
        if mask.len() != self.len() {
            return Err(Error::GridMismatch { expected: self.len(), got: mask.len() });
        }
        let vals: Vec<C64> =
            f.values().iter().zip(mask).map(|(&v, &m)| if m { v } else { C64::default() }).collect();
        Ok(pairwise_sum(&vals) * self.cell_area())
    }

    fn stencil_map(&self, f: &ScalarField, op: impl Fn(&[C64], usize, &[u32; 8]) -> C64 + Sync) -> Result<ScalarField> {
        self.check(f)?;
        let v = f.values();
        let out = (0..self.len())
            .into_par_iter()
            .map(|k| if self.interior[k] { op(v, k, &self.stencil[k]) } else { C64::default() })
            .collect();
        Ok(ScalarField::new(out))
    }

    /// `(∂f/∂z, ∂f/∂z̄)` by 4th-order central differences, zero off the interior mask.
    pub fn wirtinger(&self, f: &ScalarField) -> Result<(ScalarField, ScalarField)> {
        let (fx, fy) = self.gradient(f)?;
        let i = C64::i();
        let dz = fx.values().iter().zip(fy.values()).map(|(&a, &b)| 0.5 * (a - i * b)).collect();
        let dzb = fx.values().iter().zip(fy.values()).map(|(&a, &b)| 0.5 * (a + i * b)).collect();
        Ok((ScalarField::new(dz), ScalarField::new(dzb)))
    }

    /// `∂f/∂z̄` alone.
    pub fn dbar(&self, f: &ScalarField) -> Result<ScalarField> {
        Ok(self.wirtinger(f)?.1)
    }

    /// `(∂f/∂x, ∂f/∂y)` by 4th-order central differences.
    pub fn gradient(&self, f: &ScalarField) -> Result<(ScalarField, ScalarField)> {
        let s = 1.0 / (12.0 * self.h);
        let d = |v: &[C64], st: &[u32; 4]| {
            (v[st[0] as usize] - 8.0 * v[st[1] as usize] + 8.0 * v[st[2] as usize] - v[st[3] as usize]) * s
        };
        let fx = self.stencil_map(f, |v, _, st| d(v, &[st[0], st[1], st[2], st[3]]))?;
        let fy = self.stencil_map(f, |v, _, st| d(v, &[st[4], st[5], st[6], st[7]]))?;
        Ok((fx, fy))
    }

    /// Five-point Laplacian `∂²x + ∂²y`, second order.
    pub fn flat_laplacian(&self, f: &ScalarField) -> Result<ScalarField> {
        let s = 1.0 / (self.h * self.h);
        self.stencil_map(f, |v, k, st| {
            (v[st[1] as usize] + v[st[2] as usize] + v[st[5] as usize] + v[st[6] as usize] - 4.0 * v[k]) * s
        })
    }

    /// `∂∂̄f = Δf/4` with the five-point-per-axis fourth-order stencil.
    pub fn dz_dzbar(&self, f: &ScalarField) -> Result<ScalarField> {
        let s = 1.0 / (48.0 * self.h * self.h);
        self.stencil_map(f, |v, k, st| {
            let g = |a: u32, b: u32, c: u32, d: u32| {
                -v[a as usize] + 16.0 * v[b as usize] + 16.0 * v[c as usize] - v[d as usize]
            };
            (g(st[0], st[1], st[2], st[3]) + g(st[4], st[5], st[6], st[7]) - 60.0 * v[k]) * s
        })
    }

    /// Supremum of `|f|` over masked nodes.
    pub fn sup_masked(&self, f: &ScalarField, mask: &[bool]) -> f64 {
        f.values().iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| v.norm()).fold(0.0, f64::max)
    }
}

pub fn boundary_angles(m: usize) -> Vec<f64> {
    (0..m).map(|k| 2.0 * std::f64::consts::PI * k as f64 / m as f64).collect()
}

/// Deterministic pairwise summation.
pub fn pairwise_sum(xs: &[C64]) -> C64 {
    if xs.len() <= 16 {
        return xs.iter().fold(C64::default(), |a, &b| a + b);
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn pairwise_sum_real(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum_real(&xs[..mid]) + pairwise_sum_real(&xs[mid..])
}

/// Complex scalar per grid node.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    values: Vec<C64>,
}

impl ScalarField {
    pub fn new(values: Vec<C64>) -> Self {
        ScalarField { values }
    }
    pub fn zeros(grid: &DiskGrid) -> Self {
        ScalarField { values: vec![C64::default(); grid.len()] }
    }
    pub fn from_fn(grid: &DiskGrid, f: impl Fn(C64) -> C64 + Sync) -> Self {
        ScalarField { values: grid.nodes().par_iter().map(|&z| f(z)).collect() }
    }
    pub fn from_real(values: Vec<f64>) -> Self {
        ScalarField { values: values.into_iter().map(|x| C64::new(x, 0.0)).collect() }
    }
    pub fn values(&self) -> &[C64] {
        &self.values
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn get(&self, k: usize) -> C64 {
        self.values[k]
    }
    pub fn map(&self, f: impl Fn(C64) -> C64 + Sync) -> Self {
        ScalarField { values: self.values.par_iter().map(|&v| f(v)).collect() }
    }
    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(C64, C64) -> C64 + Sync) -> Self {
        ScalarField { values: self.values.par_iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect() }
    }
    pub fn re(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }
    pub fn sup(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// ℂⁿ-valued field on the grid with an optional boundary trace.
#[derive(Clone, Debug)]
pub struct SectionField {
    comps: Vec<ScalarField>,
    trace: Option<BoundaryData>,
}

impl SectionField {
    pub fn new(comps: Vec<ScalarField>) -> Result<Self> {
        let Some(first) = comps.first() else {
            return Err(Error::RankTooSmall { n: 0, what: "a section needs at least one component".into() });
        };
        let len = first.len();
        if let Some(bad) = comps.iter().find(|c| c.len() != len) {
            return Err(Error::GridMismatch { expected: len, got: bad.len() });
        }
        Ok(SectionField { comps, trace: None })
    }

    pub fn from_fn(grid: &DiskGrid, n: usize, f: impl Fn(C64) -> Vec<C64> + Sync) -> Self {
        let rows: Vec<Vec<C64>> = grid.nodes().par_iter().map(|&z| f(z)).collect();
        let comps = (0..n).map(|i| ScalarField::new(rows.iter().map(|r| r[i]).collect())).collect();
        SectionField { comps, trace: None }
    }

    pub fn constant(grid: &DiskGrid, v: &[C64]) -> Self {
        SectionField {
            comps: v.iter().map(|&c| ScalarField::new(vec![c; grid.len()])).collect(),
            trace: None,
        }
    }

    pub fn with_trace(mut self, trace: BoundaryData) -> Self {
        self.trace = Some(trace);
        self
    }
    pub fn trace(&self) -> Option<&BoundaryData> {
        self.trace.as_ref()
    }
    pub fn rank(&self) -> usize {
        self.comps.len()
    }
    pub fn len(&self) -> usize {
        self.comps[0].len()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn comp(&self, i: usize) -> &ScalarField {
        &self.comps[i]
    }
    pub fn comps(&self) -> &[ScalarField] {
        &self.comps
    }
    pub fn at(&self, k: usize) -> Vec<C64> {
        self.comps.iter().map(|c| c.values[k]).collect()
    }

    pub fn check(&self, grid: &DiskGrid) -> Result<()> {
        grid.check(&self.comps[0])
    }

    pub fn scale(&self, a: C64) -> Self {
        SectionField { comps: self.comps.iter().map(|c| c.map(|v| a * v)).collect(), trace: None }
    }

    /// Nodewise product with a scalar field.
    pub fn mul_field(&self, eta: &ScalarField) -> Self {
        SectionField { comps: self.comps.iter().map(|c| c.zip_map(eta, |a, b| a * b)).collect(), trace: None }
    }

    pub fn add(&self, other: &SectionField) -> Self {
        SectionField {
            comps: self.comps.iter().zip(&other.comps).map(|(a, b)| a.zip_map(b, |x, y| x + y)).collect(),
            trace: None,
        }
    }

    /// Componentwise map, e.g. a finite-difference operator.
    pub fn try_map_comps(&self, f: impl Fn(&ScalarField) -> Result<ScalarField>) -> Result<Self> {
        Ok(SectionField { comps: self.comps.iter().map(f).collect::<Result<_>>()?, trace: None })
    }

    /// `|s|²` pointwise, Euclidean unless a metric is given.
    pub fn norm_sq_field(&self, metric: Option<&MetricField>) -> ScalarField {
        let n = self.len();
        let vals = (0..n)
            .into_par_iter()
            .map(|k| {
                let v = self.at(k);
                match metric {
                    Some(h) => C64::new(sesq(&v, h.at(k), &v).re, 0.0),
                    None => C64::new(v.iter().map(|z| z.norm_sqr()).sum(), 0.0),
                }
            })
            .collect();
        ScalarField::new(vals)
    }

    /// `‖s‖²_{L²}` over the masked nodes (all nodes if `mask` is `None`).
    pub fn l2_sq(&self, grid: &DiskGrid, metric: Option<&MetricField>, mask: Option<&[bool]>) -> Result<f64> {
        self.check(grid)?;
        let f = self.norm_sq_field(metric);
        Ok(match mask {
            Some(m) => grid.integrate_masked(&f, m)?.re,
            None => grid.integrate(&f)?.re,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn count_oracle(r: f64, h: f64) -> usize {
        // independent enumeration in floating coordinates
        let n = (r / h).ceil() as i64 + 1;
        let mut c = 0;
        for j in -n..=n {
            for i in -n..=n {
                let (x, y) = (i as f64 * h, j as f64 * h);
                if x * x + y * y <= r * r * (1.0 + 1e-12) {
                    c += 1;
                }
            }
        }
        c
    }

    #[test]
    fn node_count_matches_enumeration() {
        let g = DiskGrid::new(1.0, 1.0 / 64.0, 256).unwrap();
        assert_eq!(g.len(), count_oracle(1.0, 1.0 / 64.0));
        assert_eq!(g.len(), 12853);
        assert!((g.len() as f64 - PI * 64.0 * 64.0).abs() < 2.0 * PI * 64.0);
    }

    #[test]
    fn rejects_coarse_and_bad_m() {
        assert!(matches!(DiskGrid::new(1.0, 0.5, 256), Err(Error::InvalidGrid(_))));
        assert!(matches!(DiskGrid::new(1.0, 1.0 / 64.0, 100), Err(Error::InvalidGrid(_))));
        assert!(matches!(DiskGrid::new(1.0, 1.0 / 64.0, 32), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn area_of_large_disk_is_underestimated() {
        let g = DiskGrid::new(4.0, 1.0 / 64.0, 512).unwrap();
        let a = g.integrate(&ScalarField::new(vec![C64::new(1.0, 0.0); g.len()])).unwrap().re;
        let exact = PI * 16.0;
        assert!(a <= exact && a >= exact * (1.0 - 4.0 / 64.0 / 4.0), "{a}");
    }

    #[test]
    fn quadrature_examples() {
        let g = DiskGrid::new(1.0, 1.0 / 128.0, 256).unwrap();
        let f = ScalarField::from_fn(&g, |z| C64::new(z.norm_sqr(), 0.0));
        assert!((g.integrate(&f).unwrap().re - PI / 2.0).abs() < 4.0 / 128.0);
        let g = DiskGrid::new(4.0, 1.0 / 128.0, 256).unwrap();
        let f = ScalarField::from_fn(&g, |z| C64::new((-z.norm_sqr() / 2.0).exp(), 0.0));
        let exact = 2.0 * PI * (1.0 - (-8.0f64).exp());
        assert!((g.integrate(&f).unwrap().re - exact).abs() < 1e-3);
    }

    #[test]
    fn quadrature_converges_at_first_order_or_better() {
        let err = |h: f64| {
            let g = DiskGrid::new(1.0, h, 256).unwrap();
            let f = ScalarField::from_fn(&g, |z| C64::new(1.0 + z.norm_sqr(), 0.0));
            (g.integrate(&f).unwrap().re - 1.5 * PI).abs()
        };
        let (e1, e3) = (err(1.0 / 32.0), err(1.0 / 128.0));
        // two halvings; lattice-boundary noise makes single steps irregular
        assert!(e3 <= e1 / 2.0, "{e1} {e3}");
    }

    #[test]
    fn wirtinger_examples() {
        let g = DiskGrid::new(1.0, 1.0 / 64.0, 256).unwrap();
        let int = g.interior().to_vec();
        let (dz, dzb) = g.wirtinger(&ScalarField::from_fn(&g, |z| z)).unwrap();
        for k in 0..g.len() {
            if int[k] {
                assert!((dz.get(k) - 1.0).norm() < 1e-12 && dzb.get(k).norm() < 1e-12);
            }
        }
        let (dz, dzb) = g.wirtinger(&ScalarField::from_fn(&g, |z| z.conj())).unwrap();
        assert!(g.sup_masked(&dz, &int) < 1e-12);
        assert!(int.iter().enumerate().filter(|(_, &m)| m).all(|(k, _)| (dzb.get(k) - 1.0).norm() < 1e-12));
        let (dz, dzb) = g.wirtinger(&ScalarField::from_fn(&g, |z| C64::new(z.norm_sqr(), 0.0))).unwrap();
        for k in (0..g.len()).filter(|&k| int[k]) {
            let z = g.node(k);
            assert!((dz.get(k) - z.conj()).norm() < 1e-12);
            assert!((dzb.get(k) - z).norm() < 1e-12);
        }
    }

    #[test]
    fn dbar_of_holomorphic_polynomial_is_rounding() {
        let g = DiskGrid::new(1.0, 1.0 / 64.0, 256).unwrap();
        let int = g.interior().to_vec();
        for deg in 1..=6 {
            let f = ScalarField::from_fn(&g, |z| z.powi(deg) + 0.3 * z);
            let d = g.dbar(&f).unwrap();
            assert!(g.sup_masked(&d, &int) <= 10.0 * f64::EPSILON * deg as f64 * 64.0 * 8.0);
        }
    }

    #[test]
    fn laplacian_examples() {
        let g = DiskGrid::new(1.0, 1.0 / 64.0, 256).unwrap();
        let int = g.interior().to_vec();
        let l = g.flat_laplacian(&ScalarField::from_fn(&g, |z| C64::new(z.norm_sqr(), 0.0))).unwrap();
        assert!(int.iter().enumerate().filter(|(_, &m)| m).all(|(k, _)| (l.get(k) - 4.0).norm() < 1e-9));
        let l = g.flat_laplacian(&ScalarField::from_fn(&g, |z| C64::new(z.powi(3).re, 0.0))).unwrap();
        assert!(g.sup_masked(&l, &int) < 1e-9);
        let err = |h: f64| {
            let g = DiskGrid::new(1.0, h, 256).unwrap();
            let l = g.flat_laplacian(&ScalarField::from_fn(&g, |z| C64::new(z.re.exp(), 0.0))).unwrap();
            let e = ScalarField::from_fn(&g, |z| C64::new(z.re.exp(), 0.0));
            g.sup_masked(&l.zip_map(&e, |a, b| a - b), g.interior())
        };
        let r = err(1.0 / 32.0) / err(1.0 / 64.0);
        assert!((3.5..4.5).contains(&r), "{r}");
    }

    #[test]
    fn laplacian_is_four_dz_dzbar() {
        let g = DiskGrid::new(1.0, 1.0 / 64.0, 256).unwrap();
        let f = ScalarField::from_fn(&g, |z| C64::new((z.re * 1.3).sin() * z.im.cosh(), z.norm_sqr()));
        let l = g.flat_laplacian(&f).unwrap();
        let m = g.dz_dzbar(&f).unwrap();
        let d = l.zip_map(&m, |a, b| a - 4.0 * b);
        assert!(g.sup_masked(&d, g.interior()) < 1e-3);
    }

    #[test]
    fn integration_is_bitwise_repeatable() {
        let g = DiskGrid::new(1.0, 1.0 / 64.0, 256).unwrap();
        let f = ScalarField::from_fn(&g, |z| (z * 3.1).exp());
        let a = g.integrate(&f).unwrap();
        let b = g.integrate(&f).unwrap();
        assert_eq!(a.re.to_bits(), b.re.to_bits());
        assert_eq!(a.im.to_bits(), b.im.to_bits());
    }
}
