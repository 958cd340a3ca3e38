//! Isotropic boundary data, the phase normalization at the center, and isotropy residuals.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cauchy::BoundaryData;
use crate::error::{Error, Result};
use crate::geometry::MetricField;
use crate::grid::{boundary_angles, SectionField};
use crate::linalg::{bilinear, sesq, CMat, C64};

/// Real vectors `α, β` per boundary sample with `|α|_g = |β|_g = 1/√2` and `⟨α,β⟩_g = 0`.
#[derive(Clone, Debug)]
pub struct IsotropicPair {
    pub alpha: Vec<DVector<f64>>,
    pub beta: Vec<DVector<f64>>,
    pub g: Vec<DMatrix<f64>>,
}

impl IsotropicPair {
    pub fn rank(&self) -> usize {
        self.alpha[0].len()
    }
    pub fn samples(&self) -> usize {
        self.alpha.len()
    }
    /// `χ̃ = α + iβ` on the circle `|z − center| = radius`, flagged isotropic.
    pub fn chi_tilde(&self, center: C64, radius: f64) -> Result<BoundaryData> {
        let n = self.rank();
        let chi = (0..n)
            .map(|i| self.alpha.iter().zip(&self.beta).map(|(a, b)| C64::new(a[i], b[i])).collect())
            .collect();
        BoundaryData::new(center, radius, chi)?.flag_isotropic(&self.g, 1e-12)
    }
    /// Largest deviation from the g-orthonormality relations over all samples.
    pub fn invariant_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for ((a, b), g) in self.alpha.iter().zip(&self.beta).zip(&self.g) {
            let aa = (a.transpose() * g * a)[(0, 0)];
            let bb = (b.transpose() * g * b)[(0, 0)];
            let ab = (a.transpose() * g * b)[(0, 0)];
            worst = worst.max((aa - 0.5).abs()).max((bb - 0.5).abs()).max(ab.abs());
        }
        worst
    }
    /// `Σ_i |χ̃_i|²` per sample.
    pub fn euclidean_profile(&self) -> Vec<f64> {
        self.alpha.iter().zip(&self.beta).map(|(a, b)| a.norm_squared() + b.norm_squared()).collect()
    }
}

// Blaschke factor of degree one with zero inside |a| ≤ 0.3
fn blaschke(rng: &mut ChaCha8Rng) -> Vec<C64> {
    vec![C64::from_polar(rng.gen_range(0.0..0.3), rng.gen_range(0.0..std::f64::consts::TAU))]
}

fn blaschke_eval(zeros: &[C64], w: C64) -> C64 {
    zeros.iter().map(|&a| (w - a) / (1.0 - a.conj() * w)).product()
}

// real orthogonal frame from a seeded matrix, retrying until well conditioned
fn orthogonal_frame(rng: &mut ChaCha8Rng, n: usize) -> Result<DMatrix<f64>> {
    for _ in 0..16 {
        let a: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let qr = a.qr();
        if qr.r().diagonal().iter().all(|d| d.abs() > 0.05) {
            return Ok(qr.q());
        }
    }
    Err(Error::Precondition("could not draw a well-conditioned frame".into()))
}

fn inverse_sqrt(g: &DMatrix<f64>) -> DMatrix<f64> {
    let e = g.clone().symmetric_eigen();
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|x| 1.0 / x.sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

/// Seeded isotropic pair whose `χ̃ = α + iβ` is the boundary value of a holomorphic map.
///
/// With `u, u′` spanning a totally isotropic plane of a random orthogonal frame,
/// `χ̃(θ) = g^{−1/2}(cos t·u + e^{iφ} sin t·B(e^{iθ})u′)` for `n ≥ 4`, `t ∈ [0.05, 0.3]` and `B` a
/// Blaschke factor; for `n < 4`, `χ̃(θ) = g^{−1/2}e^{iφ}e^{idθ}u` with `d ∈ {0, 1}`.
/// Either way `χ̃` is close to a constant up to a twist, as the center normalization needs.
pub fn make_isotropic_pair(g: &[DMatrix<f64>], seed: u64) -> Result<IsotropicPair> {
    isotropic_data(g, seed, true)
}

/// As [`make_isotropic_pair`] but always on the isotropic line, so `χ̃` is a twisted constant.
pub fn make_isotropic_line(g: &[DMatrix<f64>], seed: u64) -> Result<IsotropicPair> {
    isotropic_data(g, seed, false)
}

/// [`make_isotropic_line`] on the coordinates `support`, zero elsewhere; `g` must not couple
/// `support` to its complement.
pub fn make_isotropic_line_on(g: &[DMatrix<f64>], support: &[usize], seed: u64) -> Result<IsotropicPair> {
    let n = g.first().map_or(0, |m| m.nrows());
    if support.iter().any(|&i| i >= n) {
        return Err(Error::Precondition(format!("support {support:?} exceeds rank {n}")));
    }
    let inside = |i: usize| support.contains(&i);
    for gm in g {
        for i in 0..n {
            for j in 0..n {
                if inside(i) != inside(j) && gm[(i, j)] != 0.0 {
                    return Err(Error::Precondition(format!("metric couples support {support:?} to its complement")));
                }
            }
        }
    }
    let sub: Vec<DMatrix<f64>> = g.iter().map(|gm| gm.select_rows(support).select_columns(support)).collect();
    let part = isotropic_data(&sub, seed, false)?;
    let embed = |v: &DVector<f64>| {
        let mut out = DVector::zeros(n);
        for (k, &i) in support.iter().enumerate() {
            out[i] = v[k];
        }
        out
    };
    Ok(IsotropicPair {
        alpha: part.alpha.iter().map(embed).collect(),
        beta: part.beta.iter().map(embed).collect(),
        g: g.to_vec(),
    })
}

fn isotropic_data(g: &[DMatrix<f64>], seed: u64, plane_ok: bool) -> Result<IsotropicPair> {
    let Some(g0) = g.first() else {
        return Err(Error::Precondition("no boundary samples".into()));
    };
    let n = g0.nrows();
    if n < 2 {
        return Err(Error::RankTooSmall { n, what: "isotropic vectors need n >= 2".into() });
    }
    for (k, gm) in g.iter().enumerate() {
        let ev = gm.clone().symmetric_eigenvalues();
        let (lo, hi) = (ev.min(), ev.max());
        if gm.nrows() != n || !(lo > 0.0) || hi / lo > crate::linalg::COND_LIMIT {
            return Err(Error::DegenerateMetric { node: k, cond: hi / lo });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = orthogonal_frame(&mut rng, n)?;
    let s2 = std::f64::consts::FRAC_1_SQRT_2;
    let plane = |a: usize, b: usize| -> DVector<C64> { DVector::from_fn(n, |i, _| C64::new(q[(i, a)], q[(i, b)]) * s2) };
    let u = plane(0, 1);
    let phase = C64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU));
    let (c1, d, second) = if plane_ok && n >= 4 {
        let t: f64 = rng.gen_range(0.05..0.3);
        (C64::new(t.cos(), 0.0), 0, Some((phase * t.sin(), blaschke(&mut rng), plane(2, 3))))
    } else {
        (phase, rng.gen_range(0..=1), None)
    };
    let mut alpha = Vec::with_capacity(g.len());
    let mut beta = Vec::with_capacity(g.len());
    for (t, gm) in boundary_angles(g.len()).into_iter().zip(g) {
        let w = C64::from_polar(1.0, t);
        let mut chi = &u * (c1 * w.powi(d));
        if let Some((c2, b2, u2)) = &second {
            chi += u2 * (c2 * blaschke_eval(b2, w));
        }
        let x = inverse_sqrt(gm).map(|v| C64::new(v, 0.0)) * chi;
        alpha.push(x.map(|v| v.re));
        beta.push(x.map(|v| v.im));
    }
    Ok(IsotropicPair { alpha, beta, g: g.to_vec() })
}

/// `λ ↦ I_λ = |avg_θ e^{iλθ}χ̃|²_{H(0)}`.
pub fn phase_profile<'a>(chi: &'a BoundaryData, h0: &CMat) -> impl Fn(f64) -> f64 + 'a {
    let h0 = h0.clone();
    let ang = chi.angles();
    move |lambda: f64| {
        let m = chi.samples() as f64;
        let tw: Vec<C64> = ang.iter().map(|&t| C64::from_polar(1.0, lambda * t)).collect();
        let avg: Vec<C64> = (0..chi.rank())
            .map(|i| chi.component(i).iter().zip(&tw).map(|(x, w)| x * w).sum::<C64>() / m)
            .collect();
        sesq(&avg, &h0, &avg).re
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhaseBranch {
    /// A twist `e^{iλθ}` with `I_λ = 1` was found.
    Phase,
    /// No such twist in the scanned range; the data was rescaled so `|s(0)|_H = 1`.
    Rescale,
}

impl PhaseBranch {
    pub fn as_str(&self) -> &'static str {
        match self {
            PhaseBranch::Phase => "phase",
            PhaseBranch::Rescale => "rescale",
        }
    }
}

#[derive(Clone, Debug)]
pub struct PhaseNormalization {
    pub branch: PhaseBranch,
    pub lambda: f64,
    pub scale: f64,
    pub chi: BoundaryData,
}

/// Scan range and step for the twist parameter.
pub const PHASE_SCAN_MAX: f64 = 64.0;
pub const PHASE_SCAN_STEP: f64 = 1.0 / 16.0;

/// Choose `χ = e^{iλθ}χ̃` with `I_λ = 1`, smallest `|λ|` first, else rescale.
pub fn phase_normalize(chi: &BoundaryData, h0: &CMat) -> Result<PhaseNormalization> {
    let prof = phase_profile(chi, h0);
    let steps = (PHASE_SCAN_MAX / PHASE_SCAN_STEP).round() as i64;
    let f = |l: f64| prof(l) - 1.0;
    let mut best: Option<(f64, f64, f64)> = None; // (|λ| key, a, b)
    for sign in [1.0, -1.0] {
        let mut prev: (f64, f64) = (0.0, f(0.0));
        if prev.1.abs() <= 1e-10 {
            best = Some((0.0, 0.0, 0.0));
            break;
        }
        for k in 1..=steps {
            let l = sign * k as f64 * PHASE_SCAN_STEP;
            let v = f(l);
            if v.abs() <= 1e-10 || v.signum() != prev.1.signum() {
                let key = prev.0.abs();
                if best.is_none_or(|b| key < b.0) {
                    best = Some((key, prev.0, l));
                }
                break;
            }
            prev = (l, v);
        }
    }
    if let Some((_, mut a, mut b)) = best {
        let mut fa = f(a);
        if fa.abs() > 1e-10 {
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                let fm = f(mid);
                if fm.abs() <= 1e-13 || (b - a).abs() < 1e-15 {
                    a = mid;
                    break;
                }
                if fm.signum() == fa.signum() {
                    a = mid;
                    fa = fm;
                } else {
                    b = mid;
                }
            }
        }
        if f(a).abs() <= 1e-10 {
            return Ok(PhaseNormalization { branch: PhaseBranch::Phase, lambda: a, scale: 1.0, chi: chi.twisted(a) });
        }
    }
    let i0 = prof(0.0);
    if !(i0 > 1e-24) {
        return Err(Error::ZeroNorm("Cauchy transform of the boundary data vanishes at the center".into()));
    }
    let scale = 1.0 / i0.sqrt();
    Ok(PhaseNormalization { branch: PhaseBranch::Rescale, lambda: 0.0, scale, chi: chi.scaled(C64::new(scale, 0.0)) })
}

/// `sup |g(s,s)|` for a constant complex-bilinear form.
pub fn isotropy_residual(s: &SectionField, g: &DMatrix<f64>) -> f64 {
    let gm = g.map(|x| C64::new(x, 0.0));
    (0..s.len()).map(|k| bilinear(&s.at(k), &gm, &s.at(k)).norm()).fold(0.0, f64::max)
}

/// `sup |g_ℂ(s,s)|` over masked nodes with the companion of a real metric field.
pub fn isotropy_residual_field(s: &SectionField, h: &MetricField, mask: Option<&[bool]>) -> Result<f64> {
    let mut worst = 0.0f64;
    for k in 0..s.len() {
        if mask.is_none_or(|m| m[k]) {
            let g = h.gc_at(k)?.map(|x| C64::new(x, 0.0));
            worst = worst.max(bilinear(&s.at(k), &g, &s.at(k)).norm());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cauchy::cauchy_eval;

    fn id(n: usize, m: usize, scale: f64) -> Vec<DMatrix<f64>> {
        vec![DMatrix::identity(n, n) * scale; m]
    }

    #[test]
    fn rank_one_is_rejected() {
        assert!(matches!(make_isotropic_pair(&id(1, 64, 1.0), 1), Err(Error::RankTooSmall { .. })));
        let mut g = id(2, 64, 1.0);
        g[5][(1, 1)] = 0.0;
        assert!(matches!(make_isotropic_pair(&g, 1), Err(Error::DegenerateMetric { node: 5, .. })));
    }

    #[test]
    fn n2_flat_is_the_canonical_isotropic_line() {
        let p = make_isotropic_pair(&id(2, 128, 1.0), 7).unwrap();
        let chi = p.chi_tilde(C64::default(), 1.0).unwrap();
        for m in 0..128 {
            let v = chi.value(m);
            assert!((v[0].norm_sqr() - 0.5).abs() < 1e-14);
            let ratio = v[1] / v[0];
            assert!((ratio - C64::i()).norm() < 1e-12 || (ratio + C64::i()).norm() < 1e-12);
        }
        assert!(p.invariant_defect() < 1e-14);
        assert!(p.euclidean_profile().iter().all(|x| (x - 1.0).abs() < 1e-14));
    }

    #[test]
    fn scaled_metric_scales_vectors() {
        let a = make_isotropic_pair(&id(3, 64, 1.0), 3).unwrap();
        let b = make_isotropic_pair(&id(3, 64, 2.0), 3).unwrap();
        for k in 0..64 {
            assert!((&b.alpha[k] * 2f64.sqrt() - &a.alpha[k]).norm() < 1e-14);
            assert!((&b.beta[k] * 2f64.sqrt() - &a.beta[k]).norm() < 1e-14);
        }
        assert!(b.invariant_defect() < 1e-14);
    }

    #[test]
    fn seeds_are_reproducible_and_distinct() {
        let a = make_isotropic_pair(&id(4, 64, 1.0), 11).unwrap();
        let b = make_isotropic_pair(&id(4, 64, 1.0), 11).unwrap();
        let c = make_isotropic_pair(&id(4, 64, 1.0), 12).unwrap();
        assert_eq!(a.alpha, b.alpha);
        assert_ne!(a.alpha, c.alpha);
    }

    #[test]
    fn boundary_data_has_no_negative_modes() {
        for n in [2, 3, 4, 5] {
            let chi = make_isotropic_pair(&id(n, 256, 1.0), 5).unwrap().chi_tilde(C64::default(), 1.0).unwrap();
            let hol = chi.holomorphic_part();
            for m in 0..256 {
                let d: f64 = chi.value(m).iter().zip(hol.value(m)).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
                assert!(d < 1e-12, "n={n} sample {m}: {d}");
            }
        }
    }

    #[test]
    fn phase_profile_examples() {
        let v = vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)];
        let chi = BoundaryData::from_fn(C64::default(), 1.0, 64, 2, |_| v.clone()).unwrap();
        let h = CMat::identity(2, 2);
        let p = phase_profile(&chi, &h);
        assert!((p(0.0) - 1.0).abs() < 1e-15);
        for l in [1.0, -2.0, 5.0] {
            assert!(p(l) < 1e-28);
        }
        let chi = BoundaryData::from_fn(C64::default(), 1.0, 64, 2, |t| vec![C64::from_polar(0.7, 2.0 * t), C64::default()]).unwrap();
        let p = phase_profile(&chi, &h);
        let peak = (-40..=40).map(|k| k as f64 / 16.0).max_by(|a, b| p(*a).total_cmp(&p(*b))).unwrap();
        assert_eq!(peak, -2.0);
    }

    #[test]
    fn constant_data_needs_no_twist() {
        let v = vec![C64::new(1.0, 0.0) / 2f64.sqrt(), C64::new(0.0, 1.0) / 2f64.sqrt()];
        let chi = BoundaryData::from_fn(C64::default(), 1.0, 64, 2, |_| v.clone()).unwrap();
        let pn = phase_normalize(&chi, &CMat::identity(2, 2)).unwrap();
        assert_eq!(pn.branch, PhaseBranch::Phase);
        assert_eq!(pn.lambda, 0.0);
    }

    #[test]
    fn single_mode_data_twists_to_its_peak() {
        let chi = BoundaryData::from_fn(C64::default(), 1.0, 128, 2, |t| {
            let e = C64::from_polar(1.0, t) / 2f64.sqrt();
            vec![e, e * C64::i()]
        })
        .unwrap();
        let h = CMat::identity(2, 2) * C64::new(1.2, 0.0);
        let pn = phase_normalize(&chi, &h).unwrap();
        assert_eq!(pn.branch, PhaseBranch::Phase);
        assert!(pn.lambda < -0.5 && pn.lambda > -1.0, "{}", pn.lambda);
        let s0 = cauchy_eval(&pn.chi, C64::default()).unwrap();
        assert!((sesq(&s0, &h, &s0).re - 1.0).abs() < 1e-10);
        // zero mean and peak below one: no twist and nothing to rescale
        assert!(matches!(phase_normalize(&chi.scaled(C64::new(0.5, 0.0)), &CMat::identity(2, 2)), Err(Error::ZeroNorm(_))));
        let v = vec![C64::new(0.3, 0.0), C64::new(0.0, 0.3)];
        let chi = BoundaryData::from_fn(C64::default(), 1.0, 128, 2, |_| v.clone()).unwrap();
        let pn = phase_normalize(&chi, &CMat::identity(2, 2)).unwrap();
        assert_eq!(pn.branch, PhaseBranch::Rescale);
        let s0 = cauchy_eval(&pn.chi, C64::default()).unwrap();
        assert!((sesq(&s0, &CMat::identity(2, 2), &s0).re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn residual_examples() {
        let g = crate::grid::DiskGrid::new(1.0, 1.0 / 16.0, 64).unwrap();
        let s = SectionField::constant(&g, &[C64::new(1.0, 0.0) / 2f64.sqrt(), C64::new(0.0, 1.0) / 2f64.sqrt()]);
        assert!(isotropy_residual(&s, &DMatrix::identity(2, 2)) < 1e-16);
        let s = SectionField::constant(&g, &[C64::new(1.0, 0.0), C64::default()]);
        assert_eq!(isotropy_residual(&s, &DMatrix::identity(2, 2)), 1.0);
    }

    #[test]
    fn line_on_support_embeds_with_zeros() {
        let g: Vec<_> = (0..64).map(|_| DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 3.0]))).collect();
        let p = make_isotropic_line_on(&g, &[0, 2], 9).unwrap();
        assert!(p.invariant_defect() < 1e-14);
        assert!(p.alpha.iter().chain(&p.beta).all(|v| v[1] == 0.0));
        let mut coupled = g.clone();
        coupled[3][(0, 1)] = 0.1;
        coupled[3][(1, 0)] = 0.1;
        assert!(matches!(make_isotropic_line_on(&coupled, &[0, 2], 9), Err(Error::Precondition(_))));
    }
}
