//! Run configuration shared by the CLI subcommands.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Residual and comparison tolerances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// `sup|∂̄σ|` relative to `sup|σ|`.
    pub dbar: f64,
    /// `sup|g_ℂ(σ,σ)|` relative to `sup|σ|²`.
    pub iso: f64,
    /// `| |σ(p)|_H − 1 |`.
    pub norm: f64,
    /// Relative gap between the finite-difference energy and `‖(∂̄η)σ‖²`.
    pub leibniz: f64,
    /// Slack on the post-tweak curvature floor.
    pub tweak: f64,
    /// Relative residual accepted from the Poisson solver.
    pub solver: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { dbar: 1e-6, iso: 1e-8, norm: 1e-8, leibniz: 5e-2, tweak: 1e-6, solver: 1e-10 }
    }
}

/// Parameters for every subcommand; unset keys take the defaults below.
///
/// | key | default | meaning |
/// |-----|---------|---------|
/// | `n` | 2 | bundle rank |
/// | `K` | `[1; n]` | Gaussian model degrees |
/// | `C` | `[1; n]` | Gaussian model metric weights |
/// | `R` | 1 | disk radius |
/// | `h` | 1/64 | lattice spacing |
/// | `M` | 256 | boundary samples |
/// | `r` | 1 | destabilizer radius |
/// | `p` | `[0, 0]` | destabilizer center |
/// | `a` | 5/9 | concentration ratio |
/// | `eps` | 1/2 | stability scale ε, so `ε⁻² = 4` |
/// | `target` | 1 | tweak curvature floor |
/// | `seed` | 7 | seed for every random draw |
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub n: usize,
    #[serde(rename = "K")]
    pub k: Option<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Option<Vec<f64>>,
    #[serde(rename = "R")]
    pub radius: f64,
    pub h: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub r: f64,
    pub p: [f64; 2],
    pub a: f64,
    pub eps: f64,
    pub target: f64,
    pub seed: u64,
    pub tol: Tolerances,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n: 2,
            k: None,
            c: None,
            radius: 1.0,
            h: 1.0 / 64.0,
            m: 256,
            r: 1.0,
            p: [0.0, 0.0],
            a: 5.0 / 9.0,
            eps: 0.5,
            target: 1.0,
            seed: 7,
            tol: Tolerances::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serialization")
    }
    pub fn k_vec(&self) -> Vec<f64> {
        self.k.clone().unwrap_or_else(|| vec![1.0; self.n])
    }
    pub fn c_vec(&self) -> Vec<f64> {
        self.c.clone().unwrap_or_else(|| vec![1.0; self.n])
    }
    pub fn eps_inv_sq(&self) -> f64 {
        1.0 / (self.eps * self.eps)
    }
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        for (name, v) in [("K", &self.k), ("C", &self.c)] {
            if let Some(v) = v {
                if v.len() != self.n {
                    return bad(format!("{name} has {} entries, expected n = {}", v.len(), self.n));
                }
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.a > 0.0 && self.a < 1.0) {
            return bad(format!("a must lie in (0, 1), got {}", self.a));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(RunConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn odd_values_round_trip() {
        let c = RunConfig {
            k: Some(vec![0.1, 1.0 / 3.0]),
            c: Some(vec![2.0f64.sqrt(), 1e-300]),
            h: 0.1 + 0.2,
            seed: u64::MAX,
            ..Default::default()
        };
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_json(r#"{"n":2,"radius":3}"#), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_json(r#"{"tol":{"dbar":1,"x":2}}"#), Err(Error::Config(_))));
    }

    #[test]
    fn validation() {
        assert!(RunConfig { k: Some(vec![1.0]), ..Default::default() }.validate().is_err());
        assert!(RunConfig { eps: 0.0, ..Default::default() }.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
        assert_eq!(RunConfig::default().eps_inv_sq(), 4.0);
    }
}
