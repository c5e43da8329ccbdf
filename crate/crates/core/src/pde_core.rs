//! Problem definitions: the two equations, the run configuration, the
//! constants derived from it, and the amplitude part of the scaling
//! `u ↦ λ^{2/(p-1)} u(λx, λ²t)` under which both equations are invariant.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which equation is integrated.
///
/// `Heat` is `u_t = u_xx + |u|^{p-1}u + β|u_x|^q` with real states;
/// `Cgl` is `u_t = (1+iγ)u_xx + (1+iδ)|u|^{p-1}u` with states stored as
/// (real part, imaginary part) pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquationKind {
    Heat,
    Cgl,
}

impl fmt::Display for EquationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EquationKind::Heat => f.write_str("heat"),
            EquationKind::Cgl => f.write_str("cgl"),
        }
    }
}

impl FromStr for EquationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "heat" => Ok(EquationKind::Heat),
            "cgl" => Ok(EquationKind::Cgl),
            other => Err(Error::InvalidConfig(format!(
                "equation must be `heat` or `cgl`, got `{other}`"
            ))),
        }
    }
}

/// Uniform grid `x_i = i·h` for `lo <= i <= hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub lo: i64,
    pub hi: i64,
    pub h: f64,
}

impl Grid {
    /// Grid symmetric about the origin with nodes `-half..=half`.
    pub fn symmetric(half: i64, h: f64) -> Self {
        Grid {
            lo: -half,
            hi: half,
            h,
        }
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.hi < self.lo
    }

    pub fn is_symmetric(&self) -> bool {
        self.lo == -self.hi
    }

    /// Vector offset of node `i`.
    #[inline]
    pub fn offset(&self, i: i64) -> usize {
        (i - self.lo) as usize
    }

    #[inline]
    pub fn x(&self, i: i64) -> f64 {
        i as f64 * self.h
    }

    pub fn x_min(&self) -> f64 {
        self.x(self.lo)
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.hi)
    }

    pub fn nodes(&self) -> impl Iterator<Item = i64> {
        self.lo..=self.hi
    }
}

/// Every solver and algorithm parameter of one run.
///
/// Field names match the keys of the plain-text config format. Build one
/// with [`RunConfig::heat`] or [`RunConfig::cgl`] and adjust fields, then call
/// [`RunConfig::validated`]; every consumer re-validates.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub equation: EquationKind,
    pub p: f64,
    pub beta: f64,
    pub q: f64,
    pub gamma: f64,
    pub delta: f64,
    pub lambda_inv: u32,
    pub alpha: f64,
    pub amplitude: f64,
    /// Half grid count `I`; the base grid has `2I + 1` nodes and `h = 1/I`.
    pub i_max: usize,
    pub tau_ratio: f64,
    pub k_max: usize,
    /// Per-level step budget; `None` selects the default derived from the
    /// limiting crossing time.
    pub step_cap: Option<u64>,
    /// Evaluate one half of the grid and mirror it (exact symmetry).
    pub symmetric: bool,
}

impl RunConfig {
    /// Semilinear heat run with the reference parameters (λ = 1/2,
    /// α = 0.4, A = 1.2, τ = h²/4, β = 0, critical q).
    pub fn heat(p: f64, i_max: usize, k_max: usize) -> Self {
        RunConfig {
            equation: EquationKind::Heat,
            p,
            beta: 0.0,
            q: critical_q(p),
            gamma: 0.0,
            delta: 0.0,
            lambda_inv: 2,
            alpha: 0.4,
            amplitude: 1.2,
            i_max,
            tau_ratio: 0.25,
            k_max,
            step_cap: None,
            symmetric: true,
        }
    }

    /// Complex Ginzburg–Landau run with the same reference parameters.
    pub fn cgl(p: f64, gamma: f64, delta: f64, i_max: usize, k_max: usize) -> Self {
        RunConfig {
            equation: EquationKind::Cgl,
            gamma,
            delta,
            ..RunConfig::heat(p, i_max, k_max)
        }
    }

    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let finite = [
            ("p", self.p),
            ("beta", self.beta),
            ("q", self.q),
            ("gamma", self.gamma),
            ("delta", self.delta),
            ("alpha", self.alpha),
            ("amplitude", self.amplitude),
            ("tau_ratio", self.tau_ratio),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return bad(format!("{name} must be finite, got {v}"));
            }
        }
        if self.p <= 1.0 {
            return bad(format!("p must exceed 1, got {}", self.p));
        }
        if !(1.0..2.0).contains(&self.q) {
            return bad(format!("q must lie in [1, 2), got {}", self.q));
        }
        if self.lambda_inv < 2 {
            return bad(format!(
                "lambda_inv must be at least 2, got {}",
                self.lambda_inv
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.amplitude <= 0.0 {
            return bad(format!(
                "amplitude must be positive, got {}",
                self.amplitude
            ));
        }
        if self.i_max < 2 {
            return bad(format!("I must be at least 2, got {}", self.i_max));
        }
        if !(self.tau_ratio > 0.0 && self.tau_ratio <= 0.5) {
            return bad(format!(
                "tau_ratio must lie in (0, 1/2] (explicit Euler stability), got {}",
                self.tau_ratio
            ));
        }
        if self.step_cap == Some(0) {
            return bad("step_cap must be positive".into());
        }
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        1.0 / self.lambda_inv as f64
    }

    pub fn h(&self) -> f64 {
        1.0 / self.i_max as f64
    }

    pub fn tau(&self) -> f64 {
        let h = self.h();
        self.tau_ratio * h * h
    }

    pub fn base_grid(&self) -> Grid {
        Grid::symmetric(self.i_max as i64, self.h())
    }

    /// `λ^{2/(p-1)}`, the amplitude factor of one zoom.
    pub fn zoom_factor(&self) -> f64 {
        self.lambda().powf(2.0 / (self.p - 1.0))
    }

    pub fn derived(&self) -> DerivedConstants {
        DerivedConstants::new(self)
    }

    /// Step budget per level: ten times the number of steps the limiting
    /// crossing time needs, but never fewer than 10⁶.
    pub fn effective_step_cap(&self) -> u64 {
        if let Some(cap) = self.step_cap {
            return cap;
        }
        let m = threshold_m(self);
        let expected = crate::analysis::tau_star_limit(self.p, m, self.lambda()) / self.tau();
        let cap = (10.0 * expected).ceil();
        if cap.is_finite() && cap > 1.0e6 {
            cap as u64
        } else {
            1_000_000
        }
    }
}

/// The scale-critical gradient exponent `2p/(p+1)`.
pub fn critical_q(p: f64) -> f64 {
    2.0 * p / (p + 1.0)
}

/// Constants computed once per configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedConstants {
    /// Rescaling threshold `M`.
    pub m: f64,
    /// `κ = (p-1)^{-1/(p-1)}`.
    pub kappa: f64,
    /// Phase-drift exponent `μ` of the Ginzburg–Landau profile; absent when
    /// `b(δ,γ)` is.
    pub mu_cgl: Option<f64>,
    /// `b(δ,γ) = (p-1)² / (4(p - δ² - γδ(p+1)))`; absent when the
    /// denominator is not positive.
    pub b_theory: Option<f64>,
}

impl DerivedConstants {
    pub fn new(config: &RunConfig) -> Self {
        let p = config.p;
        let b_theory = b_cgl_theory(p, config.delta, config.gamma);
        DerivedConstants {
            m: threshold_m(config),
            kappa: (p - 1.0).powf(-1.0 / (p - 1.0)),
            mu_cgl: b_theory.map(|b| {
                -2.0 * config.gamma * b * (1.0 + config.delta * config.delta)
                    / ((p - 1.0) * (p - 1.0))
            }),
            b_theory,
        }
    }
}

/// `b(δ,γ)` of the Ginzburg–Landau profile, when `p - δ² - γδ(p+1) > 0`.
pub fn b_cgl_theory(p: f64, delta: f64, gamma: f64) -> Option<f64> {
    let denom = p - delta * delta - gamma * delta * (p + 1.0);
    (denom > 0.0).then(|| (p - 1.0) * (p - 1.0) / (4.0 * denom))
}

/// `b(0) = (p-1)²/(4p)`, the profile coefficient of the unperturbed heat
/// equation.
pub fn b_heat_zero(p: f64) -> f64 {
    (p - 1.0) * (p - 1.0) / (4.0 * p)
}

/// `u₀(x) = A(1 + cos πx)` sampled on the base grid. Endpoints are set to
/// exactly zero and the left half is mirrored from the right, so the result
/// is bit-for-bit symmetric.
pub fn default_initial_data(config: &RunConfig) -> Vec<f64> {
    let grid = config.base_grid();
    let half = config.i_max as i64;
    let a = config.amplitude;
    let mut u = vec![0.0; grid.len()];
    for i in 0..half {
        let x = grid.x(i);
        let v = a * (1.0 + (std::f64::consts::PI * x).cos());
        u[grid.offset(i)] = v;
        u[grid.offset(-i)] = v;
    }
    u
}

/// Amplitude part of one zoom: `λ^{2/(p-1)}·state`.
pub fn rescale_state(state: &[f64], lambda: f64, p: f64) -> Vec<f64> {
    let c = lambda.powf(2.0 / (p - 1.0));
    state.iter().map(|v| c * v).collect()
}

/// `M = ‖u₀‖_∞ · λ^{-2/(p-1)} = 2A·λ^{-2/(p-1)}`, chosen so that every
/// rescaled level starts from the amplitude of the initial data.
pub fn threshold_m(config: &RunConfig) -> f64 {
    2.0 * config.amplitude * config.lambda().powf(-2.0 / (config.p - 1.0))
}
