//! Explicit Euler stepping of the heat and Ginzburg–Landau schemes.
//!
//! Both schemes use the standard three-point second difference and the
//! centered first difference. In symmetric mode only the nodes `i >= 0` are
//! evaluated; node 0 uses the half-interval stencil
//! `δ²U₀ = 2(U₁ - U₀)/h²`, `δU₀ = 0`, and the left half is a mirror copy,
//! which keeps symmetric data symmetric bit for bit.

use crate::error::{Error, Result};
use crate::pde_core::{Grid, RunConfig};

/// Values imposed at the two ends of a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edges<T> {
    pub left: T,
    pub right: T,
}

impl<T: Copy> Edges<T> {
    pub fn both(v: T) -> Self {
        Edges { left: v, right: v }
    }
}

/// Discretisation and equation parameters used by a single step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scheme {
    pub h: f64,
    pub tau: f64,
    pub p: f64,
    pub beta: f64,
    pub q: f64,
    pub gamma: f64,
    pub delta: f64,
    pub symmetric: bool,
    /// Include the `|u|^{p-1}u` reaction term (off only for operator tests).
    pub reaction: bool,
}

impl Scheme {
    pub fn from_config(config: &RunConfig) -> Self {
        Scheme {
            h: config.h(),
            tau: config.tau(),
            p: config.p,
            beta: config.beta,
            q: config.q,
            gamma: config.gamma,
            delta: config.delta,
            symmetric: config.symmetric,
            reaction: true,
        }
    }

    /// `τ <= h²/2`.
    pub fn is_stable(&self) -> bool {
        self.tau <= 0.5 * self.h * self.h * (1.0 + 1e-12)
    }
}

/// `x^e` for `x >= 0`, using `powi` when the exponent is a small integer.
#[derive(Debug, Clone, Copy)]
enum Power {
    Int(i32),
    Real(f64),
}

impl Power {
    fn new(e: f64) -> Self {
        if e.fract() == 0.0 && e.abs() <= 64.0 {
            Power::Int(e as i32)
        } else {
            Power::Real(e)
        }
    }

    #[inline]
    fn of(self, x: f64) -> f64 {
        match self {
            Power::Int(n) => x.powi(n),
            Power::Real(e) => x.powf(e),
        }
    }
}

/// `|u|^{p-1}u`, evaluated as `sign(u)|u|^p`.
#[inline]
fn signed_power(pow: Power, u: f64) -> f64 {
    if u >= 0.0 {
        pow.of(u)
    } else {
        -pow.of(-u)
    }
}

fn check_interior(grid: &Grid, i: i64) -> Result<()> {
    if i <= grid.lo || i >= grid.hi {
        return Err(Error::IndexOutOfRange {
            index: i,
            lo: grid.lo,
            hi: grid.hi,
        });
    }
    Ok(())
}

/// `(U_{i+1} - U_{i-1}) / 2h`.
pub fn central_diff(values: &[f64], grid: &Grid, i: i64) -> Result<f64> {
    check_interior(grid, i)?;
    let j = grid.offset(i);
    Ok((values[j + 1] - values[j - 1]) / (2.0 * grid.h))
}

/// `(U_{i-1} - 2U_i + U_{i+1}) / h²`.
pub fn second_diff(values: &[f64], grid: &Grid, i: i64) -> Result<f64> {
    check_interior(grid, i)?;
    let j = grid.offset(i);
    Ok((values[j - 1] - 2.0 * values[j] + values[j + 1]) / (grid.h * grid.h))
}

/// Second difference at the centre of symmetric data: `2(U₁ - U₀)/h²`.
pub fn second_diff_center(values: &[f64], grid: &Grid) -> f64 {
    let j = grid.offset(0);
    2.0 * (values[j + 1] - values[j]) / (grid.h * grid.h)
}

/// `max_i |a_i|`.
pub fn sup_norm(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `max_i sqrt(V_i² + W_i²)`.
pub fn sup_norm_complex(re: &[f64], im: &[f64]) -> f64 {
    re.iter().zip(im).fold(0.0, |m, (v, w)| m.max(v.hypot(*w)))
}

/// One time level of the heat scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatState {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub n: u64,
    pub boundary: Edges<f64>,
}

impl HeatState {
    /// Wraps `values`; the boundary is read off the end nodes.
    pub fn new(grid: Grid, values: Vec<f64>) -> Self {
        assert_eq!(grid.len(), values.len(), "grid/values length mismatch");
        let boundary = Edges {
            left: values[0],
            right: values[values.len() - 1],
        };
        HeatState {
            grid,
            values,
            n: 0,
            boundary,
        }
    }

    pub fn sup_norm(&self) -> f64 {
        sup_norm(&self.values)
    }
}

/// One time level of the Ginzburg–Landau scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct CglState {
    pub grid: Grid,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub n: u64,
    pub boundary: Edges<(f64, f64)>,
}

impl CglState {
    pub fn new(grid: Grid, re: Vec<f64>, im: Vec<f64>) -> Self {
        assert_eq!(grid.len(), re.len(), "grid/values length mismatch");
        assert_eq!(re.len(), im.len(), "re/im length mismatch");
        let last = re.len() - 1;
        let boundary = Edges {
            left: (re[0], im[0]),
            right: (re[last], im[last]),
        };
        CglState {
            grid,
            re,
            im,
            n: 0,
            boundary,
        }
    }

    pub fn modulus(&self, j: usize) -> f64 {
        self.re[j].hypot(self.im[j])
    }

    pub fn sup_norm(&self) -> f64 {
        sup_norm_complex(&self.re, &self.im)
    }
}

fn symmetric_ok<T: PartialEq>(grid: &Grid, edges: &Edges<T>) -> Result<()> {
    if !grid.is_symmetric() {
        return Err(Error::InvalidConfig(
            "symmetric stepping needs a grid centred on the origin".into(),
        ));
    }
    if edges.left != edges.right {
        return Err(Error::InvalidConfig(
            "symmetric stepping needs equal boundary values".into(),
        ));
    }
    Ok(())
}

/// Advances the heat scheme by one step:
/// `U_{i,n+1} = U_{i,n} + τ[δ²U + |U|^{p-1}U + β|δU|^q]` on interior nodes,
/// endpoints set to `next_boundary`.
///
/// A non-finite result is reported as [`Error::Overflow`] with level 0; the
/// rescaler relabels it.
pub fn heat_step(
    state: &HeatState,
    scheme: &Scheme,
    next_boundary: Edges<f64>,
) -> Result<HeatState> {
    let grid = state.grid;
    let u = &state.values;
    let len = u.len();
    let h = grid.h;
    let inv_h2 = 1.0 / (h * h);
    let inv_2h = 0.5 / h;
    let tau = scheme.tau;
    let react = Power::new(scheme.p);
    let grad_pow = Power::new(scheme.q);
    let beta = scheme.beta;
    let mut out = vec![0.0; len];

    // Convex form (1-2r)U_i + r(U_{i-1} + U_{i+1}): nonnegative data stays
    // nonnegative in floating point when r <= 1/2.
    let r = tau * inv_h2;
    let keep = 1.0 - 2.0 * r;

    let node = |j: usize| -> f64 {
        let (um, uc, up) = (u[j - 1], u[j], u[j + 1]);
        let mut source = 0.0;
        if scheme.reaction {
            source += signed_power(react, uc);
        }
        if beta != 0.0 {
            let g = ((up - um) * inv_2h).abs();
            if g > 0.0 {
                source += beta * grad_pow.of(g);
            }
        }
        keep * uc + r * (um + up) + tau * source
    };

    if scheme.symmetric {
        symmetric_ok(&grid, &next_boundary)?;
        let c = grid.offset(0);
        let uc = u[c];
        let source = if scheme.reaction {
            signed_power(react, uc)
        } else {
            0.0
        };
        out[c] = keep * uc + 2.0 * r * u[c + 1] + tau * source;
        for i in 1..grid.hi {
            let j = grid.offset(i);
            let v = node(j);
            out[j] = v;
            out[grid.offset(-i)] = v;
        }
    } else {
        for (j, v) in out.iter_mut().enumerate().take(len - 1).skip(1) {
            *v = node(j);
        }
    }
    out[0] = next_boundary.left;
    out[len - 1] = next_boundary.right;

    let n = state.n + 1;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow { level: 0, step: n });
    }
    Ok(HeatState {
        grid,
        values: out,
        n,
        boundary: next_boundary,
    })
}

/// Advances the Ginzburg–Landau scheme by one step:
///
/// ```text
/// V' = V + τ[δ²V - γδ²W + R(V - δW)]
/// W' = W + τ[γδ²V + δ²W + R(δV + W)],   R = (V² + W²)^{(p-1)/2}
/// ```
pub fn cgl_step(
    state: &CglState,
    scheme: &Scheme,
    next_boundary: Edges<(f64, f64)>,
) -> Result<CglState> {
    let grid = state.grid;
    let (v, w) = (&state.re, &state.im);
    let len = v.len();
    let inv_h2 = 1.0 / (grid.h * grid.h);
    let tau = scheme.tau;
    let (gamma, delta) = (scheme.gamma, scheme.delta);
    let r_pow = Power::new(0.5 * (scheme.p - 1.0));
    let reaction = scheme.reaction;
    let mut re = vec![0.0; len];
    let mut im = vec![0.0; len];

    let update = |vc: f64, wc: f64, lap_v: f64, lap_w: f64| -> (f64, f64) {
        let r = if reaction {
            r_pow.of(vc * vc + wc * wc)
        } else {
            0.0
        };
        (
            vc + tau * (lap_v - gamma * lap_w + r * (vc - delta * wc)),
            wc + tau * (gamma * lap_v + lap_w + r * (delta * vc + wc)),
        )
    };
    let node = |j: usize| -> (f64, f64) {
        let lap_v = (v[j - 1] - 2.0 * v[j] + v[j + 1]) * inv_h2;
        let lap_w = (w[j - 1] - 2.0 * w[j] + w[j + 1]) * inv_h2;
        update(v[j], w[j], lap_v, lap_w)
    };

    if scheme.symmetric {
        symmetric_ok(&grid, &next_boundary)?;
        let c = grid.offset(0);
        let lap_v = 2.0 * (v[c + 1] - v[c]) * inv_h2;
        let lap_w = 2.0 * (w[c + 1] - w[c]) * inv_h2;
        (re[c], im[c]) = update(v[c], w[c], lap_v, lap_w);
        for i in 1..grid.hi {
            let j = grid.offset(i);
            let m = grid.offset(-i);
            let (a, b) = node(j);
            re[j] = a;
            im[j] = b;
            re[m] = a;
            im[m] = b;
        }
    } else {
        for j in 1..len - 1 {
            (re[j], im[j]) = node(j);
        }
    }
    (re[0], im[0]) = next_boundary.left;
    (re[len - 1], im[len - 1]) = next_boundary.right;

    let n = state.n + 1;
    if re.iter().chain(im.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Overflow { level: 0, step: n });
    }
    Ok(CglState {
        grid,
        re,
        im,
        n,
        boundary: next_boundary,
    })
}
