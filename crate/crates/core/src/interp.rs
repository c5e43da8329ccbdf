//! Piecewise-linear interpolation of grid data in space and time.
//!
//! On the cell `(x_i, x_{i+1}) × (t_n, t_{n+1})` the interpolant is
//!
//! ```text
//! F(x,t) = [F_{i,n}(x_{i+1}-x)(t_{n+1}-t) + F_{i+1,n}(x-x_i)(t_{n+1}-t)
//!         + F_{i,n+1}(x_{i+1}-x)(t-t_n) + F_{i+1,n+1}(x-x_i)(t-t_n)] / (hτ)
//! ```
//!
//! Queries on a cell edge resolve to the left (lower) cell. Queries that land
//! on a node within rounding return the nodal data exactly, and the weights
//! are formed so that mirrored queries on symmetric data agree bit for bit.

use crate::error::{Error, Result};
use crate::pde_core::Grid;

const SNAP: f64 = 1e-9;

/// Two consecutive time slices of one real channel on a grid.
#[derive(Debug, Clone, Copy)]
pub struct SpaceTimeSheet<'a> {
    pub earlier: &'a [f64],
    pub later: &'a [f64],
    pub grid: Grid,
    pub t_start: f64,
    pub t_end: f64,
}

impl<'a> SpaceTimeSheet<'a> {
    pub fn new(
        earlier: &'a [f64],
        later: &'a [f64],
        grid: Grid,
        t_start: f64,
        t_end: f64,
    ) -> Result<Self> {
        if earlier.len() != later.len() || earlier.len() != grid.len() {
            return Err(Error::InvalidConfig(format!(
                "sheet slices of length {} and {} on a grid of {} nodes",
                earlier.len(),
                later.len(),
                grid.len()
            )));
        }
        if t_end.partial_cmp(&t_start) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::InvalidConfig(format!(
                "sheet time step must be positive, got [{t_start}, {t_end}]"
            )));
        }
        Ok(SpaceTimeSheet {
            earlier,
            later,
            grid,
            t_start,
            t_end,
        })
    }

    pub fn tau(&self) -> f64 {
        self.t_end - self.t_start
    }

    /// Interpolation weights `(w_start, w_end)` for time `t`.
    pub fn time_weights(&self, t: f64) -> Result<(f64, f64)> {
        let span = self.t_end - self.t_start;
        let slack = SNAP * span;
        if !(t >= self.t_start - slack && t <= self.t_end + slack) {
            return Err(Error::OutOfRange {
                what: "t",
                value: t,
                lo: self.t_start,
                hi: self.t_end,
            });
        }
        let t = t.clamp(self.t_start, self.t_end);
        Ok(((self.t_end - t) / span, (t - self.t_start) / span))
    }

    /// The whole slice at time `t`, each node interpolated linearly in time.
    pub fn slice_at(&self, t: f64) -> Result<Vec<f64>> {
        let (a, b) = self.time_weights(t)?;
        Ok(self
            .earlier
            .iter()
            .zip(self.later)
            .map(|(e, l)| a * e + b * l)
            .collect())
    }
}

/// Where `x` falls on `grid`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Location {
    /// Exactly on the node with this vector offset.
    Node(usize),
    /// Inside the cell starting at vector offset `j`, with weights on its
    /// left and right nodes.
    Cell { j: usize, w_left: f64, w_right: f64 },
}

pub fn locate(grid: &Grid, x: f64) -> Result<Location> {
    let h = grid.h;
    let s = x / h;
    let out_of_range = || Error::OutOfRange {
        what: "x",
        value: x,
        lo: grid.x_min(),
        hi: grid.x_max(),
    };
    if !s.is_finite() || s < grid.lo as f64 - SNAP || s > grid.hi as f64 + SNAP {
        return Err(out_of_range());
    }
    let r = s.round();
    if (s - r).abs() <= SNAP {
        let i = r as i64;
        return Ok(Location::Node(grid.offset(i.clamp(grid.lo, grid.hi))));
    }
    let i = s.floor() as i64;
    if i < grid.lo || i >= grid.hi {
        return Err(out_of_range());
    }
    let w_left = (grid.x(i + 1) - x) / h;
    let w_right = (x - grid.x(i)) / h;
    Ok(Location::Cell {
        j: grid.offset(i),
        w_left,
        w_right,
    })
}

#[inline]
fn along_space(slice: &[f64], loc: Location) -> f64 {
    match loc {
        Location::Node(j) => slice[j],
        Location::Cell { j, w_left, w_right } => w_left * slice[j] + w_right * slice[j + 1],
    }
}

/// Bilinear space-time value of the sheet at `(x, t)`.
pub fn interp_space_time(sheet: &SpaceTimeSheet<'_>, x: f64, t: f64) -> Result<f64> {
    let loc = locate(&sheet.grid, x)?;
    let (a, b) = sheet.time_weights(t)?;
    if b == 0.0 {
        return Ok(along_space(sheet.earlier, loc));
    }
    if a == 0.0 {
        return Ok(along_space(sheet.later, loc));
    }
    Ok(a * along_space(sheet.earlier, loc) + b * along_space(sheet.later, loc))
}

/// Linear interpolation along one time slice.
pub fn interp_space(slice: &[f64], grid: &Grid, x: f64) -> Result<f64> {
    if slice.len() != grid.len() {
        return Err(Error::InvalidConfig(format!(
            "slice of length {} on a grid of {} nodes",
            slice.len(),
            grid.len()
        )));
    }
    Ok(along_space(slice, locate(grid, x)?))
}
