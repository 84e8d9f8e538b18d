//! Moment and generating-function equations of the subpopulations on a
//! truncated lattice.
//!
//! All solves use the Dirichlet truncation of [`crate::operators`]. For the
//! generating functions the consistent boundary value is `F = 1` outside the
//! box (a killed particle contributes nothing), which makes `F = 1` the
//! `z = 0` fixed point and makes `-dF/dz` at `z = 0` coincide with the
//! truncated first moment.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::{BrwModel, OffspringLaw, Site};
use crate::operators::{build_operator, LatticeBox, TruncatedOperator};
use crate::ode::{self, OdeOptions};

pub mod combinatorics;

/// Which moment is being tracked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flavor {
    /// `M_n(t, x)`: moments of the whole subpopulation started at `x`.
    Total,
    /// `M_n(t, x, y)`: moments of the subpopulation count at `target`.
    Local { target: Site },
    /// `M_{inf,1}(t, y)`: mean count at `y` with one particle per site at `t = 0`.
    ForwardInfinite,
}

impl fmt::Display for Flavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Flavor::Total => f.write_str("total"),
            Flavor::Local { target } => write!(f, "local@{target}"),
            Flavor::ForwardInfinite => f.write_str("forward"),
        }
    }
}

/// Output times `0 = t_0 <= t_1 <= ... <= t_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    /// `intervals + 1` equally spaced points on `[0, t_max]`.
    pub fn uniform(t_max: f64, intervals: usize) -> Result<Self> {
        if !(t_max >= 0.0 && t_max.is_finite()) {
            return Err(Error::invalid(format!("t_max = {t_max} must be nonnegative")));
        }
        if intervals == 0 {
            return Err(Error::invalid("time grid needs at least one interval"));
        }
        let dt = t_max / intervals as f64;
        Ok(TimeGrid {
            times: (0..=intervals).map(|k| k as f64 * dt).collect(),
        })
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.first() != Some(&0.0) {
            return Err(Error::invalid("time grid must start at 0"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::invalid("time grid must be strictly increasing"));
        }
        Ok(TimeGrid { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t_max(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Spacing when the grid is uniform.
    pub fn uniform_step(&self) -> Option<f64> {
        if self.times.len() < 2 {
            return None;
        }
        let dt = self.times[1] - self.times[0];
        let uniform = self
            .times
            .windows(2)
            .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt.max(1e-300));
        uniform.then_some(dt)
    }
}

/// A time-indexed array of moment values over the box sites.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentField {
    order: usize,
    flavor: Flavor,
    lattice: LatticeBox,
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl MomentField {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    pub fn lattice(&self) -> &LatticeBox {
        &self.lattice
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Values over all box sites at the `k`-th grid time.
    pub fn slice(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    pub fn value(&self, k: usize, site: &Site) -> Option<f64> {
        self.lattice.index(site).map(|i| self.values[k][i])
    }

    /// Time series at one site.
    pub fn series(&self, site: &Site) -> Option<Vec<f64>> {
        let i = self.lattice.index(site)?;
        Some(self.values.iter().map(|v| v[i]).collect())
    }

    pub fn at_origin(&self) -> Vec<f64> {
        let o = self.lattice.origin_index();
        self.values.iter().map(|v| v[o]).collect()
    }
}

fn initial_moment_vector(lattice: &LatticeBox, flavor: Flavor) -> Result<Vec<f64>> {
    Ok(match flavor {
        Flavor::Total | Flavor::ForwardInfinite => vec![1.0; lattice.len()],
        Flavor::Local { target } => {
            let j = lattice
                .index(&target)
                .ok_or_else(|| Error::invalid(format!("target site {target:?} outside the box")))?;
            let mut v = vec![0.0; lattice.len()];
            v[j] = 1.0;
            v
        }
    })
}

fn solve_linear(op: &TruncatedOperator, initial: Vec<f64>, grid: &TimeGrid, opts: &OdeOptions) -> Result<Vec<Vec<f64>>> {
    ode::integrate(|_, m, dm| op.apply(m, dm), &initial, grid.times(), opts)
}

/// First moment `dM/dt = H M` with the flavor's initial condition.
/// The forward flavor is routed to [`evolve_forward_first_moment`].
pub fn evolve_first_moment(
    model: &BrwModel,
    lattice: LatticeBox,
    flavor: Flavor,
    grid: &TimeGrid,
    opts: &OdeOptions,
) -> Result<MomentField> {
    if flavor == Flavor::ForwardInfinite {
        return evolve_forward_first_moment(model, lattice, grid, opts);
    }
    let op = build_operator(model, lattice, true)?;
    let values = solve_linear(&op, initial_moment_vector(&lattice, flavor)?, grid, opts)?;
    Ok(MomentField {
        order: 1,
        flavor,
        lattice,
        times: grid.times().to_vec(),
        values,
    })
}

/// Mean local count under the one-particle-per-site initial condition:
/// `dM/dt = A^T M + beta Delta_0 M`, `M(0) = 1`.
pub fn evolve_forward_first_moment(
    model: &BrwModel,
    lattice: LatticeBox,
    grid: &TimeGrid,
    opts: &OdeOptions,
) -> Result<MomentField> {
    let op = build_operator(model, lattice, true)?.transpose();
    let values = solve_linear(&op, vec![1.0; lattice.len()], grid, opts)?;
    Ok(MomentField {
        order: 1,
        flavor: Flavor::ForwardInfinite,
        lattice,
        times: grid.times().to_vec(),
        values,
    })
}

/// Source term of the `n`-th moment equation,
/// `sum_{r=2}^{n} beta_r / r! * sum over compositions (i_1..i_r) of n of
/// n! / (i_1! ... i_r!) * M_{i_1} ... M_{i_r}`.
///
/// `lower` holds `M_1, ..., M_{n-1}` at one point, so `n = lower.len() + 1`.
/// The `r = 1` term, `beta * M_n`, lives in the operator `H` and is excluded.
pub fn g_n(law: &OffspringLaw, lower: &[f64]) -> Result<f64> {
    let n = lower.len() + 1;
    if n < 2 {
        return Err(Error::invalid("g_n is defined for n >= 2"));
    }
    Ok(SourceTerms::new(law, n).evaluate(n, lower))
}

/// Precomputed partition-form expansion of `g_2, ..., g_N`.
///
/// Uses the multiplicity form of the inner composition sum: for `r` parts,
/// `sum_{compositions} n!/prod(i_j!) prod M_{i_j}` equals
/// `n! * sum_{multiplicities} r!/prod(m_k!) prod (M_k/k!)^{m_k}`.
#[derive(Debug, Clone)]
struct SourceTerms {
    /// `terms[n]`: list of (coefficient, [(k, power)]).
    terms: Vec<Vec<(f64, Vec<(usize, i32)>)>>,
}

impl SourceTerms {
    fn new(law: &OffspringLaw, max_order: usize) -> Self {
        let mut terms = vec![Vec::new(); max_order + 1];
        for (n, slot) in terms.iter_mut().enumerate().skip(2) {
            let n_fact = factorial(n);
            for r in 2..=n {
                let beta_r = law.factorial_moment(r);
                if beta_r == 0.0 {
                    continue;
                }
                let r_fact = factorial(r);
                for mult in combinatorics::multiplicity_vectors(n, r) {
                    let mut coef = beta_r / r_fact * n_fact * r_fact;
                    let mut powers = Vec::new();
                    for (k_minus_1, &m) in mult.iter().enumerate() {
                        if m == 0 {
                            continue;
                        }
                        let k = k_minus_1 + 1;
                        coef /= factorial(m as usize) * factorial(k).powi(m as i32);
                        powers.push((k, m as i32));
                    }
                    slot.push((coef, powers));
                }
            }
        }
        SourceTerms { terms }
    }

    fn evaluate(&self, n: usize, lower: &[f64]) -> f64 {
        self.terms[n]
            .iter()
            .map(|(c, powers)| c * powers.iter().map(|&(k, p)| lower[k - 1].powi(p)).product::<f64>())
            .sum()
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Moments of orders `1..=max_order` solved jointly as a cascade of linear
/// inhomogeneous equations `dM_n/dt = H M_n + delta_0 g_n(M_1(0), ..., M_{n-1}(0))`.
pub fn evolve_higher_moments(
    model: &BrwModel,
    lattice: LatticeBox,
    flavor: Flavor,
    max_order: usize,
    grid: &TimeGrid,
    opts: &OdeOptions,
) -> Result<Vec<MomentField>> {
    if max_order == 0 {
        return Err(Error::invalid("moment order must be at least 1"));
    }
    if flavor == Flavor::ForwardInfinite {
        if max_order > 1 {
            return Err(Error::invalid(
                "higher moments of the infinite-initial-condition population are not supported",
            ));
        }
        return Ok(vec![evolve_forward_first_moment(model, lattice, grid, opts)?]);
    }
    let op = build_operator(model, lattice, true)?;
    let n_sites = lattice.len();
    let origin = lattice.origin_index();
    let first = initial_moment_vector(&lattice, flavor)?;
    let mut initial = Vec::with_capacity(n_sites * max_order);
    for _ in 0..max_order {
        initial.extend_from_slice(&first);
    }
    let terms = SourceTerms::new(model.law(), max_order);
    let mut lower = vec![0.0; max_order];
    let rhs = |_t: f64, m: &[f64], dm: &mut [f64]| {
        for k in 0..max_order {
            let span = k * n_sites..(k + 1) * n_sites;
            op.apply(&m[span.clone()], &mut dm[span]);
        }
        for k in 0..max_order {
            lower[k] = m[k * n_sites + origin];
        }
        for n in 2..=max_order {
            dm[(n - 1) * n_sites + origin] += terms.evaluate(n, &lower[..n - 1]);
        }
    };
    let states = ode::integrate(rhs, &initial, grid.times(), opts)?;
    Ok((0..max_order)
        .map(|k| MomentField {
            order: k + 1,
            flavor,
            lattice,
            times: grid.times().to_vec(),
            values: states
                .iter()
                .map(|s| s[k * n_sites..(k + 1) * n_sites].to_vec())
                .collect(),
        })
        .collect())
}

/// Weights of the composite Simpson rule on `m` equal intervals of width `h`,
/// closing with the 3/8 rule when `m` is odd.
pub fn simpson_weights(m: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; m + 1];
    match m {
        0 => {}
        1 => {
            w[0] = 0.5 * h;
            w[1] = 0.5 * h;
        }
        _ => {
            let (simpson_end, tail) = if m.is_multiple_of(2) { (m, false) } else { (m - 3, true) };
            let mut j = 0;
            while j + 2 <= simpson_end {
                w[j] += h / 3.0;
                w[j + 1] += 4.0 * h / 3.0;
                w[j + 2] += h / 3.0;
                j += 2;
            }
            if tail {
                let s = simpson_end;
                w[s] += 3.0 * h / 8.0;
                w[s + 1] += 9.0 * h / 8.0;
                w[s + 2] += 9.0 * h / 8.0;
                w[s + 3] += 3.0 * h / 8.0;
            }
        }
    }
    w
}

/// Moment of order `order` from the variation-of-constants integral
/// `M_n(t, x) = M_1(t, x) + int_0^t M_1(t - q, x, 0) g_n(M_1(q, 0), ..., M_{n-1}(q, 0)) dq`
/// by composite Simpson quadrature on the (uniform) grid.
///
/// Only first moments come from the ODE solver; orders `2..n-1` needed
/// inside `g_n` are produced by this same quadrature recursion. The integral
/// carries no `delta_0(x)` prefactor, so it holds at every site.
pub fn integral_moment_oracle(
    model: &BrwModel,
    lattice: LatticeBox,
    flavor: Flavor,
    order: usize,
    grid: &TimeGrid,
    opts: &OdeOptions,
) -> Result<MomentField> {
    integral_moment_oracle_all(model, lattice, flavor, order, grid, opts).map(|mut v| v.pop().unwrap())
}

/// Like [`integral_moment_oracle`] but returns every order `1..=order`.
pub fn integral_moment_oracle_all(
    model: &BrwModel,
    lattice: LatticeBox,
    flavor: Flavor,
    order: usize,
    grid: &TimeGrid,
    opts: &OdeOptions,
) -> Result<Vec<MomentField>> {
    if order == 0 {
        return Err(Error::invalid("moment order must be at least 1"));
    }
    if flavor == Flavor::ForwardInfinite {
        return Err(Error::invalid("integral oracle is defined for total and local flavors"));
    }
    let m1 = evolve_first_moment(model, lattice, flavor, grid, opts)?;
    if order == 1 {
        return Ok(vec![m1]);
    }
    let h = grid
        .uniform_step()
        .ok_or_else(|| Error::GridTooCoarse("integral oracle needs a uniform grid".into()))?;
    if grid.len() < 3 {
        return Err(Error::GridTooCoarse(format!(
            "Simpson quadrature needs at least 2 intervals, grid has {}",
            grid.len() - 1
        )));
    }
    let origin_target = Flavor::Local {
        target: Site::origin(lattice.dim()),
    };
    let propagator = evolve_first_moment(model, lattice, origin_target, grid, opts)?;
    let n_sites = lattice.len();
    let origin = lattice.origin_index();
    let steps = grid.len();
    let terms = SourceTerms::new(model.law(), order);

    let mut fields = vec![m1];
    for n in 2..=order {
        let source: Vec<f64> = (0..steps)
            .map(|j| {
                let lower: Vec<f64> = fields.iter().map(|f| f.values[j][origin]).collect();
                terms.evaluate(n, &lower)
            })
            .collect();
        let mut values = fields[0].values.clone();
        for (m, slice) in values.iter_mut().enumerate().skip(1) {
            let w = simpson_weights(m, h);
            for j in 0..=m {
                let coef = w[j] * source[j];
                if coef == 0.0 {
                    continue;
                }
                let kernel = &propagator.values[m - j];
                for x in 0..n_sites {
                    slice[x] += coef * kernel[x];
                }
            }
        }
        fields.push(MomentField {
            order: n,
            flavor,
            lattice,
            times: grid.times().to_vec(),
            values,
        });
    }
    Ok(fields)
}

/// Laplace parameter `z` of `F(z; t, .) = E exp(-z eta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LaplaceParameter {
    Finite(f64),
    /// The `z -> +inf` limit, giving probabilities of a zero count.
    Infinite,
}

impl LaplaceParameter {
    /// `exp(-z)`, zero at infinity.
    pub fn weight(&self) -> f64 {
        match self {
            LaplaceParameter::Finite(z) => (-z).exp(),
            LaplaceParameter::Infinite => 0.0,
        }
    }
}

impl fmt::Display for LaplaceParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LaplaceParameter::Finite(z) => write!(f, "{z}"),
            LaplaceParameter::Infinite => f.write_str("inf"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratingFunctionField {
    z: LaplaceParameter,
    flavor: Flavor,
    lattice: LatticeBox,
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl GeneratingFunctionField {
    pub fn z(&self) -> LaplaceParameter {
        self.z
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    pub fn lattice(&self) -> &LatticeBox {
        &self.lattice
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    pub fn value(&self, k: usize, site: &Site) -> Option<f64> {
        self.lattice.index(site).map(|i| self.values[k][i])
    }

    pub fn series(&self, site: &Site) -> Option<Vec<f64>> {
        let i = self.lattice.index(site)?;
        Some(self.values.iter().map(|v| v[i]).collect())
    }
}

/// Tolerance on the `[0, 1]` bound of generating-function values.
pub const GENERATING_FUNCTION_BOUND_TOLERANCE: f64 = 1e-10;

/// Solves `dF/dt = A (F - 1) + delta_0 f(F)` with the flavor's initial
/// condition. Values outside `[0, 1]` beyond tolerance are an error.
pub fn solve_generating_function(
    model: &BrwModel,
    lattice: LatticeBox,
    z: LaplaceParameter,
    flavor: Flavor,
    grid: &TimeGrid,
    opts: &OdeOptions,
) -> Result<GeneratingFunctionField> {
    if let LaplaceParameter::Finite(v) = z {
        if !(v >= 0.0) {
            return Err(Error::invalid(format!("Laplace parameter {v} must be nonnegative")));
        }
    }
    let field = solve_generating_function_any(model, lattice, z, flavor, grid, opts)?;
    for (k, slice) in field.values.iter().enumerate() {
        for &v in slice {
            if !(-GENERATING_FUNCTION_BOUND_TOLERANCE..=1.0 + GENERATING_FUNCTION_BOUND_TOLERANCE).contains(&v) {
                return Err(Error::OutOfRange {
                    t: field.times[k],
                    value: v,
                });
            }
        }
    }
    Ok(field)
}

/// Same equation for any real `z` (negative `z` gives `E exp(|z| eta)`, used
/// for symmetric differences at `z = 0`). No range check.
fn solve_generating_function_any(
    model: &BrwModel,
    lattice: LatticeBox,
    z: LaplaceParameter,
    flavor: Flavor,
    grid: &TimeGrid,
    opts: &OdeOptions,
) -> Result<GeneratingFunctionField> {
    let op = build_operator(model, lattice, false)?;
    let w = z.weight();
    let initial = match flavor {
        Flavor::Total => vec![w; lattice.len()],
        Flavor::Local { target } => {
            let j = lattice
                .index(&target)
                .ok_or_else(|| Error::invalid(format!("target site {target:?} outside the box")))?;
            let mut v = vec![1.0; lattice.len()];
            v[j] = w;
            v
        }
        Flavor::ForwardInfinite => {
            return Err(Error::invalid(
                "generating functions are solved for total and local flavors only",
            ))
        }
    };
    let law = model.law();
    let origin = lattice.origin_index();
    let mut shifted = vec![0.0; lattice.len()];
    let rhs = |_t: f64, f: &[f64], df: &mut [f64]| {
        for (s, v) in shifted.iter_mut().zip(f) {
            *s = v - 1.0;
        }
        op.apply(&shifted, df);
        df[origin] += law.polynomial(f[origin]);
    };
    let values = ode::integrate(rhs, &initial, grid.times(), opts)?;
    Ok(GeneratingFunctionField {
        z,
        flavor,
        lattice,
        times: grid.times().to_vec(),
        values,
    })
}

/// `-dF/dz` at `z = 0` by the central difference `-(F(h) - F(-h)) / (2h)`.
pub fn first_moment_from_generating_function(
    model: &BrwModel,
    lattice: LatticeBox,
    flavor: Flavor,
    grid: &TimeGrid,
    h: f64,
    opts: &OdeOptions,
) -> Result<MomentField> {
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let plus = solve_generating_function_any(model, lattice, LaplaceParameter::Finite(h), flavor, grid, opts)?;
    let minus = solve_generating_function_any(model, lattice, LaplaceParameter::Finite(-h), flavor, grid, opts)?;
    let values = plus
        .values
        .iter()
        .zip(&minus.values)
        .map(|(p, m)| p.iter().zip(m).map(|(a, b)| -(a - b) / (2.0 * h)).collect())
        .collect();
    Ok(MomentField {
        order: 1,
        flavor,
        lattice,
        times: grid.times().to_vec(),
        values,
    })
}

#[cfg(test)]
mod tests;
