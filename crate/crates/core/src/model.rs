//! Walk kernels, offspring laws and the combined single-source model.
//!
//! A [`WalkKernel`] holds the jump intensities `a(z)` of a homogeneous
//! random walk on the integer lattice, indexed by the nonzero jump offset
//! `z`. An [`OffspringLaw`] holds the branching intensities `b_n`; the
//! coefficient `b_1` is always derived so that the rates sum to zero.
//! [`BrwModel`] combines both with the branching source pinned at the origin.

use std::fmt;

use crate::error::{Error, Result};

/// Largest lattice dimension supported by [`Site`].
pub const MAX_DIMENSION: usize = 6;

/// Absolute tolerance used on rate closure identities.
pub const CLOSURE_TOLERANCE: f64 = 1e-12;

/// A point of the integer lattice (also used for jump offsets).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site {
    dim: u8,
    coords: [i32; MAX_DIMENSION],
}

impl Site {
    pub fn new(coords: &[i32]) -> Result<Self> {
        if coords.is_empty() || coords.len() > MAX_DIMENSION {
            return Err(Error::invalid(format!(
                "site dimension {} outside 1..={MAX_DIMENSION}",
                coords.len()
            )));
        }
        let mut c = [0; MAX_DIMENSION];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Site {
            dim: coords.len() as u8,
            coords: c,
        })
    }

    /// The origin of `Z^d`. Panics if `dim` is zero or exceeds [`MAX_DIMENSION`].
    pub fn origin(dim: usize) -> Self {
        assert!((1..=MAX_DIMENSION).contains(&dim), "dimension {dim} unsupported");
        Site {
            dim: dim as u8,
            coords: [0; MAX_DIMENSION],
        }
    }

    /// Unit vector `sign * e_axis`.
    pub fn unit(dim: usize, axis: usize, sign: i32) -> Self {
        let mut s = Site::origin(dim);
        s.coords[axis] = sign;
        s
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn coords(&self) -> &[i32] {
        &self.coords[..self.dim as usize]
    }

    pub fn is_origin(&self) -> bool {
        self.coords().iter().all(|&c| c == 0)
    }

    /// Chebyshev norm `max_i |z_i|`.
    pub fn sup_norm(&self) -> usize {
        self.coords()
            .iter()
            .map(|c| c.unsigned_abs() as usize)
            .max()
            .unwrap_or(0)
    }

    pub fn squared_norm(&self) -> i64 {
        self.coords().iter().map(|&c| i64::from(c) * i64::from(c)).sum()
    }

    pub fn neg(&self) -> Self {
        let mut s = *self;
        for c in s.coords.iter_mut() {
            *c = -*c;
        }
        s
    }

    pub fn add(&self, other: &Site) -> Self {
        debug_assert_eq!(self.dim, other.dim);
        let mut s = *self;
        for (a, b) in s.coords.iter_mut().zip(other.coords.iter()) {
            *a += *b;
        }
        s
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.coords())
    }
}

impl fmt::Display for Site {
    /// Colon-joined coordinates, e.g. `0:-1:2`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.coords().iter().map(|c| c.to_string()).collect();
        f.write_str(&parts.join(":"))
    }
}

/// Jump intensities `a(z)` of a spatially homogeneous walk with finite support.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkKernel {
    dim: usize,
    rates: Vec<(Site, f64)>,
}

impl WalkKernel {
    /// Nearest-neighbour kernel with total jump rate `total_rate`, split evenly
    /// over the `2d` unit offsets.
    pub fn simple(dim: usize, total_rate: f64) -> Result<Self> {
        if dim == 0 || dim > MAX_DIMENSION {
            return Err(Error::invalid(format!(
                "dimension must be in 1..={MAX_DIMENSION}, got {dim}"
            )));
        }
        if !(total_rate > 0.0 && total_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "total jump rate must be positive, got {total_rate}"
            )));
        }
        let each = total_rate / (2 * dim) as f64;
        let rates = (0..dim)
            .flat_map(|axis| [Site::unit(dim, axis, 1), Site::unit(dim, axis, -1)])
            .map(|z| (z, each))
            .collect();
        WalkKernel::from_rates(dim, rates)
    }

    /// Kernel from explicit `(offset, rate)` pairs. Zero rates are dropped.
    ///
    /// Structural problems (wrong dimension, zero offset, negative or
    /// duplicated entries) are errors; symmetry and irreducibility are left
    /// to [`validate_model`] so that deliberately broken kernels can still
    /// be built for negative controls.
    pub fn from_rates(dim: usize, rates: Vec<(Site, f64)>) -> Result<Self> {
        if dim == 0 || dim > MAX_DIMENSION {
            return Err(Error::invalid(format!(
                "dimension must be in 1..={MAX_DIMENSION}, got {dim}"
            )));
        }
        let mut kept: Vec<(Site, f64)> = Vec::with_capacity(rates.len());
        for (z, rate) in rates {
            if z.dim() != dim {
                return Err(Error::invalid(format!(
                    "offset {z:?} has dimension {}, expected {dim}",
                    z.dim()
                )));
            }
            if z.is_origin() {
                return Err(Error::invalid("kernel offset must be nonzero"));
            }
            if !(rate >= 0.0 && rate.is_finite()) {
                return Err(Error::invalid(format!("rate {rate} for offset {z:?} is invalid")));
            }
            if rate > 0.0 {
                kept.push((z, rate));
            }
        }
        kept.sort_by_key(|k| k.0);
        if kept.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid("duplicate kernel offset"));
        }
        if kept.is_empty() {
            return Err(Error::invalid("kernel has no positive rates"));
        }
        Ok(WalkKernel { dim, rates: kept })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Nonzero offsets with their rates, sorted by offset.
    pub fn rates(&self) -> &[(Site, f64)] {
        &self.rates
    }

    /// `a(z)`, zero outside the support. For the origin this is the diagonal.
    pub fn rate(&self, z: &Site) -> f64 {
        if z.is_origin() {
            return self.diagonal();
        }
        self.rates
            .binary_search_by(|(o, _)| o.cmp(z))
            .map(|i| self.rates[i].1)
            .unwrap_or(0.0)
    }

    /// `a(0) = -sum_{z != 0} a(z)`.
    pub fn diagonal(&self) -> f64 {
        -self.total_rate()
    }

    pub fn total_rate(&self) -> f64 {
        self.rates.iter().map(|(_, r)| r).sum()
    }

    /// Largest Chebyshev norm over the support.
    pub fn support_radius(&self) -> usize {
        self.rates.iter().map(|(z, _)| z.sup_norm()).max().unwrap_or(0)
    }

    /// `sum_z a(z) |z|^2`.
    pub fn second_moment(&self) -> f64 {
        self.rates.iter().map(|(z, r)| r * z.squared_norm() as f64).sum()
    }

    /// Offsets whose mirror image carries a different rate.
    pub fn asymmetric_offsets(&self) -> Vec<Site> {
        self.rates
            .iter()
            .filter(|(z, r)| (self.rate(&z.neg()) - r).abs() > CLOSURE_TOLERANCE)
            .map(|(z, _)| *z)
            .collect()
    }

    pub fn is_symmetric(&self) -> bool {
        self.asymmetric_offsets().is_empty()
    }

    /// Whether the support offsets generate `Z^d` as a group.
    pub fn generates_lattice(&self) -> bool {
        let rows: Vec<Vec<i64>> = self
            .rates
            .iter()
            .map(|(z, _)| z.coords().iter().map(|&c| i64::from(c)).collect())
            .collect();
        lattice_index(rows, self.dim) == Some(1)
    }
}

/// Index of the sublattice spanned by `rows` in `Z^d`, `None` if rank < d.
/// Integer row reduction: for each column, Euclid folds every row into one
/// pivot row; the index is the product of the pivots.
fn lattice_index(mut rows: Vec<Vec<i64>>, dim: usize) -> Option<i64> {
    let mut index: i64 = 1;
    for col in 0..dim {
        loop {
            let mut nz: Vec<usize> = (0..rows.len()).filter(|&i| rows[i][col] != 0).collect();
            if nz.len() <= 1 {
                break;
            }
            nz.sort_by_key(|&i| rows[i][col].abs());
            let p = nz[0];
            let pivot = rows[p].clone();
            for &i in &nz[1..] {
                let q = rows[i][col] / pivot[col];
                for (x, y) in rows[i].iter_mut().zip(pivot.iter()) {
                    *x -= q * y;
                }
            }
        }
        let p = (0..rows.len()).find(|&i| rows[i][col] != 0)?;
        index *= rows[p][col].abs();
        rows.swap_remove(p);
    }
    Some(index)
}

/// Branching intensities `b_0, b_1, ..., b_N` with factorial moments.
#[derive(Debug, Clone, PartialEq)]
pub struct OffspringLaw {
    b: Vec<f64>,
    factorial_moments: Vec<f64>,
}

impl OffspringLaw {
    /// Law from `b_0` and `b_2, b_3, ...` (`higher[0]` is `b_2`); `b_1` is
    /// derived as `-sum_{n != 1} b_n`.
    pub fn new(b0: f64, higher: &[f64]) -> Result<Self> {
        let mut b = Vec::with_capacity(higher.len() + 2);
        b.push(b0);
        b.push(0.0);
        b.extend_from_slice(higher);
        for (n, &v) in b.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("b_{n} = {v} must be finite and nonnegative")));
            }
        }
        b[1] = -b.iter().enumerate().filter(|(n, _)| *n != 1).map(|(_, v)| v).sum::<f64>();
        Ok(Self::from_coefficients(b))
    }

    /// Law with only `b_0` and `b_2` nonzero.
    pub fn binary(b0: f64, b2: f64) -> Result<Self> {
        OffspringLaw::new(b0, &[b2])
    }

    /// Law with all branching rates zero (pure random walk).
    pub fn none() -> Self {
        Self::from_coefficients(vec![0.0, 0.0])
    }

    /// Raw coefficient vector including `b_1`, taken as given. Used for
    /// building deliberately inadmissible laws; see [`validate_model`].
    pub fn from_coefficients(mut b: Vec<f64>) -> Self {
        while b.len() > 2 && b.last() == Some(&0.0) {
            b.pop();
        }
        while b.len() < 2 {
            b.push(0.0);
        }
        let max_order = b.len() - 1;
        let factorial_moments = (0..=max_order)
            .map(|r| {
                b.iter()
                    .enumerate()
                    .skip(r)
                    .map(|(n, &bn)| falling_factorial(n, r) * bn)
                    .sum()
            })
            .collect();
        OffspringLaw { b, factorial_moments }
    }

    /// Coefficients `b_0..=b_N`.
    pub fn coefficients(&self) -> &[f64] {
        &self.b
    }

    pub fn b(&self, n: usize) -> f64 {
        self.b.get(n).copied().unwrap_or(0.0)
    }

    /// Largest `n` with a stored coefficient.
    pub fn max_offspring(&self) -> usize {
        self.b.len() - 1
    }

    /// `beta_r = f^{(r)}(1)`; zero for `r > N`. `beta_0 = f(1)`.
    pub fn factorial_moment(&self, r: usize) -> f64 {
        self.factorial_moments.get(r).copied().unwrap_or(0.0)
    }

    /// `beta = f'(1)`.
    pub fn beta(&self) -> f64 {
        self.factorial_moment(1)
    }

    /// Total rate of leaving the "one particle" state, `|b_1|`.
    pub fn branching_rate(&self) -> f64 {
        -self.b[1]
    }

    /// `f(u) = sum b_n u^n` for `u` in `[0, 1]`.
    pub fn generating_function(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::invalid(format!("generating function argument {u} outside [0, 1]")));
        }
        Ok(self.polynomial(u))
    }

    /// Horner evaluation of `sum b_n u^n` without a domain check.
    pub fn polynomial(&self, u: f64) -> f64 {
        self.b.iter().rev().fold(0.0, |acc, &bn| acc * u + bn)
    }

    /// `f'(u)` evaluated as a polynomial, no domain check.
    pub fn polynomial_derivative(&self, u: f64) -> f64 {
        self.b
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (n, &bn)| acc * u + n as f64 * bn)
    }
}

fn falling_factorial(n: usize, r: usize) -> f64 {
    (0..r).map(|k| (n - k) as f64).product()
}

/// A continuous-time branching random walk with one branching source at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct BrwModel {
    kernel: WalkKernel,
    law: OffspringLaw,
}

impl BrwModel {
    /// Admissible model; fails with the full validation report otherwise.
    pub fn new(kernel: WalkKernel, law: OffspringLaw) -> Result<Self> {
        let model = BrwModel { kernel, law };
        let report = validate_model(&model);
        if report.is_empty() {
            Ok(model)
        } else {
            Err(Error::InadmissibleModel(report))
        }
    }

    /// Skips validation. Downstream numerics still run, but results for
    /// asymmetric kernels or nonconservative laws have no meaning beyond
    /// negative-control tests.
    pub fn new_unchecked(kernel: WalkKernel, law: OffspringLaw) -> Self {
        BrwModel { kernel, law }
    }

    pub fn kernel(&self) -> &WalkKernel {
        &self.kernel
    }

    pub fn law(&self) -> &OffspringLaw {
        &self.law
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    pub fn source(&self) -> Site {
        Site::origin(self.kernel.dim())
    }

    pub fn beta(&self) -> f64 {
        self.law.beta()
    }

    /// `-(a(0) + b_1)`: exit rate of a particle sitting at the source.
    pub fn holding_rate_at_source(&self) -> f64 {
        -(self.kernel.diagonal() + self.law.b(1))
    }

    /// Same kernel, different offspring law.
    pub fn with_law(&self, law: OffspringLaw) -> Result<Self> {
        BrwModel::new(self.kernel.clone(), law)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    AsymmetricKernel { offset: Site },
    ReducibleKernel,
    NegativeRate { n: usize, value: f64 },
    NonNegativeB1 { value: f64 },
    NonConservative { sum: f64 },
    NonPositiveHoldingRate { value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::AsymmetricKernel { offset } => {
                write!(f, "kernel not symmetric at offset {offset:?}")
            }
            Violation::ReducibleKernel => f.write_str("kernel support does not generate the lattice"),
            Violation::NegativeRate { n, value } => write!(f, "b_{n} = {value} is negative"),
            Violation::NonNegativeB1 { value } => {
                write!(f, "b_1 = {value} must be negative when branching is present")
            }
            Violation::NonConservative { sum } => write!(f, "sum of b_n is {sum}, expected 0"),
            Violation::NonPositiveHoldingRate { value } => {
                write!(f, "holding rate at the source is {value}")
            }
        }
    }
}

/// Violated admissibility constraints; empty means admissible.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

/// Lists every violated constraint of the model.
pub fn validate_model(model: &BrwModel) -> ValidationReport {
    let mut violations = Vec::new();
    let kernel = model.kernel();
    for offset in kernel.asymmetric_offsets() {
        violations.push(Violation::AsymmetricKernel { offset });
    }
    if !kernel.generates_lattice() {
        violations.push(Violation::ReducibleKernel);
    }
    let b = model.law().coefficients();
    for (n, &v) in b.iter().enumerate() {
        if n != 1 && v < 0.0 {
            violations.push(Violation::NegativeRate { n, value: v });
        }
    }
    let any_branching = b.iter().enumerate().any(|(n, &v)| n != 1 && v != 0.0);
    if any_branching && b[1] >= 0.0 {
        violations.push(Violation::NonNegativeB1 { value: b[1] });
    }
    let sum: f64 = b.iter().sum();
    if sum.abs() > CLOSURE_TOLERANCE {
        violations.push(Violation::NonConservative { sum });
    }
    let hold = model.holding_rate_at_source();
    if hold <= 0.0 {
        violations.push(Violation::NonPositiveHoldingRate { value: hold });
    }
    ValidationReport { violations }
}
