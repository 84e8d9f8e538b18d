//! Duality verification, regime classification and growth-rate fits.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::{BrwModel, Site};
use crate::moments::{evolve_first_moment, evolve_forward_first_moment, Flavor, TimeGrid};
use crate::ode::OdeOptions;
use crate::operators::{
    build_operator, critical_intensity, principal_eigenvalue, CriticalIntensityReport, LatticeBox,
    POSITIVE_EIGENVALUE_THRESHOLD,
};

/// Gap above which the duality check fails.
pub const DUALITY_TOLERANCE: f64 = 1e-9;

/// Half-width of the band around `beta_c` reported as near-critical.
pub const CRITICAL_BAND: f64 = 1e-3;

/// Pointwise comparison of the mean count under the all-sites initial
/// condition with the mean total population of a single-ancestor process.
#[derive(Debug, Clone, PartialEq)]
pub struct DualityReport {
    pub times: Vec<f64>,
    pub sites: Vec<Site>,
    /// `gaps[k][i]` is the gap at time `k` and site `i`.
    pub gaps: Vec<Vec<f64>>,
    pub max_gap: f64,
    pub tolerance: f64,
    pub atol: f64,
    pub rtol: f64,
}

impl DualityReport {
    pub fn passes(&self) -> bool {
        self.max_gap < self.tolerance
    }
}

/// Solves both sides independently on the same box and grid.
pub fn duality_check(model: &BrwModel, lattice: LatticeBox, grid: &TimeGrid, opts: &OdeOptions) -> Result<DualityReport> {
    let forward = evolve_forward_first_moment(model, lattice, grid, opts)?;
    let total = evolve_first_moment(model, lattice, Flavor::Total, grid, opts)?;
    let gaps: Vec<Vec<f64>> = (0..grid.len())
        .map(|k| {
            forward
                .slice(k)
                .iter()
                .zip(total.slice(k))
                .map(|(a, b)| (a - b).abs())
                .collect()
        })
        .collect();
    let max_gap = gaps.iter().flatten().copied().fold(0.0, f64::max);
    Ok(DualityReport {
        times: grid.times().to_vec(),
        sites: lattice.sites().collect(),
        gaps,
        max_gap,
        tolerance: DUALITY_TOLERANCE,
        atol: opts.atol,
        rtol: opts.rtol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegimeClass {
    Supercritical,
    Subcritical,
    /// Within the critical band; not resolved further.
    NearCritical,
}

impl fmt::Display for RegimeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegimeClass::Supercritical => "supercritical",
            RegimeClass::Subcritical => "subcritical",
            RegimeClass::NearCritical => "near-critical",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeReport {
    pub class: RegimeClass,
    pub beta: f64,
    /// `lambda0` on the largest box of the schedule. It is nondecreasing in
    /// the box size, so a positive value is conclusive.
    pub lambda0: f64,
    pub critical: CriticalIntensityReport,
}

impl RegimeReport {
    pub fn beta_c(&self) -> f64 {
        self.critical.extrapolated
    }
}

/// Supercritical iff `lambda0 > 1e-9` on the largest box; subcritical iff
/// `beta < beta_c - 1e-3` with the extrapolated `beta_c`; near-critical
/// otherwise.
pub fn classify_regime(model: &BrwModel, schedule: &[usize]) -> Result<RegimeReport> {
    let largest = *schedule
        .iter()
        .max()
        .ok_or_else(|| Error::invalid("box schedule is empty"))?;
    let lattice = LatticeBox::new(model.dim(), largest)?;
    let lambda0 = principal_eigenvalue(&build_operator(model, lattice, true)?)?;
    let critical = critical_intensity(model, schedule)?;
    let beta = model.beta();
    let class = if lambda0 > POSITIVE_EIGENVALUE_THRESHOLD {
        RegimeClass::Supercritical
    } else if beta < critical.extrapolated - CRITICAL_BAND {
        RegimeClass::Subcritical
    } else {
        RegimeClass::NearCritical
    };
    Ok(RegimeReport {
        class,
        beta,
        lambda0,
        critical,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Supercritical,
    Critical,
    Subcritical,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Supercritical => "supercritical",
            Regime::Critical => "critical",
            Regime::Subcritical => "subcritical",
        })
    }
}

impl From<RegimeClass> for Regime {
    fn from(c: RegimeClass) -> Self {
        match c {
            RegimeClass::Supercritical => Regime::Supercritical,
            RegimeClass::Subcritical => Regime::Subcritical,
            RegimeClass::NearCritical => Regime::Critical,
        }
    }
}

/// `exp(lambda_multiple * lambda0 * t) * t^power * (ln t)^log_power`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthForm {
    pub lambda_multiple: f64,
    pub power: f64,
    pub log_power: f64,
}

impl GrowthForm {
    fn exponential(n: usize) -> Self {
        GrowthForm {
            lambda_multiple: n as f64,
            power: 0.0,
            log_power: 0.0,
        }
    }

    fn power(power: f64, log_power: f64) -> Self {
        GrowthForm {
            lambda_multiple: 0.0,
            power,
            log_power,
        }
    }

    pub fn is_exponential(&self) -> bool {
        self.lambda_multiple != 0.0
    }

    /// Value at `t`, given `lambda0`.
    pub fn evaluate(&self, t: f64, lambda0: f64) -> f64 {
        let mut v = (self.lambda_multiple * lambda0 * t).exp();
        if self.power != 0.0 {
            v *= t.powf(self.power);
        }
        if self.log_power != 0.0 {
            v *= t.ln().powf(self.log_power);
        }
        v
    }

    /// The slope a log fit of this form should recover: the exponential rate
    /// for exponential forms, the power for the rest.
    pub fn expected_slope(&self, lambda0: f64) -> f64 {
        if self.is_exponential() {
            self.lambda_multiple * lambda0
        } else {
            self.power
        }
    }
}

impl fmt::Display for GrowthForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.lambda_multiple != 0.0 {
            parts.push(format!("exp({}*lambda0*t)", self.lambda_multiple));
        }
        if self.power != 0.0 {
            parts.push(format!("t^({})", self.power));
        }
        if self.log_power != 0.0 {
            parts.push(format!("ln(t)^({})", self.log_power));
        }
        if parts.is_empty() {
            f.write_str("1")
        } else {
            f.write_str(&parts.join("*"))
        }
    }
}

/// Asymptotic shape of the local (`u_n`) and total (`v_n`) moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthLaw {
    pub regime: Regime,
    pub dim: usize,
    pub order: usize,
    pub local: GrowthForm,
    pub total: GrowthForm,
}

/// Looks up the row of the asymptotic table for `(regime, d, n)`.
pub fn predicted_growth_law(regime: Regime, dim: usize, order: usize) -> Result<GrowthLaw> {
    if dim == 0 || order == 0 {
        return Err(Error::invalid(format!(
            "no growth law for dimension {dim} and order {order}"
        )));
    }
    let n = order as f64;
    let (local, total) = match regime {
        Regime::Supercritical => (GrowthForm::exponential(order), GrowthForm::exponential(order)),
        Regime::Critical => match dim {
            1 => (GrowthForm::power((n - 1.0) / 2.0, n - 1.0), GrowthForm::power((n - 1.0) / 2.0, 0.0)),
            2 => (GrowthForm::power(-1.0, 0.0), GrowthForm::power(0.0, n - 1.0)),
            // Printed as t^{n-1/2}; kept verbatim.
            3 => (GrowthForm::power(-0.5, n - 1.0), GrowthForm::power(n - 0.5, 0.0)),
            4 => (
                GrowthForm::power(n - 1.0, 1.0 - 2.0 * n),
                GrowthForm::power(2.0 * n - 1.0, 1.0 - 2.0 * n),
            ),
            _ => (GrowthForm::power(2.0 * n - 1.0, 0.0), GrowthForm::power(2.0 * n - 1.0, 0.0)),
        },
        Regime::Subcritical => match dim {
            1 => (GrowthForm::power(-1.5, 0.0), GrowthForm::power(-0.5, 0.0)),
            2 => (GrowthForm::power(-1.0, -2.0), GrowthForm::power(0.0, -1.0)),
            _ => (GrowthForm::power(-(dim as f64) / 2.0, 0.0), GrowthForm::power(0.0, 0.0)),
        },
    };
    Ok(GrowthLaw {
        regime,
        dim,
        order,
        local,
        total,
    })
}

/// Ordinary least-squares line through `log M` against `t` (exponential
/// forms) or `ln t` (power forms).
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthFit {
    pub estimate: f64,
    pub stderr: f64,
    pub r2: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
    pub points: usize,
}

/// Fits the series on `[t1, t2]` against `form`. For power forms with a
/// logarithmic factor the known `(ln t)^q` is divided out first, so the
/// estimate is always comparable to [`GrowthForm::expected_slope`].
pub fn fit_growth_rate(times: &[f64], values: &[f64], window: (f64, f64), form: &GrowthForm) -> Result<GrowthFit> {
    if times.len() != values.len() {
        return Err(Error::invalid("times and values differ in length"));
    }
    let (t1, t2) = window;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, (&t, &v)) in times.iter().zip(values).enumerate() {
        if t < t1 || t > t2 {
            continue;
        }
        if !(v > 0.0) {
            return Err(Error::NonPositiveSeries { index: i, value: v });
        }
        let mut y = v.ln();
        let x = if form.is_exponential() {
            t
        } else {
            if !(t > 0.0) || (form.log_power != 0.0 && !(t > 1.0)) {
                return Err(Error::invalid(format!("power-form fit needs t > 1 in the window, got {t}")));
            }
            if form.log_power != 0.0 {
                y -= form.log_power * t.ln().ln();
            }
            t.ln()
        };
        xs.push(x);
        ys.push(y);
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::invalid(format!("fit window holds {n} points, need at least 3")));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("fit window has no spread in time"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - (intercept + slope * x)).collect();
    let sse: f64 = residuals.iter().map(|r| r * r).sum();
    Ok(GrowthFit {
        estimate: slope,
        stderr: (sse / (nf - 2.0) / sxx).sqrt(),
        r2: if syy > 0.0 { 1.0 - sse / syy } else { 1.0 },
        intercept,
        residuals,
        points: n,
    })
}

/// Half-width rule for supercritical fits: `L >= 3 sqrt(kappa t_max d)`.
pub fn fit_box_half_width(total_rate: f64, t_max: f64, dim: usize) -> usize {
    (3.0 * (total_rate * t_max * dim as f64).sqrt()).ceil() as usize
}
