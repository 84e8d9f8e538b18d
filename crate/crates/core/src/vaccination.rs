//! Vaccination: reproduction rates damped as `b_n -> alpha^{n-1} b_n`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{BrwModel, OffspringLaw};
use crate::operators::{build_operator, principal_eigenvalue, LatticeBox, POSITIVE_EIGENVALUE_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaccinationParams {
    alpha: f64,
}

impl VaccinationParams {
    /// `alpha` must lie in `(0, 1]`; `alpha = 1` is the identity.
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::invalid(format!("vaccination alpha = {alpha} must lie in (0, 1]")));
        }
        Ok(VaccinationParams { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// `b0` is kept, `b_n` becomes `alpha^{n-1} b_n` for `n >= 2` and `b_1` is
/// re-derived from the closure.
pub fn vaccinate(law: &OffspringLaw, params: VaccinationParams) -> Result<OffspringLaw> {
    let higher: Vec<f64> = (2..=law.max_offspring())
        .map(|n| params.alpha.powi(n as i32 - 1) * law.b(n))
        .collect();
    OffspringLaw::new(law.b(0), &higher)
}

/// `f~(u) = (f(0)(1 - u)(alpha - 1) + f(alpha u) - u f(alpha)) / alpha`.
pub fn vaccinated_generating_function(law: &OffspringLaw, params: VaccinationParams, u: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::invalid(format!("u = {u} must lie in [0, 1]")));
    }
    let a = params.alpha;
    let f = |v: f64| law.polynomial(v);
    Ok((f(0.0) * (1.0 - u) * (a - 1.0) + f(a * u) - u * f(a)) / a)
}

/// `beta~ = -b_0 + sum_{n>=2} (n - 1) alpha^{n-1} b_n`, the mean offspring
/// excess of the vaccinated law.
pub fn vaccinated_beta(law: &OffspringLaw, params: VaccinationParams) -> f64 {
    -law.b(0)
        + (2..=law.max_offspring())
            .map(|n| (n - 1) as f64 * params.alpha.powi(n as i32 - 1) * law.b(n))
            .sum::<f64>()
}

/// Same kernel, vaccinated offspring law.
pub fn vaccinated_model(model: &BrwModel, params: VaccinationParams) -> Result<BrwModel> {
    model.with_law(vaccinate(model.law(), params)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub alpha: f64,
    pub beta_tilde: f64,
    pub lambda0: f64,
}

/// Principal eigenvalue of the vaccinated operator on one box for each alpha.
pub fn vaccination_sweep(model: &BrwModel, lattice: LatticeBox, alphas: &[f64]) -> Result<Vec<SweepPoint>> {
    alphas
        .par_iter()
        .map(|&alpha| {
            let params = VaccinationParams::new(alpha)?;
            let vm = vaccinated_model(model, params)?;
            let lambda0 = principal_eigenvalue(&build_operator(&vm, lattice, true)?)?;
            Ok(SweepPoint {
                alpha,
                beta_tilde: vm.beta(),
                lambda0,
            })
        })
        .collect()
}

/// Largest alpha at which the vaccinated model is no longer supercritical on
/// the box (`lambda0 <= 1e-9`), by bisection to `tol`. `None` when even the
/// smallest admissible alpha stays supercritical, and `Some(1.0)` when the
/// unvaccinated model already is not.
pub fn critical_alpha(model: &BrwModel, lattice: LatticeBox, tol: f64) -> Result<Option<f64>> {
    let supercritical = |alpha: f64| -> Result<bool> {
        let vm = vaccinated_model(model, VaccinationParams::new(alpha)?)?;
        Ok(principal_eigenvalue(&build_operator(&vm, lattice, true)?)? > POSITIVE_EIGENVALUE_THRESHOLD)
    };
    if !supercritical(1.0)? {
        return Ok(Some(1.0));
    }
    let mut lo = tol.max(1e-12);
    if supercritical(lo)? {
        return Ok(None);
    }
    let mut hi = 1.0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if supercritical(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(lo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_model, WalkKernel};
    use proptest::prelude::*;

    fn p(alpha: f64) -> VaccinationParams {
        VaccinationParams::new(alpha).unwrap()
    }

    fn direct(law: &OffspringLaw, alpha: f64, u: f64) -> f64 {
        vaccinate(law, p(alpha)).unwrap().generating_function(u).unwrap()
    }

    #[test]
    fn alpha_range() {
        assert!(VaccinationParams::new(0.0).is_err());
        assert!(VaccinationParams::new(1.01).is_err());
        assert!(VaccinationParams::new(f64::NAN).is_err());
        assert!(VaccinationParams::new(1.0).is_ok());
    }

    #[test]
    fn identity_at_alpha_one() {
        let law = OffspringLaw::new(0.3, &[0.5, 0.0, 0.2]).unwrap();
        assert_eq!(vaccinate(&law, p(1.0)).unwrap(), law);
        let m = BrwModel::new(WalkKernel::simple(2, 1.0).unwrap(), law.clone()).unwrap();
        assert_eq!(vaccinated_model(&m, p(1.0)).unwrap(), m);
        for k in 0..=10 {
            let u = k as f64 / 10.0;
            assert!((vaccinated_generating_function(&law, p(1.0), u).unwrap() - law.polynomial(u)).abs() < 1e-15);
        }
    }

    #[test]
    fn two_offspring_rule() {
        let law = OffspringLaw::binary(1.0, 1.0).unwrap();
        assert_eq!(law.b(1), -2.0);
        let v = vaccinate(&law, p(0.5)).unwrap();
        assert_eq!(v.coefficients(), &[1.0, -1.5, 0.5]);
    }

    #[test]
    fn three_offspring_rule() {
        let law = OffspringLaw::new(1.0, &[1.0, 1.0]).unwrap();
        let v = vaccinate(&law, p(0.5)).unwrap();
        assert_eq!(v.coefficients(), &[1.0, -1.75, 0.5, 0.25]);
        assert!(v.coefficients().iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn closed_form_matches_direct_polynomial() {
        let law = OffspringLaw::binary(1.0, 1.0).unwrap();
        assert!((vaccinated_generating_function(&law, p(0.5), 0.5).unwrap() - direct(&law, 0.5, 0.5)).abs() < 1e-14);
        let laws = [
            law,
            OffspringLaw::new(1.0, &[1.0, 1.0]).unwrap(),
            OffspringLaw::new(0.8, &[]).unwrap(),
            OffspringLaw::new(0.2, &[0.4, 0.1, 0.3]).unwrap(),
        ];
        for law in &laws {
            for alpha in [0.1, 0.5, 0.9, 1.0] {
                for k in 0..100 {
                    let u = k as f64 / 99.0;
                    let closed = vaccinated_generating_function(law, p(alpha), u).unwrap();
                    assert!((closed - direct(law, alpha, u)).abs() < 1e-12);
                }
                assert!(vaccinated_generating_function(law, p(alpha), 1.0).unwrap().abs() < 1e-15);
            }
        }
        assert!(vaccinated_generating_function(&laws[0], p(0.5), 1.5).is_err());
    }

    #[test]
    fn beta_tilde_matches_law_and_is_monotone() {
        let law = OffspringLaw::new(0.4, &[0.6, 0.3, 0.1]).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for k in 1..=50 {
            let alpha = k as f64 / 50.0;
            let b = vaccinated_beta(&law, p(alpha));
            assert!((b - vaccinate(&law, p(alpha)).unwrap().beta()).abs() < 1e-12);
            assert!(b >= prev);
            assert!(b <= law.beta() + 1e-12);
            prev = b;
        }
    }

    proptest! {
        #[test]
        fn vaccination_preserves_admissibility(
            b0 in 0.0..3.0f64,
            higher in proptest::collection::vec(0.0..3.0f64, 0..5),
            alpha in 0.01..=1.0f64,
        ) {
            let law = OffspringLaw::new(b0, &higher).unwrap();
            let v = vaccinate(&law, p(alpha)).unwrap();
            for n in 2..=law.max_offspring() {
                prop_assert!(v.b(n) >= 0.0 && v.b(n) <= law.b(n));
            }
            prop_assert_eq!(v.b(0), law.b(0));
            prop_assert!(v.coefficients().iter().sum::<f64>().abs() < 1e-12);
            if law.coefficients().iter().any(|&b| b > 0.0) {
                prop_assert!(v.b(1) < 0.0);
            }
            prop_assert!(v.beta() <= law.beta() + 1e-12);
            let m = BrwModel::new_unchecked(WalkKernel::simple(1, 1.0).unwrap(), v);
            prop_assert!(validate_model(&m).is_empty() || law.coefficients().iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn lambda0_decreases_with_alpha() {
        let m = BrwModel::new(WalkKernel::simple(1, 1.0).unwrap(), OffspringLaw::new(0.2, &[1.0, 0.3]).unwrap()).unwrap();
        let alphas: Vec<f64> = (0..=10).rev().map(|k| 0.1 + 0.09 * k as f64).collect();
        let sweep = vaccination_sweep(&m, LatticeBox::new(1, 15).unwrap(), &alphas).unwrap();
        for w in sweep.windows(2) {
            assert!(w[1].alpha < w[0].alpha);
            assert!(w[1].lambda0 <= w[0].lambda0 + 1e-10);
            assert!(w[1].beta_tilde <= w[0].beta_tilde);
        }
    }

    #[test]
    fn critical_alpha_on_the_line() {
        // On the line, beta_c of the box of half-width L is exactly 1/(L+1).
        // beta~(alpha) = alpha - 0.5, so the threshold is alpha* = 0.5 + 1/11.
        let l = 10;
        let m = BrwModel::new(WalkKernel::simple(1, 1.0).unwrap(), OffspringLaw::binary(0.5, 1.0).unwrap()).unwrap();
        let lattice = LatticeBox::new(1, l).unwrap();
        let a = critical_alpha(&m, lattice, 1e-7).unwrap().unwrap();
        assert!((a - (0.5 + 1.0 / (l as f64 + 1.0))).abs() < 1e-6, "{a}");
        let weak = BrwModel::new(WalkKernel::simple(1, 1.0).unwrap(), OffspringLaw::binary(1.0, 0.5).unwrap()).unwrap();
        assert_eq!(critical_alpha(&weak, lattice, 1e-6).unwrap(), Some(1.0));
    }
}
