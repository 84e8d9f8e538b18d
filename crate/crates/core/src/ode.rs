//! Adaptive explicit Runge-Kutta integration (Dormand-Prince 5(4)).

use crate::error::{Error, Result};

/// Step-size control settings.
#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub atol: f64,
    pub rtol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            atol: 1e-10,
            rtol: 1e-8,
            max_steps: 5_000_000,
        }
    }
}

impl OdeOptions {
    pub fn with_tolerances(atol: f64, rtol: f64) -> Self {
        OdeOptions {
            atol,
            rtol,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evaluations: usize,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates `y' = rhs(t, y)` from `times[0]` with `y(times[0]) = y0` and
/// returns the state at every entry of `times` (which must be nondecreasing).
/// Steps are clipped so that every output time is hit exactly.
pub fn integrate<F>(mut rhs: F, y0: &[f64], times: &[f64], opts: &OdeOptions) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    integrate_with_stats(&mut rhs, y0, times, opts).map(|(out, _)| out)
}

pub fn integrate_with_stats<F>(
    rhs: &mut F,
    y0: &[f64],
    times: &[f64],
    opts: &OdeOptions,
) -> Result<(Vec<Vec<f64>>, OdeStats)>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if times.is_empty() {
        return Ok((Vec::new(), OdeStats::default()));
    }
    if times.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::invalid("output times must be nondecreasing"));
    }
    let n = y0.len();
    let mut stats = OdeStats::default();
    let mut out = Vec::with_capacity(times.len());
    out.push(y0.to_vec());
    let t_end = *times.last().unwrap();
    if n == 0 || t_end == times[0] {
        out.resize(times.len(), y0.to_vec());
        return Ok((out, stats));
    }

    let mut t = times[0];
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];

    rhs(t, &y, &mut k1);
    stats.rhs_evaluations += 1;
    let mut h = initial_step(rhs, t, &y, &k1, t_end - t, opts, &mut stats);
    let mut steps = 0usize;
    let mut next_out = 1usize;
    // Equal consecutive output times.
    while next_out < times.len() && times[next_out] == t {
        out.push(y.clone());
        next_out += 1;
    }

    while next_out < times.len() {
        let target = times[next_out];
        let mut step = h;
        let mut hits_target = false;
        if t + step >= target || t + 1.01 * step >= target {
            step = target - t;
            hits_target = true;
        }
        if step <= 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepSizeUnderflow { t, h: step });
        }
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::TooManySteps {
                max_steps: opts.max_steps,
                t,
            });
        }

        for i in 0..n {
            ytmp[i] = y[i] + step * A21 * k1[i];
        }
        rhs(t + C2 * step, &ytmp, &mut k2);
        for i in 0..n {
            ytmp[i] = y[i] + step * (A31 * k1[i] + A32 * k2[i]);
        }
        rhs(t + C3 * step, &ytmp, &mut k3);
        for i in 0..n {
            ytmp[i] = y[i] + step * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        rhs(t + C4 * step, &ytmp, &mut k4);
        for i in 0..n {
            ytmp[i] = y[i] + step * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        rhs(t + C5 * step, &ytmp, &mut k5);
        for i in 0..n {
            ytmp[i] = y[i]
                + step * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let t_new = if hits_target { target } else { t + step };
        rhs(t_new, &ytmp, &mut k6);
        for i in 0..n {
            ynew[i] = y[i] + step * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
        }
        rhs(t_new, &ynew, &mut k7);
        stats.rhs_evaluations += 6;

        let mut err_sq = 0.0;
        for i in 0..n {
            let e = step
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = opts.atol + opts.rtol * y[i].abs().max(ynew[i].abs());
            err_sq += (e / sc) * (e / sc);
        }
        let err = (err_sq / n as f64).sqrt();
        if !err.is_finite() {
            stats.rejected += 1;
            h = step * 0.2;
            continue;
        }

        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        if err <= 1.0 {
            stats.accepted += 1;
            t = t_new;
            std::mem::swap(&mut y, &mut ynew);
            std::mem::swap(&mut k1, &mut k7);
            // A step clipped to an output time says nothing about the natural size.
            h = if hits_target { h.max(step * factor) } else { step * factor };
            while next_out < times.len() && times[next_out] <= t {
                out.push(y.clone());
                next_out += 1;
            }
        } else {
            stats.rejected += 1;
            h = step * factor.min(1.0);
        }
    }
    Ok((out, stats))
}

/// Starting step from the Hairer-Norsett-Wanner heuristic.
fn initial_step<F>(
    rhs: &mut F,
    t: f64,
    y: &[f64],
    f0: &[f64],
    span: f64,
    opts: &OdeOptions,
    stats: &mut OdeStats,
) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len() as f64;
    let sc: Vec<f64> = y.iter().map(|v| opts.atol + opts.rtol * v.abs()).collect();
    let d0 = (y.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (f0.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(v, f)| v + h0 * f).collect();
    let mut f1 = vec![0.0; y.len()];
    rhs(t + h0, &y1, &mut f1);
    stats.rhs_evaluations += 1;
    let d2 = (f1
        .iter()
        .zip(f0)
        .zip(&sc)
        .map(|((a, b), s)| ((a - b) / s).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}
