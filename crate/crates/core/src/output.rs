//! CSV emitters. Floats are written with 17 significant digits so that
//! values round-trip exactly.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use csv::Writer;

use crate::analysis::{DualityReport, GrowthFit, GrowthLaw, GrowthForm};
use crate::error::Result;
use crate::model::Site;
use crate::moments::{GeneratingFunctionField, MomentField};
use crate::montecarlo::{MomentEstimate, Observable};
use crate::vaccination::SweepPoint;

/// Scientific notation with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn coord_headers(dim: usize, prefix: &str) -> Vec<String> {
    (1..=dim).map(|i| format!("{prefix}{i}")).collect()
}

fn coords(site: &Site) -> impl Iterator<Item = String> + '_ {
    site.coords().iter().map(|c| c.to_string())
}

pub fn create(dir: &Path, name: &str) -> Result<Writer<File>> {
    std::fs::create_dir_all(dir)?;
    Ok(Writer::from_path(dir.join(name))?)
}

/// `L, beta, lambda0`.
pub fn write_eigenvalue_vs_beta<W: Write>(w: &mut Writer<W>, rows: &[(usize, f64, f64)]) -> Result<()> {
    w.write_record(["L", "beta", "lambda0"])?;
    for (l, beta, lambda0) in rows {
        w.write_record([l.to_string(), fmt_f64(*beta), fmt_f64(*lambda0)])?;
    }
    w.flush()?;
    Ok(())
}

/// `t, x1..xd, y1..yd, p`, one row per pair of box sites.
pub fn write_transition_kernel<W: Write>(
    w: &mut Writer<W>,
    dim: usize,
    sites: &[Site],
    entries: &[(f64, Vec<Vec<f64>>)],
) -> Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend(coord_headers(dim, "x"));
    header.extend(coord_headers(dim, "y"));
    header.push("p".into());
    w.write_record(&header)?;
    for (t, p) in entries {
        for (i, x) in sites.iter().enumerate() {
            for (j, y) in sites.iter().enumerate() {
                let mut rec = vec![fmt_f64(*t)];
                rec.extend(coords(x));
                rec.extend(coords(y));
                rec.push(fmt_f64(p[i][j]));
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Optional per-row comparison columns of `moments.csv`.
#[derive(Debug, Default)]
pub struct MomentExtras<'a> {
    /// Integral-oracle fields aligned with the main fields.
    pub oracle: Option<&'a [MomentField]>,
    /// Forward solution for the duality column (first order only).
    pub forward: Option<&'a MomentField>,
}

/// `flavor, n, t, x1..xd, value` plus `oracle, rel_error` and
/// `forward, gap` when requested. Returns the largest relative
/// discrepancy against the oracle and the largest duality gap.
pub fn write_moments<W: Write>(
    w: &mut Writer<W>,
    fields: &[MomentField],
    sites: &[Site],
    extras: &MomentExtras<'_>,
) -> Result<(f64, f64)> {
    let dim = fields.first().map(|f| f.lattice().dim()).unwrap_or(1);
    let mut header: Vec<String> = vec!["flavor".into(), "n".into(), "t".into()];
    header.extend(coord_headers(dim, "x"));
    header.push("value".into());
    if extras.oracle.is_some() {
        header.extend(["oracle".into(), "rel_error".into()]);
    }
    if extras.forward.is_some() {
        header.extend(["forward".into(), "gap".into()]);
    }
    w.write_record(&header)?;
    let (mut max_rel, mut max_gap) = (0.0f64, 0.0f64);
    for (fi, field) in fields.iter().enumerate() {
        for (k, &t) in field.times().iter().enumerate() {
            for site in sites {
                let Some(value) = field.value(k, site) else { continue };
                let mut rec = vec![field.flavor().to_string(), field.order().to_string(), fmt_f64(t)];
                rec.extend(coords(site));
                rec.push(fmt_f64(value));
                if let Some(oracle) = extras.oracle {
                    let o = oracle[fi].value(k, site).unwrap();
                    let rel = if value == o { 0.0 } else { (value - o).abs() / value.abs().max(o.abs()) };
                    max_rel = max_rel.max(rel);
                    rec.push(fmt_f64(o));
                    rec.push(fmt_f64(rel));
                }
                if let Some(fwd) = extras.forward {
                    if field.order() == 1 {
                        let f = fwd.value(k, site).unwrap();
                        let gap = (f - value).abs();
                        max_gap = max_gap.max(gap);
                        rec.push(fmt_f64(f));
                        rec.push(fmt_f64(gap));
                    } else {
                        rec.push(String::new());
                        rec.push(String::new());
                    }
                }
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok((max_rel, max_gap))
}

/// `z, t, x1..xd, F`.
pub fn write_extinction<W: Write>(w: &mut Writer<W>, fields: &[GeneratingFunctionField], sites: &[Site]) -> Result<()> {
    let dim = fields.first().map(|f| f.lattice().dim()).unwrap_or(1);
    let mut header: Vec<String> = vec!["z".into(), "t".into()];
    header.extend(coord_headers(dim, "x"));
    header.push("F".into());
    w.write_record(&header)?;
    for field in fields {
        for (k, &t) in field.times().iter().enumerate() {
            for site in sites {
                let Some(v) = field.value(k, site) else { continue };
                let mut rec = vec![field.z().to_string(), fmt_f64(t)];
                rec.extend(coords(site));
                rec.push(fmt_f64(v));
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `ic, n, t, site, estimate, stderr, replicas`. The site column is `all`
/// for the population size and colon-separated coordinates otherwise.
pub fn write_mc_moments<W: Write>(w: &mut Writer<W>, ic: &str, sites: &[Site], estimates: &[MomentEstimate]) -> Result<()> {
    w.write_record(["ic", "n", "t", "site", "estimate", "stderr", "replicas"])?;
    for e in estimates {
        let site = match e.observable {
            Observable::Population => "all".to_string(),
            Observable::Site(j) => sites[j].to_string(),
            Observable::Subpopulation { ancestor } => format!("all@{ancestor}"),
            Observable::SubpopulationAt { ancestor, site } => format!("{}@{ancestor}", sites[site]),
        };
        w.write_record([
            ic.to_string(),
            e.order.to_string(),
            fmt_f64(e.time),
            site,
            fmt_f64(e.estimate),
            fmt_f64(e.stderr),
            e.replicas.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `alpha, beta_tilde, lambda0`.
pub fn write_vaccination_sweep<W: Write>(w: &mut Writer<W>, points: &[SweepPoint]) -> Result<()> {
    w.write_record(["alpha", "beta_tilde", "lambda0"])?;
    for p in points {
        w.write_record([fmt_f64(p.alpha), fmt_f64(p.beta_tilde), fmt_f64(p.lambda0)])?;
    }
    w.flush()?;
    Ok(())
}

/// `t, y1..yd, forward, total, gap`.
pub fn write_duality_report<W: Write>(w: &mut Writer<W>, report: &DualityReport, sites: &[Site]) -> Result<()> {
    let dim = report.sites.first().map(|s| s.dim()).unwrap_or(1);
    let mut header: Vec<String> = vec!["t".into()];
    header.extend(coord_headers(dim, "y"));
    header.push("gap".into());
    w.write_record(&header)?;
    for (k, &t) in report.times.iter().enumerate() {
        for site in sites {
            let Some(i) = report.sites.iter().position(|s| s == site) else { continue };
            let mut rec = vec![fmt_f64(t)];
            rec.extend(coords(site));
            rec.push(fmt_f64(report.gaps[k][i]));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub struct GrowthFitRow<'a> {
    pub law: &'a GrowthLaw,
    pub form: &'a GrowthForm,
    pub fit: &'a GrowthFit,
    pub expected: f64,
}

/// `regime, d, n, predicted_form, fitted_param, stderr, r2, expected`.
pub fn write_growth_fit<W: Write>(w: &mut Writer<W>, rows: &[GrowthFitRow<'_>]) -> Result<()> {
    w.write_record(["regime", "d", "n", "predicted_form", "fitted_param", "stderr", "r2", "expected"])?;
    for r in rows {
        w.write_record([
            r.law.regime.to_string(),
            r.law.dim.to_string(),
            r.law.order.to_string(),
            r.form.to_string(),
            fmt_f64(r.fit.estimate),
            fmt_f64(r.fit.stderr),
            fmt_f64(r.fit.r2),
            fmt_f64(r.expected),
        ])?;
    }
    w.flush()?;
    Ok(())
}
