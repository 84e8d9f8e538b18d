//! Line-based `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key may appear once,
//! except `kernel.offset`, which is repeated once per jump offset:
//!
//! ```text
//! dimension = 2
//! kernel.offset = 1,0 : 0.25
//! kernel.offset = -1,0 : 0.25
//! law.b0 = 0.5
//! law.b2 = 1.0
//! simulate.sites = 0,0; 1,0
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{BrwModel, OffspringLaw, Site, WalkKernel};
use crate::moments::{Flavor, LaplaceParameter, TimeGrid};
use crate::montecarlo::{InitialCondition, DEFAULT_PARTICLE_CAP};
use crate::operators::{LatticeBox, DEFAULT_SCHEDULE};
use crate::vaccination::{vaccinated_model, VaccinationParams};

/// Largest offspring number accepted as `law.bN`.
pub const MAX_OFFSPRING_KEY: usize = 64;

const KEYS: &[&str] = &[
    "dimension",
    "kernel.total_rate",
    "kernel.offset",
    "vaccination.alpha",
    "box.half_width",
    "box.schedule",
    "window",
    "time.t_max",
    "time.steps",
    "replicas",
    "seed",
    "particle_cap",
    "moments.order",
    "moments.flavor",
    "moments.target",
    "moments.sites",
    "moments.extinction_z",
    "simulate.ic",
    "simulate.start",
    "simulate.sites",
    "simulate.orders",
    "analyze.betas",
    "analyze.transition_times",
    "fit.window",
    "sweep.alphas",
];

#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    /// Nearest-neighbour kernel with the given total rate.
    Simple(f64),
    Offsets(Vec<(Site, f64)>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlavorSpec {
    Total,
    Local,
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcSpec {
    Single,
    Window,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dimension: usize,
    pub kernel: KernelSpec,
    /// `b_n` for `n != 1`, keyed by `n`.
    pub law: BTreeMap<usize, f64>,
    pub vaccination_alpha: Option<f64>,
    pub half_width: usize,
    pub schedule: Vec<usize>,
    /// Window half-width for the all-sites initial condition; defaults to `2L`.
    pub window: Option<usize>,
    pub t_max: f64,
    pub steps: usize,
    pub replicas: usize,
    pub seed: u64,
    pub particle_cap: usize,
    pub moments_order: usize,
    pub moments_flavor: FlavorSpec,
    pub moments_target: Option<Site>,
    pub moments_sites: Option<Vec<Site>>,
    pub extinction_z: Vec<LaplaceParameter>,
    pub simulate_ic: IcSpec,
    pub simulate_start: Option<Site>,
    pub simulate_sites: Option<Vec<Site>>,
    pub simulate_orders: u32,
    pub analyze_betas: Vec<f64>,
    pub transition_times: Vec<f64>,
    pub fit_window: Option<(f64, f64)>,
    pub sweep_alphas: Vec<f64>,
}

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| err(line, format!("`{key}`: cannot parse `{}`", v.trim())))
}

fn parse_list<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| parse_num(line, key, s)).collect()
}

fn parse_site(line: usize, key: &str, v: &str) -> Result<Site> {
    let coords: Vec<i32> = parse_list(line, key, v)?;
    Site::new(&coords).map_err(|e| err(line, format!("`{key}`: {e}")))
}

fn parse_sites(line: usize, key: &str, v: &str) -> Result<Vec<Site>> {
    v.split(';').map(|s| parse_site(line, key, s)).collect()
}

fn parse_laplace(line: usize, key: &str, v: &str) -> Result<LaplaceParameter> {
    let t = v.trim();
    if t.eq_ignore_ascii_case("inf") {
        return Ok(LaplaceParameter::Infinite);
    }
    let z: f64 = parse_num(line, key, t)?;
    if !(z >= 0.0 && z.is_finite()) {
        return Err(err(line, format!("`{key}`: z = {z} must be finite and nonnegative (use `inf`)")));
    }
    Ok(LaplaceParameter::Finite(z))
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        let mut dimension = None;
        let mut total_rate = None;
        let mut offsets: Vec<(usize, Site, f64)> = Vec::new();
        let mut law = BTreeMap::new();
        let mut cfg = RunConfig {
            dimension: 0,
            kernel: KernelSpec::Simple(1.0),
            law: BTreeMap::new(),
            vaccination_alpha: None,
            half_width: 10,
            schedule: DEFAULT_SCHEDULE.to_vec(),
            window: None,
            t_max: 1.0,
            steps: 10,
            replicas: 1000,
            seed: 0,
            particle_cap: DEFAULT_PARTICLE_CAP,
            moments_order: 1,
            moments_flavor: FlavorSpec::Total,
            moments_target: None,
            moments_sites: None,
            extinction_z: Vec::new(),
            simulate_ic: IcSpec::Single,
            simulate_start: None,
            simulate_sites: None,
            simulate_orders: 2,
            analyze_betas: Vec::new(),
            transition_times: Vec::new(),
            fit_window: None,
            sweep_alphas: Vec::new(),
        };

        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap().trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(line, format!("expected `key = value`, got `{content}`")))?;
            let key = key.trim();
            let value = value.trim();
            let known = KEYS.contains(&key) || key.starts_with("law.b");
            if !known {
                return Err(err(line, format!("unknown key `{key}`")));
            }
            if key != "kernel.offset" {
                if let Some(prev) = seen.insert(key.to_string(), line) {
                    return Err(err(line, format!("duplicate key `{key}` (first set on line {prev})")));
                }
            }
            match key {
                "dimension" => dimension = Some(parse_num::<usize>(line, key, value)?),
                "kernel.total_rate" => total_rate = Some(parse_num::<f64>(line, key, value)?),
                "kernel.offset" => {
                    let (z, rate) = value
                        .split_once(':')
                        .ok_or_else(|| err(line, "`kernel.offset` expects `z1,...,zd : rate`"))?;
                    offsets.push((line, parse_site(line, key, z)?, parse_num(line, key, rate)?));
                }
                "vaccination.alpha" => cfg.vaccination_alpha = Some(parse_num(line, key, value)?),
                "box.half_width" => cfg.half_width = parse_num(line, key, value)?,
                "box.schedule" => cfg.schedule = parse_list(line, key, value)?,
                "window" => cfg.window = Some(parse_num(line, key, value)?),
                "time.t_max" => cfg.t_max = parse_num(line, key, value)?,
                "time.steps" => cfg.steps = parse_num(line, key, value)?,
                "replicas" => cfg.replicas = parse_num(line, key, value)?,
                "seed" => cfg.seed = parse_num(line, key, value)?,
                "particle_cap" => cfg.particle_cap = parse_num(line, key, value)?,
                "moments.order" => cfg.moments_order = parse_num(line, key, value)?,
                "moments.flavor" => {
                    cfg.moments_flavor = match value {
                        "total" => FlavorSpec::Total,
                        "local" => FlavorSpec::Local,
                        "forward" => FlavorSpec::Forward,
                        other => return Err(err(line, format!("`{key}`: unknown flavor `{other}`"))),
                    }
                }
                "moments.target" => cfg.moments_target = Some(parse_site(line, key, value)?),
                "moments.sites" => cfg.moments_sites = Some(parse_sites(line, key, value)?),
                "moments.extinction_z" => {
                    cfg.extinction_z = value.split(',').map(|v| parse_laplace(line, key, v)).collect::<Result<_>>()?
                }
                "simulate.ic" => {
                    cfg.simulate_ic = match value {
                        "single" => IcSpec::Single,
                        "window" => IcSpec::Window,
                        other => return Err(err(line, format!("`{key}`: unknown initial condition `{other}`"))),
                    }
                }
                "simulate.start" => cfg.simulate_start = Some(parse_site(line, key, value)?),
                "simulate.sites" => cfg.simulate_sites = Some(parse_sites(line, key, value)?),
                "simulate.orders" => cfg.simulate_orders = parse_num(line, key, value)?,
                "analyze.betas" => cfg.analyze_betas = parse_list(line, key, value)?,
                "analyze.transition_times" => cfg.transition_times = parse_list(line, key, value)?,
                "fit.window" => {
                    let w: Vec<f64> = parse_list(line, key, value)?;
                    if w.len() != 2 || !(w[0] < w[1]) {
                        return Err(err(line, "`fit.window` expects `t1, t2` with t1 < t2"));
                    }
                    cfg.fit_window = Some((w[0], w[1]));
                }
                "sweep.alphas" => cfg.sweep_alphas = parse_list(line, key, value)?,
                _ => {
                    // law.bN
                    let n: usize = key["law.b".len()..]
                        .parse()
                        .map_err(|_| err(line, format!("unknown key `{key}`")))?;
                    if n == 1 {
                        return Err(err(line, "`law.b1` is derived from the other rates and cannot be set"));
                    }
                    if n > MAX_OFFSPRING_KEY {
                        return Err(err(line, format!("`{key}`: offspring numbers above {MAX_OFFSPRING_KEY} are not supported")));
                    }
                    let b: f64 = parse_num(line, key, value)?;
                    if !(b >= 0.0 && b.is_finite()) {
                        return Err(err(line, format!("`{key}` = {b} must be a finite nonnegative rate")));
                    }
                    law.insert(n, b);
                }
            }
        }

        cfg.dimension = dimension.ok_or_else(|| err(0, "missing required key `dimension`"))?;
        let dim_line = seen["dimension"];
        if cfg.dimension == 0 || cfg.dimension > crate::model::MAX_DIMENSION {
            return Err(err(dim_line, format!("`dimension` must lie in 1..={}", crate::model::MAX_DIMENSION)));
        }
        cfg.kernel = match (total_rate, offsets.is_empty()) {
            (Some(_), false) => {
                return Err(err(seen["kernel.total_rate"], "give either `kernel.total_rate` or `kernel.offset`, not both"))
            }
            (Some(k), true) => KernelSpec::Simple(k),
            (None, false) => {
                for (line, z, _) in &offsets {
                    if z.dim() != cfg.dimension {
                        return Err(err(*line, format!("offset {z} does not have dimension {}", cfg.dimension)));
                    }
                }
                KernelSpec::Offsets(offsets.into_iter().map(|(_, z, r)| (z, r)).collect())
            }
            (None, true) => return Err(err(0, "missing kernel: set `kernel.total_rate` or `kernel.offset`")),
        };
        cfg.law = law;
        for (key, site) in [
            ("moments.target", cfg.moments_target.as_ref()),
            ("simulate.start", cfg.simulate_start.as_ref()),
        ] {
            if let Some(s) = site {
                if s.dim() != cfg.dimension {
                    return Err(err(seen[key], format!("`{key}` must have dimension {}", cfg.dimension)));
                }
            }
        }
        for (key, sites) in [
            ("moments.sites", cfg.moments_sites.as_ref()),
            ("simulate.sites", cfg.simulate_sites.as_ref()),
        ] {
            if let Some(s) = sites.and_then(|v| v.iter().find(|s| s.dim() != cfg.dimension)) {
                return Err(err(seen[key], format!("`{key}`: site {s} must have dimension {}", cfg.dimension)));
            }
        }
        if cfg.steps < 2 {
            return Err(err(seen.get("time.steps").copied().unwrap_or(0), "`time.steps` must be at least 2"));
        }
        if !(cfg.t_max >= 0.0 && cfg.t_max.is_finite()) {
            return Err(err(seen.get("time.t_max").copied().unwrap_or(0), "`time.t_max` must be finite and nonnegative"));
        }
        if cfg.half_width == 0 || cfg.schedule.contains(&0) || cfg.schedule.is_empty() {
            return Err(err(0, "box half-widths must be positive"));
        }
        if let Some(w) = cfg.window {
            if w < cfg.half_width {
                return Err(err(seen["window"], format!("`window` = {w} must be at least `box.half_width` = {}", cfg.half_width)));
            }
        }
        if cfg.moments_order == 0 {
            return Err(err(seen["moments.order"], "`moments.order` must be at least 1"));
        }
        if !(1..=4).contains(&cfg.simulate_orders) {
            return Err(err(seen["simulate.orders"], "`simulate.orders` must lie in 1..=4"));
        }
        if cfg.replicas == 0 {
            return Err(err(seen["replicas"], "`replicas` must be at least 1"));
        }
        Ok(cfg)
    }

    pub fn kernel(&self) -> Result<WalkKernel> {
        match &self.kernel {
            KernelSpec::Simple(k) => WalkKernel::simple(self.dimension, *k),
            KernelSpec::Offsets(rates) => WalkKernel::from_rates(self.dimension, rates.clone()),
        }
    }

    pub fn law(&self) -> Result<OffspringLaw> {
        let max = self.law.keys().copied().max().unwrap_or(0).max(1);
        let higher: Vec<f64> = (2..=max).map(|n| self.law.get(&n).copied().unwrap_or(0.0)).collect();
        OffspringLaw::new(self.law.get(&0).copied().unwrap_or(0.0), &higher)
    }

    /// The configured model before vaccination.
    pub fn base_model(&self) -> Result<BrwModel> {
        BrwModel::new(self.kernel()?, self.law()?)
    }

    /// The configured model, vaccinated when `vaccination.alpha` is set.
    pub fn model(&self) -> Result<BrwModel> {
        let base = self.base_model()?;
        match self.vaccination_alpha {
            Some(alpha) => vaccinated_model(&base, VaccinationParams::new(alpha)?),
            None => Ok(base),
        }
    }

    pub fn lattice(&self) -> Result<LatticeBox> {
        LatticeBox::new(self.dimension, self.half_width)
    }

    pub fn window(&self) -> usize {
        self.window.unwrap_or(2 * self.half_width)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(self.t_max, self.steps)
    }

    pub fn flavor(&self) -> Flavor {
        match self.moments_flavor {
            FlavorSpec::Total => Flavor::Total,
            FlavorSpec::Local => Flavor::Local {
                target: self.moments_target.unwrap_or_else(|| Site::origin(self.dimension)),
            },
            FlavorSpec::Forward => Flavor::ForwardInfinite,
        }
    }

    pub fn initial_condition(&self) -> InitialCondition {
        match self.simulate_ic {
            IcSpec::Single => InitialCondition::Single(self.simulate_start.unwrap_or_else(|| Site::origin(self.dimension))),
            IcSpec::Window => InitialCondition::Window(self.window()),
        }
    }

    pub fn simulate_sites(&self) -> Vec<Site> {
        self.simulate_sites
            .clone()
            .unwrap_or_else(|| vec![Site::origin(self.dimension)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "
        # line model
        dimension = 1
        kernel.total_rate = 1.0
        law.b0 = 0.25   # deaths
        law.b2 = 0.75
        box.half_width = 12
        time.t_max = 2
        time.steps = 8
        simulate.sites = 0; 3; -1
        moments.extinction_z = 0.5, inf
        fit.window = 10, 30
    ";

    #[test]
    fn parses_sample() {
        let cfg = RunConfig::parse(SAMPLE).unwrap();
        assert_eq!(cfg.dimension, 1);
        assert_eq!(cfg.kernel, KernelSpec::Simple(1.0));
        let law = cfg.law().unwrap();
        assert_eq!(law.coefficients(), &[0.25, -1.0, 0.75]);
        assert_eq!(cfg.window(), 24);
        assert_eq!(cfg.simulate_sites().len(), 3);
        assert_eq!(cfg.extinction_z, vec![LaplaceParameter::Finite(0.5), LaplaceParameter::Infinite]);
        assert_eq!(cfg.fit_window, Some((10.0, 30.0)));
        assert_eq!(cfg.time_grid().unwrap().len(), 9);
        assert!(cfg.model().is_ok());
    }

    #[test]
    fn explicit_offsets() {
        let cfg = RunConfig::parse("dimension = 2\nkernel.offset = 1,0 : 0.5\nkernel.offset = -1,0 : 0.5\nkernel.offset = 0,1 : 0.25\nkernel.offset = 0,-1 : 0.25\n").unwrap();
        let k = cfg.kernel().unwrap();
        assert_eq!(k.total_rate(), 1.5);
        assert!(cfg.base_model().is_ok());
    }

    #[test]
    fn unknown_key_is_named() {
        let e = RunConfig::parse("dimension = 1\nkernel.total_rate = 1\nkernel.rate = 2\n").unwrap_err();
        match e {
            Error::Config { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("kernel.rate"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_input() {
        let bad = [
            "kernel.total_rate = 1\n",
            "dimension = 1\n",
            "dimension = 1\nkernel.total_rate = 1\nlaw.b1 = -2\n",
            "dimension = 1\nkernel.total_rate = 1\nlaw.b2 = -1\n",
            "dimension = 1\nkernel.total_rate = 1\ndimension = 2\n",
            "dimension = 1\nkernel.total_rate = 1\ntime.steps = 1\n",
            "dimension = 1\nkernel.total_rate = 1\nbox.half_width = 10\nwindow = 5\n",
            "dimension = 1\nkernel.total_rate = 1\nmoments.flavor = sideways\n",
            "dimension = 2\nkernel.total_rate = 1\nsimulate.start = 1\n",
            "dimension = 1\nkernel.total_rate = 1\nkernel.offset = 1 : 1\n",
            "dimension = 1\nkernel.total_rate = one\n",
            "dimension = 1\nkernel.total_rate = 1\nnot a pair\n",
        ];
        for text in bad {
            assert!(matches!(RunConfig::parse(text), Err(Error::Config { .. })), "{text}");
        }
    }

    #[test]
    fn vaccination_applies_to_model() {
        let cfg = RunConfig::parse("dimension = 1\nkernel.total_rate = 1\nlaw.b0 = 1\nlaw.b2 = 1\nvaccination.alpha = 0.5\n").unwrap();
        assert_eq!(cfg.model().unwrap().law().coefficients(), &[1.0, -1.5, 0.5]);
        assert_eq!(cfg.base_model().unwrap().law().coefficients(), &[1.0, -2.0, 1.0]);
    }
}
