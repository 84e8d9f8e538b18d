//! Exact event-driven simulation of the particle system.
//!
//! Events are drawn by the direct method: one exponential clock for the
//! aggregate rate, then a particle and an event type proportional to their
//! rates. Every particle jumps at rate `|a(0)|`; particles on the source also
//! branch at rate `|b_1|`. Particles sitting on the source are kept in their
//! own list so both selections are O(1).
//!
//! Replicas are independent. Replica `i` draws from a ChaCha8 stream keyed by
//! `(seed, i)`, so results do not depend on the thread count or schedule.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{BrwModel, Site};

pub const DEFAULT_PARTICLE_CAP: usize = 1_000_000;

/// Fraction of capped replicas above which a batch is aborted.
pub const CAP_ABORT_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialCondition {
    /// One particle at the given site.
    Single(Site),
    /// One particle at every site of `[-W, W]^d`, standing in for the
    /// one-particle-per-site initial condition.
    Window(usize),
}

impl InitialCondition {
    pub fn particles(&self, dim: usize) -> Result<Vec<Site>> {
        match *self {
            InitialCondition::Single(x0) => {
                if x0.dim() != dim {
                    return Err(Error::invalid(format!(
                        "initial site has dimension {}, model has {dim}",
                        x0.dim()
                    )));
                }
                Ok(vec![x0])
            }
            InitialCondition::Window(w) => {
                let side = 2 * w + 1;
                let count = side
                    .checked_pow(dim as u32)
                    .ok_or_else(|| Error::invalid("window too large"))?;
                let mut out = Vec::with_capacity(count);
                let mut coords = vec![0i32; dim];
                for mut k in 0..count {
                    for c in coords.iter_mut().rev() {
                        *c = (k % side) as i32 - w as i32;
                        k /= side;
                    }
                    out.push(Site::new(&coords)?);
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Particle {
    pub position: Site,
    /// Starting site of the initial particle this one descends from.
    pub ancestor: Site,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    Jump { from: Site, to: Site },
    /// Branching at the source into `offspring` particles (0 is a death).
    Branch { offspring: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    /// Waiting time since the previous event.
    pub dt: f64,
    /// Time of this event.
    pub time: f64,
    pub kind: EventKind,
}

/// Sampling tables derived from the model.
#[derive(Debug, Clone)]
struct EventTables {
    jump_rate: f64,
    branch_rate: f64,
    offsets: Vec<Site>,
    offset_law: Option<WeightedIndex<f64>>,
    offspring: Vec<usize>,
    offspring_law: Option<WeightedIndex<f64>>,
}

impl EventTables {
    fn new(model: &BrwModel) -> Result<Self> {
        let kernel = model.kernel();
        let offsets: Vec<Site> = kernel.rates().iter().map(|(z, _)| *z).collect();
        let offset_law = if kernel.total_rate() > 0.0 {
            Some(
                WeightedIndex::new(kernel.rates().iter().map(|(_, r)| *r))
                    .map_err(|e| Error::invalid(format!("jump law: {e}")))?,
            )
        } else {
            None
        };
        let law = model.law();
        let (offspring, weights): (Vec<usize>, Vec<f64>) = law
            .coefficients()
            .iter()
            .enumerate()
            .filter(|&(n, &b)| n != 1 && b > 0.0)
            .map(|(n, &b)| (n, b))
            .unzip();
        let branch_rate = weights.iter().sum::<f64>();
        let offspring_law = if branch_rate > 0.0 {
            Some(WeightedIndex::new(&weights).map_err(|e| Error::invalid(format!("offspring law: {e}")))?)
        } else {
            None
        };
        Ok(EventTables {
            jump_rate: kernel.total_rate(),
            branch_rate,
            offsets,
            offset_law,
            offspring,
            offspring_law,
        })
    }
}

/// State of one replica.
#[derive(Debug, Clone)]
pub struct ParticleSystem {
    at_source: Vec<Particle>,
    elsewhere: Vec<Particle>,
    dim: usize,
    time: f64,
    events: u64,
    cap: usize,
    tables: EventTables,
    rng: ChaCha8Rng,
}

impl ParticleSystem {
    /// Fresh system from an initial condition, drawing from stream `stream`
    /// of the generator seeded with `seed`.
    pub fn new(model: &BrwModel, ic: &InitialCondition, seed: u64, stream: u64, cap: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut system = ParticleSystem {
            at_source: Vec::new(),
            elsewhere: Vec::new(),
            dim: model.dim(),
            time: 0.0,
            events: 0,
            cap,
            tables: EventTables::new(model)?,
            rng,
        };
        let sites = ic.particles(model.dim())?;
        if sites.len() > cap {
            return Err(Error::ParticleCap { cap });
        }
        for x in sites {
            system.insert(Particle { position: x, ancestor: x });
        }
        Ok(system)
    }

    fn insert(&mut self, p: Particle) {
        if p.position.is_origin() {
            self.at_source.push(p);
        } else {
            self.elsewhere.push(p);
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn population(&self) -> usize {
        self.at_source.len() + self.elsewhere.len()
    }

    pub fn particles(&self) -> impl Iterator<Item = &Particle> {
        self.at_source.iter().chain(&self.elsewhere)
    }

    pub fn count_at(&self, site: &Site) -> usize {
        if site.is_origin() {
            self.at_source.len()
        } else {
            self.elsewhere.iter().filter(|p| p.position == *site).count()
        }
    }

    /// Aggregate event rate: `|a(0)|` per particle plus `|b_1|` per particle
    /// on the source.
    pub fn total_rate(&self) -> f64 {
        self.tables.jump_rate * self.population() as f64 + self.tables.branch_rate * self.at_source.len() as f64
    }

    /// Draws the waiting time to the next event.
    fn draw_waiting_time(&mut self) -> Result<f64> {
        if self.population() == 0 {
            return Err(Error::EmptySystem);
        }
        let rate = self.total_rate();
        if rate <= 0.0 {
            return Ok(f64::INFINITY);
        }
        let u: f64 = 1.0 - self.rng.random::<f64>();
        Ok(-u.ln() / rate)
    }

    /// Applies the event chosen at the current state (time is not advanced).
    fn apply_event(&mut self) -> Result<EventKind> {
        let n_src = self.at_source.len();
        let branch_total = self.tables.branch_rate * n_src as f64;
        let u = self.rng.random::<f64>() * self.total_rate();
        if u < branch_total {
            let i = self.rng.random_range(0..n_src);
            let law = self.tables.offspring_law.as_ref().expect("branching with zero rate");
            let n = self.tables.offspring[law.sample(&mut self.rng)];
            if n == 0 {
                self.at_source.swap_remove(i);
            } else {
                if self.population() + n - 1 > self.cap {
                    return Err(Error::ParticleCap { cap: self.cap });
                }
                let parent = self.at_source[i];
                for _ in 1..n {
                    self.at_source.push(parent);
                }
            }
            Ok(EventKind::Branch { offspring: n })
        } else {
            let k = self.rng.random_range(0..self.population());
            let p = if k < n_src {
                self.at_source.swap_remove(k)
            } else {
                self.elsewhere.swap_remove(k - n_src)
            };
            let law = self.tables.offset_law.as_ref().expect("jump with zero rate");
            let z = self.tables.offsets[law.sample(&mut self.rng)];
            let to = p.position.add(&z);
            self.insert(Particle {
                position: to,
                ancestor: p.ancestor,
            });
            Ok(EventKind::Jump { from: p.position, to })
        }
    }

    /// Advances to the next event.
    pub fn step(&mut self) -> Result<EventRecord> {
        let dt = self.draw_waiting_time()?;
        if !dt.is_finite() {
            return Err(Error::invalid("no event can occur: all rates are zero"));
        }
        self.time += dt;
        let kind = self.apply_event()?;
        self.events += 1;
        Ok(EventRecord {
            dt,
            time: self.time,
            kind,
        })
    }

    fn observe(&self, sites: &[Site], track_ancestors: bool) -> Observation {
        let site_counts = sites.iter().map(|s| self.count_at(s) as u64).collect();
        let ancestors = track_ancestors.then(|| {
            let mut totals: BTreeMap<Site, u64> = BTreeMap::new();
            let mut at_sites: Vec<BTreeMap<Site, u64>> = vec![BTreeMap::new(); sites.len()];
            for p in self.particles() {
                *totals.entry(p.ancestor).or_default() += 1;
                for (j, s) in sites.iter().enumerate() {
                    if p.position == *s {
                        *at_sites[j].entry(p.ancestor).or_default() += 1;
                    }
                }
            }
            AncestorCounts { totals, at_sites }
        });
        Observation {
            population: self.population() as u64,
            site_counts,
            ancestors,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Counts split by ancestor label.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AncestorCounts {
    /// Subpopulation sizes `eta_{x,t}` keyed by ancestor `x`.
    pub totals: BTreeMap<Site, u64>,
    /// `eta_{x,t}(y)` for each checkpoint site `y`, keyed by ancestor.
    pub at_sites: Vec<BTreeMap<Site, u64>>,
}

/// State observed at one checkpoint time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub population: u64,
    /// `eta_t(y)` for each checkpoint site.
    pub site_counts: Vec<u64>,
    pub ancestors: Option<AncestorCounts>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaRecord {
    /// One observation per checkpoint time.
    pub observations: Vec<Observation>,
    pub events: u64,
}

/// What to simulate and what to record.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationPlan {
    pub ic: InitialCondition,
    pub times: Vec<f64>,
    pub sites: Vec<Site>,
    pub replicas: usize,
    pub seed: u64,
    pub particle_cap: usize,
    pub track_ancestors: bool,
}

impl SimulationPlan {
    /// Observes the population at `0` and `horizon`; no sites.
    pub fn new(ic: InitialCondition, horizon: f64, replicas: usize, seed: u64) -> Self {
        let times = if horizon > 0.0 { vec![0.0, horizon] } else { vec![0.0] };
        SimulationPlan {
            ic,
            times,
            sites: Vec::new(),
            replicas,
            seed,
            particle_cap: DEFAULT_PARTICLE_CAP,
            track_ancestors: false,
        }
    }

    pub fn with_checkpoints(mut self, times: Vec<f64>) -> Self {
        self.times = times;
        self
    }

    pub fn with_sites(mut self, sites: Vec<Site>) -> Self {
        self.sites = sites;
        self
    }

    pub fn with_particle_cap(mut self, cap: usize) -> Self {
        self.particle_cap = cap;
        self
    }

    pub fn tracking_ancestors(mut self) -> Self {
        self.track_ancestors = true;
        self
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.replicas == 0 {
            return Err(Error::invalid("at least one replica is required"));
        }
        if self.times.is_empty() || self.times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(Error::invalid("checkpoint times must be finite and nonnegative"));
        }
        if self.times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("checkpoint times must be nondecreasing"));
        }
        if let Some(s) = self.sites.iter().find(|s| s.dim() != dim) {
            return Err(Error::invalid(format!("checkpoint site {s} has the wrong dimension")));
        }
        Ok(())
    }
}

/// Per-replica records of a batch, in replica order. Capped replicas are
/// excluded and only counted.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStatistics {
    pub times: Vec<f64>,
    pub sites: Vec<Site>,
    pub records: Vec<ReplicaRecord>,
    pub capped: usize,
    pub replicas: usize,
}

/// Simulates one replica through all checkpoints. `Ok(None)` means the
/// particle cap was hit.
pub fn simulate_replica(model: &BrwModel, plan: &SimulationPlan, index: u64) -> Result<Option<ReplicaRecord>> {
    let mut system = ParticleSystem::new(model, &plan.ic, plan.seed, index, plan.particle_cap)?;
    let mut observations = Vec::with_capacity(plan.times.len());
    let mut next = 0;
    while next < plan.times.len() {
        if system.population() == 0 {
            let obs = system.observe(&plan.sites, plan.track_ancestors);
            while next < plan.times.len() {
                observations.push(obs.clone());
                next += 1;
            }
            break;
        }
        let dt = system.draw_waiting_time()?;
        let t_event = system.time + dt;
        // The state is constant until the event, so record every checkpoint before it.
        while next < plan.times.len() && plan.times[next] < t_event {
            observations.push(system.observe(&plan.sites, plan.track_ancestors));
            next += 1;
        }
        if next == plan.times.len() {
            break;
        }
        system.time = t_event;
        match system.apply_event() {
            Ok(_) => system.events += 1,
            Err(Error::ParticleCap { .. }) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    Ok(Some(ReplicaRecord {
        observations,
        events: system.events,
    }))
}

/// Runs `plan.replicas` independent replicas in parallel.
pub fn run(model: &BrwModel, plan: &SimulationPlan) -> Result<TrajectoryStatistics> {
    plan.validate(model.dim())?;
    let outcomes: Vec<Option<ReplicaRecord>> = (0..plan.replicas as u64)
        .into_par_iter()
        .map(|i| simulate_replica(model, plan, i))
        .collect::<Result<_>>()?;
    let capped = outcomes.iter().filter(|o| o.is_none()).count();
    if capped as f64 > CAP_ABORT_FRACTION * plan.replicas as f64 {
        return Err(Error::CapAbort {
            capped,
            replicas: plan.replicas,
        });
    }
    Ok(TrajectoryStatistics {
        times: plan.times.clone(),
        sites: plan.sites.clone(),
        records: outcomes.into_iter().flatten().collect(),
        capped,
        replicas: plan.replicas,
    })
}

/// A scalar read off each replica at a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observable {
    /// Whole population size.
    Population,
    /// `eta_t(y)` for the `j`-th checkpoint site.
    Site(usize),
    /// Size of the subpopulation descending from `ancestor`.
    Subpopulation { ancestor: Site },
    /// Count at the `j`-th checkpoint site descending from `ancestor`.
    SubpopulationAt { ancestor: Site, site: usize },
}

impl TrajectoryStatistics {
    /// The observable at checkpoint `k` across retained replicas.
    pub fn samples(&self, observable: Observable, k: usize) -> Result<Vec<f64>> {
        self.records
            .iter()
            .map(|r| {
                let obs = &r.observations[k];
                let ancestors = || {
                    obs.ancestors
                        .as_ref()
                        .ok_or_else(|| Error::invalid("ancestor counts were not recorded"))
                };
                Ok(match observable {
                    Observable::Population => obs.population as f64,
                    Observable::Site(j) => *obs
                        .site_counts
                        .get(j)
                        .ok_or_else(|| Error::invalid(format!("no checkpoint site {j}")))?
                        as f64,
                    Observable::Subpopulation { ancestor } => {
                        ancestors()?.totals.get(&ancestor).copied().unwrap_or(0) as f64
                    }
                    Observable::SubpopulationAt { ancestor, site } => ancestors()?
                        .at_sites
                        .get(site)
                        .ok_or_else(|| Error::invalid(format!("no checkpoint site {site}")))?
                        .get(&ancestor)
                        .copied()
                        .unwrap_or(0) as f64,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub observable: Observable,
    pub order: u32,
    pub time: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub replicas: usize,
}

/// Mean of `x^n` with its delete-one jackknife standard error.
pub fn jackknife_power_mean(samples: &[f64], n: u32) -> (f64, f64) {
    let r = samples.len();
    let powers: Vec<f64> = samples.iter().map(|x| x.powi(n as i32)).collect();
    let total: f64 = powers.iter().sum();
    let mean = total / r as f64;
    if r < 2 {
        return (mean, f64::NAN);
    }
    let loo: Vec<f64> = powers.iter().map(|p| (total - p) / (r - 1) as f64).collect();
    let loo_mean = loo.iter().sum::<f64>() / r as f64;
    let ss: f64 = loo.iter().map(|v| (v - loo_mean).powi(2)).sum();
    (mean, ((r - 1) as f64 / r as f64 * ss).sqrt())
}

/// Empirical moments of orders `1..=max_order` (at most 4) of the population
/// size and every checkpoint-site count, per checkpoint. With a single
/// retained replica the standard errors are NaN.
pub fn estimate_moments(stats: &TrajectoryStatistics, max_order: u32) -> Result<Vec<MomentEstimate>> {
    if !(1..=4).contains(&max_order) {
        return Err(Error::invalid("moment orders 1..=4 are supported"));
    }
    if stats.records.is_empty() {
        return Err(Error::invalid("no retained replicas to estimate from"));
    }
    let observables: Vec<Observable> = std::iter::once(Observable::Population)
        .chain((0..stats.sites.len()).map(Observable::Site))
        .collect();
    let mut out = Vec::new();
    for (k, &t) in stats.times.iter().enumerate() {
        for &obs in &observables {
            let samples = stats.samples(obs, k)?;
            for n in 1..=max_order {
                let (estimate, stderr) = jackknife_power_mean(&samples, n);
                out.push(MomentEstimate {
                    observable: obs,
                    order: n,
                    time: t,
                    estimate,
                    stderr,
                    replicas: samples.len(),
                });
            }
        }
    }
    Ok(out)
}
