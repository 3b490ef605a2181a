//! Scenario years from a fitted model bundle (variants C1 and C2) and the
//! two benchmark generators, historical simulation and deterministic
//! allocation.
//!
//! Random streams: scenario `k` owns ChaCha8 stream `k` of the run seed;
//! day `d` starts at word `64 * d`. The first uniform of a day drives the
//! noon anchor, the following ones the daylight hours in increasing order
//! (the anchor hour skipped). Each uniform consumes one 64-bit word pair.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::BoundsModel;
use crate::calendar::{HourlyPanel, CELLS, DAYS, HOURS};
use crate::copula::Copula;
use crate::marginals::MarginalModel;
use crate::special::inv_reg_inc_beta_with;
use crate::{Error, Result};

pub const NOON: usize = 12;
const WORDS_PER_DAY: u128 = 64;

pub type DayRow = [f64; HOURS];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Independent days.
    C1,
    /// Noon hours linked across days.
    C2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub bounds: BoundsModel,
    pub marginals: MarginalModel,
    /// Entry `h` links hours `h` and `h + 1`.
    pub intraday: Vec<Copula>,
    pub noon: Option<Copula>,
    pub noon_hour: usize,
    pub variant: Variant,
}

impl ModelBundle {
    pub fn validate(&self) -> Result<()> {
        if self.intraday.len() != HOURS - 1 {
            return Err(Error::IncompleteBundle(format!("{} intraday copulas, expected {}", self.intraday.len(), HOURS - 1)));
        }
        if self.variant == Variant::C2 && self.noon.is_none() {
            return Err(Error::IncompleteBundle("variant C2 needs a noon copula".into()));
        }
        if self.noon_hour >= HOURS {
            return Err(Error::IncompleteBundle(format!("noon hour {}", self.noon_hour)));
        }
        for c in self.intraday.iter().chain(self.noon.iter()) {
            c.validate()?;
        }
        for d in 1..=DAYS {
            for h in 0..HOURS {
                if self.bounds.daylight.is_day(d, h) && self.marginals.params(d, h).is_err() {
                    return Err(Error::IncompleteBundle(format!("no marginal at d={d} h={h}")));
                }
            }
        }
        Ok(())
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self { variant, ..self.clone() }
    }

    /// Content hash of the bundle.
    pub fn id(&self) -> String {
        let json = serde_json::to_vec(self).expect("bundle serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

/// Anything that yields `count` scenario years one day at a time.
pub trait ScenarioSource: Sync {
    fn count(&self) -> usize;
    /// Rows of day `d` (1-based), one per scenario.
    fn day(&self, d: usize) -> Result<Vec<DayRow>>;
}

fn base_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn day_rng(base: &ChaCha8Rng, k: usize, d: usize) -> ChaCha8Rng {
    let mut r = base.clone();
    r.set_stream(k as u64);
    r.set_word_pos(d as u128 * WORDS_PER_DAY);
    r
}

/// Uniform on the open unit interval from 53 random bits.
fn open_uniform(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

fn context(k: usize, d: usize, h: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::Simulation { scenario: k, day: d, hour: h, source: Box::new(e) }
}

/// Generator for one bundle and seed. C2 noon anchors are precomputed.
pub struct Simulator<'a> {
    bundle: &'a ModelBundle,
    count: usize,
    base: ChaCha8Rng,
    shapes: Vec<(f64, f64, f64)>,
    anchors: Option<Vec<f64>>,
}

impl<'a> Simulator<'a> {
    pub fn new(bundle: &'a ModelBundle, count: usize, seed: u64) -> Result<Self> {
        bundle.validate()?;
        let base = base_rng(seed);
        let shapes = bundle.marginals.shape_table();
        let anchors = match (bundle.variant, bundle.noon) {
            (Variant::C2, Some(noon)) => {
                let per: Vec<Vec<f64>> = (0..count)
                    .into_par_iter()
                    .map(|k| {
                        let mut out = Vec::with_capacity(DAYS);
                        let mut prev = f64::NAN;
                        for d in 1..=DAYS {
                            let v = open_uniform(&mut day_rng(&base, k, d));
                            let u = if d == 1 { v } else { noon.h_inverse(prev, v).map_err(context(k, d, bundle.noon_hour))? };
                            out.push(u);
                            prev = u;
                        }
                        Ok(out)
                    })
                    .collect::<Result<_>>()?;
                Some(per.concat())
            }
            _ => None,
        };
        Ok(Self { bundle, count, base, shapes, anchors })
    }

    /// Noon uniform `u*_d` of scenario `k`.
    pub fn anchor(&self, k: usize, d: usize) -> f64 {
        match &self.anchors {
            Some(a) => a[k * DAYS + d - 1],
            None => open_uniform(&mut day_rng(&self.base, k, d)),
        }
    }

    pub fn simulate_day(&self, k: usize, d: usize) -> Result<DayRow> {
        let mut row = [0.0; HOURS];
        let b = self.bundle;
        let Some((h1, h2)) = b.bounds.daylight.span(d) else {
            return Ok(row);
        };
        let mut rng = day_rng(&self.base, k, d);
        let first = open_uniform(&mut rng);
        let ustar = match &self.anchors {
            Some(a) => a[k * DAYS + d - 1],
            None => first,
        };
        let anchor = b.noon_hour.clamp(h1, h2);
        let mut v = [0.0; HOURS];
        for (h, slot) in v.iter_mut().enumerate().take(h2 + 1).skip(h1) {
            if h != anchor {
                *slot = open_uniform(&mut rng);
            }
        }
        let mut u = [0.0; HOURS];
        u[anchor] = ustar;
        // Every family is exchangeable, so conditioning on the later hour
        // uses the same h-function with the roles swapped.
        for j in (h1..anchor).rev() {
            u[j] = b.intraday[j].h_inverse(u[j + 1], v[j]).map_err(context(k, d, j))?;
        }
        for j in anchor + 1..=h2 {
            u[j] = b.intraday[j - 1].h_inverse(u[j - 1], v[j]).map_err(context(k, d, j))?;
        }
        for h in h1..=h2 {
            let (sa, sb, lnb) = self.shapes[(d - 1) * HOURS + h];
            let x = inv_reg_inc_beta_with(u[h], sa, sb, lnb);
            let (lo, up) = b.bounds.eval(d, h);
            row[h] = (lo + x * (up - lo)).clamp(lo, up);
        }
        Ok(row)
    }
}

impl ScenarioSource for Simulator<'_> {
    fn count(&self) -> usize {
        self.count
    }

    fn day(&self, d: usize) -> Result<Vec<DayRow>> {
        (0..self.count).into_par_iter().map(|k| self.simulate_day(k, d)).collect()
    }
}

/// Materialized scenario years, layout `[scenario][day][hour]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub label: String,
    pub seed: u64,
    pub bundle_id: String,
    pub count: usize,
    pub values: Vec<f64>,
}

impl ScenarioSet {
    pub fn get(&self, k: usize, d: usize, h: usize) -> f64 {
        self.values[k * CELLS + (d - 1) * HOURS + h]
    }

    pub fn scenario(&self, k: usize) -> &[f64] {
        &self.values[k * CELLS..(k + 1) * CELLS]
    }

    /// Rows `scenario,d,h,ghi_whm2` for the scenarios in `range`, with
    /// shortest round-trip float formatting.
    pub fn write_csv(&self, range: std::ops::Range<usize>, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["scenario", "d", "h", "ghi_whm2"])?;
        for k in range {
            for d in 1..=DAYS {
                for h in 0..HOURS {
                    w.write_record([k.to_string(), d.to_string(), h.to_string(), self.get(k, d, h).to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Daily sums, one vector of 365 per scenario.
    pub fn daily_totals(&self) -> Vec<Vec<f64>> {
        (0..self.count).map(|k| self.scenario(k).chunks(HOURS).map(|c| c.iter().sum()).collect()).collect()
    }
}

impl ScenarioSource for ScenarioSet {
    fn count(&self) -> usize {
        self.count
    }

    fn day(&self, d: usize) -> Result<Vec<DayRow>> {
        Ok((0..self.count)
            .map(|k| {
                let start = k * CELLS + (d - 1) * HOURS;
                self.values[start..start + HOURS].try_into().expect("24 hours")
            })
            .collect())
    }
}

pub fn materialize(source: &impl ScenarioSource, label: &str, seed: u64, bundle_id: &str) -> Result<ScenarioSet> {
    let count = source.count();
    let mut values = vec![0.0; count * CELLS];
    for d in 1..=DAYS {
        for (k, row) in source.day(d)?.into_iter().enumerate() {
            let start = k * CELLS + (d - 1) * HOURS;
            values[start..start + HOURS].copy_from_slice(&row);
        }
    }
    Ok(ScenarioSet { label: label.into(), seed, bundle_id: bundle_id.into(), count, values })
}

/// `m` scenario years of a bundle; a pure function of `(bundle, m, seed)`.
pub fn simulate(bundle: &ModelBundle, m: usize, seed: u64) -> Result<ScenarioSet> {
    if m == 0 {
        return Err(Error::InvalidParameter("scenario count must be positive".into()));
    }
    let sim = Simulator::new(bundle, m, seed)?;
    let label = format!("{:?}", bundle.variant);
    materialize(&sim, &label, seed, &bundle.id())
}

/// Historical simulation: every cell drawn uniformly from the learn years
/// at the same `(d, h)`.
pub struct HistoricalSimulation<'a> {
    panel: &'a HourlyPanel,
    count: usize,
    base: ChaCha8Rng,
}

impl<'a> HistoricalSimulation<'a> {
    pub fn new(panel: &'a HourlyPanel, count: usize, seed: u64) -> Self {
        Self { panel, count, base: base_rng(seed) }
    }
}

impl ScenarioSource for HistoricalSimulation<'_> {
    fn count(&self) -> usize {
        self.count
    }

    fn day(&self, d: usize) -> Result<Vec<DayRow>> {
        let n = self.panel.years();
        Ok((0..self.count)
            .map(|k| {
                let mut rng = day_rng(&self.base, k, d);
                let mut row = [0.0; HOURS];
                for (h, slot) in row.iter_mut().enumerate() {
                    let i = ((open_uniform(&mut rng) * n as f64) as usize).min(n - 1);
                    *slot = self.panel.ghi(i, d, h);
                }
                row
            })
            .collect())
    }
}

pub fn benchmark_hs(panel: &HourlyPanel, m: usize, seed: u64) -> ScenarioSet {
    let hs = HistoricalSimulation::new(panel, m, seed);
    materialize(&hs, "HS", seed, "").expect("historical draws cannot fail")
}

/// Splits a daily total over the hours proportionally to the upper-bound
/// profile of that day.
pub fn allocate_day(total: f64, profile: &DayRow, day: usize) -> Result<DayRow> {
    let envelope: f64 = profile.iter().sum();
    if total > envelope * (1.0 + 1e-9) {
        return Err(Error::TotalExceedsEnvelope { day, total, envelope });
    }
    if envelope == 0.0 {
        return Ok([0.0; HOURS]);
    }
    let mut row = [0.0; HOURS];
    for (r, &g) in row.iter_mut().zip(profile) {
        *r = total * g / envelope;
    }
    Ok(row)
}

fn upper_profile(bounds: &BoundsModel, d: usize) -> DayRow {
    let mut p = [0.0; HOURS];
    for (h, slot) in p.iter_mut().enumerate() {
        *slot = bounds.eval(d, h).1;
    }
    p
}

/// Deterministic allocation of the daily totals of another source.
pub struct DeterministicAllocation<'a, S: ScenarioSource> {
    source: &'a S,
    bounds: &'a BoundsModel,
}

impl<'a, S: ScenarioSource> DeterministicAllocation<'a, S> {
    pub fn new(source: &'a S, bounds: &'a BoundsModel) -> Self {
        Self { source, bounds }
    }
}

impl<S: ScenarioSource> ScenarioSource for DeterministicAllocation<'_, S> {
    fn count(&self) -> usize {
        self.source.count()
    }

    fn day(&self, d: usize) -> Result<Vec<DayRow>> {
        let profile = upper_profile(self.bounds, d);
        self.source.day(d)?.iter().map(|row| allocate_day(row.iter().sum(), &profile, d)).collect()
    }
}

/// Remembers the most recent day of a source, so a second consumer of the
/// same day (such as a deterministic allocation) does not regenerate it.
pub struct LastDayCache<'a, S: ScenarioSource> {
    source: &'a S,
    last: std::sync::Mutex<Option<(usize, Vec<DayRow>)>>,
}

impl<'a, S: ScenarioSource> LastDayCache<'a, S> {
    pub fn new(source: &'a S) -> Self {
        Self { source, last: std::sync::Mutex::new(None) }
    }
}

impl<S: ScenarioSource> ScenarioSource for LastDayCache<'_, S> {
    fn count(&self) -> usize {
        self.source.count()
    }

    fn day(&self, d: usize) -> Result<Vec<DayRow>> {
        let mut last = self.last.lock().expect("cache lock");
        if let Some((cached, rows)) = last.as_ref() {
            if *cached == d {
                return Ok(rows.clone());
            }
        }
        let rows = self.source.day(d)?;
        *last = Some((d, rows.clone()));
        Ok(rows)
    }
}

/// Deterministic allocation from explicit daily totals (`m` x 365).
pub fn benchmark_da(daily_totals: &[Vec<f64>], bounds: &BoundsModel) -> Result<ScenarioSet> {
    let count = daily_totals.len();
    let mut values = vec![0.0; count * CELLS];
    for (k, totals) in daily_totals.iter().enumerate() {
        if totals.len() != DAYS {
            return Err(Error::DimensionMismatch { expected: DAYS, got: totals.len() });
        }
        for d in 1..=DAYS {
            let row = allocate_day(totals[d - 1], &upper_profile(bounds, d), d)?;
            let start = k * CELLS + (d - 1) * HOURS;
            values[start..start + HOURS].copy_from_slice(&row);
        }
    }
    Ok(ScenarioSet { label: "DA".into(), seed: 0, bundle_id: String::new(), count, values })
}
