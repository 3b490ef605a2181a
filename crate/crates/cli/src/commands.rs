use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use ghi_core::artifact::{short_hash, Artifact};
use ghi_core::calendar::{export_csv, ingest_csv, CsvSchema, CELLS, HOURS};
use ghi_core::copula::{default_q_grid, empirical_dependence, DEFAULT_TAIL_Q};
use ghi_core::daily::{daily_series, fit_daily, DailyModel};
use ghi_core::dependence::{DependenceFit, PitPanel};
use ghi_core::marginals::intensity;
use ghi_core::pipeline::{fit_daylight, fit_on_bounds};
use ghi_core::scenario::{materialize, DeterministicAllocation, HistoricalSimulation, Simulator};
use ghi_core::synthetic::{generate_panel, truth_bundle, SyntheticConfig};
use ghi_core::{evaluate, BoundsModel, HourlyPanel, MarginalModel, ModelBundle, Regime, ScenarioSet, ScenarioSource, DAYS};

use crate::config::{parse_family, parse_variant, RunConfig};

pub const CHUNK: usize = 1000;
const BOUNDS: &str = "bounds";
const MARGINALS: &str = "marginals";
const COPULAS: &str = "copulas";
const DAILY: &str = "daily";

/// Input that is present but unusable (mixed scenario sets, short files).
#[derive(Debug)]
pub struct DataError(pub String);

impl std::fmt::Display for DataError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "data error: {}", self.0)
    }
}

impl std::error::Error for DataError {}

#[derive(Debug)]
pub struct SeedMissing;

impl std::fmt::Display for SeedMissing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: simulate requires an explicit seed (--seed or `seed` in the config)")
    }
}

impl std::error::Error for SeedMissing {}

pub struct Run {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub hash: String,
}

impl Run {
    pub fn new(cfg: RunConfig, out: Option<PathBuf>, seed: Option<u64>) -> Self {
        let hash = cfg.hash();
        let out = out.unwrap_or_else(|| cfg.out.clone());
        let seed = seed.or(cfg.seed);
        Self { cfg, out, seed, hash }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn artifact_path(&self, kind: &str) -> PathBuf {
        self.path(&format!("{kind}.model"))
    }

    fn load<T: Serialize + for<'de> Deserialize<'de>>(&self, kind: &str) -> Result<T> {
        let p = self.artifact_path(kind);
        Ok(Artifact::<T>::load(kind, &p).with_context(|| format!("load artifact {}", p.display()))?.payload)
    }

    /// Digest of the fitted artifacts; scenario sets built from different
    /// fits carry different values.
    fn fit_hash(&self) -> Result<String> {
        let mut bytes = Vec::new();
        for kind in [BOUNDS, MARGINALS, COPULAS] {
            let p = self.artifact_path(kind);
            bytes.extend(fs::read(&p).with_context(|| format!("artifact {} missing; run `ghi fit` first", p.display()))?);
        }
        Ok(short_hash(&bytes))
    }

    fn panel(&self) -> Result<HourlyPanel> {
        let data = self.cfg.data.as_ref().ok_or_else(|| crate::config::ConfigError("`data` is not set".into()))?;
        let (panel, report) = ingest_csv(data, &CsvSchema::new(self.cfg.site())).with_context(|| format!("ingest {}", data.display()))?;
        if !report.is_clean() {
            info!("ingest cleaning: {report:?}");
        }
        Ok(panel)
    }

    fn learn_test(&self) -> Result<(HourlyPanel, HourlyPanel)> {
        let panel = self.panel()?;
        let (learn, _) = self.cfg.split(panel.years())?;
        Ok((panel.slice_years(0, learn)?, panel.slice_years(learn, panel.years())?))
    }

    fn write_meta(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        let mut meta = serde_json::json!({ "config_hash": self.hash, "file": path.file_name().map(|f| f.to_string_lossy().into_owned()) });
        if let (Some(m), serde_json::Value::Object(e)) = (meta.as_object_mut(), extra) {
            m.extend(e);
        }
        let side = PathBuf::from(format!("{}.meta.json", path.display()));
        fs::write(&side, serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }
}

pub fn synth(run: &Run) -> Result<()> {
    let seed = run.seed.ok_or(SeedMissing)?;
    fs::create_dir_all(&run.out)?;
    let scfg = SyntheticConfig { site: run.cfg.site(), ..SyntheticConfig::default() };
    let truth = truth_bundle(&scfg).context("synth: truth bundle")?;
    let panel = generate_panel(&truth, &scfg.site, 2005, run.cfg.synthetic_years, seed).context("synth: generate")?;
    let csv = run.path("synthetic.csv");
    export_csv(&panel, fs::File::create(&csv)?)?;
    run.write_meta(&csv, serde_json::json!({ "seed": seed, "years": run.cfg.synthetic_years, "truth_bundle": truth.id() }))?;
    Artifact::new("truth", &run.hash, (scfg, truth)).save(&run.path("truth.model"))?;
    info!("wrote {} years to {}", panel.years(), csv.display());
    Ok(())
}

struct Written(Vec<PathBuf>);

impl Written {
    fn save<T: Serialize>(&mut self, run: &Run, kind: &str, payload: T) -> Result<()> {
        let p = run.artifact_path(kind);
        self.0.push(p.clone());
        Artifact::new(kind, &run.hash, payload).save(&p)?;
        Ok(())
    }
}

pub fn fit(run: &Run) -> Result<()> {
    fs::create_dir_all(&run.out)?;
    let mut written = Written(Vec::new());
    let result = fit_inner(run, &mut written);
    if result.is_err() {
        for p in &written.0 {
            let _ = fs::remove_file(p);
        }
    }
    result
}

fn fit_inner(run: &Run, written: &mut Written) -> Result<()> {
    let (learn, _) = run.learn_test()?;
    let fc = run.cfg.fit_config();
    info!("fitting on {} learn years", learn.years());
    let (means, daylight) = fit_daylight(&learn, &fc).context("fit: seasonal means")?;
    let bounds = BoundsModel::fit(&learn, &daylight, &fc.bounds).context("fit: bounds")?;
    let model = fit_on_bounds(&learn, bounds, &means, &fc).context("fit: marginals and copulas")?;
    let (daily, toa_daily) = daily_series(&learn);
    let dailies = [Regime::M1, Regime::M2, Regime::M3]
        .into_iter()
        .map(|r| fit_daily(&daily, r, &toa_daily, Some(&model.bounds)).with_context(|| format!("fit: daily {r:?}")))
        .collect::<Result<Vec<DailyModel>>>()?;

    let log = fit_log(run, &model, &dailies);
    written.save(run, BOUNDS, &model.bounds)?;
    written.save(run, MARGINALS, &model.marginals)?;
    written.save(run, COPULAS, &model.dependence)?;
    written.save(run, DAILY, &dailies)?;
    let log_path = run.path("fit.log");
    written.0.push(log_path.clone());
    fs::write(&log_path, log)?;
    info!("artifacts written to {}", run.out.display());
    Ok(())
}

fn fit_log(run: &Run, model: &ghi_core::FittedModel, dailies: &[DailyModel]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "config_hash {}", run.hash);
    let e = &model.envelope;
    let _ = writeln!(s, "envelope violations {} ({e:?})", e.violations());
    let _ = writeln!(s, "clipped intensities {}", model.clipped);
    let b = &model.bounds;
    if let Some(u) = &b.upper {
        let _ = writeln!(s, "upper tail sigma {:.6} xi {:.6} endpoint {:.6}", u.gpd.sigma, u.gpd.xi, u.gpd.endpoint().unwrap_or(f64::NAN));
    }
    if let Some(l) = &b.lower {
        let _ = writeln!(s, "lower tail sigma {:.6} xi {:.6} endpoint {:.6}", l.gpd.sigma, l.gpd.xi, l.gpd.endpoint().unwrap_or(f64::NAN));
    }
    let _ = writeln!(s, "\nhour zeta0 zeta1 theta0 theta1 n borrowed");
    for m in model.marginals.hours.iter().flatten() {
        let c = m.coefficients.as_array();
        let _ = writeln!(s, "{:>4} {:.6} {:.6e} {:.6} {:.6e} {} {:?}", m.hour, c[0], c[1], c[2], c[3], m.n_obs, m.borrowed_from);
    }
    for dep in &model.dependence {
        let _ = writeln!(s, "\n{} pair n params lambda_l lambda_u emp_l emp_u boundary", dep.family.name());
        let rows = dep.intraday.iter().enumerate().map(|(h, p)| (format!("{h}-{}", h + 1), p)).chain([("noon".to_string(), &dep.noon)]);
        for (tag, p) in rows {
            let (el, eu) = p.tail.unwrap_or((f64::NAN, f64::NAN));
            let _ = writeln!(
                s,
                "{tag:>6} {:>6} {} {:.4} {:.4} {el:.4} {eu:.4} {}",
                p.n,
                serde_json::to_string(&p.copula).unwrap_or_default(),
                p.copula.lambda_lower(),
                p.copula.lambda_upper(),
                p.boundary
            );
        }
    }
    let _ = writeln!(s, "\nregime phi theta sn_location sn_scale sn_shape ljung_box_p");
    for d in dailies {
        let i = d.innovation;
        let _ = writeln!(
            s,
            "{:?} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4}",
            d.regime, d.arma.phi, d.arma.theta, i.location, i.scale, i.shape, d.ljung_box.p_value
        );
    }
    s
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioMeta {
    pub label: String,
    pub seed: u64,
    pub bundle_hash: String,
    pub fit_hash: String,
    pub variant: Option<String>,
    pub family: Option<String>,
    pub config_hash: String,
    pub count: usize,
    pub chunks: Vec<String>,
}

fn bundle(run: &Run, family: &str, variant: &str) -> Result<ModelBundle> {
    let bounds: BoundsModel = run.load(BOUNDS)?;
    let marginals: MarginalModel = run.load(MARGINALS)?;
    let deps: Vec<DependenceFit> = run.load(COPULAS)?;
    let fam = parse_family(family)?;
    let dep = deps.iter().find(|d| d.family == fam).ok_or_else(|| DataError(format!("no {family} copulas in the artifacts")))?;
    let b = ModelBundle {
        bounds,
        marginals,
        intraday: dep.intraday_copulas(),
        noon: Some(dep.noon.copula),
        noon_hour: dep.noon_hour,
        variant: parse_variant(variant)?,
    };
    b.validate()?;
    Ok(b)
}

pub fn simulate(run: &Run, model: Option<&str>) -> Result<()> {
    let seed = run.seed.ok_or(SeedMissing)?;
    let m = run.cfg.scenarios;
    let default = format!("{:?}-{}", parse_variant(&run.cfg.variant)?, run.cfg.family.to_ascii_lowercase());
    let label = model.map(str::to_string).unwrap_or(default.clone());
    let fit_hash = run.fit_hash()?;
    info!("simulating {m} scenario years of {label} with seed {seed}");
    let (set, variant, family) = match label.to_ascii_uppercase().as_str() {
        "HS" => {
            let (learn, _) = run.learn_test()?;
            let id = format!("hs-{}", short_hash(&bytes_of(&learn)));
            (materialize(&HistoricalSimulation::new(&learn, m, seed), "HS", seed, &id)?, None, None)
        }
        "DA" => {
            let (v, f) = (run.cfg.variant.clone(), run.cfg.family.clone());
            let b = bundle(run, &f, &v)?;
            let sim = Simulator::new(&b, m, seed).context("simulate: DA source")?;
            (materialize(&DeterministicAllocation::new(&sim, &b.bounds), "DA", seed, &b.id()).context("simulate: DA")?, Some(v), Some(f))
        }
        _ => {
            let (v, f) = label.split_once('-').ok_or_else(|| crate::config::ConfigError(format!("model '{label}' is not HS, DA or <variant>-<family>")))?;
            let b = bundle(run, f, v)?;
            let sim = Simulator::new(&b, m, seed).context("simulate")?;
            (materialize(&sim, &label, seed, &b.id()).context("simulate")?, Some(v.to_string()), Some(f.to_string()))
        }
    };
    let dir = run.path("scenarios").join(&label);
    fs::create_dir_all(&dir)?;
    let mut chunks = Vec::new();
    for (c, start) in (0..m).step_by(CHUNK).enumerate() {
        let name = format!("part-{c:03}.csv");
        set.write_csv(start..(start + CHUNK).min(m), fs::File::create(dir.join(&name))?)?;
        chunks.push(name);
    }
    let meta = ScenarioMeta {
        label,
        seed,
        bundle_hash: set.bundle_id.clone(),
        fit_hash,
        variant,
        family,
        config_hash: run.hash.clone(),
        count: m,
        chunks,
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    info!("wrote {}", dir.display());
    Ok(())
}

fn bytes_of(panel: &HourlyPanel) -> Vec<u8> {
    (0..panel.years()).flat_map(|i| panel.ghi_year(i).iter().flat_map(|v| v.to_le_bytes())).collect()
}

pub fn read_set(dir: &Path) -> Result<(ScenarioMeta, ScenarioSet)> {
    let meta: ScenarioMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json")).with_context(|| format!("scenario set {}", dir.display()))?)?;
    let mut values = vec![f64::NAN; meta.count * CELLS];
    let mut rows = 0usize;
    for name in &meta.chunks {
        let mut r = csv::Reader::from_path(dir.join(name)).with_context(|| format!("{}/{name}", dir.display()))?;
        for rec in r.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).ok_or_else(|| DataError(format!("{name}: short row")));
            let k: usize = field(0)?.parse()?;
            let d: usize = field(1)?.parse()?;
            let h: usize = field(2)?.parse()?;
            let g: f64 = field(3)?.parse()?;
            if k >= meta.count || !(1..=DAYS).contains(&d) || h >= HOURS {
                bail!(DataError(format!("{name}: row ({k}, {d}, {h}) outside the set")));
            }
            values[k * CELLS + (d - 1) * HOURS + h] = g;
            rows += 1;
        }
    }
    if rows != meta.count * CELLS || values.iter().any(|v| v.is_nan()) {
        bail!(DataError(format!("{}: {rows} rows for {} scenario years", dir.display(), meta.count)));
    }
    let set = ScenarioSet { label: meta.label.clone(), seed: meta.seed, bundle_id: meta.bundle_hash.clone(), count: meta.count, values };
    Ok((meta, set))
}

fn scenario_dirs(run: &Run, sets: &[PathBuf]) -> Result<Vec<PathBuf>> {
    if !sets.is_empty() {
        return Ok(sets.to_vec());
    }
    let root = run.path("scenarios");
    let mut dirs: Vec<PathBuf> = fs::read_dir(&root)
        .with_context(|| format!("no scenario sets under {}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("meta.json").exists())
        .collect();
    dirs.sort();
    Ok(dirs)
}

pub fn score(run: &Run, sets: &[PathBuf], allow_mixed: bool) -> Result<()> {
    let dirs = scenario_dirs(run, sets)?;
    if dirs.is_empty() {
        bail!(DataError("no scenario sets to score".into()));
    }
    let loaded = dirs.iter().map(|d| read_set(d)).collect::<Result<Vec<_>>>()?;
    let fit_hashes: std::collections::BTreeSet<&str> = loaded.iter().map(|(m, _)| m.fit_hash.as_str()).collect();
    if fit_hashes.len() > 1 && !allow_mixed {
        bail!(DataError(format!("scenario sets come from different fits {fit_hashes:?}; pass --allow-mixed to score them together")));
    }
    let mut names: Vec<String> = Vec::new();
    for (m, _) in &loaded {
        let mut name = m.label.clone();
        let mut k = 2;
        while names.contains(&name) {
            name = format!("{}#{k}", m.label);
            k += 1;
        }
        names.push(name);
    }
    let (_, test) = run.learn_test()?;
    let bounds: BoundsModel = run.load(BOUNDS)?;
    let models: Vec<(&str, &dyn ScenarioSource)> = names.iter().zip(&loaded).map(|(n, (_, s))| (n.as_str(), s as &dyn ScenarioSource)).collect();
    info!("scoring {} sets on {} test years", models.len(), test.years());
    let rep = evaluate(&models, &test, &bounds, &run.cfg.eval_config()).context("score")?;
    let csv_path = run.path("scores.csv");
    rep.write_csv(fs::File::create(&csv_path)?)?;
    run.write_meta(&csv_path, serde_json::json!({ "reference": rep.reference, "sets": names, "fit_hashes": fit_hashes }))?;
    fs::write(run.path("scores.txt"), rep.table())?;
    print!("{}", rep.table());
    Ok(())
}

pub fn report(run: &Run) -> Result<()> {
    let bounds: BoundsModel = run.load(BOUNDS)?;
    let marginals: MarginalModel = run.load(MARGINALS)?;
    let deps: Vec<DependenceFit> = run.load(COPULAS)?;

    let env = run.path("envelope.csv");
    {
        let mut w = csv::Writer::from_path(&env)?;
        w.write_record(["d", "h", "g_lower", "g_upper", "toa"])?;
        for d in 1..=DAYS {
            for h in 0..HOURS {
                let (lo, up) = bounds.eval(d, h);
                w.write_record([d.to_string(), h.to_string(), lo.to_string(), up.to_string(), bounds.toa[(d, h)].to_string()])?;
            }
        }
        w.flush()?;
    }
    run.write_meta(&env, serde_json::json!({ "kind": "envelope" }))?;

    let table = run.path("copula_table.csv");
    {
        let mut w = csv::Writer::from_path(&table)?;
        w.write_record(["family", "pair", "n", "copula", "lambda_lower", "lambda_upper", "empirical_lower", "empirical_upper", "kendall_tau"])?;
        for dep in &deps {
            let rows = dep.intraday.iter().enumerate().map(|(h, p)| (format!("{h}-{}", h + 1), p)).chain([("noon".to_string(), &dep.noon)]);
            for (tag, p) in rows {
                let (el, eu) = p.tail.map_or((String::new(), String::new()), |(a, b)| (a.to_string(), b.to_string()));
                w.write_record([
                    dep.family.name().to_string(),
                    tag,
                    p.n.to_string(),
                    serde_json::to_string(&p.copula)?,
                    p.copula.lambda_lower().to_string(),
                    p.copula.lambda_upper().to_string(),
                    el,
                    eu,
                    p.copula.kendall_tau().to_string(),
                ])?;
            }
        }
        w.flush()?;
    }
    run.write_meta(&table, serde_json::json!({ "kind": "copula_table" }))?;

    let (learn, _) = run.learn_test()?;
    let pits = PitPanel::new(&intensity(&learn, &bounds), &marginals).context("report: PIT")?;
    let noon = deps.first().map_or(ghi_core::scenario::NOON, |d| d.noon_hour);
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed.unwrap_or(0));
    for (name, (u, v)) in [
        (format!("quantile_dependence_{}-{}.csv", noon - 1, noon), pits.intraday_pairs(&bounds.daylight, noon - 1)),
        ("quantile_dependence_noon.csv".to_string(), pits.day_pairs(noon)),
    ] {
        let diag = empirical_dependence(&u, &v, &default_q_grid(), DEFAULT_TAIL_Q, 500, &mut rng);
        let p = run.path(&name);
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(["q", "lambda_hat", "band_lo", "band_hi"])?;
        for r in &diag.rows {
            w.write_record([r.q, r.lambda, r.band_lo, r.band_hi].map(|x| x.to_string()))?;
        }
        w.flush()?;
        run.write_meta(&p, serde_json::json!({ "kind": "quantile_dependence", "n": u.len() }))?;
    }

    if let Ok(dirs) = scenario_dirs(run, &[]) {
        let p = run.path("paths.csv");
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(["set", "scenario", "d", "daily_total"])?;
        for dir in dirs {
            let (meta, set) = read_set(&dir)?;
            for k in 0..set.count.min(5) {
                for (d, t) in set.scenario(k).chunks(HOURS).map(|c| c.iter().sum::<f64>()).enumerate() {
                    w.write_record([meta.label.clone(), k.to_string(), (d + 1).to_string(), t.to_string()])?;
                }
            }
        }
        w.flush()?;
        run.write_meta(&p, serde_json::json!({ "kind": "paths" }))?;
    }
    info!("report written to {}", run.out.display());
    Ok(())
}
