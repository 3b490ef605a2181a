//! Hourly panel ingestion on a fixed 365-day calendar, plus
//! extraterrestrial (top-of-atmosphere) irradiation.
//!
//! Days are 1-based (`1..=365`) and hours 0-based (`0..24`) everywhere in
//! the public API. Feb 29 is dropped at ingestion, so model day 60 is
//! Mar 1 in every year.

use crate::error::{Error, Result};
use chrono::{DateTime, Datelike, NaiveDate, Timelike, Utc};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::ops::{Index, IndexMut};
use std::path::Path;

pub const DAYS: usize = 365;
pub const HOURS: usize = 24;
pub const CELLS: usize = DAYS * HOURS;

/// Solar constant in W/m².
pub const SOLAR_CONSTANT: f64 = 1367.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub name: String,
    /// Degrees north.
    pub latitude: f64,
    /// Degrees east.
    pub longitude: f64,
}

impl Site {
    pub fn new(name: impl Into<String>, latitude: f64, longitude: f64) -> Self {
        Self { name: name.into(), latitude, longitude }
    }
}

/// A value per (day, hour) cell of the model year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    values: Vec<f64>,
}

impl Grid {
    pub fn zeros() -> Self {
        Self { values: vec![0.0; CELLS] }
    }

    pub fn from_fn(mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(CELLS);
        for d in 1..=DAYS {
            for h in 0..HOURS {
                values.push(f(d, h));
            }
        }
        Self { values }
    }

    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        if values.len() != CELLS {
            return Err(Error::DimensionMismatch { expected: CELLS, got: values.len() });
        }
        Ok(Self { values })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// The 24 hourly values of day `d`.
    pub fn day(&self, d: usize) -> &[f64] {
        &self.values[(d - 1) * HOURS..d * HOURS]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { values: self.values.iter().map(|&v| f(v)).collect() }
    }
}

#[inline]
pub fn cell(d: usize, h: usize) -> usize {
    debug_assert!((1..=DAYS).contains(&d) && h < HOURS);
    (d - 1) * HOURS + h
}

impl Index<(usize, usize)> for Grid {
    type Output = f64;
    fn index(&self, (d, h): (usize, usize)) -> &f64 {
        &self.values[cell(d, h)]
    }
}

impl IndexMut<(usize, usize)> for Grid {
    fn index_mut(&mut self, (d, h): (usize, usize)) -> &mut f64 {
        &mut self.values[cell(d, h)]
    }
}

/// Gap-free hourly GHI and TOA over whole model years.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyPanel {
    pub site: Site,
    pub first_year: i32,
    years: usize,
    ghi: Vec<f64>,
    toa: Vec<f64>,
}

impl HourlyPanel {
    /// Builds a panel from year-major arrays of length `years * 8760`.
    pub fn new(site: Site, first_year: i32, ghi: Vec<f64>, toa: Vec<f64>) -> Result<Self> {
        if ghi.is_empty() || ghi.len() % CELLS != 0 {
            return Err(Error::PartialYear(format!("{} values is not a whole number of years", ghi.len())));
        }
        if toa.len() != ghi.len() {
            return Err(Error::DimensionMismatch { expected: ghi.len(), got: toa.len() });
        }
        for (k, (&g, &t)) in ghi.iter().zip(&toa).enumerate() {
            if !(g.is_finite() && g >= 0.0 && t.is_finite() && t >= 0.0) {
                return Err(Error::Parse { line: k + 1, detail: format!("invalid values ghi={g}, toa={t}") });
            }
        }
        let years = ghi.len() / CELLS;
        Ok(Self { site, first_year, years, ghi, toa })
    }

    pub fn years(&self) -> usize {
        self.years
    }

    #[inline]
    fn idx(&self, i: usize, d: usize, h: usize) -> usize {
        debug_assert!(i < self.years);
        i * CELLS + cell(d, h)
    }

    /// GHI in year `i` (0-based), day `d`, hour `h`.
    #[inline]
    pub fn ghi(&self, i: usize, d: usize, h: usize) -> f64 {
        self.ghi[self.idx(i, d, h)]
    }

    #[inline]
    pub fn toa(&self, i: usize, d: usize, h: usize) -> f64 {
        self.toa[self.idx(i, d, h)]
    }

    pub fn ghi_year(&self, i: usize) -> &[f64] {
        &self.ghi[i * CELLS..(i + 1) * CELLS]
    }

    pub fn toa_year(&self, i: usize) -> &[f64] {
        &self.toa[i * CELLS..(i + 1) * CELLS]
    }

    /// Panel restricted to years `start..end` (0-based).
    pub fn slice_years(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.years {
            return Err(Error::IncompleteYears { got: self.years, needed: end });
        }
        Ok(Self {
            site: self.site.clone(),
            first_year: self.first_year + start as i32,
            years: end - start,
            ghi: self.ghi[start * CELLS..end * CELLS].to_vec(),
            toa: self.toa[start * CELLS..end * CELLS].to_vec(),
        })
    }

    /// Per-(d, h) TOA averaged over years.
    pub fn mean_toa(&self) -> Grid {
        let n = self.years as f64;
        Grid::from_fn(|d, h| (0..self.years).map(|i| self.toa(i, d, h)).sum::<f64>() / n)
    }

    /// Daily GHI totals, year-major.
    pub fn daily_ghi(&self) -> Vec<f64> {
        self.ghi.chunks(HOURS).map(|c| c.iter().sum()).collect()
    }

    /// Calendar date and hour for (year `i`, day `d`, hour `h`).
    pub fn timestamp(&self, i: usize, d: usize, h: usize) -> DateTime<Utc> {
        let year = self.first_year + i as i32;
        let leap = NaiveDate::from_ymd_opt(year, 2, 29).is_some();
        let ordinal = if leap && d >= 60 { d + 1 } else { d } as u32;
        NaiveDate::from_yo_opt(year, ordinal)
            .and_then(|date| date.and_hms_opt(h as u32, 0, 0))
            .expect("valid model calendar date")
            .and_utc()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub timestamp: String,
    pub ghi: String,
    pub toa: String,
    /// Slack allowed before a GHI > TOA record is flagged.
    pub toa_slack: f64,
    /// Longest run of missing hours that is interpolated.
    pub max_gap: usize,
    pub site: Site,
}

impl CsvSchema {
    pub fn new(site: Site) -> Self {
        Self {
            timestamp: "timestamp_utc".into(),
            ghi: "ghi_whm2".into(),
            toa: "toa_whm2".into(),
            toa_slack: 0.0,
            max_gap: 3,
            site,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub clamped_negatives: usize,
    /// Input line numbers of records with ghi > toa + slack (kept).
    pub flagged_above_toa: Vec<usize>,
    pub interpolated_hours: usize,
    /// Records with positive GHI while TOA is zero; GHI set to 0.
    pub zeroed_at_night: usize,
    pub dropped_leap_day: usize,
    pub toa_computed: bool,
}

impl CleaningReport {
    pub fn is_clean(&self) -> bool {
        self.clamped_negatives == 0
            && self.flagged_above_toa.is_empty()
            && self.interpolated_hours == 0
            && self.zeroed_at_night == 0
            && self.dropped_leap_day == 0
    }
}

fn is_leap(year: i32) -> bool {
    NaiveDate::from_ymd_opt(year, 2, 29).is_some()
}

/// Model day for a date, or `None` for Feb 29.
pub fn model_day(date: NaiveDate) -> Option<usize> {
    let ord = date.ordinal() as usize;
    if is_leap(date.year()) {
        match ord {
            60 => None,
            o if o > 60 => Some(o - 1),
            o => Some(o),
        }
    } else {
        Some(ord)
    }
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<(HourlyPanel, CleaningReport)> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file, schema)
}

pub fn ingest_reader(reader: impl Read, schema: &CsvSchema) -> Result<(HourlyPanel, CleaningReport)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let ts_col = col(&schema.timestamp).ok_or_else(|| Error::MissingColumn(schema.timestamp.clone()))?;
    let ghi_col = col(&schema.ghi).ok_or_else(|| Error::MissingColumn(schema.ghi.clone()))?;
    let toa_col = col(&schema.toa);

    let mut report = CleaningReport { toa_computed: toa_col.is_none(), ..Default::default() };
    let mut ghi: Vec<f64> = Vec::new();
    let mut toa: Vec<f64> = Vec::new();
    let mut first_year = None;
    let mut last_raw: Option<DateTime<Utc>> = None;
    let mut last_index: Option<i64> = None;

    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |k: usize| rec.get(k).unwrap_or("");
        let ts = DateTime::parse_from_rfc3339(field(ts_col))
            .map_err(|e| Error::Parse { line, detail: format!("timestamp `{}`: {e}", field(ts_col)) })?
            .with_timezone(&Utc);
        if ts.minute() != 0 || ts.second() != 0 || ts.nanosecond() != 0 {
            return Err(Error::NonMonotoneTimestamps { line, detail: format!("{ts} is not on the hour") });
        }
        if let Some(prev) = last_raw {
            if ts <= prev {
                return Err(Error::NonMonotoneTimestamps { line, detail: format!("{ts} does not follow {prev}") });
            }
        }
        last_raw = Some(ts);

        let date = ts.date_naive();
        let Some(d) = model_day(date) else {
            report.dropped_leap_day += 1;
            continue;
        };
        let year0 = *first_year.get_or_insert(date.year());
        let h = ts.hour() as usize;
        let index = (date.year() - year0) as i64 * CELLS as i64 + cell(d, h) as i64;

        let parse = |s: &str, what: &str| -> Result<f64> {
            let v: f64 = s.parse().map_err(|_| Error::Parse { line, detail: format!("{what} `{s}`") })?;
            if v.is_finite() { Ok(v) } else { Err(Error::Parse { line, detail: format!("{what} `{s}` not finite") }) }
        };
        let mut g = parse(field(ghi_col), "ghi")?;
        let t = match toa_col {
            Some(k) => parse(field(k), "toa")?.max(0.0),
            None => compute_toa(&schema.site, d, h),
        };
        if g < 0.0 {
            g = 0.0;
            report.clamped_negatives += 1;
        }
        if t == 0.0 && g > 0.0 {
            g = 0.0;
            report.zeroed_at_night += 1;
        }
        if g > t + schema.toa_slack {
            report.flagged_above_toa.push(line);
        }

        match last_index {
            None => {
                if index != 0 {
                    return Err(Error::PartialYear(format!("data start at {ts}, not Jan 1 00:00")));
                }
            }
            Some(prev) => {
                let missing = (index - prev - 1) as usize;
                if missing > schema.max_gap {
                    return Err(Error::GapTooLarge { line, hours: missing, limit: schema.max_gap });
                }
                let (g0, t0) = (*ghi.last().unwrap(), *toa.last().unwrap());
                for k in 1..=missing {
                    let w = k as f64 / (missing + 1) as f64;
                    let ti = t0 + w * (t - t0);
                    let gi = if ti == 0.0 { 0.0 } else { g0 + w * (g - g0) };
                    ghi.push(gi);
                    toa.push(ti);
                }
                report.interpolated_hours += missing;
            }
        }
        ghi.push(g);
        toa.push(t);
        last_index = Some(index);
    }

    let Some(first_year) = first_year else {
        return Err(Error::EmptyFile);
    };
    if ghi.len() % CELLS != 0 {
        return Err(Error::PartialYear(format!("{} hours after cleaning; data must end on Dec 31 23:00", ghi.len())));
    }
    let panel = HourlyPanel::new(schema.site.clone(), first_year, ghi, toa)?;
    Ok((panel, report))
}

/// Writes the panel in the ingestion schema. Model days map back to real
/// dates, skipping Feb 29.
pub fn export_csv(panel: &HourlyPanel, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp_utc", "ghi_whm2", "toa_whm2"])?;
    for i in 0..panel.years() {
        for d in 1..=DAYS {
            for h in 0..HOURS {
                let ts = panel.timestamp(i, d, h).to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
                w.write_record([ts, panel.ghi(i, d, h).to_string(), panel.toa(i, d, h).to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Solar declination in degrees (Cooper).
pub fn declination_deg(d: usize) -> f64 {
    23.45 * (2.0 * PI * (284.0 + d as f64) / 365.0).sin()
}

/// Equation of time in minutes (Spencer).
pub fn equation_of_time_min(d: usize) -> f64 {
    let b = 2.0 * PI * (d as f64 - 1.0) / 365.0;
    229.18
        * (0.000075 + 0.001868 * b.cos() - 0.032077 * b.sin() - 0.014615 * (2.0 * b).cos()
            - 0.04089 * (2.0 * b).sin())
}

/// Eccentricity correction factor.
pub fn eccentricity(d: usize) -> f64 {
    1.0 + 0.033 * (2.0 * PI * d as f64 / 365.0).cos()
}

/// Hour angle in degrees at UTC time `t_utc` (hours) on day `d`.
pub fn hour_angle_deg(site: &Site, d: usize, t_utc: f64) -> f64 {
    let solar = t_utc + site.longitude / 15.0 + equation_of_time_min(d) / 60.0;
    15.0 * (solar - 12.0)
}

/// Hourly extraterrestrial horizontal irradiation (Wh/m²) over
/// `[h, h+1)` UTC on model day `d`.
pub fn compute_toa(site: &Site, d: usize, h: usize) -> f64 {
    let phi = site.latitude.to_radians();
    let delta = declination_deg(d).to_radians();
    let c = -phi.tan() * delta.tan();
    let ws = if c <= -1.0 {
        180.0
    } else if c >= 1.0 {
        return 0.0;
    } else {
        c.acos().to_degrees()
    };
    let scale = 12.0 / PI * SOLAR_CONSTANT * eccentricity(d);
    let piece = |w1: f64, w2: f64| -> f64 {
        let (a, b) = (w1.max(-ws), w2.min(ws));
        if b <= a {
            return 0.0;
        }
        phi.cos() * delta.cos() * (b.to_radians().sin() - a.to_radians().sin())
            + PI * (b - a) / 180.0 * phi.sin() * delta.sin()
    };
    let w1 = (hour_angle_deg(site, d, h as f64) + 180.0).rem_euclid(360.0) - 180.0;
    let w2 = w1 + 15.0;
    let total = if w2 > 180.0 { piece(w1, 180.0) + piece(-180.0, w2 - 360.0) } else { piece(w1, w2) };
    (scale * total).max(0.0)
}

/// TOA grid for one model year at a site.
pub fn toa_grid(site: &Site) -> Grid {
    Grid::from_fn(|d, h| compute_toa(site, d, h))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn siegen() -> Site {
        Site::new("Siegen", 50.9, 8.0)
    }

    fn instantaneous(site: &Site, d: usize, t: f64) -> f64 {
        let phi = site.latitude.to_radians();
        let delta = declination_deg(d).to_radians();
        let w = hour_angle_deg(site, d, t).to_radians();
        let cosz = phi.sin() * delta.sin() + phi.cos() * delta.cos() * w.cos();
        (SOLAR_CONSTANT * eccentricity(d) * cosz).max(0.0)
    }

    #[test]
    fn toa_zero_at_night() {
        assert_eq!(compute_toa(&siegen(), 355, 0), 0.0);
    }

    #[test]
    fn toa_symmetric_about_solar_noon() {
        let d = 81;
        let site = Site::new("eq", 0.0, -equation_of_time_min(d) / 4.0);
        for k in 0..6 {
            let a = compute_toa(&site, d, 11 - k);
            let b = compute_toa(&site, d, 12 + k);
            assert!((a - b).abs() < 0.5, "k={k}: {a} vs {b}");
        }
    }

    #[test]
    fn toa_matches_midpoint_integration() {
        let s = siegen();
        for &(d, h) in &[(172, 12), (172, 4), (172, 19), (355, 8), (80, 15)] {
            let n = 20_000;
            let oracle: f64 = (0..n).map(|k| instantaneous(&s, d, h as f64 + (k as f64 + 0.5) / n as f64)).sum::<f64>() / n as f64;
            let got = compute_toa(&s, d, h);
            if oracle > 1.0 {
                assert!((got - oracle).abs() / oracle < 0.01, "d={d} h={h}: {got} vs {oracle}");
            } else {
                assert!(got < 1.0);
            }
        }
    }

    #[test]
    fn toa_summer_exceeds_winter() {
        let s = siegen();
        assert!(compute_toa(&s, 172, 12) > compute_toa(&s, 355, 12));
        let polar = Site::new("north", 80.0, 0.0);
        assert!(compute_toa(&polar, 172, 0) > 0.0);
        assert_eq!(compute_toa(&polar, 355, 12), 0.0);
    }

    fn synthetic(years: usize) -> HourlyPanel {
        let s = siegen();
        let toa = toa_grid(&s);
        let mut g = Vec::new();
        let mut t = Vec::new();
        for i in 0..years {
            for k in 0..CELLS {
                t.push(toa.as_slice()[k]);
                g.push(toa.as_slice()[k] * (0.3 + 0.05 * ((k + i * 7) % 9) as f64));
            }
        }
        HourlyPanel::new(s, 2005, g, t).unwrap()
    }

    fn to_csv(p: &HourlyPanel) -> String {
        let mut buf = Vec::new();
        export_csv(p, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    fn ingest_str(s: &str) -> Result<(HourlyPanel, CleaningReport)> {
        ingest_reader(s.as_bytes(), &CsvSchema::new(siegen()))
    }

    #[test]
    fn clean_two_years_pass_through() {
        let p = synthetic(2);
        let (q, rep) = ingest_str(&to_csv(&p)).unwrap();
        assert_eq!(q.years(), 2);
        assert_eq!(q.ghi_year(0).len() + q.ghi_year(1).len(), 2 * 365 * 24);
        assert!(rep.is_clean(), "{rep:?}");
        assert_eq!(q, p);
    }

    #[test]
    fn leap_year_round_trip_drops_feb_29() {
        let p = synthetic(2).slice_years(0, 2).unwrap();
        let p = HourlyPanel { first_year: 2008, ..p };
        let csv = to_csv(&p);
        assert!(!csv.contains("2008-02-29"));
        let (q, rep) = ingest_str(&csv).unwrap();
        assert_eq!(q, p);
        assert!(rep.is_clean());

        // a source that does include Feb 29 has it dropped
        let mut lines: Vec<String> = csv.lines().map(String::from).collect();
        let pos = lines.iter().position(|l| l.starts_with("2008-03-01T00")).unwrap();
        for h in (0..24).rev() {
            lines.insert(pos, format!("2008-02-29T{h:02}:00:00Z,1,2"));
        }
        let (q, rep) = ingest_str(&lines.join("\n")).unwrap();
        assert_eq!(rep.dropped_leap_day, 24);
        assert_eq!(q, p);
    }

    #[test]
    fn negative_ghi_is_clamped_and_counted() {
        let p = synthetic(1);
        let csv = to_csv(&p);
        let mut lines: Vec<String> = csv.lines().map(String::from).collect();
        let cols: Vec<&str> = lines[13].split(',').collect();
        lines[13] = format!("{},-3,{}", cols[0], cols[2]);
        let (q, rep) = ingest_str(&lines.join("\n")).unwrap();
        assert_eq!(rep.clamped_negatives, 1);
        assert_eq!(q.ghi(0, 1, 12), 0.0);
    }

    #[test]
    fn night_gap_is_filled_with_zero() {
        let p = synthetic(1);
        let csv = to_csv(&p);
        let lines: Vec<&str> = csv.lines().collect();
        // hours 1 and 2 of day 10 are dark in Siegen
        assert_eq!(p.toa(0, 10, 1), 0.0);
        let skip = [1 + cell(10, 1), 1 + cell(10, 2)];
        let kept: Vec<&str> = lines.iter().enumerate().filter(|(k, _)| !skip.contains(k)).map(|(_, l)| *l).collect();
        let (q, rep) = ingest_str(&kept.join("\n")).unwrap();
        assert_eq!(rep.interpolated_hours, 2);
        assert_eq!(q.ghi(0, 10, 1), 0.0);
        assert_eq!(q.ghi(0, 10, 2), 0.0);
    }

    #[test]
    fn ingestion_errors() {
        let p = synthetic(1);
        let csv = to_csv(&p);
        assert!(matches!(ingest_str("timestamp_utc,ghi_whm2,toa_whm2\n"), Err(Error::EmptyFile)));
        assert!(matches!(ingest_str("timestamp_utc,toa_whm2\n"), Err(Error::MissingColumn(c)) if c == "ghi_whm2"));

        let lines: Vec<&str> = csv.lines().collect();
        let gap: Vec<&str> = lines.iter().enumerate().filter(|(k, _)| !(100..104).contains(k)).map(|(_, l)| *l).collect();
        assert!(matches!(ingest_str(&gap.join("\n")), Err(Error::GapTooLarge { hours: 4, .. })));

        let mut swapped: Vec<&str> = lines.clone();
        swapped.swap(50, 51);
        assert!(matches!(ingest_str(&swapped.join("\n")), Err(Error::NonMonotoneTimestamps { .. })));

        let truncated = lines[..lines.len() - 1].join("\n");
        assert!(matches!(ingest_str(&truncated), Err(Error::PartialYear(_))));
    }

    #[test]
    fn missing_toa_column_falls_back_to_computed() {
        let p = synthetic(1);
        let csv = to_csv(&p);
        let stripped: Vec<String> = csv
            .lines()
            .enumerate()
            .map(|(k, l)| {
                let c: Vec<&str> = l.split(',').collect();
                if k == 0 { "timestamp_utc,ghi_whm2".to_string() } else { format!("{},{}", c[0], c[1]) }
            })
            .collect();
        let (q, rep) = ingest_str(&stripped.join("\n")).unwrap();
        assert!(rep.toa_computed);
        assert_eq!(q.toa(0, 172, 12), compute_toa(&siegen(), 172, 12));
    }

    #[test]
    fn above_toa_rows_are_flagged_not_dropped() {
        let p = synthetic(1);
        let csv = to_csv(&p);
        let mut lines: Vec<String> = csv.lines().map(String::from).collect();
        let k = 1 + cell(172, 12);
        let cols: Vec<String> = lines[k].split(',').map(String::from).collect();
        let t: f64 = cols[2].parse().unwrap();
        lines[k] = format!("{},{},{}", cols[0], t + 10.0, cols[2]);
        let (q, rep) = ingest_str(&lines.join("\n")).unwrap();
        assert_eq!(rep.flagged_above_toa.len(), 1);
        assert_eq!(q.ghi(0, 172, 12), t + 10.0);
    }
}
