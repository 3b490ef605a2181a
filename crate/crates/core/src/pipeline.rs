//! End-to-end fit: seasonal means, daylight, envelope, marginals and the
//! Markov-tree copulas for each requested family.

use serde::{Deserialize, Serialize};

use crate::bounds::{BoundsConfig, BoundsModel, Daylight, EnvelopeReport};
use crate::calendar::HourlyPanel;
use crate::copula::Family;
use crate::dependence::{fit_dependence, DependenceFit, PitPanel};
use crate::marginals::{intensity, MarginalModel};
use crate::scenario::{ModelBundle, Variant, NOON};
use crate::seasonal::HourlyMeans;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub mean_p: usize,
    pub mean_q: usize,
    /// Cells with fitted mean GHI above this (Wh/m²) are daylight.
    pub daylight_threshold: f64,
    pub bounds: BoundsConfig,
    pub noon_hour: usize,
    pub families: Vec<Family>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            mean_p: 2,
            mean_q: 2,
            daylight_threshold: 5.0,
            bounds: BoundsConfig::default(),
            noon_hour: NOON,
            families: vec![Family::Gumbel, Family::Gaussian, Family::Bb1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub bounds: BoundsModel,
    pub marginals: MarginalModel,
    pub dependence: Vec<DependenceFit>,
    pub envelope: EnvelopeReport,
    pub clipped: usize,
}

impl FittedModel {
    pub fn dependence_for(&self, family: Family) -> Option<&DependenceFit> {
        self.dependence.iter().find(|d| d.family == family)
    }

    pub fn bundle(&self, family: Family, variant: Variant) -> Result<ModelBundle> {
        let dep = self
            .dependence_for(family)
            .ok_or_else(|| Error::IncompleteBundle(format!("no {family:?} copulas fitted")))?;
        Ok(ModelBundle {
            bounds: self.bounds.clone(),
            marginals: self.marginals.clone(),
            intraday: dep.intraday_copulas(),
            noon: Some(dep.noon.copula),
            noon_hour: dep.noon_hour,
            variant,
        })
    }
}

pub fn fit_daylight(panel: &HourlyPanel, cfg: &FitConfig) -> Result<(HourlyMeans, Daylight)> {
    let means = HourlyMeans::fit(panel, cfg.mean_p, cfg.mean_q)?;
    let daylight = Daylight::from_means_and_toa(&means, &panel.mean_toa(), cfg.daylight_threshold);
    Ok((means, daylight))
}

/// Fits the marginals and copulas on a given envelope.
pub fn fit_on_bounds(panel: &HourlyPanel, bounds: BoundsModel, means: &HourlyMeans, cfg: &FitConfig) -> Result<FittedModel> {
    let intens = intensity(panel, &bounds);
    let marginals = MarginalModel::fit(&intens, means, &bounds.daylight)?;
    let pits = PitPanel::new(&intens, &marginals)?;
    let dependence = cfg
        .families
        .iter()
        .map(|&f| fit_dependence(&pits, &bounds.daylight, f, cfg.noon_hour))
        .collect::<Result<Vec<_>>>()?;
    let envelope = bounds.check_envelope(panel);
    Ok(FittedModel { bounds, marginals, dependence, envelope, clipped: intens.clipped() })
}

pub fn fit_all(panel: &HourlyPanel, cfg: &FitConfig) -> Result<FittedModel> {
    let (means, daylight) = fit_daylight(panel, cfg)?;
    let bounds = BoundsModel::fit(panel, &daylight, &cfg.bounds)?;
    fit_on_bounds(panel, bounds, &means, cfg)
}
