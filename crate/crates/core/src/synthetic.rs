//! Known-truth generator: a C2 bundle with a TOA-proportional envelope,
//! seasonal beta marginals and Gumbel dependence peaking at noon.

use serde::{Deserialize, Serialize};

use crate::bounds::{BoundsModel, Daylight};
use crate::calendar::{toa_grid, Grid, HourlyPanel, Site, CELLS, HOURS};
use crate::copula::Copula;
use crate::marginals::{BetaCoefficients, HourMarginal, MarginalModel};
use crate::scenario::{simulate, ModelBundle, Variant, NOON};
use crate::seasonal::HourlyMeans;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub site: Site,
    /// Cells with TOA above this are daylight (Wh/m²).
    pub toa_min: f64,
    pub upper_frac: f64,
    pub lower_frac: f64,
    /// The mean covariate is a Fourier fit of `mean_frac * TOA`.
    pub mean_frac: f64,
    pub zeta: [f64; 2],
    pub theta: [f64; 2],
    /// Intraday Gumbel parameter `base + peak * exp(-((h + 0.5 - noon) / width)^2)`.
    pub theta_base: f64,
    pub theta_peak: f64,
    pub theta_width: f64,
    pub noon_theta: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            site: Site::new("synthetic", 50.9, 8.0),
            toa_min: 0.0,
            upper_frac: 0.78,
            lower_frac: 0.04,
            mean_frac: 0.45,
            zeta: [-0.3, 0.002],
            theta: [0.7, 0.001],
            theta_base: 1.4,
            theta_peak: 1.6,
            theta_width: 3.0,
            noon_theta: 1.5,
        }
    }
}

impl SyntheticConfig {
    /// True Gumbel parameter of the pair `(h, h + 1)`.
    pub fn intraday_theta(&self, h: usize) -> f64 {
        let z = (h as f64 + 0.5 - NOON as f64) / self.theta_width;
        self.theta_base + self.theta_peak * (-z * z).exp()
    }

    pub fn coefficients(&self) -> BetaCoefficients {
        BetaCoefficients { zeta: self.zeta, theta: self.theta }
    }
}

/// The generating C2-Gumbel bundle.
pub fn truth_bundle(cfg: &SyntheticConfig) -> Result<ModelBundle> {
    let toa = toa_grid(&cfg.site);
    let daylight = Daylight::from_grid(&toa, cfg.toa_min);
    let envelope = |frac: f64| Grid::from_fn(|d, h| if daylight.is_day(d, h) { frac * toa[(d, h)] } else { 0.0 });
    let bounds = BoundsModel::from_grids(envelope(cfg.lower_frac), envelope(cfg.upper_frac), toa.clone(), daylight.clone());

    let proxy = HourlyPanel::new(cfg.site.clone(), 2001, envelope(cfg.mean_frac).as_slice().to_vec(), toa.as_slice().to_vec())?;
    let means = HourlyMeans::fit(&proxy, 2, 2)?;
    let hours = (0..HOURS)
        .map(|h| {
            (1..=365).any(|d| daylight.is_day(d, h)).then(|| HourMarginal {
                hour: h,
                coefficients: cfg.coefficients(),
                n_obs: 0,
                loglik: 0.0,
                borrowed_from: None,
            })
        })
        .collect();
    let marginals = MarginalModel { mean_irradiation: means, daylight, hours };
    let intraday = (0..HOURS - 1).map(|h| Copula::Gumbel { theta: cfg.intraday_theta(h) }).collect();
    Ok(ModelBundle { bounds, marginals, intraday, noon: Some(Copula::Gumbel { theta: cfg.noon_theta }), noon_hour: NOON, variant: Variant::C2 })
}

/// `years` independent years from a bundle, with the bundle's TOA grid as
/// the TOA column.
pub fn generate_panel(bundle: &ModelBundle, site: &Site, first_year: i32, years: usize, seed: u64) -> Result<HourlyPanel> {
    let set = simulate(bundle, years, seed)?;
    let toa: Vec<f64> = (0..years).flat_map(|_| bundle.bounds.toa.as_slice().iter().copied()).collect();
    debug_assert_eq!(toa.len(), years * CELLS);
    HourlyPanel::new(site.clone(), first_year, set.values, toa)
}
