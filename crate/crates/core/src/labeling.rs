//! Payment attribution, price categorization and truncated count labels.

use serde::{Deserialize, Serialize};

use crate::dataset::{Labels, Money, PriceCatalog, Sample, TransactionRecord};
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW_HOURS: f64 = 24.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLabelConfig", into = "RawLabelConfig")]
pub struct LabelConfig {
    window_hours: f64,
    catalog: PriceCatalog,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLabelConfig {
    #[serde(default = "default_window")]
    window_hours: f64,
    #[serde(default)]
    price_catalog: PriceCatalog,
}

fn default_window() -> f64 {
    DEFAULT_WINDOW_HOURS
}

impl TryFrom<RawLabelConfig> for LabelConfig {
    type Error = Error;

    fn try_from(raw: RawLabelConfig) -> Result<Self> {
        LabelConfig::new(raw.window_hours, raw.price_catalog)
    }
}

impl From<LabelConfig> for RawLabelConfig {
    fn from(c: LabelConfig) -> Self {
        RawLabelConfig {
            window_hours: c.window_hours,
            price_catalog: c.catalog,
        }
    }
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            window_hours: DEFAULT_WINDOW_HOURS,
            catalog: PriceCatalog::default(),
        }
    }
}

impl LabelConfig {
    /// The window must be finite and positive; there is no "unbounded" sentinel.
    pub fn new(window_hours: f64, catalog: PriceCatalog) -> Result<Self> {
        if !(window_hours.is_finite() && window_hours > 0.0) {
            return Err(Error::config(
                "window_hours",
                format!("{window_hours} is not a finite positive number of hours"),
            ));
        }
        Ok(LabelConfig {
            window_hours,
            catalog,
        })
    }

    pub fn window_hours(&self) -> f64 {
        self.window_hours
    }

    pub fn catalog(&self) -> &PriceCatalog {
        &self.catalog
    }
}

/// Transactions with `offset_hours` in `[0, T)`, in their original order.
pub fn attribute_payments<'a>(
    sample: &'a Sample,
    config: &LabelConfig,
) -> impl Iterator<Item = &'a TransactionRecord> + 'a {
    let window = config.window_hours;
    sample
        .transactions
        .iter()
        .filter(move |t| t.offset_hours < window)
}

/// Zero-based index of the category whose significant price is the largest
/// one not exceeding `amount`. Amounts below the cheapest price fall into the
/// first category.
pub fn categorize_price(amount: Money, catalog: &PriceCatalog) -> Result<usize> {
    if !(amount > 0.0 && amount.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "order amount {amount} must be positive"
        )));
    }
    // number of prices <= amount
    let at_or_below = catalog.prices().partition_point(|&p| p <= amount);
    Ok(at_or_below.saturating_sub(1))
}

/// Truncated count labels and the untruncated attributed LTV.
///
/// Transactions are assumed valid (positive amounts), which the dataset reader
/// and generator guarantee.
pub fn build_labels(sample: &Sample, config: &LabelConfig) -> Labels {
    let catalog = &config.catalog;
    let mut raw = vec![0u64; catalog.len()];
    let mut ltv = 0.0;
    for t in attribute_payments(sample, config) {
        let m = categorize_price(t.amount, catalog).expect("transaction amounts are positive");
        raw[m] += 1;
        ltv += t.amount;
    }
    let counts = raw
        .iter()
        .zip(catalog.caps())
        .map(|(&c, &cap)| c.min(u64::from(cap)) as u32)
        .collect();
    Labels { counts, ltv }
}

pub fn label_samples(samples: &mut [Sample], config: &LabelConfig) {
    for s in samples {
        s.labels = Some(build_labels(s, config));
    }
}
