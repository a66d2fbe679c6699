use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;

use super::series::PriceSeries;
use super::window::{make_window, Normalizer, PriceWindow};
use crate::error::{Error, Result};

/// Several series aligned on the union of their trading days.
#[derive(Clone, Debug)]
pub struct Market {
    calendar: Vec<NaiveDate>,
    series: Vec<PriceSeries>,
    /// `rows[a][day]`: row of asset `a` on calendar day `day`.
    rows: Vec<Vec<Option<usize>>>,
}

/// Windows of all assets that have complete data around one anchor day.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossSection {
    pub day: usize,
    pub date: NaiveDate,
    /// Sorted by asset id.
    pub windows: Vec<PriceWindow>,
}

impl CrossSection {
    pub fn assets(&self) -> Vec<usize> {
        self.windows.iter().map(|w| w.asset_id).collect()
    }

    /// Per-asset return at horizon `delta`.
    pub fn returns(&self, delta: usize) -> Vec<f64> {
        self.windows
            .iter()
            .map(|w| w.label(delta).map_or(f64::NAN, |l| l.ret))
            .collect()
    }
}

impl Market {
    /// Asset ids are reassigned to positions in `series`.
    pub fn new(mut series: Vec<PriceSeries>) -> Result<Self> {
        for (i, s) in series.iter_mut().enumerate() {
            s.asset_id = i;
            s.validate()?;
        }
        let calendar: Vec<NaiveDate> = series
            .iter()
            .flat_map(|s| s.dates.iter().copied())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let pos: BTreeMap<NaiveDate, usize> = calendar.iter().enumerate().map(|(i, &d)| (d, i)).collect();
        let rows = series
            .iter()
            .map(|s| {
                let mut r = vec![None; calendar.len()];
                for (k, d) in s.dates.iter().enumerate() {
                    r[pos[d]] = Some(k);
                }
                r
            })
            .collect();
        Ok(Self { calendar, series, rows })
    }

    pub fn calendar(&self) -> &[NaiveDate] {
        &self.calendar
    }

    pub fn num_days(&self) -> usize {
        self.calendar.len()
    }

    pub fn num_assets(&self) -> usize {
        self.series.len()
    }

    pub fn series(&self) -> &[PriceSeries] {
        &self.series
    }

    pub fn row(&self, asset: usize, day: usize) -> Option<usize> {
        self.rows.get(asset)?.get(day).copied().flatten()
    }

    /// Close of `asset` on calendar day `day`, if traded.
    pub fn close(&self, asset: usize, day: usize) -> Option<f64> {
        self.row(asset, day).map(|r| self.series[asset].close[r])
    }

    /// Window for `asset` anchored at calendar day `day`. Fails if any of
    /// the normalizer, window or label days is missing for the asset.
    pub fn window(
        &self,
        asset: usize,
        day: usize,
        w: usize,
        deltas: &[usize],
        normalizer: Normalizer,
    ) -> Result<PriceWindow> {
        let max_delta = deltas.iter().copied().max().unwrap_or(0);
        if day < w || day + max_delta >= self.calendar.len() {
            return Err(Error::Range(format!("day {day} has no room for window {w} / horizon {max_delta}")));
        }
        let first = self
            .row(asset, day - w)
            .ok_or_else(|| Error::Data(format!("asset {asset} missing day {}", self.calendar[day - w])))?;
        for d in day - w..=day + max_delta {
            match self.row(asset, d) {
                Some(r) if r == first + (d - (day - w)) => {}
                _ => {
                    return Err(Error::Data(format!(
                        "asset {asset} missing day {}",
                        self.calendar[d]
                    )))
                }
            }
        }
        let mut win = make_window(&self.series[asset], first + w, w, deltas, normalizer)?;
        win.anchor = day;
        Ok(win)
    }

    /// All assets with complete windows at `day`; the rest are dropped.
    pub fn cross_section(&self, day: usize, w: usize, deltas: &[usize], normalizer: Normalizer) -> CrossSection {
        CrossSection {
            day,
            date: self.calendar[day],
            windows: (0..self.series.len())
                .filter_map(|a| self.window(a, day, w, deltas, normalizer).ok())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(days: &[u32], close: f64) -> PriceSeries {
        let n = days.len();
        PriceSeries {
            asset_id: 0,
            ticker: "X".into(),
            name: "X".into(),
            dates: days.iter().map(|&d| NaiveDate::from_ymd_opt(2021, 1, d).unwrap()).collect(),
            open: vec![close; n],
            high: vec![close; n],
            low: vec![close; n],
            close: vec![close; n],
            volume: vec![1.0; n],
        }
    }

    #[test]
    fn missing_days_drop_asset() {
        let m = Market::new(vec![series(&[1, 2, 3, 4, 5, 6], 1.0), series(&[1, 2, 4, 5, 6], 2.0)]).unwrap();
        assert_eq!(m.num_days(), 6);
        let cs = m.cross_section(3, 2, &[1], Normalizer::PreviousDay);
        assert_eq!(cs.assets(), vec![0]);
        let cs = m.cross_section(4, 1, &[1], Normalizer::PreviousDay);
        assert_eq!(cs.assets(), vec![0, 1]);
    }
}
