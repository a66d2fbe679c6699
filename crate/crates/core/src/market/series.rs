use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use log::warn;

use crate::error::{Error, Result};

/// Row threshold below which a price file is skipped.
pub const DEFAULT_MIN_ROWS: usize = 2800;

/// Daily OHLCV history of one asset, dates strictly increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct PriceSeries {
    pub asset_id: usize,
    pub ticker: String,
    pub name: String,
    pub dates: Vec<NaiveDate>,
    pub open: Vec<f64>,
    pub high: Vec<f64>,
    pub low: Vec<f64>,
    pub close: Vec<f64>,
    pub volume: Vec<f64>,
}

impl PriceSeries {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Feature row `[open, high, low, close, volume]` for day `i`.
    pub fn row(&self, i: usize) -> [f64; 5] {
        [self.open[i], self.high[i], self.low[i], self.close[i], self.volume[i]]
    }

    /// Checks equal lengths, strictly increasing dates, positive prices and
    /// non-negative volume.
    pub fn validate(&self) -> Result<()> {
        let n = self.dates.len();
        for (col, v) in [
            ("Open", &self.open),
            ("High", &self.high),
            ("Low", &self.low),
            ("Close", &self.close),
            ("Volume", &self.volume),
        ] {
            if v.len() != n {
                return Err(Error::Data(format!("{}: column {col} has {} values, expected {n}", self.ticker, v.len())));
            }
        }
        if let Some(w) = self.dates.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::Data(format!(
                "{}: dates not strictly increasing at {}",
                self.ticker,
                self.dates[w + 1]
            )));
        }
        for i in 0..n {
            let [o, h, l, c, v] = self.row(i);
            if !(o > 0.0 && h > 0.0 && l > 0.0 && c > 0.0) || !o.is_finite() || !h.is_finite() || !l.is_finite() || !c.is_finite() {
                return Err(Error::Data(format!("{}: non-positive price on {}", self.ticker, self.dates[i])));
            }
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Data(format!("{}: invalid volume on {}", self.ticker, self.dates[i])));
            }
        }
        Ok(())
    }
}

/// Splits a `[ticker]-[name].csv` file stem.
pub fn ticker_from_path(path: &Path) -> (String, String) {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    match stem.split_once('-') {
        Some((t, n)) => (t.to_string(), n.to_string()),
        None => (stem.to_string(), stem.to_string()),
    }
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    NaiveDate::parse_from_str(s.get(..10).unwrap_or(s), "%Y-%m-%d").ok()
}

/// Reads `Date,Open,High,Low,Close,Volume` (extra columns ignored, header
/// names case-insensitive). Unsorted rows are sorted with a warning.
pub fn parse_price_csv<R: Read>(input: R, path: &Path, min_rows: usize) -> Result<PriceSeries> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let schema = |message: String| Error::Schema {
        path: path.to_path_buf(),
        message,
    };
    let headers = reader.headers().map_err(|e| schema(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| schema(format!("missing column {name}")))
    };
    let idx = [col("Date")?, col("Open")?, col("High")?, col("Low")?, col("Close")?, col("Volume")?];

    let mut rows: Vec<(NaiveDate, [f64; 5])> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(format!("{} row {}", path.display(), i + 1), e))?;
        let field = |k: usize| rec.get(idx[k]).unwrap_or("");
        let date = parse_date(field(0))
            .ok_or_else(|| Error::parse(format!("{} row {}", path.display(), i + 1), format!("bad date {:?}", field(0))))?;
        let mut vals = [0.0; 5];
        for (k, v) in vals.iter_mut().enumerate() {
            let raw = field(k + 1);
            *v = raw.parse().map_err(|_| {
                Error::parse(format!("{} row {}", path.display(), i + 1), format!("bad number {raw:?}"))
            })?;
        }
        rows.push((date, vals));
    }
    if rows.len() < min_rows {
        return Err(Error::TooShort {
            path: path.to_path_buf(),
            rows: rows.len(),
            min_rows,
        });
    }
    if rows.windows(2).any(|w| w[0].0 > w[1].0) {
        warn!("{}: dates out of order, sorting", path.display());
        rows.sort_by_key(|r| r.0);
    }
    let (ticker, name) = ticker_from_path(path);
    let mut s = PriceSeries {
        asset_id: 0,
        ticker,
        name,
        dates: Vec::with_capacity(rows.len()),
        open: Vec::with_capacity(rows.len()),
        high: Vec::with_capacity(rows.len()),
        low: Vec::with_capacity(rows.len()),
        close: Vec::with_capacity(rows.len()),
        volume: Vec::with_capacity(rows.len()),
    };
    for (d, [o, h, l, c, v]) in rows {
        s.dates.push(d);
        s.open.push(o);
        s.high.push(h);
        s.low.push(l);
        s.close.push(c);
        s.volume.push(v);
    }
    s.validate().map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })?;
    Ok(s)
}

pub fn load_price_csv(path: &Path, min_rows: usize) -> Result<PriceSeries> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_price_csv(file, path, min_rows)
}

pub fn write_price_csv<W: Write>(series: &PriceSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::parse("price csv", e);
    w.write_record(["Date", "Open", "High", "Low", "Close", "Volume"]).map_err(err)?;
    for i in 0..series.len() {
        let [o, h, l, c, v] = series.row(i);
        w.write_record([
            series.dates[i].to_string(),
            o.to_string(),
            h.to_string(),
            l.to_string(),
            c.to_string(),
            v.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("price csv", e))
}

/// Result of loading a directory of price files.
#[derive(Debug, Default)]
pub struct LoadedPrices {
    /// Accepted series, sorted by ticker, `asset_id` = position.
    pub series: Vec<PriceSeries>,
    /// Files skipped by the row threshold, with their row counts.
    pub skipped: Vec<(PathBuf, usize)>,
}

/// Loads every `*.csv` in `dir`. Short files are skipped with a notice;
/// any other error aborts.
pub fn load_price_dir(dir: &Path, min_rows: usize) -> Result<LoadedPrices> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    paths.sort();
    let mut out = LoadedPrices::default();
    for p in paths {
        match load_price_csv(&p, min_rows) {
            Ok(s) => out.series.push(s),
            Err(Error::TooShort { path, rows, min_rows }) => {
                warn!("skipping {}: {rows} rows < {min_rows}", path.display());
                out.skipped.push((path, rows));
            }
            Err(e) => return Err(e),
        }
    }
    out.series.sort_by(|a, b| a.ticker.cmp(&b.ticker));
    for (i, s) in out.series.iter_mut().enumerate() {
        s.asset_id = i;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "Date,Open,High,Low,Close,Volume\n\
2020-01-03,2,3,1,2.5,100\n\
2020-01-02,1,2,0.5,1.5,200\n";

    #[test]
    fn sorts_and_names() {
        let s = parse_price_csv(CSV.as_bytes(), Path::new("AAA-Acme Corp.csv"), 2).unwrap();
        assert_eq!(s.ticker, "AAA");
        assert_eq!(s.name, "Acme Corp");
        assert_eq!(s.close, vec![1.5, 2.5]);
    }

    #[test]
    fn threshold_and_schema() {
        let p = Path::new("x.csv");
        assert!(matches!(parse_price_csv(CSV.as_bytes(), p, 3), Err(Error::TooShort { rows: 2, .. })));
        let no_close = "Date,Open,High,Low,Volume\n2020-01-02,1,2,0.5,1\n";
        assert!(matches!(parse_price_csv(no_close.as_bytes(), p, 1), Err(Error::Schema { .. })));
        let bad = "Date,Open,High,Low,Close,Volume\n2020-01-02,1,2,0.5,0,1\n";
        assert!(matches!(parse_price_csv(bad.as_bytes(), p, 1), Err(Error::Data(_))));
    }

    #[test]
    fn csv_round_trip() {
        let s = parse_price_csv(CSV.as_bytes(), Path::new("AAA-Acme.csv"), 1).unwrap();
        let mut buf = Vec::new();
        write_price_csv(&s, &mut buf).unwrap();
        let back = parse_price_csv(buf.as_slice(), Path::new("AAA-Acme.csv"), 1).unwrap();
        assert_eq!(back, s);
    }
}
