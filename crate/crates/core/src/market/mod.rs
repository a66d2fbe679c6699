//! Price files, normalized windows and the phase protocol.

mod panel;
mod phases;
mod series;
mod window;

pub use panel::{CrossSection, Market};
pub use phases::{make_phases, PhaseGeometry, PhaseSpec};
pub use series::{
    load_price_csv, load_price_dir, parse_price_csv, ticker_from_path, write_price_csv, LoadedPrices, PriceSeries,
    DEFAULT_MIN_ROWS,
};
pub use window::{make_topk_labels, make_window, rank_desc, HorizonLabel, Normalizer, PriceWindow, N_FEATURES};
