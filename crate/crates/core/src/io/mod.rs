//! File formats: IDX datasets, binary model files, CSV reports and SVG plots.

pub mod idx;
pub mod model_file;
pub mod report;
pub mod svg;

pub use idx::{load_idx, load_labelled, load_split, Split};
pub use model_file::{decode_model, encode_model, load_model, save_model};
pub use report::{format_float, write_csv, Report};
pub use svg::{robustness_svg, write_svg};
