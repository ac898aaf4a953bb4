//! The person-search evaluation protocol.

mod protocol;
mod search;

pub use protocol::{
    average_precision, cosine, detection_ap_recall, interpolated_ap, match_detections, person_search_ap,
    person_search_map_cmc, Gallery, GalleryEntry, QueryResult,
};
pub use search::{evaluate_search, read_metrics, write_metrics, EvalConfig, QueryRow, SearchMetrics};
