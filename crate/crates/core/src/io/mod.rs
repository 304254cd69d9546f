//! On-disk formats. Binary containers are little-endian with a magic tag,
//! a format version and a `key=value` text header; results and settings
//! are line-oriented text.

mod binary;
mod index;
mod model;
mod sequence;
mod text;

pub use index::{decode_index, encode_index, load_index, save_index, INDEX_MAGIC, INDEX_VERSION};
pub use model::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use sequence::{decode_sequence, encode_sequence, load_sequence, save_sequence, SEQUENCE_MAGIC, SEQUENCE_VERSION};
pub use text::{
    format_curve, format_frame_records, format_kept, format_match_records, format_match_report, format_pruner,
    format_registration_report, parse_frame_records, parse_kept, parse_match_records, parse_pruner, FrameRecord,
    KeyValues, MatchRecords,
};
