//! Storage-cost arithmetic, artifact containers and raw input formats.

pub mod container;
mod cost;
pub mod ingest;

pub use container::{
    decode_frame, decode_map, encode_frame, encode_map, frame_file_size, read_frame, read_map,
    write_frame, write_map, MapLayout, HEADER_LEN,
};
pub use cost::{human_bytes, StorageModel, StorageReport};
