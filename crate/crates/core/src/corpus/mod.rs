//! Synthetic event corpus: catalog of event classes, frame-sequence clips
//! built by concatenation, ordered-event captions and their temporal
//! negations.

mod caption;
mod catalog;
mod clip;
mod dataset;

pub use caption::{
    describe_event, negate_caption, parse_caption, render_caption, Caption, Connector,
    EventTemplate, ParsedCaption, Segment, EVENT_TEMPLATES,
};
pub use catalog::{build_catalog, CatalogParams, EventCatalog, EventClass};
pub use clip::{compose_clip, compose_clip_pair, synth_event_frames, AudioClip, ClipSpec};
pub use dataset::{
    build_mixed_dataset, build_single_event_dataset, DatasetManifest, DatasetRecord,
    MixedCorpusConfig, SingleEventCorpusConfig, Split,
};

/// Splits text into lowercase whitespace-separated tokens.
pub fn tokenize(text: &str) -> alloc::vec::Vec<alloc::string::String> {
    text.split_whitespace()
        .map(|t| t.to_lowercase())
        .collect()
}
