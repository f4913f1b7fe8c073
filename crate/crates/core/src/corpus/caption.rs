use alloc::borrow::ToOwned;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::EventCatalog;
use crate::{Error, Result};

/// Phrase joining two event descriptions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Connector {
    FollowedBy,
    AndThen,
    /// Recognized by the parser only.
    Before,
    /// Recognized by the parser only; the event after it happened first.
    After,
}

impl Connector {
    /// Connectors emitted by caption generation.
    pub const GENERATION_SET: [Connector; 2] = [Connector::FollowedBy, Connector::AndThen];

    // Longest phrases first so matching is longest-match.
    const PARSE_ORDER: [Connector; 4] = [
        Connector::FollowedBy,
        Connector::AndThen,
        Connector::Before,
        Connector::After,
    ];

    pub fn phrase(self) -> &'static str {
        match self {
            Connector::FollowedBy => "followed by",
            Connector::AndThen => "and then",
            Connector::Before => "before",
            Connector::After => "after",
        }
    }

    pub fn tokens(self) -> &'static [&'static str] {
        match self {
            Connector::FollowedBy => &["followed", "by"],
            Connector::AndThen => &["and", "then"],
            Connector::Before => &["before"],
            Connector::After => &["after"],
        }
    }

    /// Whether the phrase states the events in reverse chronological order.
    pub fn is_inverting(self) -> bool {
        matches!(self, Connector::After)
    }

    /// Resolves a phrase from the generation set.
    pub fn for_generation(phrase: &str) -> Result<Self> {
        Self::GENERATION_SET
            .into_iter()
            .find(|c| c.phrase() == phrase)
            .ok_or_else(|| Error::UnknownConnector(phrase.to_string()))
    }

    /// Resolves any phrase the parser understands.
    pub fn from_phrase(phrase: &str) -> Option<Self> {
        Self::PARSE_ORDER.into_iter().find(|c| c.phrase() == phrase)
    }
}

/// Token span `[start, end)` naming one event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub event_id: u32,
    pub start: usize,
    pub end: usize,
}

/// A tokenized caption with its event spans annotated, in text order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    tokens: Vec<String>,
    segments: Vec<Segment>,
    connectors: Vec<Connector>,
}

impl Caption {
    /// Assembles a caption from parts, checking that segments name their
    /// events, do not overlap, and are separated by exactly their
    /// connectors.
    pub fn from_parts(
        tokens: Vec<String>,
        segments: Vec<Segment>,
        connectors: Vec<Connector>,
        catalog: &EventCatalog,
    ) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::TooFewEvents(0));
        }
        if connectors.len() + 1 != segments.len() {
            return Err(Error::InvalidConfig(alloc::format!(
                "{} segments need {} connectors, got {}",
                segments.len(),
                segments.len() - 1,
                connectors.len()
            )));
        }
        for (k, seg) in segments.iter().enumerate() {
            let class = catalog.class(seg.event_id)?;
            let span = tokens
                .get(seg.start..seg.end)
                .ok_or_else(|| Error::InvalidConfig(alloc::format!("segment {k} out of range")))?;
            if !span.iter().map(String::as_str).eq(class.name_tokens()) {
                return Err(Error::UnparsableSegment(span.join(" ")));
            }
            if let Some(next) = segments.get(k + 1) {
                let between = tokens
                    .get(seg.end..next.start)
                    .ok_or_else(|| Error::InvalidConfig(alloc::format!("segment {k} overlaps")))?;
                if !between.iter().map(String::as_str).eq(connectors[k].tokens().iter().copied()) {
                    return Err(Error::InvalidConfig(alloc::format!(
                        "tokens {:?} between segments {k} and {} are not {:?}",
                        between,
                        k + 1,
                        connectors[k].phrase()
                    )));
                }
            }
        }
        Ok(Self {
            tokens,
            segments,
            connectors,
        })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn connectors(&self) -> &[Connector] {
        &self.connectors
    }

    /// Event ids in text order.
    pub fn event_ids(&self) -> Vec<u32> {
        self.segments.iter().map(|s| s.event_id).collect()
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Result of [`parse_caption`]: events in chronological order plus the
/// connectors in text order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedCaption {
    pub event_ids: Vec<u32>,
    pub connectors: Vec<Connector>,
}

/// Joins event names with a generation connector.
pub fn render_caption(event_ids: &[u32], catalog: &EventCatalog, connector: &str) -> Result<Caption> {
    let connector = Connector::for_generation(connector)?;
    if event_ids.len() < 2 {
        return Err(Error::TooFewEvents(event_ids.len()));
    }
    let mut tokens = Vec::new();
    let mut segments = Vec::with_capacity(event_ids.len());
    for (k, &id) in event_ids.iter().enumerate() {
        if k > 0 {
            tokens.extend(connector.tokens().iter().map(|t| (*t).to_owned()));
        }
        let class = catalog.class(id)?;
        let start = tokens.len();
        tokens.extend(class.name_tokens().map(str::to_owned));
        segments.push(Segment {
            event_id: id,
            start,
            end: tokens.len(),
        });
    }
    Ok(Caption {
        tokens,
        segments,
        connectors: alloc::vec![connector; event_ids.len() - 1],
    })
}

/// Splits a token sequence at connector phrases (longest match first) and
/// resolves each remaining span to a catalog event.
pub fn parse_caption<S: AsRef<str>>(tokens: &[S], catalog: &EventCatalog) -> Result<ParsedCaption> {
    let caption = split_caption(tokens, catalog)?;
    let mut event_ids = caption.event_ids();
    let inverting = caption.connectors.iter().filter(|c| c.is_inverting()).count();
    if inverting == caption.connectors.len() {
        event_ids.reverse();
    } else if inverting > 0 {
        return Err(Error::MixedConnectors(caption.text()));
    }
    Ok(ParsedCaption {
        event_ids,
        connectors: caption.connectors,
    })
}

impl Caption {
    /// Parses text produced by [`render_caption`] or [`negate_caption`].
    pub fn parse(text: &str, catalog: &EventCatalog) -> Result<Self> {
        split_caption(&super::tokenize(text), catalog)
    }
}

fn split_caption<S: AsRef<str>>(tokens: &[S], catalog: &EventCatalog) -> Result<Caption> {
    let toks: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
    let mut bounds: Vec<(usize, usize)> = Vec::new();
    let mut connectors = Vec::new();
    let mut seg_start = 0;
    let mut i = 0;
    while i < toks.len() {
        let hit = Connector::PARSE_ORDER
            .into_iter()
            .find(|c| toks[i..].starts_with(c.tokens()));
        match hit {
            Some(c) => {
                bounds.push((seg_start, i));
                connectors.push(c);
                i += c.tokens().len();
                seg_start = i;
            }
            None => i += 1,
        }
    }
    if connectors.is_empty() {
        return Err(Error::NoConnector(toks.join(" ")));
    }
    bounds.push((seg_start, toks.len()));
    let mut segments = Vec::with_capacity(bounds.len());
    for (start, end) in bounds {
        let name = toks[start..end].join(" ");
        let event_id = catalog
            .find(&name)
            .ok_or(Error::UnparsableSegment(name))?;
        segments.push(Segment {
            event_id,
            start,
            end,
        });
    }
    Ok(Caption {
        tokens: toks.into_iter().map(str::to_owned).collect(),
        segments,
        connectors,
    })
}

/// Reverses the order of the event descriptions (and of the connectors),
/// keeping any text before the first and after the last event in place.
pub fn negate_caption(caption: &Caption) -> Result<Caption> {
    let n = caption.segments.len();
    if n < 2 {
        return Err(Error::TooFewEvents(n));
    }
    let first = caption.segments[0].start;
    let last = caption.segments[n - 1].end;
    let mut tokens: Vec<String> = caption.tokens[..first].to_vec();
    let connectors: Vec<Connector> = caption.connectors.iter().rev().copied().collect();
    let mut segments = Vec::with_capacity(n);
    for (k, seg) in caption.segments.iter().rev().enumerate() {
        if k > 0 {
            tokens.extend(connectors[k - 1].tokens().iter().map(|t| (*t).to_owned()));
        }
        let start = tokens.len();
        tokens.extend_from_slice(&caption.tokens[seg.start..seg.end]);
        segments.push(Segment {
            event_id: seg.event_id,
            start,
            end: tokens.len(),
        });
    }
    tokens.extend_from_slice(&caption.tokens[last..]);
    Ok(Caption {
        tokens,
        segments,
        connectors,
    })
}

/// Single-event caption wording: optional words around the event name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventTemplate {
    pub prefix: &'static [&'static str],
    pub suffix: &'static [&'static str],
}

/// Wordings used for single-event captions.
pub const EVENT_TEMPLATES: [EventTemplate; 3] = [
    EventTemplate {
        prefix: &[],
        suffix: &[],
    },
    EventTemplate {
        prefix: &["a", "sound", "of"],
        suffix: &[],
    },
    EventTemplate {
        prefix: &[],
        suffix: &["can", "be", "heard"],
    },
];

/// Caption describing a single event.
pub fn describe_event(event_id: u32, catalog: &EventCatalog, template: EventTemplate) -> Result<Caption> {
    let class = catalog.class(event_id)?;
    let mut tokens: Vec<String> = template.prefix.iter().map(|t| (*t).to_owned()).collect();
    let start = tokens.len();
    tokens.extend(class.name_tokens().map(str::to_owned));
    let end = tokens.len();
    tokens.extend(template.suffix.iter().map(|t| (*t).to_owned()));
    Ok(Caption {
        tokens,
        segments: alloc::vec![Segment {
            event_id,
            start,
            end
        }],
        connectors: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_catalog, tokenize};
    use proptest::prelude::*;

    fn catalog() -> EventCatalog {
        build_catalog(10, 4, 3).unwrap()
    }

    fn id(cat: &EventCatalog, name: &str) -> u32 {
        cat.find(name).unwrap()
    }

    #[test]
    fn renders_the_two_event_example() {
        let cat = catalog();
        let ids = [id(&cat, "dog barking"), id(&cat, "man speaking")];
        let cap = render_caption(&ids, &cat, "followed by").unwrap();
        assert_eq!(cap.text(), "dog barking followed by man speaking");
        assert_eq!(
            cap.segments(),
            &[
                Segment { event_id: ids[0], start: 0, end: 2 },
                Segment { event_id: ids[1], start: 4, end: 6 },
            ]
        );
    }

    #[test]
    fn renders_three_events_with_and_then() {
        let cat = catalog();
        let cap = render_caption(&[0, 1, 2], &cat, "and then").unwrap();
        let names: Vec<_> = (0..3).map(|i| cat.classes()[i].name.clone()).collect();
        assert_eq!(
            cap.text(),
            alloc::format!("{} and then {} and then {}", names[0], names[1], names[2])
        );
        assert_eq!(cap.connectors(), &[Connector::AndThen, Connector::AndThen]);
    }

    #[test]
    fn render_rejects_parser_only_connectors_and_short_lists() {
        let cat = catalog();
        assert_eq!(
            render_caption(&[0, 1], &cat, "before"),
            Err(Error::UnknownConnector("before".into()))
        );
        assert_eq!(render_caption(&[0], &cat, "and then"), Err(Error::TooFewEvents(1)));
        assert_eq!(render_caption(&[0, 99], &cat, "and then"), Err(Error::UnknownEvent(99)));
    }

    #[test]
    fn parses_rendered_text() {
        let cat = catalog();
        let parsed = parse_caption(&tokenize("dog barking followed by man speaking"), &cat).unwrap();
        assert_eq!(parsed.event_ids, [id(&cat, "dog barking"), id(&cat, "man speaking")]);
        assert_eq!(parsed.connectors, [Connector::FollowedBy]);

        let three = parse_caption(
            &tokenize("thunder rumbling and then dog barking and then rain falling"),
            &cat,
        )
        .unwrap();
        assert_eq!(three.event_ids.len(), 3);
        assert_eq!(three.connectors.len(), 2);
    }

    #[test]
    fn parse_errors() {
        let cat = catalog();
        assert!(matches!(
            parse_caption(&tokenize("dog barking"), &cat),
            Err(Error::NoConnector(_))
        ));
        assert_eq!(
            parse_caption(&tokenize("dog barking followed by tiger purring"), &cat),
            Err(Error::UnparsableSegment("tiger purring".into()))
        );
        assert_eq!(
            parse_caption(&tokenize("followed by dog barking"), &cat),
            Err(Error::UnparsableSegment("".into()))
        );
        assert!(matches!(
            parse_caption(&tokenize("dog barking before man speaking after cat meowing"), &cat),
            Err(Error::MixedConnectors(_))
        ));
    }

    #[test]
    fn parser_understands_before_and_after() {
        let cat = catalog();
        let (dog, man) = (id(&cat, "dog barking"), id(&cat, "man speaking"));
        let before = parse_caption(&tokenize("dog barking before man speaking"), &cat).unwrap();
        assert_eq!(before.event_ids, [dog, man]);
        let after = parse_caption(&tokenize("man speaking after dog barking"), &cat).unwrap();
        assert_eq!(after.event_ids, [dog, man]);
        assert_eq!(after.connectors, [Connector::After]);
    }

    #[test]
    fn negation_swaps_the_example() {
        let cat = catalog();
        let cap = Caption::parse("dog barking followed by man speaking", &cat).unwrap();
        let neg = negate_caption(&cap).unwrap();
        assert_eq!(neg.text(), "man speaking followed by dog barking");
        assert_eq!(negate_caption(&neg).unwrap(), cap);
    }

    #[test]
    fn negation_keeps_surrounding_words() {
        let cat = catalog();
        let mut tokens = tokenize("a sound of dog barking and then cat meowing can be heard");
        let cap = Caption::from_parts(
            core::mem::take(&mut tokens),
            alloc::vec![
                Segment { event_id: id(&cat, "dog barking"), start: 3, end: 5 },
                Segment { event_id: id(&cat, "cat meowing"), start: 7, end: 9 },
            ],
            alloc::vec![Connector::AndThen],
            &cat,
        )
        .unwrap();
        let neg = negate_caption(&cap).unwrap();
        assert_eq!(neg.text(), "a sound of cat meowing and then dog barking can be heard");
        assert_eq!(negate_caption(&neg).unwrap(), cap);
    }

    #[test]
    fn single_segment_cannot_be_negated() {
        let cat = catalog();
        let cap = describe_event(0, &cat, EVENT_TEMPLATES[1]).unwrap();
        assert_eq!(cap.text(), "a sound of dog barking");
        assert_eq!(negate_caption(&cap), Err(Error::TooFewEvents(1)));
    }

    #[test]
    fn from_parts_validates_spans() {
        let cat = catalog();
        let cap = render_caption(&[0, 1], &cat, "and then").unwrap();
        let rebuilt = Caption::from_parts(
            cap.tokens().to_vec(),
            cap.segments().to_vec(),
            cap.connectors().to_vec(),
            &cat,
        )
        .unwrap();
        assert_eq!(rebuilt, cap);
        assert!(Caption::from_parts(
            cap.tokens().to_vec(),
            cap.segments().to_vec(),
            alloc::vec![Connector::FollowedBy],
            &cat
        )
        .is_err());
        let mut wrong = cap.segments().to_vec();
        wrong.swap(0, 1);
        assert!(Caption::from_parts(cap.tokens().to_vec(), wrong, cap.connectors().to_vec(), &cat).is_err());
    }

    proptest! {
        #[test]
        fn render_parse_negate_algebra(
            ids in proptest::sample::subsequence((0u32..10).collect::<Vec<_>>(), 2..=3).prop_shuffle(),
            conn in 0usize..2,
        ) {
            let cat = catalog();
            let phrase = Connector::GENERATION_SET[conn].phrase();
            let cap = render_caption(&ids, &cat, phrase).unwrap();
            let parsed = parse_caption(cap.tokens(), &cat).unwrap();
            prop_assert_eq!(&parsed.event_ids, &ids);
            prop_assert_eq!(parsed.connectors, alloc::vec![Connector::GENERATION_SET[conn]; ids.len() - 1]);
            prop_assert_eq!(Caption::parse(&cap.text(), &cat).unwrap(), cap.clone());

            let neg = negate_caption(&cap).unwrap();
            let mut reversed = ids.clone();
            reversed.reverse();
            prop_assert_eq!(parse_caption(neg.tokens(), &cat).unwrap().event_ids, reversed.clone());
            prop_assert_ne!(reversed, ids);
            prop_assert_eq!(negate_caption(&neg).unwrap(), cap);
        }
    }
}
