use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{
    compose_clip, compose_clip_pair, describe_event, negate_caption, render_caption, AudioClip,
    CatalogParams, Caption, ClipSpec, Connector, EventCatalog, EVENT_TEMPLATES,
};
use crate::rng::{record_seed, rng_from_seed};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One clip with its positive caption and, for temporal records, the
/// reversed-order caption and clip.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub id: u64,
    pub spec: ClipSpec,
    pub clip: AudioClip,
    pub caption_pos: Caption,
    pub caption_neg: Option<Caption>,
    pub clip_neg: Option<AudioClip>,
}

impl DatasetRecord {
    pub fn is_temporal(&self) -> bool {
        self.caption_neg.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub catalog: CatalogParams,
    pub split: Split,
    pub seed: u64,
    pub records: Vec<DatasetRecord>,
}

impl DatasetManifest {
    /// Checks record ids are unique, every event resolves in `catalog`, and
    /// negatives are exact reversals of their positives.
    pub fn validate(&self, catalog: &EventCatalog) -> Result<()> {
        if catalog.params() != self.catalog {
            return Err(Error::InvalidConfig(format!(
                "manifest expects catalog {:?}, got {:?}",
                self.catalog,
                catalog.params()
            )));
        }
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if !seen.insert(r.id) {
                return Err(Error::InvalidConfig(format!("duplicate record id {}", r.id)));
            }
            for &e in r.spec.event_ids.iter().chain(&r.caption_pos.event_ids()) {
                catalog.class(e)?;
            }
            if r.caption_pos.event_ids() != r.spec.event_ids {
                return Err(Error::InvalidConfig(format!(
                    "record {}: caption events differ from clip events",
                    r.id
                )));
            }
            if let Some(neg) = &r.caption_neg {
                let mut rev = r.caption_pos.event_ids();
                rev.reverse();
                if neg.event_ids() != rev {
                    return Err(Error::InvalidConfig(format!(
                        "record {}: negative caption is not the reversed order",
                        r.id
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedCorpusConfig {
    pub n_records: usize,
    pub events_per_clip: usize,
    pub frames_per_event: usize,
    pub noise_sigma: f64,
    pub with_negative_clips: bool,
    pub seed: u64,
    pub split: Split,
}

/// Mixed-event corpus: each record concatenates `events_per_clip` distinct
/// events in random order and carries a positive caption and its negation.
pub fn build_mixed_dataset(catalog: &EventCatalog, config: &MixedCorpusConfig) -> Result<DatasetManifest> {
    if config.events_per_clip < 2 {
        return Err(Error::InvalidConfig(format!(
            "events_per_clip must be at least 2, got {}",
            config.events_per_clip
        )));
    }
    if config.events_per_clip > catalog.len() {
        return Err(Error::InvalidConfig(format!(
            "events_per_clip {} exceeds the {} catalog classes",
            config.events_per_clip,
            catalog.len()
        )));
    }
    let records = (0..config.n_records as u64)
        .map(|index| mixed_record(catalog, config, index))
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetManifest {
        catalog: catalog.params(),
        split: config.split,
        seed: config.seed,
        records,
    })
}

fn mixed_record(catalog: &EventCatalog, config: &MixedCorpusConfig, index: u64) -> Result<DatasetRecord> {
    let mut rng = rng_from_seed(record_seed(config.seed, index));
    let event_ids: Vec<u32> = sample(&mut rng, catalog.len(), config.events_per_clip)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    let connector = Connector::GENERATION_SET[rng.random_range(0..Connector::GENERATION_SET.len())];
    let spec = ClipSpec {
        event_ids,
        frames_per_event: config.frames_per_event,
        noise_sigma: config.noise_sigma,
    };
    let caption_pos = render_caption(&spec.event_ids, catalog, connector.phrase())?;
    let caption_neg = negate_caption(&caption_pos)?;
    let (clip, clip_neg) = if config.with_negative_clips {
        let (fwd, rev) = compose_clip_pair(&spec, catalog, &mut rng)?;
        (fwd, Some(rev))
    } else {
        (compose_clip(&spec, catalog, &mut rng)?, None)
    };
    Ok(DatasetRecord {
        id: index,
        spec,
        clip,
        caption_pos,
        caption_neg: Some(caption_neg),
        clip_neg,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleEventCorpusConfig {
    pub n_records: usize,
    pub frames_per_event: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub split: Split,
}

/// Single-event corpus with positive captions only. Classes cycle through
/// the catalog so every class is equally represented; the caption wording
/// is drawn from [`EVENT_TEMPLATES`].
pub fn build_single_event_dataset(catalog: &EventCatalog, config: &SingleEventCorpusConfig) -> Result<DatasetManifest> {
    let records = (0..config.n_records as u64)
        .map(|index| {
            let mut rng = rng_from_seed(record_seed(config.seed, index));
            let event = (index % catalog.len() as u64) as u32;
            let template = EVENT_TEMPLATES[rng.random_range(0..EVENT_TEMPLATES.len())];
            let spec = ClipSpec {
                event_ids: alloc::vec![event],
                frames_per_event: config.frames_per_event,
                noise_sigma: config.noise_sigma,
            };
            Ok(DatasetRecord {
                id: index,
                clip: compose_clip(&spec, catalog, &mut rng)?,
                spec,
                caption_pos: describe_event(event, catalog, template)?,
                caption_neg: None,
                clip_neg: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetManifest {
        catalog: catalog.params(),
        split: config.split,
        seed: config.seed,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_catalog, parse_caption};

    fn mixed(n: usize, k: usize, seed: u64) -> MixedCorpusConfig {
        MixedCorpusConfig {
            n_records: n,
            events_per_clip: k,
            frames_per_event: 3,
            noise_sigma: 0.2,
            with_negative_clips: true,
            seed,
            split: Split::Train,
        }
    }

    #[test]
    fn every_record_has_a_reversed_negative() {
        let cat = build_catalog(10, 8, 1).unwrap();
        let m = build_mixed_dataset(&cat, &mixed(100, 2, 5)).unwrap();
        assert_eq!(m.records.len(), 100);
        m.validate(&cat).unwrap();
        for r in &m.records {
            let pos = parse_caption(r.caption_pos.tokens(), &cat).unwrap().event_ids;
            let neg = parse_caption(r.caption_neg.as_ref().unwrap().tokens(), &cat).unwrap().event_ids;
            assert_eq!(pos, r.spec.event_ids);
            assert_eq!(neg, [pos[1], pos[0]]);
            assert_ne!(pos[0], pos[1]);
            assert_eq!(r.clip.n_frames(), 6);
        }
    }

    #[test]
    fn same_seed_same_manifest() {
        let cat = build_catalog(10, 8, 1).unwrap();
        let a = build_mixed_dataset(&cat, &mixed(50, 3, 11)).unwrap();
        let b = build_mixed_dataset(&cat, &mixed(50, 3, 11)).unwrap();
        assert_eq!(a, b);
        let c = build_mixed_dataset(&cat, &mixed(50, 3, 12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn records_do_not_depend_on_corpus_size() {
        let cat = build_catalog(10, 8, 1).unwrap();
        let small = build_mixed_dataset(&cat, &mixed(10, 2, 3)).unwrap();
        let large = build_mixed_dataset(&cat, &mixed(40, 2, 3)).unwrap();
        assert_eq!(small.records[..], large.records[..10]);
    }

    #[test]
    fn too_many_events_per_clip() {
        let cat = build_catalog(2, 4, 1).unwrap();
        assert!(matches!(build_mixed_dataset(&cat, &mixed(5, 3, 0)), Err(Error::InvalidConfig(_))));
        assert!(matches!(build_mixed_dataset(&cat, &mixed(5, 1, 0)), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn connectors_come_from_the_generation_set_and_both_occur() {
        let cat = build_catalog(10, 4, 1).unwrap();
        let m = build_mixed_dataset(&cat, &mixed(200, 2, 8)).unwrap();
        let used: BTreeSet<_> = m.records.iter().map(|r| r.caption_pos.connectors()[0]).collect();
        assert_eq!(used.into_iter().collect::<Vec<_>>(), Connector::GENERATION_SET);
    }

    #[test]
    fn negative_clips_can_be_skipped() {
        let cat = build_catalog(5, 4, 1).unwrap();
        let mut cfg = mixed(5, 2, 0);
        cfg.with_negative_clips = false;
        let m = build_mixed_dataset(&cat, &cfg).unwrap();
        assert!(m.records.iter().all(|r| r.clip_neg.is_none() && r.caption_neg.is_some()));
        // the forward clip does not depend on whether the negative is built
        let with = build_mixed_dataset(&cat, &mixed(5, 2, 0)).unwrap();
        for (a, b) in m.records.iter().zip(&with.records) {
            assert_eq!(a.clip, b.clip);
        }
    }

    #[test]
    fn single_event_corpus_cycles_classes() {
        let cat = build_catalog(4, 4, 1).unwrap();
        let cfg = SingleEventCorpusConfig {
            n_records: 12,
            frames_per_event: 2,
            noise_sigma: 0.1,
            seed: 3,
            split: Split::Test,
        };
        let m = build_single_event_dataset(&cat, &cfg).unwrap();
        m.validate(&cat).unwrap();
        for r in &m.records {
            assert_eq!(r.spec.event_ids, [(r.id % 4) as u32]);
            assert!(!r.is_temporal());
            assert_eq!(r.caption_pos.event_ids(), r.spec.event_ids);
        }
    }

    #[test]
    fn validate_catches_bad_manifests() {
        let cat = build_catalog(5, 4, 1).unwrap();
        let mut m = build_mixed_dataset(&cat, &mixed(3, 2, 0)).unwrap();
        m.records[1].id = 0;
        assert!(m.validate(&cat).is_err());
        let other = build_catalog(5, 4, 2).unwrap();
        let m = build_mixed_dataset(&cat, &mixed(3, 2, 0)).unwrap();
        assert!(m.validate(&other).is_err());
    }
}
