use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::rng_from_seed;
use crate::{Error, Result};

// Noun + gerund phrases. None of these contain a connector word.
const EVENT_NAMES: &[&str] = &[
    "dog barking",
    "man speaking",
    "woman laughing",
    "baby crying",
    "bird chirping",
    "cat meowing",
    "rain falling",
    "thunder rumbling",
    "car honking",
    "engine idling",
    "door slamming",
    "glass breaking",
    "water running",
    "wind blowing",
    "bell ringing",
    "clock ticking",
    "siren wailing",
    "crowd cheering",
    "phone ringing",
    "horse neighing",
    "cow mooing",
    "rooster crowing",
    "frog croaking",
    "insects buzzing",
    "sheep bleating",
    "pig grunting",
    "hen clucking",
    "keyboard typing",
    "person walking",
    "helicopter hovering",
    "train passing",
    "chainsaw cutting",
    "vacuum humming",
    "toilet flushing",
    "fire crackling",
    "waves crashing",
    "hands clapping",
    "person coughing",
    "man snoring",
    "child shouting",
    "girl singing",
    "drill whirring",
    "truck reversing",
    "motorcycle revving",
    "dishes clattering",
    "kettle whistling",
    "paper crumpling",
    "cork popping",
    "ball bouncing",
    "hammer knocking",
    "owl hooting",
    "wolf howling",
    "lion roaring",
    "crow cawing",
    "duck quacking",
    "goat bleating",
    "airplane droning",
    "brakes squealing",
    "church bells tolling",
    "cricket chirring",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventClass {
    pub id: u32,
    pub name: String,
    /// Unit-norm direction in frame space.
    pub prototype: Vec<f32>,
}

impl EventClass {
    pub fn name_tokens(&self) -> impl Iterator<Item = &str> {
        self.name.split(' ')
    }
}

/// Parameters that fully determine a catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogParams {
    pub n_classes: usize,
    pub frame_dim: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventCatalog {
    classes: Vec<EventClass>,
    frame_dim: usize,
    seed: u64,
    by_name: BTreeMap<String, u32>,
}

impl EventCatalog {
    pub fn classes(&self) -> &[EventClass] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn frame_dim(&self) -> usize {
        self.frame_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> CatalogParams {
        CatalogParams {
            n_classes: self.classes.len(),
            frame_dim: self.frame_dim,
            seed: self.seed,
        }
    }

    pub fn class(&self, id: u32) -> Result<&EventClass> {
        self.classes
            .get(id as usize)
            .ok_or(Error::UnknownEvent(id))
    }

    /// Looks up an event by its space-joined name.
    pub fn find(&self, name: &str) -> Option<u32> {
        self.by_name.get(name).copied()
    }
}

/// Builds `n_classes` events with seeded Gaussian prototypes normalized to
/// unit length.
pub fn build_catalog(n_classes: usize, frame_dim: usize, seed: u64) -> Result<EventCatalog> {
    if n_classes < 2 {
        return Err(Error::InvalidConfig(format!(
            "catalog needs at least 2 classes, got {n_classes}"
        )));
    }
    if frame_dim < 2 {
        return Err(Error::InvalidConfig(format!(
            "frame_dim must be at least 2, got {frame_dim}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut classes: Vec<EventClass> = Vec::with_capacity(n_classes);
    let mut by_name = BTreeMap::new();
    for i in 0..n_classes {
        let prototype = loop {
            let raw: Vec<f64> = (0..frame_dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let norm = libm::sqrt(raw.iter().map(|x| x * x).sum::<f64>());
            if norm < 1e-12 {
                continue;
            }
            let proto: Vec<f32> = raw.iter().map(|x| (x / norm) as f32).collect();
            if classes.iter().all(|c| c.prototype != proto) {
                break proto;
            }
        };
        let base = EVENT_NAMES[i % EVENT_NAMES.len()];
        let name = if i < EVENT_NAMES.len() {
            base.to_string()
        } else {
            format!("{base} {}", i / EVENT_NAMES.len() + 1)
        };
        by_name.insert(name.clone(), i as u32);
        classes.push(EventClass {
            id: i as u32,
            name,
            prototype,
        });
    }
    Ok(EventCatalog {
        classes,
        frame_dim,
        seed,
        by_name,
    })
}
