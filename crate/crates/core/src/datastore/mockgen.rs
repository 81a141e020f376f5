//! Planted-solution synthetic datasets.
//!
//! Each sample gets random text, image and expert features. The gold
//! entity's embedding is the unit-normalized fused feature those inputs
//! produce under [`AttentionParams::identity`], plus per-coordinate Gaussian
//! noise of scale `noise_sigma`. Distractor entities get random unit
//! directions with the same noise. With `noise_sigma = 0` the identity
//! model ranks the gold entity first for every sample.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::datastore::dataset::Dataset;
use crate::datastore::embeddings::EmbeddingTable;
use crate::datastore::records::{EntityRecord, MentionSample, RepresentationSource};
use crate::error::{Error, Result};
use crate::fusion::{self, AttentionParams, FeatureBundle};
use crate::numkernel::{norm, Tensor2};

#[derive(Debug, Clone, PartialEq)]
pub struct MockConfig {
    pub seed: u64,
    pub samples: usize,
    pub entities: usize,
    pub dim: usize,
    /// Head count of the identity model that defines the planted direction.
    pub heads: usize,
    pub noise_sigma: f64,
    pub text_len: usize,
    pub image_len: usize,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig {
            seed: 7,
            samples: 500,
            entities: 1000,
            dim: 64,
            heads: 8,
            noise_sigma: 0.05,
            text_len: 3,
            image_len: 2,
        }
    }
}

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "ve", "rin", "ta", "mi", "so", "dar", "bel", "no", "qui", "ras", "te", "vo", "lan",
    "mer", "si", "ga", "pol", "hu", "ne", "dro", "fa", "zel",
];

const WORDS: [&str; 16] = [
    "visited", "the", "city", "festival", "during", "summer", "stadium", "museum", "opening",
    "award", "ceremony", "with", "friends", "at", "night", "today",
];

fn word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(2..=3);
    let mut w: String = (0..n).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect();
    w[..1].make_ascii_uppercase();
    w
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dist: &Normal<f64>, d: usize) -> Vec<f64> {
    (0..d).map(|_| dist.sample(rng)).collect()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    v.iter().map(|x| x / n).collect()
}

/// Round to real32 precision so the planted direction matches what a reader
/// of the stored tables will see.
fn as_stored(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| f64::from(x as f32)).collect()
}

struct SampleFeatures {
    text: Vec<Vec<f64>>,
    image: Vec<Vec<f64>>,
    expert: Vec<f64>,
}

pub fn mock_generate(cfg: &MockConfig) -> Result<Dataset> {
    if cfg.entities < 2 || cfg.dim < 2 || cfg.text_len == 0 || cfg.image_len == 0 {
        return Err(Error::Configuration(format!(
            "mock dataset needs entities >= 2, dim >= 2 and non-empty sequences, got {cfg:?}"
        )));
    }
    if cfg.heads == 0 || !cfg.dim.is_multiple_of(cfg.heads) {
        return Err(Error::Configuration(format!(
            "mock dim {} is not divisible by {} heads",
            cfg.dim, cfg.heads
        )));
    }
    if !(cfg.noise_sigma >= 0.0 && cfg.noise_sigma.is_finite()) {
        return Err(Error::Configuration(format!("noise_sigma must be >= 0, got {}", cfg.noise_sigma)));
    }

    let d = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let feature_dist = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid normal");
    let noise_dist = Normal::new(0.0, 1.0).expect("valid normal");
    let identity = AttentionParams::identity(d, cfg.heads, false)?;

    let entities: Vec<EntityRecord> = (0..cfg.entities)
        .map(|j| {
            let name = format!("{} {}", word(&mut rng), word(&mut rng));
            EntityRecord {
                id: format!("E{j:06}"),
                representation: format!(
                    "{name} is a public figure known for appearances at {} events.",
                    WORDS[j % WORDS.len()]
                ),
                name,
                representation_source: RepresentationSource::Original,
            }
        })
        .collect();

    let mut order: Vec<usize> = (0..cfg.entities).collect();
    order.shuffle(&mut rng);

    let mut entity_vecs: Vec<Option<Vec<f64>>> = vec![None; cfg.entities];
    let mut first_features: Vec<Option<usize>> = vec![None; cfg.entities];
    let mut features: Vec<SampleFeatures> = Vec::with_capacity(cfg.samples);
    let mut samples = Vec::with_capacity(cfg.samples);

    for i in 0..cfg.samples {
        let gold = order[i % cfg.entities];
        let feats = match first_features[gold] {
            None => SampleFeatures {
                text: (0..cfg.text_len).map(|_| as_stored(gaussian_vec(&mut rng, &feature_dist, d))).collect(),
                image: (0..cfg.image_len).map(|_| as_stored(gaussian_vec(&mut rng, &feature_dist, d))).collect(),
                expert: as_stored(gaussian_vec(&mut rng, &feature_dist, d)),
            },
            Some(src) => {
                let base = &features[src];
                let mut jitter = |v: &Vec<f64>| -> Vec<f64> {
                    as_stored(v.iter().map(|x| x + cfg.noise_sigma * feature_dist.sample(&mut rng)).collect())
                };
                SampleFeatures {
                    text: base.text.iter().map(&mut jitter).collect(),
                    image: base.image.iter().map(&mut jitter).collect(),
                    expert: jitter(&base.expert),
                }
            }
        };

        if entity_vecs[gold].is_none() {
            let bundle = FeatureBundle {
                text: Tensor2::from_rows(&feats.text)?,
                image: Tensor2::from_rows(&feats.image)?,
                expert: feats.expert.clone(),
                mention: None,
            };
            let target = unit(&fusion::forward(&bundle, &identity)?.fused);
            let noisy: Vec<f64> = target
                .iter()
                .map(|x| x + cfg.noise_sigma * noise_dist.sample(&mut rng))
                .collect();
            entity_vecs[gold] = Some(noisy);
            first_features[gold] = Some(i);
        }

        let name = &entities[gold].name;
        let mention = name.split(' ').next_back().unwrap_or(name).to_string();
        let words: Vec<&str> = (0..rng.random_range(4..9)).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
        samples.push(MentionSample {
            id: format!("S{i:06}"),
            text: format!("{mention} {}", words.join(" ")),
            mention: mention.clone(),
            image_id: format!("IMG{i:06}"),
            expert_c1: format!("A person at the {}", WORDS[i % WORDS.len()]),
            expert_c2: name.clone(),
            gold_entity_id: entities[gold].id.clone(),
        });
        features.push(feats);
    }

    for slot in entity_vecs.iter_mut().filter(|s| s.is_none()) {
        let dir = unit(&gaussian_vec(&mut rng, &noise_dist, d));
        *slot = Some(dir.iter().map(|x| x + cfg.noise_sigma * noise_dist.sample(&mut rng)).collect());
    }

    let mut text = EmbeddingTable::new(d);
    let mut image = EmbeddingTable::new(d);
    let mut expert = EmbeddingTable::new(d);
    let mut mention = EmbeddingTable::new(d);
    for (s, f) in samples.iter().zip(&features) {
        for (r, row) in f.text.iter().enumerate() {
            text.insert_f64(format!("{}#{r}", s.id), row)?;
        }
        for (r, row) in f.image.iter().enumerate() {
            image.insert_f64(format!("{}#{r}", s.image_id), row)?;
        }
        expert.insert_f64(s.id.clone(), &f.expert)?;
        mention.insert_f64(s.id.clone(), &gaussian_vec(&mut rng, &feature_dist, d))?;
    }
    let mut entity = EmbeddingTable::new(d);
    for (e, v) in entities.iter().zip(&entity_vecs) {
        entity.insert_f64(e.id.clone(), v.as_ref().expect("every entity has a vector"))?;
    }

    let ds = Dataset {
        samples,
        entities,
        text,
        image,
        expert,
        mention: Some(mention),
        entity,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::cosine;

    #[test]
    fn deterministic_per_seed() {
        let cfg = MockConfig {
            samples: 30,
            entities: 50,
            dim: 16,
            ..MockConfig::default()
        };
        let a = mock_generate(&cfg).unwrap();
        let b = mock_generate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.text.to_bytes().unwrap(), b.text.to_bytes().unwrap());
        let c = mock_generate(&MockConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_gold_is_nearest_under_identity_model() {
        let cfg = MockConfig {
            samples: 60,
            entities: 40,
            dim: 16,
            heads: 4,
            noise_sigma: 0.0,
            ..MockConfig::default()
        };
        let ds = mock_generate(&cfg).unwrap();
        let model = AttentionParams::identity(16, 4, false).unwrap();
        for s in &ds.samples {
            let g = fusion::forward(&ds.bundle(s).unwrap(), &model).unwrap().fused;
            let gold = cosine(&g, &ds.entity_embedding(&s.gold_entity_id).unwrap()).unwrap();
            assert!(gold > 1.0 - 1e-6);
            for e in &ds.entities {
                if e.id != s.gold_entity_id {
                    assert!(cosine(&g, &ds.entity_embedding(&e.id).unwrap()).unwrap() < gold);
                }
            }
        }
    }

    #[test]
    fn invalid_sizes_rejected() {
        for cfg in [
            MockConfig { entities: 1, ..MockConfig::default() },
            MockConfig { dim: 1, heads: 1, ..MockConfig::default() },
            MockConfig { dim: 12, heads: 8, ..MockConfig::default() },
            MockConfig { noise_sigma: -1.0, ..MockConfig::default() },
        ] {
            assert!(matches!(mock_generate(&cfg), Err(Error::Configuration(_))));
        }
    }

    #[test]
    fn passes_validation_and_references() {
        let cfg = MockConfig {
            samples: 25,
            entities: 10,
            dim: 8,
            ..MockConfig::default()
        };
        let ds = mock_generate(&cfg).unwrap();
        ds.validate().unwrap();
        assert_eq!(ds.samples.len(), 25);
        assert_eq!(ds.entity.len(), 10);
    }
}
