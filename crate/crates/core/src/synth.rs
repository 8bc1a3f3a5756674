//! Synthetic image/caption data with a controllable link between features and words.
//!
//! Every image is assigned a few latent concepts. Concepts and region slots own
//! fixed random unit-norm prototypes; a region is its concept's prototype plus a
//! scaled slot vector plus Gaussian noise scaled by `noise`. Concepts fill the slots
//! in ascending id order, and captions are template sentences that mention them,
//! usually in that order.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{Corpus, DataError, Dataset, ImageRecord, Split};
use crate::vocab::Vocabulary;

const FUNCTION_WORDS: [&str; 8] = ["a", "the", "with", "and", "near", "on", "in", "of"];

const CONCEPT_WORDS: [&str; 64] = [
    "dog",
    "cat",
    "man",
    "woman",
    "boy",
    "girl",
    "horse",
    "bird",
    "car",
    "bus",
    "train",
    "truck",
    "bike",
    "boat",
    "plane",
    "table",
    "chair",
    "bed",
    "sofa",
    "desk",
    "lamp",
    "clock",
    "phone",
    "laptop",
    "book",
    "cup",
    "plate",
    "bowl",
    "pizza",
    "cake",
    "apple",
    "banana",
    "tree",
    "grass",
    "street",
    "road",
    "building",
    "window",
    "door",
    "sign",
    "kite",
    "ball",
    "frisbee",
    "skateboard",
    "surfboard",
    "umbrella",
    "bench",
    "fence",
    "river",
    "beach",
    "snow",
    "sky",
    "cloud",
    "field",
    "hill",
    "wall",
    "floor",
    "shirt",
    "hat",
    "bag",
    "sheep",
    "cow",
    "zebra",
    "giraffe",
];

/// Weight of the per-slot layout vector added to every region.
const LAYOUT_SCALE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub regions: usize,
    pub num_images: usize,
    pub captions_per_image: usize,
    pub concepts_per_image: usize,
    pub noise: f64,
    /// Probability that a caption lists concepts in region order rather than shuffled.
    pub ordered_prob: f64,
    /// Probability that a caption leaves one concept out.
    pub drop_prob: f64,
    /// Zipf exponent of concept frequency; 0 draws concepts uniformly.
    pub concept_skew: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            vocab_size: 60,
            feature_dim: 16,
            regions: 3,
            num_images: 200,
            captions_per_image: 5,
            concepts_per_image: 3,
            noise: 0.3,
            ordered_prob: 0.6,
            drop_prob: 0.05,
            concept_skew: 0.0,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |m: &str| Err(DataError::Config(m.to_string()));
        if self.vocab_size < 10 {
            return fail("vocabulary size must be at least 10");
        }
        if self.vocab_size > 4 + FUNCTION_WORDS.len() + CONCEPT_WORDS.len() * 4 {
            return fail("vocabulary size is larger than the synthetic word list supports");
        }
        if self.feature_dim == 0 || self.regions == 0 || self.num_images == 0 {
            return fail("feature dimension, regions and image count must be positive");
        }
        if self.captions_per_image == 0 {
            return fail("captions per image must be at least 1");
        }
        if self.concepts_per_image == 0 {
            return fail("concepts per image must be at least 1");
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return fail("noise level must be finite and non-negative");
        }
        if !((0.0..=1.0).contains(&self.ordered_prob) && (0.0..=1.0).contains(&self.drop_prob)) {
            return fail("order and drop probabilities must lie in [0, 1]");
        }
        if !(self.concept_skew.is_finite() && self.concept_skew >= 0.0) {
            return fail("concept skew must be finite and non-negative");
        }
        Ok(())
    }

    fn function_word_count(&self) -> usize {
        FUNCTION_WORDS.len().min((self.vocab_size - 4) / 2)
    }

    pub fn concept_count(&self) -> usize {
        self.vocab_size - 4 - self.function_word_count()
    }
}

/// Concept word `i`; names past the base list get a numeric suffix.
fn concept_word(i: usize) -> String {
    let base = CONCEPT_WORDS[i % CONCEPT_WORDS.len()];
    match i / CONCEPT_WORDS.len() {
        0 => base.to_string(),
        k => format!("{}{}", base, k + 1),
    }
}

/// Stable FNV-1a hash used for split assignment.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// ≈80/10/10 train/val/test by hash of the id.
pub fn split_for(id: &str) -> Split {
    match fnv1a(id) % 10 {
        0 => Split::Val,
        1 => Split::Test,
        _ => Split::Train,
    }
}

/// Latent concepts of each generated image, in region order.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTruth {
    pub concepts: Vec<Vec<usize>>,
}

pub fn generate(spec: &SyntheticSpec) -> Result<(Dataset, Corpus, Vocabulary), DataError> {
    generate_with_truth(spec).map(|(d, c, v, _)| (d, c, v))
}

/// Like [`generate`], also returning each image's concept word ids.
pub fn generate_with_truth(spec: &SyntheticSpec) -> Result<(Dataset, Corpus, Vocabulary, SyntheticTruth), DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_func = spec.function_word_count();
    let n_concepts = spec.concept_count();
    let mut words: Vec<String> = FUNCTION_WORDS[..n_func].iter().map(|s| s.to_string()).collect();
    words.extend((0..n_concepts).map(concept_word));
    let vocab = Vocabulary::new(&words);
    let func_ids: Vec<usize> = FUNCTION_WORDS[..n_func].iter().map(|w| vocab.id(w)).collect();
    let concept_ids: Vec<usize> = (0..n_concepts).map(|i| vocab.id(&concept_word(i))).collect();

    let prototypes: Vec<Vec<f64>> = (0..n_concepts).map(|_| unit_vector(spec.feature_dim, &mut rng)).collect();
    // stands in for box geometry so the region order of a caption is visible in the features
    let layout: Vec<Vec<f64>> = (0..spec.regions).map(|_| unit_vector(spec.feature_dim, &mut rng)).collect();
    // (determiner, connectors) for the two sentence templates
    let templates: [(usize, [usize; 2]); 2] = [
        (func_ids[0], [func_ids[2 % n_func], func_ids[4 % n_func]]),
        (func_ids[1 % n_func], [func_ids[3 % n_func], func_ids[5 % n_func]]),
    ];

    let per_image = spec.concepts_per_image.min(n_concepts);
    let mut images = Vec::with_capacity(spec.num_images);
    let mut truth = Vec::with_capacity(spec.num_images);
    for n in 0..spec.num_images {
        let id = format!("img{:05}", n);
        let mut chosen: Vec<usize> = rand::seq::index::sample_weighted(
            &mut rng,
            n_concepts,
            |c| concept_weight(c, spec.concept_skew),
            per_image,
        )
        .map_err(|e| DataError::Config(format!("concept sampling: {}", e)))?
        .into_vec();
        chosen.sort_unstable();
        let regions: Vec<Vec<f64>> = (0..spec.regions)
            .map(|r| {
                let proto = &prototypes[chosen[r % chosen.len()]];
                proto
                    .iter()
                    .zip(&layout[r])
                    .map(|(&p, &l)| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        p + LAYOUT_SCALE * l + spec.noise * z
                    })
                    .collect()
            })
            .collect();
        let words: Vec<usize> = chosen.iter().map(|&c| concept_ids[c]).collect();
        let captions =
            (0..spec.captions_per_image).map(|_| realize_caption(&words, &templates, spec, &mut rng)).collect();
        let record = ImageRecord::new(id.clone(), split_for(&id), regions, captions).map_err(DataError::Config)?;
        images.push(record);
        truth.push(words);
    }
    let dataset = Dataset { images };
    let corpus = Corpus::from_training_split(&dataset);
    Ok((dataset, corpus, vocab, SyntheticTruth { concepts: truth }))
}

/// Relative frequency of concept `c`.
fn concept_weight(c: usize, skew: f64) -> f64 {
    ((c + 1) as f64).powf(-skew)
}

fn unit_vector<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn realize_caption<R: Rng>(
    concepts: &[usize],
    templates: &[(usize, [usize; 2]); 2],
    spec: &SyntheticSpec,
    rng: &mut R,
) -> Vec<usize> {
    let mut order = concepts.to_vec();
    if !rng.random_bool(spec.ordered_prob) {
        order.shuffle(rng);
    }
    if order.len() > 1 && rng.random_bool(spec.drop_prob) {
        let drop = rng.random_range(0..order.len());
        order.remove(drop);
    }
    let (det, connectors) = templates[rng.random_range(0..templates.len())];
    let mut caption = Vec::with_capacity(3 * order.len() + 1);
    for (i, &w) in order.iter().enumerate() {
        if i > 0 {
            caption.push(connectors[(i - 1) % connectors.len()]);
        }
        caption.push(det);
        caption.push(w);
    }
    caption.push(crate::vocab::EOS);
    caption
}
