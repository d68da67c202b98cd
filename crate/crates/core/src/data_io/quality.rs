use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierModel;
use crate::error::{Error, Result};
use crate::ink::{preprocess, to_line_features, InkSequence, PreprocessConfig};

/// Something that assigns a class to raw ink.
pub trait Recognizer {
    fn classes(&self) -> usize;
    /// `Ok(None)` when the ink cannot be classified at all.
    fn classify(&self, ink: &InkSequence) -> Result<Option<usize>>;
}

/// A drawn character and whether drawing hit the length cap.
#[derive(Clone, Debug, PartialEq)]
pub struct Drawn {
    pub ink: InkSequence,
    pub truncated: bool,
}

/// Something that draws characters of a requested class.
pub trait CharacterSource {
    fn classes(&self) -> usize;
    fn draw(&self, class_id: usize, rng: &mut ChaCha8Rng) -> Result<Drawn>;
}

impl Recognizer for ClassifierModel {
    fn classes(&self) -> usize {
        self.spec().classes
    }

    /// Recognition preprocessing, then an eval-mode forward pass. Ink that
    /// preprocessing rejects is unclassifiable.
    fn classify(&self, ink: &InkSequence) -> Result<Option<usize>> {
        let feats = match preprocess(ink, &PreprocessConfig::RECOGNITION).and_then(|s| to_line_features(&s)) {
            Ok(f) => f,
            Err(Error::EmptyInk | Error::DegenerateInk(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        self.predict(&feats).map(Some)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassQuality {
    pub class: usize,
    pub accuracy: f64,
    /// Most frequent wrong prediction, if any sample was misclassified.
    pub most_confused_with: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub overall: f64,
    pub per_class: BTreeMap<usize, f64>,
    /// Lowest-accuracy classes, worst first.
    pub worst: Vec<ClassQuality>,
    pub samples: usize,
    pub truncated: usize,
    pub unclassifiable: usize,
}

/// Draws `n_per_class` characters of each listed class and scores how many
/// the recognizer assigns back to their class. Each class draws from its
/// own stream seeded by `rng`, in the order given.
pub fn quality_report<G, C, R>(gen: &G, clf: &C, classes: &[usize], n_per_class: usize, worst_k: usize, rng: &mut R) -> Result<QualityReport>
where
    G: CharacterSource + ?Sized,
    C: Recognizer + ?Sized,
    R: Rng + ?Sized,
{
    if gen.classes() != clf.classes() {
        return Err(Error::Config(format!(
            "generator draws {} classes but the classifier knows {}",
            gen.classes(),
            clf.classes()
        )));
    }
    if let Some(&c) = classes.iter().find(|&&c| c >= clf.classes()) {
        return Err(Error::Config(format!("class {c} is outside the shared inventory of {}", clf.classes())));
    }
    if classes.is_empty() || n_per_class == 0 {
        return Err(Error::InvalidConfig("quality report needs classes and samples".into()));
    }
    let mut per_class = BTreeMap::new();
    let mut qualities = Vec::with_capacity(classes.len());
    let (mut correct, mut truncated, mut unclassifiable) = (0, 0, 0);
    for &class in classes {
        let mut class_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let mut wrong: BTreeMap<usize, usize> = BTreeMap::new();
        let mut hits = 0;
        for _ in 0..n_per_class {
            let drawn = gen.draw(class, &mut class_rng)?;
            truncated += drawn.truncated as usize;
            match clf.classify(&drawn.ink)? {
                Some(p) if p == class => hits += 1,
                Some(p) => *wrong.entry(p).or_default() += 1,
                None => unclassifiable += 1,
            }
        }
        correct += hits;
        let accuracy = hits as f64 / n_per_class as f64;
        per_class.insert(class, accuracy);
        // Ties between confusions go to the lower class id.
        let most_confused_with = wrong
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(&c, _)| c);
        qualities.push(ClassQuality {
            class,
            accuracy,
            most_confused_with,
        });
    }
    qualities.sort_by(|a, b| a.accuracy.total_cmp(&b.accuracy).then(a.class.cmp(&b.class)));
    qualities.truncate(worst_k);
    Ok(QualityReport {
        overall: correct as f64 / (classes.len() * n_per_class) as f64,
        per_class,
        worst: qualities,
        samples: classes.len() * n_per_class,
        truncated,
        unclassifiable,
    })
}
