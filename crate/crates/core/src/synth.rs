//! Synthetic two-domain corpora for end-to-end verification.
//!
//! Both domains fill the same shared templates. Trigger slots hold either a
//! domain-specific trigger word (tagged EVENT) or a domain-specific ordinary
//! content word (tagged O); content slots hold ordinary content words. The
//! accompanying word vectors share one direction for the event/non-event
//! role across domains and add a domain offset of opposite sign along a
//! second, orthogonal direction, so a tagger that leans on the offset
//! transfers badly and a domain-invariant one does not.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;
use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Tag, TaggedSentence, Token};
use crate::error::{Error, Result};
use crate::seed;

pub const TRIGGER_SLOT: &str = "{T}";
pub const CONTENT_SLOT: &str = "{C}";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainVocabSpec {
    pub name: String,
    pub triggers: Vec<String>,
    pub others: Vec<String>,
    /// Expected EVENT tokens per token.
    pub density: f64,
    pub sentences: usize,
    /// Share of EVENT tokens that carry `tense=FUTURE` (still tagged EVENT,
    /// so realis filtering has something to remove).
    #[serde(default)]
    pub unrealized_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSpec {
    pub dim: usize,
    pub role_scale: f64,
    pub domain_shift: f64,
    pub noise: f64,
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        EmbeddingSpec {
            dim: 16,
            role_scale: 1.0,
            domain_shift: 1.5,
            noise: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub function_words: Vec<String>,
    /// Space-separated words; `{T}` is a trigger slot, `{C}` a content slot,
    /// anything else must be a function word.
    pub templates: Vec<String>,
    pub source: DomainVocabSpec,
    pub target: DomainVocabSpec,
    #[serde(default = "default_sentences_per_doc")]
    pub sentences_per_doc: usize,
    #[serde(default)]
    pub embedding: EmbeddingSpec,
}

fn default_sentences_per_doc() -> usize {
    10
}

const FUNCTION_WORDS: &[&str] = &[
    "the", "a", "an", "of", "to", "in", "on", "at", "by", "with", "from", "and", "but", "or", "that", "this",
    "was", "were", "is", "has", "had", "it", "they", "he", "she", "we", "as", "for", "after", "before", ",", ".",
];

/// Knobs for [`SyntheticSpec::generated`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSpec {
    pub n_templates: usize,
    pub content_words_per_domain: usize,
    /// Fraction of each domain's content words that are triggers.
    pub trigger_share: f64,
    pub source_density: f64,
    pub target_density: f64,
    pub sentences_per_domain: usize,
}

impl Default for GeneratedSpec {
    fn default() -> Self {
        GeneratedSpec {
            n_templates: 50,
            content_words_per_domain: 200,
            trigger_share: 0.5,
            source_density: 0.05,
            target_density: 0.10,
            sentences_per_domain: 500,
        }
    }
}

impl SyntheticSpec {
    /// Builds a spec with procedurally drawn templates and placeholder
    /// content words (`src_t000`, `tgt_o013`, ...).
    pub fn generated(g: &GeneratedSpec, seed: u64) -> SyntheticSpec {
        let mut rng = seed::rng(seed, "synth-templates");
        let function_words: Vec<String> = FUNCTION_WORDS.iter().map(|s| s.to_string()).collect();
        let mut seen = BTreeSet::new();
        let mut templates = Vec::with_capacity(g.n_templates);
        while templates.len() < g.n_templates {
            let len = rng.random_range(6..=10);
            let n_content = rng.random_range(1..=2);
            let mut slots: Vec<&str> = (0..len)
                .map(|_| FUNCTION_WORDS[rng.random_range(0..FUNCTION_WORDS.len() - 2)])
                .collect();
            let mut positions: Vec<usize> = (0..len - 1).collect();
            rand::seq::SliceRandom::shuffle(positions.as_mut_slice(), &mut rng);
            slots[positions[0]] = TRIGGER_SLOT;
            for &p in &positions[1..=n_content] {
                slots[p] = CONTENT_SLOT;
            }
            slots[len - 1] = ".";
            let t = slots.join(" ");
            if seen.insert(t.clone()) {
                templates.push(t);
            }
        }
        let n_trig = ((g.content_words_per_domain as f64) * g.trigger_share).round() as usize;
        let vocab = |prefix: &str, density: f64| DomainVocabSpec {
            name: prefix.to_string(),
            triggers: (0..n_trig).map(|i| format!("{prefix}_t{i:03}")).collect(),
            others: (0..g.content_words_per_domain - n_trig)
                .map(|i| format!("{prefix}_o{i:03}"))
                .collect(),
            density,
            sentences: g.sentences_per_domain,
            unrealized_share: 0.0,
        };
        SyntheticSpec {
            function_words,
            templates,
            source: vocab("src", g.source_density),
            target: vocab("tgt", g.target_density),
            sentences_per_doc: default_sentences_per_doc(),
            embedding: EmbeddingSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let func: BTreeSet<&str> = self.function_words.iter().map(String::as_str).collect();
        if func.is_empty() {
            return Err(Error::invalid("synthetic spec has no function words"));
        }
        let mut domain_sets = Vec::new();
        for d in [&self.source, &self.target] {
            if d.triggers.is_empty() || d.others.is_empty() {
                return Err(Error::invalid(format!("domain {} needs trigger and ordinary content words", d.name)));
            }
            if !(0.0..=1.0).contains(&d.unrealized_share) {
                return Err(Error::invalid(format!("domain {} unrealized_share out of [0,1]", d.name)));
            }
            let set: BTreeSet<&str> = d.triggers.iter().chain(&d.others).map(String::as_str).collect();
            if set.len() != d.triggers.len() + d.others.len() {
                return Err(Error::invalid(format!("domain {} repeats a content word", d.name)));
            }
            if let Some(w) = set.intersection(&func).next() {
                return Err(Error::invalid(format!("content word {w:?} of {} is also a function word", d.name)));
            }
            domain_sets.push(set);
        }
        if let Some(w) = domain_sets[0].intersection(&domain_sets[1]).next() {
            return Err(Error::invalid(format!("content vocabularies overlap on {w:?}")));
        }
        if self.templates.is_empty() {
            return Err(Error::invalid("synthetic spec has no templates"));
        }
        for t in &self.templates {
            let words: Vec<&str> = t.split_whitespace().collect();
            if !words.contains(&TRIGGER_SLOT) {
                return Err(Error::invalid(format!("template {t:?} has no trigger slot")));
            }
            if let Some(w) = words
                .iter()
                .find(|w| **w != TRIGGER_SLOT && **w != CONTENT_SLOT && !func.contains(*w))
            {
                return Err(Error::invalid(format!("template word {w:?} is not a function word")));
            }
        }
        if self.sentences_per_doc == 0 {
            return Err(Error::invalid("sentences_per_doc must be positive"));
        }
        if self.embedding.dim < 2 {
            return Err(Error::invalid("synthetic embeddings need at least 2 dimensions"));
        }
        for d in [&self.source, &self.target] {
            self.fill_probability(d)?;
        }
        Ok(())
    }

    /// Probability that a trigger slot receives a trigger word, chosen so the
    /// expected density matches the domain's.
    fn fill_probability(&self, d: &DomainVocabSpec) -> Result<f64> {
        let (mut len, mut slots) = (0.0, 0.0);
        for t in &self.templates {
            let words: Vec<&str> = t.split_whitespace().collect();
            len += words.len() as f64;
            slots += words.iter().filter(|w| **w == TRIGGER_SLOT).count() as f64;
        }
        let q = d.density * len / slots;
        if !(0.0..=1.0).contains(&q) || d.density < 0.0 {
            return Err(Error::invalid(format!(
                "density {} of {} is unreachable with these templates",
                d.density, d.name
            )));
        }
        Ok(q)
    }
}

fn generate_domain(spec: &SyntheticSpec, d: &DomainVocabSpec, rng: &mut seed::Rng) -> Result<Corpus> {
    let q = spec.fill_probability(d)?;
    let mut sentences = Vec::with_capacity(d.sentences);
    for i in 0..d.sentences {
        let template = spec.templates.choose(rng).expect("validated non-empty");
        let mut tokens = Vec::new();
        let mut tags = Vec::new();
        for w in template.split_whitespace() {
            let (word, tag) = match w {
                TRIGGER_SLOT if rng.random_bool(q) => (d.triggers.choose(rng).expect("non-empty"), Tag::Event),
                TRIGGER_SLOT | CONTENT_SLOT => (d.others.choose(rng).expect("non-empty"), Tag::O),
                _ => (&spec.function_words[spec.function_words.iter().position(|f| f == w).expect("validated")], Tag::O),
            };
            let mut tok = Token::new(word.as_str());
            if tag.is_event() && d.unrealized_share > 0.0 && rng.random_bool(d.unrealized_share) {
                tok = tok.with_attr("tense", "FUTURE");
            }
            tokens.push(tok);
            tags.push(tag);
        }
        let doc = format!("{}-d{:04}", d.name, i / spec.sentences_per_doc);
        sentences.push(TaggedSentence::new(doc, i % spec.sentences_per_doc, tokens, tags)?);
    }
    Ok(Corpus::new(d.name.clone(), sentences))
}

/// Generates the (source, target) pair; deterministic per seed.
pub fn make_synthetic_pair(spec: &SyntheticSpec, seed: u64) -> Result<(Corpus, Corpus)> {
    spec.validate()?;
    let mut rng = seed::rng(seed, "synth-source");
    let source = generate_domain(spec, &spec.source, &mut rng)?;
    let mut rng = seed::rng(seed, "synth-target");
    let target = generate_domain(spec, &spec.target, &mut rng)?;
    Ok((source, target))
}

/// Two orthonormal directions drawn from `rng` (Gram-Schmidt on Gaussian
/// draws).
fn orthonormal_pair(dim: usize, rng: &mut seed::Rng) -> (Vec<f64>, Vec<f64>) {
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let unit = |mut v: Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        v
    };
    let r = unit((0..dim).map(|_| std.sample(rng)).collect());
    let mut u: Vec<f64> = (0..dim).map(|_| std.sample(rng)).collect();
    let dot: f64 = u.iter().zip(&r).map(|(a, b)| a * b).sum();
    u.iter_mut().zip(&r).for_each(|(a, b)| *a -= dot * b);
    (r, unit(u))
}

/// Word vectors for every word of the spec, in a fixed order: function
/// words, then source triggers/others, then target triggers/others.
///
/// Each vector is `role * role_scale * r + side * domain_shift * u + noise`
/// for a shared role direction `r` and a domain direction `u` orthogonal to
/// it. Role is +1 for triggers, -1 for other content words and 0 for
/// function words; side is -1 for source content, +1 for target content
/// and 0 for function words.
pub fn synthetic_word_vectors(spec: &SyntheticSpec, seed: u64) -> Result<Vec<(String, Vec<f64>)>> {
    spec.validate()?;
    let e = &spec.embedding;
    let noise = Normal::new(0.0, e.noise).map_err(|_| Error::invalid("embedding noise must be finite and >= 0"))?;
    let mut rng = seed::rng(seed, "synth-vectors");
    let (r, u) = orthonormal_pair(e.dim, &mut rng);
    let mut out = Vec::new();
    let mut push = |word: &String, role: f64, side: f64, rng: &mut seed::Rng| {
        let v: Vec<f64> = (0..e.dim)
            .map(|k| role * e.role_scale * r[k] + side * e.domain_shift * u[k] + noise.sample(rng))
            .collect();
        out.push((word.clone(), v));
    };
    for w in &spec.function_words {
        push(w, 0.0, 0.0, &mut rng);
    }
    for (d, side) in [(&spec.source, -1.0), (&spec.target, 1.0)] {
        for w in &d.triggers {
            push(w, 1.0, side, &mut rng);
        }
        for w in &d.others {
            push(w, -1.0, side, &mut rng);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{compute_stats, parse_tsv, write_tsv};

    #[test]
    fn measured_density_tracks_spec() {
        let spec = SyntheticSpec::generated(&GeneratedSpec::default(), 11);
        let (s, t) = make_synthetic_pair(&spec, 11).unwrap();
        assert_eq!(s.sentences.len(), 500);
        assert_eq!(t.sentences.len(), 500);
        let ds = compute_stats(&s).unwrap().density;
        let dt = compute_stats(&t).unwrap().density;
        assert!((ds - 0.05).abs() <= 0.01, "source density {ds}");
        assert!((dt - 0.10).abs() <= 0.01, "target density {dt}");
    }

    #[test]
    fn identical_seeds_identical_bytes() {
        let spec = SyntheticSpec::generated(&GeneratedSpec::default(), 3);
        let (a1, b1) = make_synthetic_pair(&spec, 5).unwrap();
        let (a2, b2) = make_synthetic_pair(&spec, 5).unwrap();
        assert_eq!(write_tsv(&a1), write_tsv(&a2));
        assert_eq!(write_tsv(&b1), write_tsv(&b2));
        let (a3, _) = make_synthetic_pair(&spec, 6).unwrap();
        assert_ne!(write_tsv(&a1), write_tsv(&a3));
    }

    #[test]
    fn round_trips_through_tsv() {
        let spec = SyntheticSpec::generated(&GeneratedSpec::default(), 3);
        let (s, _) = make_synthetic_pair(&spec, 5).unwrap();
        let text = write_tsv(&s);
        let back = parse_tsv(&s.name, &text).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn vocabularies_disjoint() {
        let spec = SyntheticSpec::generated(&GeneratedSpec::default(), 3);
        let (s, t) = make_synthetic_pair(&spec, 5).unwrap();
        let func: BTreeSet<&str> = spec.function_words.iter().map(String::as_str).collect();
        let content = |c: &Corpus| -> BTreeSet<String> {
            c.sentences
                .iter()
                .flat_map(|s| s.tokens.iter())
                .map(|t| t.surface.clone())
                .filter(|w| !func.contains(w.as_str()))
                .collect()
        };
        assert!(content(&s).is_disjoint(&content(&t)));
    }

    #[test]
    fn overlap_rejected() {
        let mut spec = SyntheticSpec::generated(&GeneratedSpec::default(), 3);
        spec.target.others[0] = spec.source.triggers[0].clone();
        assert!(make_synthetic_pair(&spec, 1).is_err());
    }

    #[test]
    fn word_vectors_cover_vocab() {
        let spec = SyntheticSpec::generated(&GeneratedSpec::default(), 3);
        let v = synthetic_word_vectors(&spec, 1).unwrap();
        assert_eq!(v.len(), spec.function_words.len() + 400);
        assert!(v.iter().all(|(_, x)| x.len() == spec.embedding.dim));
    }
}
