use crate::action::{Vocabulary, WordId};
use crate::kg::{graph_mask, tokenize, KnowledgeGraph};
use crate::scalar::Scalar;
use crate::snapshot::digest;

use super::Variant;

pub const DEFAULT_BOW_DIM: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector<S>(pub Vec<S>);

impl<S: Scalar> FeatureVector<S> {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `(index, value)` for every nonzero entry.
    pub fn nonzero(&self) -> impl Iterator<Item = (usize, S)> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_zero())
            .map(|(i, v)| (i, *v))
    }

    pub fn dot(&self, w: &[S]) -> S {
        self.nonzero().fold(S::zero(), |acc, (i, v)| acc + v * w[i])
    }
}

/// Layout: `[bag of words | entity indicators | score/100 | step/max_steps]`.
#[derive(Clone, Debug)]
pub struct Featurizer {
    pub bow_dim: usize,
    /// Entity words in id order; one indicator per word.
    pub entities: Vec<WordId>,
    pub max_steps: u32,
}

impl Featurizer {
    pub fn new(vocab: &Vocabulary, bow_dim: usize, max_steps: u32) -> Self {
        Featurizer {
            bow_dim,
            entities: vocab.entities(),
            max_steps,
        }
    }

    pub fn dim(&self) -> usize {
        self.bow_dim + self.entities.len() + 2
    }

    pub fn kg_block(&self) -> std::ops::Range<usize> {
        self.bow_dim..self.bow_dim + self.entities.len()
    }

    pub fn encode<S: Scalar>(
        &self,
        text: &str,
        kg: &KnowledgeGraph,
        vocab: &Vocabulary,
        score: i64,
        steps: u32,
        variant: Variant,
    ) -> FeatureVector<S> {
        let mut x = vec![S::zero(); self.dim()];
        let mut hits = 0usize;
        for tok in tokenize(text) {
            let i = (digest(tok.as_bytes()) % self.bow_dim as u64) as usize;
            if x[i].is_zero() {
                x[i] = S::one();
                hits += 1;
            }
        }
        if hits > 0 {
            let norm = S::lit(1.0 / (hits as f64).sqrt());
            for v in &mut x[..self.bow_dim] {
                *v *= norm;
            }
        }
        if variant == Variant::WithKg {
            let mask = graph_mask(kg, vocab);
            for (j, w) in self.entities.iter().enumerate() {
                if mask.contains(*w) {
                    x[self.bow_dim + j] = S::one();
                }
            }
        }
        let n = self.dim();
        x[n - 2] = S::lit(score as f64 / 100.0);
        x[n - 1] = S::lit(steps as f64 / self.max_steps.max(1) as f64);
        FeatureVector(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Engine;
    use crate::fixtures::minigrue;
    use crate::kg::Tracker;

    #[test]
    fn variants_differ_only_in_kg_block() {
        let e = Engine::new(minigrue());
        let t = Tracker::reset(&e, 0);
        let f = Featurizer::new(&e.world().vocab, DEFAULT_BOW_DIM, e.world().max_steps);
        let v = &e.world().vocab;
        let a: FeatureVector<f64> = f.encode(&t.text, &t.kg, v, 0, 0, Variant::WithKg);
        let b: FeatureVector<f64> = f.encode(&t.text, &t.kg, v, 0, 0, Variant::TextOnly);
        assert_eq!(a, f.encode(&t.text, &t.kg, v, 0, 0, Variant::WithKg));
        let block = f.kg_block();
        for i in 0..f.dim() {
            if !block.contains(&i) {
                assert_eq!(a.0[i], b.0[i]);
            } else {
                assert_eq!(b.0[i], 0.0);
            }
        }
        assert_ne!(a, b);
        let ones = a.0[block].iter().filter(|x| **x == 1.0).count();
        assert_eq!(ones, graph_mask(&t.kg, v).len());
        assert!(a.0.iter().all(|x| x.is_finite()));
    }
}
