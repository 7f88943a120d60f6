use rand::Rng;

use crate::action::{TemplateAction, TemplateId, Vocabulary, WordId};
use crate::kg::GraphMask;
use crate::scalar::Scalar;

use super::{AgentError, FeatureVector, PolicyParams};

/// A sampled action with the log-probabilities of each choice.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision<S> {
    pub action: TemplateAction,
    pub log_prob_template: S,
    pub log_prob_fills: Vec<S>,
    pub value: S,
}

impl<S: Scalar> Decision<S> {
    pub fn log_prob(&self) -> S {
        self.log_prob_fills
            .iter()
            .fold(self.log_prob_template, |a, b| a + *b)
    }
}

/// Fill candidates for the object heads: the mask, or every entity word when
/// the mask is empty.
pub fn allowed_fills(mask: &GraphMask, vocab: &Vocabulary) -> Vec<WordId> {
    if mask.is_empty() {
        vocab.entities()
    } else {
        mask.iter().collect()
    }
}

pub(crate) fn template_logits<S: Scalar>(p: &PolicyParams<S>, x: &FeatureVector<S>) -> Vec<S> {
    let t = p.n_templates();
    let mut out = vec![S::zero(); t];
    for (i, xi) in x.nonzero() {
        let row = &p.template_w[i * t..(i + 1) * t];
        for (o, w) in out.iter_mut().zip(row) {
            *o += xi * *w;
        }
    }
    out
}

/// Object-head logits over `fills`, conditioned on `template`.
pub(crate) fn object_logits<S: Scalar>(
    p: &PolicyParams<S>,
    head: usize,
    x: &FeatureVector<S>,
    template: TemplateId,
    fills: &[WordId],
) -> Vec<S> {
    let v = p.vocab_size;
    let w = &p.object_w[head];
    let t_row = (p.feature_dim + template.0 as usize) * v;
    let mut out: Vec<S> = fills.iter().map(|f| w[t_row + f.0 as usize]).collect();
    for (i, xi) in x.nonzero() {
        let row = i * v;
        for (o, f) in out.iter_mut().zip(fills) {
            *o += xi * w[row + f.0 as usize];
        }
    }
    out
}

/// Numerically stable log-softmax.
pub(crate) fn log_softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let lse = logits
        .iter()
        .fold(S::zero(), |a, l| a + (*l - max).exp())
        .ln()
        + max;
    logits.iter().map(|l| *l - lse).collect()
}

fn check_finite<S: Scalar>(head: &'static str, logits: &[S], x: &FeatureVector<S>) -> Result<(), AgentError> {
    match logits.iter().position(|l| !l.is_finite()) {
        None => Ok(()),
        Some(i) => Err(AgentError::NonFinite {
            head,
            detail: format!(
                "index {i} = {}, feature norm {}",
                logits[i],
                x.0.iter().fold(S::zero(), |a, v| a + *v * *v).sqrt()
            ),
        }),
    }
}

/// Template probabilities at `x`.
pub fn template_distribution<S: Scalar>(p: &PolicyParams<S>, x: &FeatureVector<S>) -> Vec<S> {
    log_softmax(&template_logits(p, x))
        .into_iter()
        .map(S::exp)
        .collect()
}

fn sample<S: Scalar, R: Rng + ?Sized>(log_probs: &[S], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.as_f64().exp();
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the last bucket
    log_probs.len() - 1
}

/// Samples a template, then one fill per blank from `fills`.
pub fn act<S: Scalar, R: Rng + ?Sized>(
    p: &PolicyParams<S>,
    x: &FeatureVector<S>,
    fills: &[WordId],
    rng: &mut R,
) -> Result<Decision<S>, AgentError> {
    let logits = template_logits(p, x);
    check_finite("template", &logits, x)?;
    let lp = log_softmax(&logits);
    let t = sample(&lp, rng);
    let template = TemplateId(t as u16);
    let arity = p.arities[t] as usize;
    if arity > 0 && fills.is_empty() {
        return Err(AgentError::NoFillCandidates);
    }
    let mut chosen = Vec::with_capacity(arity);
    let mut log_prob_fills = Vec::with_capacity(arity);
    for head in 0..arity {
        let logits = object_logits(p, head, x, template, fills);
        check_finite("object", &logits, x)?;
        let lp_o = log_softmax(&logits);
        let k = sample(&lp_o, rng);
        chosen.push(fills[k]);
        log_prob_fills.push(lp_o[k]);
    }
    let value = x.dot(&p.value_w);
    if !value.is_finite() {
        return Err(AgentError::NonFinite {
            head: "value",
            detail: format!("value {value}"),
        });
    }
    Ok(Decision {
        action: TemplateAction::new(template, chosen),
        log_prob_template: lp[t],
        log_prob_fills,
        value,
    })
}
