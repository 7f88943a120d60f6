use crate::scalar::Scalar;

use super::policy::{log_softmax, object_logits, template_logits};
use super::{AgentError, PolicyParams, Rollout, TrainingConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossStats<S> {
    /// `-Σ A·log π(a)`
    pub policy: S,
    /// `Σ (R - V)²`
    pub value: S,
    /// `Σ H(template head)`
    pub entropy: S,
    /// `policy + c_v·value - c_e·entropy`
    pub total: S,
}

/// Discounted returns, bootstrapped from the value of `rollout.bootstrap`
/// unless the last step ended the episode, and advantages `R - V`.
pub fn returns_and_advantages<S: Scalar>(
    p: &PolicyParams<S>,
    rollout: &Rollout<S>,
    gamma: S,
) -> (Vec<S>, Vec<S>) {
    let n = rollout.steps.len();
    let mut returns = vec![S::zero(); n];
    let mut running = match (&rollout.bootstrap, rollout.steps.last()) {
        (Some(x), Some(last)) if !last.done => x.dot(&p.value_w),
        _ => S::zero(),
    };
    for (i, step) in rollout.steps.iter().enumerate().rev() {
        if step.done {
            running = S::zero();
        }
        running = step.reward + gamma * running;
        returns[i] = running;
    }
    let advantages = rollout
        .steps
        .iter()
        .zip(&returns)
        .map(|(s, r)| *r - s.features.dot(&p.value_w))
        .collect();
    (returns, advantages)
}

/// Loss at `p` with returns and advantages held fixed.
pub fn loss<S: Scalar>(
    p: &PolicyParams<S>,
    rollout: &Rollout<S>,
    returns: &[S],
    advantages: &[S],
    cfg: &TrainingConfig<S>,
) -> LossStats<S> {
    let mut stats = LossStats::default();
    for ((step, ret), adv) in rollout.steps.iter().zip(returns).zip(advantages) {
        let x = &step.features;
        let lp = log_softmax(&template_logits(p, x));
        let t = step.action.template;
        let mut log_prob = lp[t.0 as usize];
        for (head, fill) in step.action.fills.iter().enumerate() {
            let lo = log_softmax(&object_logits(p, head, x, t, &step.fills));
            let k = step.fills.iter().position(|f| f == fill).expect("fill in candidates");
            log_prob += lo[k];
        }
        stats.policy -= *adv * log_prob;
        let v = x.dot(&p.value_w);
        stats.value += (*ret - v) * (*ret - v);
        stats.entropy -= lp.iter().fold(S::zero(), |a, l| a + l.exp() * *l);
    }
    stats.total = stats.policy + cfg.value_coef * stats.value - cfg.entropy_coef * stats.entropy;
    stats
}

/// Analytic gradient of [`loss`] with respect to every parameter.
pub fn gradient<S: Scalar>(
    p: &PolicyParams<S>,
    rollout: &Rollout<S>,
    returns: &[S],
    advantages: &[S],
    cfg: &TrainingConfig<S>,
) -> PolicyParams<S> {
    let mut g = p.zeros_like();
    let nt = p.n_templates();
    let nv = p.vocab_size;
    for ((step, ret), adv) in rollout.steps.iter().zip(returns).zip(advantages) {
        let x = &step.features;
        let t = step.action.template.0 as usize;

        // d loss / d template logit k:
        //   policy:   -A (1[k=t] - p_k)
        //   entropy:  c_e p_k (log p_k + H)
        let lp = log_softmax(&template_logits(p, x));
        let entropy = -lp.iter().fold(S::zero(), |a, l| a + l.exp() * *l);
        let dlogit: Vec<S> = lp
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let pk = l.exp();
                let ind = if k == t { S::one() } else { S::zero() };
                -*adv * (ind - pk) + cfg.entropy_coef * pk * (*l + entropy)
            })
            .collect();
        for (i, xi) in x.nonzero() {
            let row = &mut g.template_w[i * nt..(i + 1) * nt];
            for (gw, d) in row.iter_mut().zip(&dlogit) {
                *gw += xi * *d;
            }
        }

        for (head, fill) in step.action.fills.iter().enumerate() {
            let lo = log_softmax(&object_logits(p, head, x, step.action.template, &step.fills));
            let gw = &mut g.object_w[head];
            let t_row = (p.feature_dim + t) * nv;
            for (f, l) in step.fills.iter().zip(&lo) {
                let ind = if f == fill { S::one() } else { S::zero() };
                let d = -*adv * (ind - l.exp());
                let col = f.0 as usize;
                gw[t_row + col] += d;
                for (i, xi) in x.nonzero() {
                    gw[i * nv + col] += xi * d;
                }
            }
        }

        let v = x.dot(&p.value_w);
        let dv = -S::lit(2.0) * cfg.value_coef * (*ret - v);
        for (i, xi) in x.nonzero() {
            g.value_w[i] += dv * xi;
        }
    }
    g
}

/// One gradient step on a rollout. Parameters are left untouched when the
/// loss or gradient is not finite.
pub fn a2c_update<S: Scalar>(
    p: &PolicyParams<S>,
    rollout: &Rollout<S>,
    cfg: &TrainingConfig<S>,
) -> Result<(PolicyParams<S>, LossStats<S>), AgentError> {
    if rollout.steps.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    let (returns, advantages) = returns_and_advantages(p, rollout, cfg.gamma);
    let stats = loss(p, rollout, &returns, &advantages, cfg);
    let nan = AgentError::NanLoss {
        policy: stats.policy.as_f64(),
        value: stats.value.as_f64(),
        entropy: stats.entropy.as_f64(),
    };
    if !stats.total.is_finite() {
        return Err(nan);
    }
    let mut g = gradient(p, rollout, &returns, &advantages, cfg);
    let norm = g.norm();
    if !norm.is_finite() {
        return Err(nan);
    }
    if let Some(max) = cfg.max_grad_norm {
        if norm > max {
            g.scale(max / norm);
        }
    }
    let mut next = p.clone();
    next.axpy(-cfg.learning_rate, &g);
    Ok((next, stats))
}
