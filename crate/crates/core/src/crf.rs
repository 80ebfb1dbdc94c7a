//! Linear-chain CRF with a separate transition matrix at every step.
//!
//! The score of a tag path `y` over `T` steps is
//! `sum_{t<T-1} W_t[y_{t+1}][y_t] + sum_t u_t[y_t]`, and
//! `p(y) = exp(score(y) - log Z)` with `Z` summed over all `4^T` paths.
//! The transition block of the last step is never read.
//!
//! Everything here is `f64`.

use crate::error::{Error, Result};
use crate::tagging::{Tag, TagSequence, TransitionMask, NUM_TAGS};

const K: usize = NUM_TAGS;

/// CRF parameters at one position.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepPotentials {
    /// `transition[to][from]`, scoring the move from this step to the next.
    pub transition: [[f64; K]; K],
    pub unary: [f64; K],
}

impl StepPotentials {
    pub const WIDTH: usize = K * K + K;

    /// Reads 20 numbers: 16 transition scores row-major `[to][from]`, then 4 unaries.
    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), Self::WIDTH);
        let mut p = StepPotentials::default();
        for to in 0..K {
            p.transition[to].copy_from_slice(&v[to * K..(to + 1) * K]);
        }
        p.unary.copy_from_slice(&v[K * K..]);
        p
    }

    pub fn write_to(&self, out: &mut [f64]) {
        for to in 0..K {
            out[to * K..(to + 1) * K].copy_from_slice(&self.transition[to]);
        }
        out[K * K..].copy_from_slice(&self.unary);
    }

    fn is_finite(&self) -> bool {
        self.unary.iter().chain(self.transition.iter().flatten()).all(|x| x.is_finite())
    }
}

/// Per-step tag marginals and pairwise marginals between consecutive steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub unary: Vec<[f64; K]>,
    /// `pairwise[t][to][from] = p(y_t = from, y_{t+1} = to)`, `T - 1` entries.
    pub pairwise: Vec<[[f64; K]; K]>,
    pub log_partition: f64,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn check(potentials: &[StepPotentials]) -> Result<()> {
    if potentials.is_empty() {
        return Err(Error::EmptySequence);
    }
    if let Some(t) = potentials.iter().position(|p| !p.is_finite()) {
        return Err(Error::Shape(format!("non-finite potential at step {t}")));
    }
    Ok(())
}

/// Forward log-messages: `alpha[t][j]` = log-sum of scores of prefixes ending in `j` at `t`.
fn forward(potentials: &[StepPotentials]) -> Vec<[f64; K]> {
    let mut alpha = Vec::with_capacity(potentials.len());
    alpha.push(potentials[0].unary);
    let mut buf = [0.0; K];
    for t in 1..potentials.len() {
        let prev = &alpha[t - 1];
        let w = &potentials[t - 1].transition;
        let mut next = [0.0; K];
        for (to, slot) in next.iter_mut().enumerate() {
            for from in 0..K {
                buf[from] = prev[from] + w[to][from];
            }
            *slot = potentials[t].unary[to] + log_sum_exp(&buf);
        }
        alpha.push(next);
    }
    alpha
}

/// Backward log-messages: `beta[t][i]` = log-sum of suffix scores after `t` given `y_t = i`.
fn backward(potentials: &[StepPotentials]) -> Vec<[f64; K]> {
    let n = potentials.len();
    let mut beta = vec![[0.0; K]; n];
    let mut buf = [0.0; K];
    for t in (0..n - 1).rev() {
        let w = &potentials[t].transition;
        for from in 0..K {
            for to in 0..K {
                buf[to] = w[to][from] + potentials[t + 1].unary[to] + beta[t + 1][to];
            }
            beta[t][from] = log_sum_exp(&buf);
        }
    }
    beta
}

pub fn log_partition(potentials: &[StepPotentials]) -> Result<f64> {
    check(potentials)?;
    let alpha = forward(potentials);
    Ok(log_sum_exp(alpha.last().expect("non-empty")))
}

/// Unnormalised log score of one tag path.
pub fn path_score(potentials: &[StepPotentials], tags: &[Tag]) -> Result<f64> {
    if tags.len() != potentials.len() {
        return Err(Error::Shape(format!(
            "{} tags for {} steps",
            tags.len(),
            potentials.len()
        )));
    }
    let unary: f64 = potentials.iter().zip(tags).map(|(p, y)| p.unary[y.index()]).sum();
    let trans: f64 = tags
        .windows(2)
        .zip(potentials)
        .map(|(w, p)| p.transition[w[1].index()][w[0].index()])
        .sum();
    Ok(unary + trans)
}

/// `p(tags)` under the full (unmasked) distribution.
pub fn sequence_probability(potentials: &[StepPotentials], tags: &[Tag]) -> Result<f64> {
    let z = log_partition(potentials)?;
    Ok((path_score(potentials, tags)? - z).exp().clamp(0.0, 1.0))
}

pub fn marginals(potentials: &[StepPotentials]) -> Result<Marginals> {
    check(potentials)?;
    let alpha = forward(potentials);
    let beta = backward(potentials);
    let z = log_sum_exp(alpha.last().expect("non-empty"));
    let unary = alpha
        .iter()
        .zip(&beta)
        .map(|(a, b)| std::array::from_fn(|k| (a[k] + b[k] - z).exp()))
        .collect();
    let pairwise = (0..potentials.len() - 1)
        .map(|t| {
            let w = &potentials[t].transition;
            std::array::from_fn(|to| {
                std::array::from_fn(|from| {
                    (alpha[t][from] + w[to][from] + potentials[t + 1].unary[to] + beta[t + 1][to] - z).exp()
                })
            })
        })
        .collect();
    Ok(Marginals {
        unary,
        pairwise,
        log_partition: z,
    })
}

/// Negative log-likelihood of `gold` and its gradient with respect to every potential.
///
/// The gradient is `marginal - indicator(gold)`; the last step's transition
/// gradient is zero.
pub fn nll_and_gradients(potentials: &[StepPotentials], gold: &TagSequence) -> Result<(f64, Vec<StepPotentials>)> {
    if gold.len() != potentials.len() {
        return Err(Error::Shape(format!(
            "gold has {} tags for {} steps",
            gold.len(),
            potentials.len()
        )));
    }
    let m = marginals(potentials)?;
    let score = path_score(potentials, gold.tags())?;
    let loss = (m.log_partition - score).max(0.0);
    let mut grads = vec![StepPotentials::default(); potentials.len()];
    for (t, g) in grads.iter_mut().enumerate() {
        g.unary = m.unary[t];
        g.unary[gold.0[t].index()] -= 1.0;
        if let Some(pair) = m.pairwise.get(t) {
            g.transition = *pair;
            g.transition[gold.0[t + 1].index()][gold.0[t].index()] -= 1.0;
        }
    }
    Ok((loss, grads))
}

/// Highest-scoring path, optionally restricted to what `mask` admits.
///
/// Ties go to the lowest tag index, both for the final tag and at every
/// backpointer.
pub fn viterbi(potentials: &[StepPotentials], mask: Option<&TransitionMask>) -> Result<TagSequence> {
    check(potentials)?;
    let n = potentials.len();
    let allowed = |from: usize, to: usize| mask.map_or(true, |m| m.allowed[from][to]);
    let mut delta: [f64; K] = std::array::from_fn(|k| {
        if mask.map_or(true, |m| m.start[k]) {
            potentials[0].unary[k]
        } else {
            f64::NEG_INFINITY
        }
    });
    let mut back: Vec<[usize; K]> = Vec::with_capacity(n.saturating_sub(1));
    for t in 1..n {
        let w = &potentials[t - 1].transition;
        let mut next = [f64::NEG_INFINITY; K];
        let mut ptr = [0usize; K];
        for to in 0..K {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for from in 0..K {
                if !allowed(from, to) || delta[from] == f64::NEG_INFINITY {
                    continue;
                }
                let s = delta[from] + w[to][from];
                if s > best {
                    best = s;
                    arg = from;
                }
            }
            ptr[to] = arg;
            next[to] = best + potentials[t].unary[to];
        }
        back.push(ptr);
        delta = next;
    }
    let mut last = None;
    let mut best = f64::NEG_INFINITY;
    for (k, &d) in delta.iter().enumerate() {
        if mask.map_or(true, |m| m.end[k]) && d > best {
            best = d;
            last = Some(k);
        }
    }
    let mut cur = last.ok_or_else(|| Error::Shape("mask admits no tag path".into()))?;
    let mut tags = vec![Tag::Bef; n];
    tags[n - 1] = Tag::ALL[cur];
    for t in (1..n).rev() {
        cur = back[t - 1][cur];
        tags[t - 1] = Tag::ALL[cur];
    }
    Ok(TagSequence(tags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagging::valid_transitions;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use Tag::*;

    fn zeros(n: usize) -> Vec<StepPotentials> {
        vec![StepPotentials::default(); n]
    }

    fn random(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<StepPotentials> {
        (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..StepPotentials::WIDTH).map(|_| rng.gen_range(-scale..scale)).collect();
                StepPotentials::from_slice(&v)
            })
            .collect()
    }

    /// All 4^n paths with their scores; independent of the DP code.
    fn enumerate(p: &[StepPotentials]) -> Vec<(Vec<Tag>, f64)> {
        let n = p.len() as u32;
        (0..4usize.pow(n))
            .map(|code| {
                let tags: Vec<Tag> = (0..n).map(|k| Tag::ALL[(code / 4usize.pow(k)) % 4]).collect();
                let mut s = 0.0;
                for t in 0..tags.len() {
                    s += p[t].unary[tags[t].index()];
                    if t + 1 < tags.len() {
                        s += p[t].transition[tags[t + 1].index()][tags[t].index()];
                    }
                }
                (tags, s)
            })
            .collect()
    }

    #[test]
    fn uniform_partitions() {
        assert!((log_partition(&zeros(1)).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!((log_partition(&zeros(2)).unwrap() - 16f64.ln()).abs() < 1e-12);
        assert!(matches!(log_partition(&[]), Err(Error::EmptySequence)));
    }

    #[test]
    fn partition_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=6 {
            let p = random(n, 3.0, &mut rng);
            let scores: Vec<f64> = enumerate(&p).into_iter().map(|(_, s)| s).collect();
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let brute = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
            assert!((log_partition(&p).unwrap() - brute).abs() < 1e-9);
        }
    }

    #[test]
    fn large_scores_stay_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random(30, 1000.0, &mut rng);
        let z = log_partition(&p).unwrap();
        assert!(z.is_finite());
        let m = marginals(&p).unwrap();
        assert!(m.unary.iter().all(|u| (u.iter().sum::<f64>() - 1.0).abs() < 1e-9));
    }

    #[test]
    fn uniform_and_softmax_marginals() {
        let m = marginals(&zeros(3)).unwrap();
        assert!(m.unary.iter().flatten().all(|&x| (x - 0.25).abs() < 1e-12));
        let mut p = StepPotentials::default();
        p.unary = [1f64.ln(), 2f64.ln(), 3f64.ln(), 4f64.ln()];
        let m = marginals(&[p]).unwrap();
        for (got, want) in m.unary[0].iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn pairwise_consistent_with_unary() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random(5, 3.0, &mut rng);
        let m = marginals(&p).unwrap();
        for t in 0..4 {
            for from in 0..4 {
                let s: f64 = (0..4).map(|to| m.pairwise[t][to][from]).sum();
                assert!((s - m.unary[t][from]).abs() < 1e-12);
            }
            for to in 0..4 {
                let s: f64 = (0..4).map(|from| m.pairwise[t][to][from]).sum();
                assert!((s - m.unary[t + 1][to]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nll_zero_potentials() {
        let gold = TagSequence(vec![Bef, Beg, Aft]);
        let (loss, grads) = nll_and_gradients(&zeros(3), &gold).unwrap();
        assert!((loss - 3.0 * 4f64.ln()).abs() < 1e-12);
        for g in &grads {
            assert!(g.unary.iter().sum::<f64>().abs() < 1e-12);
        }
        assert!(grads[2].transition.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn nll_saturated_gold() {
        let gold = TagSequence(vec![Bef, Beg, In, Aft]);
        let p: Vec<StepPotentials> = (0..4)
            .map(|t| {
                let mut s = StepPotentials::default();
                s.unary = [-30.0; 4];
                s.unary[gold.0[t].index()] = 30.0;
                s.transition = [[-30.0; 4]; 4];
                if t + 1 < 4 {
                    s.transition[gold.0[t + 1].index()][gold.0[t].index()] = 30.0;
                }
                s
            })
            .collect();
        let (loss, _) = nll_and_gradients(&p, &gold).unwrap();
        assert!(loss <= 1e-9, "{loss}");
        assert!(nll_and_gradients(&p, &TagSequence(vec![Bef])).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        for n in 1..=6 {
            let p = random(n, 2.0, &mut rng);
            let gold = TagSequence((0..n).map(|_| Tag::ALL[rng.gen_range(0..4)]).collect());
            let (_, grads) = nll_and_gradients(&p, &gold).unwrap();
            let f = |q: &[StepPotentials]| log_partition(q).unwrap() - path_score(q, gold.tags()).unwrap();
            for t in 0..n {
                for k in 0..StepPotentials::WIDTH {
                    let mut flat = [0.0; StepPotentials::WIDTH];
                    let mut q = p.clone();
                    q[t].write_to(&mut flat);
                    flat[k] += h;
                    q[t] = StepPotentials::from_slice(&flat);
                    let up = f(&q);
                    flat[k] -= 2.0 * h;
                    q[t] = StepPotentials::from_slice(&flat);
                    let down = f(&q);
                    let numeric = (up - down) / (2.0 * h);
                    let mut g = [0.0; StepPotentials::WIDTH];
                    grads[t].write_to(&mut g);
                    let err = (numeric - g[k]).abs() / numeric.abs().max(g[k].abs()).max(1e-6);
                    assert!(err <= 1e-5, "t={t} k={k} analytic={} numeric={numeric}", g[k]);
                }
            }
        }
    }

    #[test]
    fn viterbi_zero_potentials_masked_is_all_bef() {
        let mask = valid_transitions();
        assert_eq!(viterbi(&zeros(5), Some(&mask)).unwrap(), TagSequence::all_bef(5));
        assert_eq!(viterbi(&zeros(5), None).unwrap(), TagSequence::all_bef(5));
    }

    #[test]
    fn viterbi_joseph_path() {
        let want = [Bef, Bef, Bef, Beg, In, In, Aft, Aft];
        let p: Vec<StepPotentials> = want
            .iter()
            .map(|y| {
                let mut s = StepPotentials::default();
                s.unary[y.index()] = 2.0;
                s
            })
            .collect();
        assert_eq!(viterbi(&p, Some(&valid_transitions())).unwrap().0, want);
    }

    #[test]
    fn viterbi_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let n = rng.gen_range(1..=6);
            let p = random(n, 3.0, &mut rng);
            let best = viterbi(&p, None).unwrap();
            let all = enumerate(&p);
            let max = all.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
            assert!((path_score(&p, best.tags()).unwrap() - max).abs() < 1e-9);
        }
    }

    #[test]
    fn masked_viterbi_respects_grammar() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mask = valid_transitions();
        for _ in 0..500 {
            let n = rng.gen_range(1..=10);
            let p = random(n, 5.0, &mut rng);
            assert!(viterbi(&p, Some(&mask)).unwrap().is_well_formed());
        }
    }

    #[test]
    fn shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let p = random(4, 3.0, &mut rng);
        let mut q = p.clone();
        for s in &mut q {
            s.unary.iter_mut().for_each(|u| *u += 2.5);
        }
        let (a, b) = (marginals(&p).unwrap(), marginals(&q).unwrap());
        assert!((b.log_partition - a.log_partition - 4.0 * 2.5).abs() < 1e-9);
        for (x, y) in a.unary.iter().flatten().zip(b.unary.iter().flatten()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(viterbi(&p, None).unwrap(), viterbi(&q, None).unwrap());
    }
}
