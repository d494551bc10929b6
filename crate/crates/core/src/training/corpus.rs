use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MocError, Result};
use crate::model::TokenBatch;
use crate::numerics::RngState;

/// Settings for the synthetic pretraining corpus: a sparse random Markov
/// chain where every token has `branching` possible successors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train_tokens: usize,
    pub eval_tokens: usize,
    pub branching: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { train_tokens: 200_000, eval_tokens: 20_000, branching: 4, seed: 1234 }
    }
}

/// Train and held-out token streams; batches are windows into them.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenCorpus {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

fn window_batch(stream: &[usize], starts: &[usize], seq_len: usize) -> Result<TokenBatch> {
    let mut tokens = Vec::with_capacity(starts.len() * seq_len);
    for &s in starts {
        tokens.extend_from_slice(&stream[s..s + seq_len]);
    }
    TokenBatch::new(tokens, starts.len(), seq_len)
}

impl TokenCorpus {
    pub fn new(train: Vec<usize>, eval: Vec<usize>) -> Self {
        TokenCorpus { train, eval }
    }

    pub fn markov(vocab: usize, cfg: &DataConfig) -> Result<Self> {
        if vocab < 2 || cfg.branching == 0 || cfg.branching > vocab {
            return Err(MocError::config(format!(
                "markov corpus needs 1 <= branching ({}) <= vocab ({vocab}) and vocab >= 2",
                cfg.branching
            )));
        }
        let root = RngState::new(cfg.seed);
        let mut rng = root.named("markov/transitions").rng();
        let table: Vec<(Vec<usize>, Vec<f64>)> = (0..vocab)
            .map(|_| {
                let next = sample(&mut rng, vocab, cfg.branching).into_vec();
                let w: Vec<f64> = (0..cfg.branching).map(|_| rng.gen::<f64>() + 0.1).collect();
                let z: f64 = w.iter().sum();
                let mut acc = 0.0;
                let cdf = w.iter().map(|x| {
                    acc += x / z;
                    acc
                });
                (next, cdf.collect())
            })
            .collect();
        let walk = |label: &str, n: usize| {
            let mut rng = root.named(label).rng();
            let mut cur = rng.gen_range(0..vocab);
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                out.push(cur);
                let (next, cdf) = &table[cur];
                let u: f64 = rng.gen();
                let i = cdf.iter().position(|&c| u < c).unwrap_or(next.len() - 1);
                cur = next[i];
            }
            out
        };
        Ok(TokenCorpus { train: walk("markov/train", cfg.train_tokens), eval: walk("markov/eval", cfg.eval_tokens) })
    }

    pub fn check_fits(&self, seq_len: usize) -> Result<()> {
        if self.train.len() < seq_len || self.eval.len() < seq_len {
            return Err(MocError::config(format!(
                "corpus splits ({} train, {} eval tokens) are shorter than seq_len {seq_len}",
                self.train.len(),
                self.eval.len()
            )));
        }
        Ok(())
    }

    /// Uniformly placed training windows drawn from `rng`.
    pub fn sample_batch(&self, rng: RngState, batch: usize, seq_len: usize) -> Result<TokenBatch> {
        self.check_fits(seq_len)?;
        let mut r = rng.rng();
        let starts: Vec<usize> = (0..batch).map(|_| r.gen_range(0..=self.train.len() - seq_len)).collect();
        window_batch(&self.train, &starts, seq_len)
    }

    /// Fixed, evenly spaced held-out windows.
    pub fn eval_batches(&self, n_batches: usize, batch: usize, seq_len: usize) -> Result<Vec<TokenBatch>> {
        self.check_fits(seq_len)?;
        let n = n_batches * batch;
        let span = self.eval.len() - seq_len;
        let starts: Vec<usize> = (0..n).map(|i| if n > 1 { i * span / (n - 1) } else { 0 }).collect();
        starts.chunks(batch).map(|c| window_batch(&self.eval, c, seq_len)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markov_is_deterministic_and_sparse() {
        let cfg = DataConfig { train_tokens: 5000, eval_tokens: 500, branching: 3, seed: 9 };
        let a = TokenCorpus::markov(50, &cfg).unwrap();
        assert_eq!(a, TokenCorpus::markov(50, &cfg).unwrap());
        let mut succ = vec![std::collections::BTreeSet::new(); 50];
        for w in a.train.windows(2) {
            succ[w[0]].insert(w[1]);
        }
        assert!(succ.iter().all(|s| s.len() <= 3));
        assert!(a.train.iter().all(|&t| t < 50));
    }

    #[test]
    fn batches_have_requested_shape() {
        let c = TokenCorpus::new((0..100).collect(), (0..40).collect());
        let b = c.sample_batch(RngState::new(1), 3, 10).unwrap();
        assert_eq!((b.batch, b.seq_len), (3, 10));
        for r in 0..3 {
            let row = b.row(r);
            assert!(row.windows(2).all(|w| w[1] == w[0] + 1));
        }
        let e = c.eval_batches(2, 2, 10).unwrap();
        assert_eq!(e[0].row(0)[0], 0);
        assert_eq!(e[1].row(1)[9], 39);
        assert!(c.sample_batch(RngState::new(1), 1, 41).is_err());
    }
}
