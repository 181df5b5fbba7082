#![allow(dead_code)]

use ettrl::policy::{prompt_fingerprint, ContextKey, PolicyParams};
use ettrl::primitives::{RngStream, TokenId, Vocabulary};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn prompt() -> Vec<TokenId> {
    vec![TokenId(4), Vocabulary::PLUS, TokenId(7), Vocabulary::EQUALS]
}

/// A policy for `prompt` that never emits `EOS` and whose per-context
/// entropies are random, so trunks run to exactly `len` tokens and high-entropy
/// positions land anywhere along them.
pub fn fixed_length_policy(prompt: &[TokenId], vocab_size: usize, len: usize, seed: u64) -> PolicyParams {
    assert!(vocab_size > Vocabulary::EOS.index());
    let mut rng = RngStream::new(seed, 99);
    let fp = prompt_fingerprint(prompt);
    let mut params = PolicyParams::uniform(vocab_size, len as u32);
    let lasts = std::iter::once(None).chain((0..vocab_size as u32).map(|t| Some(TokenId(t))));
    for last in lasts {
        for bucket in 0..len as u32 {
            let scale = rng.random_range(0.0..4.0);
            let mut row: Vec<f64> = (0..vocab_size)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                })
                .collect();
            row[Vocabulary::EOS.index()] = -60.0;
            let key = ContextKey { prompt_fingerprint: fp, last_token: last, position_bucket: bucket };
            params.set_logits(key, row).unwrap();
        }
    }
    params
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
