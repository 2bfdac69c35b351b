//! Simulated respondents for offline runs.
//!
//! Each simulated session walks the quiz through the same [`Store`] the
//! HTTP service uses, so answers land in an ordinary response log. The
//! chance of a wrong answer grows with a per-question latent difficulty
//! built from a few normalized signals plus item noise, and falls with a
//! per-session ability. The labels this produces are synthetic.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{Context, Result};
use kgmcq_core::hashing::derive_seed;
use kgmcq_core::signals::{apply_normalization, fit_normalization};
use kgmcq_core::{Mcq, RawSignals};
use kgmcq_service::store::{Next, ResponseInput, Store};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Fixed epoch for simulated timestamps so logs are byte-stable.
const SIM_EPOCH_MS: u64 = 1_700_000_000_000;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Latent difficulty per question id, from normalized signals and item noise.
pub fn latent_difficulty(signals: &[(String, RawSignals)], seed: u64) -> Result<HashMap<String, f64>> {
    let complete: Vec<[f64; 9]> = signals.iter().map(|(_, s)| fill(s)).collect();
    let norm = fit_normalization(&complete).context("no signals to simulate from")?;
    let noise = Normal::new(0.0, 0.5).expect("valid sd");
    Ok(signals
        .iter()
        .zip(&complete)
        .map(|((id, _), raw)| {
            let v = apply_normalization(raw, &norm).0;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["item", id]));
            // Reasoning, NodeEmbedSim, Readability, ExtraTriple
            let z = -0.9 + 0.9 * v[0] + 1.1 * v[3] + 0.8 * (1.0 - v[6]) + 0.3 * v[1] + noise.sample(&mut rng);
            (id.clone(), z)
        })
        .collect())
}

/// A missing LLMExtraFact counts as 0 here.
fn fill(s: &RawSignals) -> [f64; 9] {
    RawSignals { llm_extra_fact: Some(s.llm_extra_fact.unwrap_or(0)), ..*s }.values().expect("complete")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSummary {
    pub sessions: usize,
    pub responses: usize,
}

/// Replaces `log` with `sessions` simulated sessions answering every question.
pub fn simulate_responses(
    mcqs: Vec<Mcq>,
    signals: &[(String, RawSignals)],
    sessions: usize,
    seed: u64,
    presentation_seed: u64,
    log: &Path,
) -> Result<SimulationSummary> {
    if log.exists() {
        std::fs::remove_file(log).with_context(|| format!("removing stale {}", log.display()))?;
    }
    let latent = latent_difficulty(signals, seed)?;
    let keys: HashMap<String, String> = mcqs.iter().map(|m| (m.id.clone(), m.key.clone())).collect();
    let mut store = Store::open(mcqs, presentation_seed, log)?;
    let ability = Normal::new(0.0, 1.0).expect("valid sd");
    let mut clock = SIM_EPOCH_MS;
    for s in 0..sessions {
        let session = format!("sim-{s:04}");
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["session", &session]));
        let theta = ability.sample(&mut rng);
        loop {
            clock += 1;
            let Next::Question(p) = store.next_question(&session, clock)? else { break };
            let p_wrong = sigmoid(latent.get(&p.mcq_id).copied().unwrap_or(0.0) - theta);
            let key_at = p.options.iter().position(|o| *o == keys[&p.mcq_id]).expect("key is an option");
            let option = if rng.gen_bool(p_wrong) {
                // one of the three other positions
                (key_at + rng.gen_range(1..p.options.len())) % p.options.len()
            } else {
                key_at
            };
            let liking = (!rng.gen_bool(0.1)).then(|| {
                let l: f64 = 0.85 - 0.45 * p_wrong + rng.gen_range(-0.15..0.15);
                (l.clamp(0.0, 1.0) * 100.0).round() as i64
            });
            let input =
                ResponseInput { session: session.clone(), mcq_id: p.mcq_id, option, liking, submission_id: None };
            clock += 1;
            store.record_response(&input, clock)?;
        }
    }
    Ok(SimulationSummary { sessions, responses: store.records().len() })
}
