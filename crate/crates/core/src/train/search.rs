use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{train, Target, TrainConfig};
use crate::arch::{build_network, Init, NetConfig};
use crate::data::{subsample, Sample};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Spatial subsampling applied to the search data.
pub const SEARCH_SUBSAMPLE: usize = 4;

const DILATION_SETS: [&[usize]; 4] = [&[1, 3, 5], &[1, 2, 4], &[1, 2, 3], &[1, 3, 5, 7]];

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub net: NetConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub champion: Candidate,
    pub challenger: Candidate,
    pub champion_val: f64,
    pub challenger_val: f64,
    pub champion_won: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub best: Candidate,
    pub best_val: f64,
    pub rounds: Vec<RoundRecord>,
}

/// Changes one block-layout knob: the dilation set, the number of blocks
/// per level, or the filter cap.
pub fn mutate<R: Rng>(c: &Candidate, rng: &mut R) -> Candidate {
    let mut next = c.clone();
    let n = &mut next.net;
    match rng.random_range(0..3) {
        0 => {
            let options: Vec<&[usize]> =
                DILATION_SETS.iter().copied().filter(|d| *d != n.dilations.as_slice()).collect();
            n.dilations = options[rng.random_range(0..options.len())].to_vec();
        }
        1 => {
            n.blocks_per_level = match n.blocks_per_level {
                1 => 2,
                b if rng.random_bool(0.5) => b - 1,
                b => (b + 1).min(3),
            };
        }
        _ => {
            let factor = if rng.random_bool(0.5) { 0.75 } else { 1.25 };
            n.filter_cap = ((n.filter_cap as f64 * factor).round() as usize).max(n.base_filters);
        }
    }
    next
}

/// Scores a candidate by its best validation loss; a diverging run scores
/// `+inf` instead of aborting the search.
fn score<T: Scalar>(c: &Candidate, train_set: &[&Sample], val_set: &[&Sample], epochs: usize) -> Result<f64> {
    let cfg = TrainConfig { max_epochs: epochs, ..c.train.clone() };
    let mut net = build_network::<T>(&c.net, Init::Seeded(c.train.seed))?;
    match train(&mut net, train_set, val_set, Target::Labels, &cfg) {
        Ok(out) => Ok(out.summary.best_val),
        Err(Error::Diverged { .. } | Error::Numeric { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Two-candidate evolutionary search on data subsampled by
/// [`SEARCH_SUBSAMPLE`]. Round one pits `pool[0]` against `pool[1]` (or a
/// mutation of `pool[0]` for a single-entry pool); later challengers are the
/// remaining pool entries, then mutations of the current champion. Ties keep
/// the champion. Input sizes of the candidates are rescaled to the
/// subsampled data.
pub fn variant_search<T: Scalar>(
    pool: &[Candidate],
    train_set: &[&Sample],
    val_set: &[&Sample],
    rounds: usize,
    epochs: usize,
    seed: u64,
) -> Result<SearchOutcome> {
    if pool.is_empty() {
        return Err(Error::config("variant pool is empty"));
    }
    if rounds == 0 || epochs == 0 {
        return Err(Error::config("variant search needs at least one round and one epoch"));
    }
    let small = |set: &[&Sample]| set.iter().map(|s| subsample(s, SEARCH_SUBSAMPLE)).collect::<Result<Vec<_>>>();
    let (tr, va) = (small(train_set)?, small(val_set)?);
    let (tr, va): (Vec<&Sample>, Vec<&Sample>) = (tr.iter().collect(), va.iter().collect());
    let size = tr.first().map(|s| s.height).ok_or_else(|| Error::config("empty training set"))?;
    let shrink = |c: &Candidate| Candidate { net: NetConfig { input_size: size, ..c.net.clone() }, ..c.clone() };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut champion = shrink(&pool[0]);
    let mut champion_val = score::<T>(&champion, &tr, &va, epochs)?;
    let mut queue = pool[1..].iter().map(shrink);
    let mut records = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let challenger = queue.next().unwrap_or_else(|| mutate(&champion, &mut rng));
        let challenger_val =
            if challenger.net.validate().is_ok() { score::<T>(&challenger, &tr, &va, epochs)? } else { f64::INFINITY };
        let champion_won = !(challenger_val < champion_val);
        records.push(RoundRecord {
            champion: champion.clone(),
            challenger: challenger.clone(),
            champion_val,
            challenger_val,
            champion_won,
        });
        if !champion_won {
            champion = challenger;
            champion_val = challenger_val;
        }
    }
    let best = Candidate { net: NetConfig { input_size: pool[0].net.input_size, ..champion.net }, ..champion };
    Ok(SearchOutcome { best, best_val: champion_val, rounds: records })
}
