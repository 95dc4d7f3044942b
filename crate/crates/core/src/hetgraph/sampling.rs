use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EntityType, HetGraphError, LabeledTriplet, Result, Triplet};

const TRIALS_PER_NEGATIVE: usize = 1000;

/// Slots whose type has at least two entities; only those can be corrupted.
fn corruptible_slots(universe: [usize; 3]) -> Vec<EntityType> {
    EntityType::ALL.into_iter().filter(|t| universe[t.index()] >= 2).collect()
}

fn check_universe(known: &HashSet<Triplet>, universe: [usize; 3]) -> Result<Vec<EntityType>> {
    let size = universe.iter().product::<usize>();
    if size <= known.len() {
        return Err(HetGraphError::UniverseTooSmall { universe: size, known: known.len() });
    }
    let slots = corruptible_slots(universe);
    if slots.is_empty() {
        return Err(HetGraphError::UniverseTooSmall { universe: size, known: known.len() });
    }
    Ok(slots)
}

fn describe(t: &Triplet) -> String {
    format!("({}, {}, {})", t.gene, t.microbe, t.disease)
}

/// Draws one corruption of `slot`, rejecting known positives and anything in `taken`.
fn draw(
    rng: &mut ChaCha8Rng,
    positive: &Triplet,
    slot: EntityType,
    universe: [usize; 3],
    known: &HashSet<Triplet>,
    taken: &HashSet<Triplet>,
    budget: &mut usize,
) -> Option<Triplet> {
    while *budget > 0 {
        *budget -= 1;
        let cand = positive.with(slot, rng.random_range(0..universe[slot.index()]));
        if cand != *positive && !known.contains(&cand) && !taken.contains(&cand) {
            return Some(cand);
        }
    }
    None
}

/// For every positive, `count` distinct single-slot corruptions.
///
/// Candidate `j` corrupts slot `j mod k` of the `k` corruptible slots
/// (gene, microbe, disease order), so slots share the count evenly with the
/// remainder going to the earlier slots. A slot that runs out of corruptions
/// outside `known` passes its turn to the next slot. Fails only when the
/// positive has fewer than `count` valid corruptions in total.
pub fn sample_negatives(
    positives: &[Triplet],
    known: &HashSet<Triplet>,
    universe: [usize; 3],
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<LabeledTriplet>>> {
    if positives.is_empty() {
        return Err(HetGraphError::TooFewPositives { needed: 1, got: 0 });
    }
    let slots = check_universe(known, universe)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(positives.len());
    for p in positives {
        let pools: Vec<Vec<Triplet>> = slots
            .iter()
            .map(|&s| {
                let mut pool: Vec<Triplet> =
                    (0..universe[s.index()]).filter(|&x| x != p.get(s)).map(|x| p.with(s, x)).filter(|c| !known.contains(c)).collect();
                pool.shuffle(&mut rng);
                pool
            })
            .collect();
        let mut taken = vec![0; slots.len()];
        let mut order = Vec::with_capacity(count);
        let mut cursor = 0;
        for _ in 0..count {
            let pick = (0..slots.len()).map(|o| (cursor + o) % slots.len()).find(|&s| taken[s] < pools[s].len());
            let s = pick.ok_or_else(|| HetGraphError::NegativeSampling { positive: describe(p) })?;
            order.push((s, taken[s]));
            taken[s] += 1;
            cursor = (s + 1) % slots.len();
        }
        out.push(order.into_iter().map(|(s, i)| LabeledTriplet::negative(pools[s][i])).collect());
    }
    Ok(out)
}

/// One negative per positive, corrupting slot `i mod k` for the `i`-th positive
/// (the next slot if that one keeps colliding), distinct across the whole set.
pub fn sample_training_negatives(
    positives: &[Triplet],
    known: &HashSet<Triplet>,
    universe: [usize; 3],
    seed: u64,
) -> Result<Vec<LabeledTriplet>> {
    if positives.is_empty() {
        return Err(HetGraphError::TooFewPositives { needed: 1, got: 0 });
    }
    let slots = check_universe(known, universe)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = HashSet::with_capacity(positives.len());
    let mut out = Vec::with_capacity(positives.len());
    for (i, p) in positives.iter().enumerate() {
        let cand = (0..slots.len())
            .find_map(|o| {
                let mut budget = TRIALS_PER_NEGATIVE;
                draw(&mut rng, p, slots[(i + o) % slots.len()], universe, known, &taken, &mut budget)
            })
            .ok_or_else(|| HetGraphError::NegativeSampling { positive: describe(p) })?;
        taken.insert(cand);
        out.push(LabeledTriplet::negative(cand));
    }
    Ok(out)
}
