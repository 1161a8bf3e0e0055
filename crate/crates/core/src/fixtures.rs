//! Seeded synthetic corpora with planted ground-truth causes.
//!
//! Co-occurrence sessions draw their prefix and label from one bundle of
//! items linked by planted pairs, so the label is a graph neighbor of the
//! prefix. Modality sessions draw context items from an attribute group and
//! end in one of the group's target items; targets share the group's tokens
//! but never appear inside a prefix, so they are never graph neighbors of
//! any prefix item. Late targets only start appearing after `late_start` of
//! the timeline.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cooc::{count_prefix_pairs, CoocGraph};
use crate::corpus::{Item, ItemId, Session, SessionCorpus};

/// Rejection rounds before a spec is declared infeasible.
const MAX_ROUNDS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cause {
    Cooccurrence,
    Modality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeGroup {
    /// Tokens shared by every member.
    pub tokens: Vec<String>,
    /// Items that appear in prefixes.
    pub context: Vec<ItemId>,
    /// Items that appear only as labels.
    pub targets: Vec<ItemId>,
    /// Targets that only appear after `late_start`.
    pub late_targets: Vec<ItemId>,
}

impl AttributeGroup {
    fn members(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.context
            .iter()
            .chain(&self.targets)
            .chain(&self.late_targets)
            .copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRuleSpec {
    pub n_items: usize,
    pub n_sessions: usize,
    pub cooc_pairs: Vec<(ItemId, ItemId)>,
    pub attribute_groups: Vec<AttributeGroup>,
    /// Fraction of sessions following the modality rule.
    pub mix_ratio: f64,
    pub seed: u64,
    /// Fraction of the timeline after which late targets may be drawn.
    pub late_start: f64,
    pub max_prefix_len: usize,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FixtureError {
    #[error("infeasible spec: {0}")]
    Infeasible(String),
}

impl Default for PlantedRuleSpec {
    fn default() -> Self {
        Self::layout(50, 500, 0.5, 7)
    }
}

impl PlantedRuleSpec {
    /// Standard layout: the first 40% of items form bundles of four linked
    /// by every intra-bundle pair; the rest form groups of six with three
    /// context items, two targets and one late target.
    pub fn layout(n_items: usize, n_sessions: usize, mix_ratio: f64, seed: u64) -> Self {
        let n_cooc = (n_items * 2 / 5) / 4 * 4;
        let mut cooc_pairs = Vec::new();
        for b in (0..n_cooc).step_by(4) {
            for i in b..b + 4 {
                for k in i + 1..b + 4 {
                    cooc_pairs.push((i, k));
                }
            }
        }
        let attribute_groups = (n_cooc..n_items)
            .collect::<Vec<_>>()
            .chunks_exact(6)
            .enumerate()
            .map(|(g, m)| AttributeGroup {
                tokens: vec![format!("style{g}"), format!("brand{g}")],
                context: m[..3].to_vec(),
                targets: m[3..5].to_vec(),
                late_targets: m[5..].to_vec(),
            })
            .collect();
        Self {
            n_items,
            n_sessions,
            cooc_pairs,
            attribute_groups,
            mix_ratio,
            seed,
            late_start: 0.7,
            max_prefix_len: 3,
        }
    }

    pub fn validate(&self) -> Result<(), FixtureError> {
        let fail = |m: String| Err(FixtureError::Infeasible(m));
        if self.n_sessions == 0 || self.n_items == 0 {
            return fail("n_items and n_sessions must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.mix_ratio) || !(0.0..=1.0).contains(&self.late_start) {
            return fail("mix_ratio and late_start must lie in [0, 1]".into());
        }
        if self.max_prefix_len == 0 {
            return fail("max_prefix_len must be positive".into());
        }
        let mut pair_items = BTreeSet::new();
        for &(a, b) in &self.cooc_pairs {
            if a == b || a >= self.n_items || b >= self.n_items {
                return fail(format!("bad planted pair ({a}, {b})"));
            }
            pair_items.extend([a, b]);
        }
        let mut group_items = BTreeSet::new();
        for (g, grp) in self.attribute_groups.iter().enumerate() {
            if grp.context.is_empty() || grp.targets.is_empty() || grp.tokens.is_empty() {
                return fail(format!("group {g} needs tokens, context items and targets"));
            }
            for i in grp.members() {
                if i >= self.n_items || pair_items.contains(&i) || !group_items.insert(i) {
                    return fail(format!("item {i} of group {g} is out of range or governed twice"));
                }
            }
        }
        let n_mod = self.modality_count();
        if n_mod > 0 && self.attribute_groups.is_empty() {
            return fail("modality sessions requested but no attribute groups".into());
        }
        if n_mod < self.n_sessions && self.cooc_pairs.is_empty() {
            return fail("co-occurrence sessions requested but no planted pairs".into());
        }
        Ok(())
    }

    fn modality_count(&self) -> usize {
        (self.mix_ratio * self.n_sessions as f64).round() as usize
    }
}

/// Corpus plus the planted cause of every session, index-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedCorpus {
    pub corpus: SessionCorpus,
    pub causes: Vec<Cause>,
}

fn items_for(spec: &PlantedRuleSpec) -> Vec<Item> {
    (0..spec.n_items)
        .map(|i| {
            let mut item = Item::new(i, &[]);
            item.text_tokens.push(format!("sku{i}"));
            match spec.attribute_groups.iter().find(|g| g.members().any(|m| m == i)) {
                Some(g) => {
                    item.text_tokens.push(g.tokens[0].clone());
                    item.generated_tokens.extend(g.tokens[1..].iter().cloned());
                }
                None => item.generated_tokens.push(format!("look{i}")),
            }
            item
        })
        .collect()
}

fn cooc_session(rng: &mut ChaCha8Rng, spec: &PlantedRuleSpec, nbrs: &[BTreeSet<ItemId>]) -> Vec<ItemId> {
    let &(a, b) = spec.cooc_pairs.choose(rng).expect("validated non-empty");
    let (anchor, label) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
    let pool: Vec<ItemId> = nbrs[anchor]
        .union(&nbrs[label])
        .copied()
        .filter(|&x| x != anchor && x != label)
        .collect();
    let extra = rng.random_range(0..spec.max_prefix_len).min(pool.len());
    let mut prefix: Vec<ItemId> = std::iter::once(anchor)
        .chain(pool.choose_multiple(rng, extra).copied())
        .collect();
    prefix.shuffle(rng);
    prefix.push(label);
    prefix
}

fn modality_session(rng: &mut ChaCha8Rng, spec: &PlantedRuleSpec, late: bool) -> Vec<ItemId> {
    let g = spec.attribute_groups.choose(rng).expect("validated non-empty");
    let len = rng.random_range(1..=spec.max_prefix_len.min(g.context.len()));
    let mut items: Vec<ItemId> = g.context.choose_multiple(rng, len).copied().collect();
    items.shuffle(rng);
    let pool: Vec<ItemId> = if late {
        g.targets.iter().chain(&g.late_targets).copied().collect()
    } else {
        g.targets.clone()
    };
    items.push(*pool.choose(rng).expect("targets validated non-empty"));
    items
}

/// Whether every session's label agrees with its planted cause under the
/// prefix co-occurrence graph of the whole corpus.
pub fn causes_agree(sessions: &[Session], causes: &[Cause], n_items: usize) -> Vec<bool> {
    let graph = CoocGraph::<f64>::build(count_prefix_pairs(sessions, n_items), n_items).expect("n_items > 0");
    sessions
        .iter()
        .zip(causes)
        .map(|(s, c)| match s.label() {
            Some(label) => graph.label_in_union(s.prefix(), label) == (*c == Cause::Cooccurrence),
            None => false,
        })
        .collect()
}

pub fn generate(spec: &PlantedRuleSpec) -> Result<PlantedCorpus, FixtureError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut nbrs = vec![BTreeSet::new(); spec.n_items];
    for &(a, b) in &spec.cooc_pairs {
        nbrs[a].insert(b);
        nbrs[b].insert(a);
    }
    let n_mod = spec.modality_count();
    let mut causes: Vec<Cause> = (0..spec.n_sessions)
        .map(|i| {
            if i < n_mod {
                Cause::Modality
            } else {
                Cause::Cooccurrence
            }
        })
        .collect();
    causes.shuffle(&mut rng);
    let late_from = (spec.late_start * spec.n_sessions as f64).floor() as usize;
    let draw = |rng: &mut ChaCha8Rng, idx: usize, cause: Cause| match cause {
        Cause::Cooccurrence => cooc_session(rng, spec, &nbrs),
        Cause::Modality => modality_session(rng, spec, idx >= late_from),
    };
    let mut sessions: Vec<Session> = causes
        .iter()
        .enumerate()
        .map(|(idx, &c)| Session {
            session_id: idx as u64,
            items: draw(&mut rng, idx, c),
            timestamp: idx as i64,
        })
        .collect();

    for round in 0.. {
        let ok = causes_agree(&sessions, &causes, spec.n_items);
        let bad: Vec<usize> = ok.iter().enumerate().filter(|(_, &o)| !o).map(|(i, _)| i).collect();
        if bad.is_empty() {
            break;
        }
        if round == MAX_ROUNDS {
            return Err(FixtureError::Infeasible(format!(
                "{} sessions still disagree with their planted cause after {MAX_ROUNDS} redraws",
                bad.len()
            )));
        }
        for i in bad {
            sessions[i].items = draw(&mut rng, i, causes[i]);
        }
    }

    let corpus = SessionCorpus::new(items_for(spec), sessions).map_err(|e| FixtureError::Infeasible(e.to_string()))?;
    Ok(PlantedCorpus { corpus, causes })
}
