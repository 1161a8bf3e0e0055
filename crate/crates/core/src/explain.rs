//! Template explanations for a recommended item.
//!
//! A co-occurrence explanation names the session item most often bought with
//! the recommendation; a feature explanation names the most similar token
//! pair between a session item and the recommendation. Co-occurrence wins
//! when both apply.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::cooc::CoocCounts;
use crate::corpus::{Item, ItemId};
use crate::itemrepr::TokenEncoder;
use crate::numcore::cosine;

pub const FALLBACK_TEXT: &str = "Recommended based on your recent activity.";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    /// Counts must exceed this for the co-occurrence template (`η`).
    pub count_threshold: u32,
    /// Token similarity must exceed this for the feature template (`γ`).
    pub sim_threshold: f64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            count_threshold: 10,
            sim_threshold: 0.8,
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.count_threshold < 1 {
            return Err("count_threshold must be at least 1".into());
        }
        if !(self.sim_threshold > 0.0 && self.sim_threshold <= 1.0) {
            return Err(format!("sim_threshold must be in (0, 1], got {}", self.sim_threshold));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplanationKind {
    Cooccurrence,
    Feature,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub kind: ExplanationKind,
    pub anchor_item: Option<ItemId>,
    pub rec_item: ItemId,
    /// Co-purchase count shown in the co-occurrence template.
    pub kappa: Option<u32>,
    pub feature_pair: Option<(String, String)>,
    pub text: String,
}

fn lookup(items: &[Item], id: ItemId) -> Option<&Item> {
    items.binary_search_by_key(&id, |it| it.item_id).ok().map(|k| &items[k])
}

fn name(items: &[Item], id: ItemId) -> String {
    lookup(items, id).map_or_else(|| format!("item {id}"), Item::display_name)
}

pub fn render_cooccurrence(kappa: u32, anchor: &str, rec: &str) -> String {
    format!("There are {kappa} people frequently buying {anchor} and {rec} together. You clicked {anchor}, so we show you {rec}.")
}

pub fn render_feature(anchor: &str, f1: &str, rec: &str, f2: &str) -> String {
    format!("You have bought {anchor} with ({f1}), hence we recommend {rec} also possessing ({f2}).")
}

/// Session item with the largest count above `η`; ties go to the most
/// recent position.
pub fn cooc_explanation(
    session: &[ItemId],
    rec_item: ItemId,
    counts: &CoocCounts,
    count_threshold: u32,
    items: &[Item],
) -> Option<Explanation> {
    let mut best: Option<(u32, ItemId)> = None;
    for &x in session {
        let c = counts.count(x, rec_item);
        if c > count_threshold && best.is_none_or(|(b, _)| c >= b) {
            best = Some((c, x));
        }
    }
    let (kappa, anchor) = best?;
    Some(Explanation {
        kind: ExplanationKind::Cooccurrence,
        anchor_item: Some(anchor),
        rec_item,
        kappa: Some(kappa),
        feature_pair: None,
        text: render_cooccurrence(kappa, &name(items, anchor), &name(items, rec_item)),
    })
}

/// Most similar `(session token, recommended token)` pair above `γ`; ties
/// go to the lexicographically smallest pair, then the most recent item.
pub fn feature_explanation(
    session: &[ItemId],
    rec_item: ItemId,
    items: &[Item],
    encoder: &TokenEncoder,
    sim_threshold: f64,
) -> Option<Explanation> {
    let rec_tokens: Vec<&str> = lookup(items, rec_item)?.all_tokens().collect();
    let mut cache: HashMap<&str, Vec<f64>> = HashMap::new();
    for t in &rec_tokens {
        cache.entry(t).or_insert_with(|| encoder.encode(t));
    }
    let mut best: Option<(f64, &str, &str, ItemId)> = None;
    for &x in session {
        let Some(item) = lookup(items, x) else { continue };
        for f1 in item.all_tokens() {
            let v1 = cache.entry(f1).or_insert_with(|| encoder.encode(f1)).clone();
            for &f2 in &rec_tokens {
                let sim = cosine(&v1, &cache[f2]);
                if sim <= sim_threshold {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bs, b1, b2, _)) => sim > bs || (sim == bs && (f1, f2) <= (b1, b2)),
                };
                if better {
                    best = Some((sim, f1, f2, x));
                }
            }
        }
    }
    let (_, f1, f2, anchor) = best?;
    Some(Explanation {
        kind: ExplanationKind::Feature,
        anchor_item: Some(anchor),
        rec_item,
        kappa: None,
        feature_pair: Some((f1.to_string(), f2.to_string())),
        text: render_feature(&name(items, anchor), f1, &name(items, rec_item), f2),
    })
}

/// Co-occurrence template, else feature template, else the fallback sentence.
pub fn select_template(
    session: &[ItemId],
    rec_item: ItemId,
    counts: &CoocCounts,
    items: &[Item],
    encoder: &TokenEncoder,
    config: &ExplainConfig,
) -> Explanation {
    cooc_explanation(session, rec_item, counts, config.count_threshold, items)
        .or_else(|| feature_explanation(session, rec_item, items, encoder, config.sim_threshold))
        .unwrap_or_else(|| Explanation {
            kind: ExplanationKind::None,
            anchor_item: None,
            rec_item,
            kappa: None,
            feature_pair: None,
            text: FALLBACK_TEXT.to_string(),
        })
}
