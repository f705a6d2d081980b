//! Behavior analysis: keyword-group frequencies over text and marker-action
//! statistics over synthetic rollouts.
//!
//! Text matching is case-insensitive and token-based: the text is split on
//! whitespace, each token is stripped of leading and trailing punctuation,
//! and single-word keywords must equal a whole token (so "so" does not fire
//! inside "solve"). Multi-word keywords match consecutive tokens separated by
//! exactly one space. Within one group, overlapping matches are counted once
//! per starting position.

use serde::{Deserialize, Serialize};

use crate::envsim::{Action, Rollout};
use crate::{Error, Result};

/// The three tracked behavior categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordGroups {
    pub summary: Vec<String>,
    pub rethink: Vec<String>,
    pub plan: Vec<String>,
}

impl Default for KeywordGroups {
    fn default() -> Self {
        let list = |words: &[&str]| words.iter().map(|w| w.to_string()).collect();
        // Case variants are redundant under case-insensitive matching and are
        // deduplicated here, so group sizes can differ from external lists
        // that spell both variants out.
        KeywordGroups {
            summary: list(&["so", "therefore", "thus", "conclude", "overall"]),
            rethink: list(&[
                "check again",
                "double-check",
                "re-evaluate",
                "re-examine",
                "reanalyze",
                "reassess",
                "recheck",
                "reconsider",
                "reevaluate",
                "reevaluation",
                "reexamine",
                "rethink",
                "think again",
                "verify again",
                "wait",
            ]),
            plan: list(&["first", "second", "step"]),
        }
    }
}

impl KeywordGroups {
    pub fn validate(&self) -> Result<()> {
        for (name, group) in
            [("summary", &self.summary), ("rethink", &self.rethink), ("plan", &self.plan)]
        {
            if group.is_empty() {
                return Err(Error::InvalidConfig(format!("keyword group '{name}' is empty")));
            }
            if group.iter().any(|k| k.trim().is_empty()) {
                return Err(Error::InvalidConfig(format!(
                    "keyword group '{name}' contains a blank entry"
                )));
            }
        }
        Ok(())
    }
}

/// Occurrence counts per group for one text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KeywordCounts {
    pub summary: u64,
    pub rethink: u64,
    pub plan: u64,
}

/// Mean per-rollout (or per-document) statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorStats {
    pub mean_summary: f64,
    pub mean_rethink: f64,
    pub mean_plan: f64,
    pub mean_length: f64,
    pub sample_count: usize,
}

/// A whitespace token with enough position information to test adjacency.
struct Token {
    normalized: String,
    start: usize,
    end: usize,
}

fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut offset = 0;
    for raw in text.split_whitespace() {
        let start = text[offset..].find(raw).expect("token present") + offset;
        let end = start + raw.len();
        offset = end;
        let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
        tokens.push(Token { normalized: trimmed.to_lowercase(), start, end });
    }
    tokens
}

fn keyword_parts(keyword: &str) -> Vec<String> {
    keyword.split_whitespace().map(|w| w.to_lowercase()).collect()
}

/// Does the keyword (already split into lowercase parts) match starting at
/// token `i`? Multi-word parts must be separated by exactly one space in the
/// original text.
fn matches_at(text: &str, tokens: &[Token], parts: &[String], i: usize) -> bool {
    if parts.is_empty() || i + parts.len() > tokens.len() {
        return false;
    }
    for (k, part) in parts.iter().enumerate() {
        if &tokens[i + k].normalized != part {
            return false;
        }
        if k > 0 {
            let gap = &text[tokens[i + k - 1].end..tokens[i + k].start];
            if gap != " " {
                return false;
            }
        }
    }
    true
}

fn count_group(text: &str, tokens: &[Token], group: &[String]) -> u64 {
    let parts: Vec<Vec<String>> = group.iter().map(|k| keyword_parts(k)).collect();
    let mut count = 0;
    for i in 0..tokens.len() {
        if parts.iter().any(|p| matches_at(text, tokens, p, i)) {
            count += 1;
        }
    }
    count
}

/// Count keyword occurrences per group over one text.
pub fn count_keywords(text: &str, groups: &KeywordGroups) -> KeywordCounts {
    let tokens = tokenize(text);
    KeywordCounts {
        summary: count_group(text, &tokens, &groups.summary),
        rethink: count_group(text, &tokens, &groups.rethink),
        plan: count_group(text, &tokens, &groups.plan),
    }
}

fn marker_counts(rollout: &Rollout) -> KeywordCounts {
    let mut counts = KeywordCounts::default();
    for action in &rollout.actions {
        match action {
            Action::ThinkSummary => counts.summary += 1,
            Action::ThinkRethink => counts.rethink += 1,
            Action::ThinkPlan => counts.plan += 1,
            Action::Think | Action::Stop => {}
        }
    }
    counts
}

/// Mean marker-action counts and mean length over a batch of rollouts,
/// mapping the three marked think variants onto the three keyword groups.
pub fn rollout_behavior_stats(rollouts: &[Rollout]) -> Result<BehaviorStats> {
    stats_from_counts(rollouts.iter().map(|r| (marker_counts(r), r.length)))
}

/// Mean keyword counts and mean token length over a batch of texts.
pub fn text_behavior_stats<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    groups: &KeywordGroups,
) -> Result<BehaviorStats> {
    stats_from_counts(
        texts
            .into_iter()
            .map(|t| (count_keywords(t, groups), t.split_whitespace().count())),
    )
}

fn stats_from_counts(items: impl Iterator<Item = (KeywordCounts, usize)>) -> Result<BehaviorStats> {
    let mut n = 0usize;
    let mut sums = (0.0, 0.0, 0.0);
    let mut length_sum = 0.0;
    for (counts, length) in items {
        n += 1;
        sums.0 += counts.summary as f64;
        sums.1 += counts.rethink as f64;
        sums.2 += counts.plan as f64;
        length_sum += length as f64;
    }
    if n == 0 {
        return Err(Error::Empty { context: "behavior statistics over zero samples" });
    }
    let n_f = n as f64;
    Ok(BehaviorStats {
        mean_summary: sums.0 / n_f,
        mean_rethink: sums.1 / n_f,
        mean_plan: sums.2 / n_f,
        mean_length: length_sum / n_f,
        sample_count: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn groups() -> KeywordGroups {
        KeywordGroups::default()
    }

    #[test]
    fn counts_summary_keywords_through_punctuation() {
        assert_eq!(count_keywords("So therefore thus.", &groups()).summary, 3);
        assert_eq!(count_keywords("", &groups()), KeywordCounts::default());
        assert_eq!(count_keywords("Wait... wait", &groups()).rethink, 2);
    }

    #[test]
    fn whole_token_rule_blocks_substrings() {
        // "so" must not fire inside "solve", nor "step" inside "stepping".
        let c = count_keywords("solve the problem by stepping back", &groups());
        assert_eq!(c.summary, 0);
        assert_eq!(c.plan, 0);
    }

    #[test]
    fn multi_word_keywords_need_single_space_adjacency() {
        assert_eq!(count_keywords("check again", &groups()).rethink, 1);
        assert_eq!(count_keywords("Let me check  again", &groups()).rethink, 0);
        assert_eq!(count_keywords("check\nagain", &groups()).rethink, 0);
        assert_eq!(count_keywords("double-check the sum", &groups()).rethink, 1);
    }

    #[test]
    fn overlapping_matches_count_once_per_position() {
        // "wait" and "think again" both belong to the rethink group; a token
        // starting both only counts once.
        let custom = KeywordGroups {
            summary: vec!["so".into()],
            rethink: vec!["think".into(), "think again".into()],
            plan: vec!["step".into()],
        };
        assert_eq!(count_keywords("think again", &custom).rethink, 1);
        assert_eq!(count_keywords("think think again", &custom).rethink, 2);
    }

    #[test]
    fn case_variants_fold_together() {
        let c = count_keywords("First we plan, second we act, Step by STEP.", &groups());
        assert_eq!(c.plan, 4);
    }

    #[test]
    fn rollout_stats_average_marker_actions() {
        use crate::envsim::Action::*;
        let rollout = |actions: Vec<crate::envsim::Action>| Rollout {
            task_id: 0,
            length: actions.len(),
            behavior_logprobs: vec![0.0; actions.len()],
            actions,
            correct: false,
            seed: 0,
        };

        let plain = rollout(vec![Think, Think, Stop]);
        let stats = rollout_behavior_stats(std::slice::from_ref(&plain)).unwrap();
        assert_eq!(stats.mean_summary, 0.0);
        assert_eq!(stats.mean_plan, 0.0);
        assert_eq!(stats.mean_length, 3.0);

        let planner = rollout(vec![ThinkPlan, ThinkPlan, Stop]);
        let stats = rollout_behavior_stats(std::slice::from_ref(&planner)).unwrap();
        assert_eq!(stats.mean_plan, 2.0);
        assert_eq!(stats.mean_length, 3.0);

        let both = rollout_behavior_stats(&[planner.clone(), plain.clone()]).unwrap();
        let doubled =
            rollout_behavior_stats(&[planner.clone(), plain.clone(), planner, plain]).unwrap();
        assert_eq!(both.mean_plan, doubled.mean_plan);
        assert_eq!(both.mean_length, doubled.mean_length);

        assert!(rollout_behavior_stats(&[]).is_err());
    }

    #[test]
    fn appending_empty_rollouts_rescales_means_exactly() {
        use crate::envsim::Action::*;
        let marked = Rollout {
            task_id: 0,
            actions: vec![ThinkSummary, ThinkRethink, ThinkRethink, Stop],
            length: 4,
            correct: true,
            behavior_logprobs: vec![0.0; 4],
            seed: 0,
        };
        let empty = Rollout {
            task_id: 0,
            actions: vec![Stop],
            length: 1,
            correct: false,
            behavior_logprobs: vec![0.0],
            seed: 1,
        };

        let n = 3usize;
        let k = 5usize;
        let mut batch = vec![marked.clone(); n];
        let base = rollout_behavior_stats(&batch).unwrap();
        batch.extend(std::iter::repeat_n(empty, k));
        let extended = rollout_behavior_stats(&batch).unwrap();
        let scale = n as f64 / (n + k) as f64;
        assert!((extended.mean_rethink - base.mean_rethink * scale).abs() < 1e-15);
        assert!((extended.mean_summary - base.mean_summary * scale).abs() < 1e-15);
    }

    proptest! {
        // Counting is invariant under arbitrary case flips.
        #[test]
        fn case_invariance(flips in prop::collection::vec(any::<bool>(), 64)) {
            let text = "So we wait and re-evaluate; first check again, then conclude. Overall: rethink step two";
            let flipped: String = text
                .chars()
                .zip(flips.iter().cycle())
                .map(|(c, &up)| if up { c.to_ascii_uppercase() } else { c.to_ascii_lowercase() })
                .collect();
            prop_assert_eq!(count_keywords(text, &groups()), count_keywords(&flipped, &groups()));
        }

        // Counts add over whitespace-separated concatenation.
        #[test]
        fn concatenation_additivity(
            left_idx in 0usize..5, right_idx in 0usize..5,
        ) {
            let pieces = [
                "So first we wait",
                "therefore recheck the second step",
                "nothing notable here",
                "thus conclude; double-check it",
                "",
            ];
            let left = pieces[left_idx];
            let right = pieces[right_idx];
            let joined = format!("{left}\n{right}");
            let a = count_keywords(left, &groups());
            let b = count_keywords(right, &groups());
            let c = count_keywords(&joined, &groups());
            prop_assert_eq!(c.summary, a.summary + b.summary);
            prop_assert_eq!(c.rethink, a.rethink + b.rethink);
            prop_assert_eq!(c.plan, a.plan + b.plan);
        }
    }
}
