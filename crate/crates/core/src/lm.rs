//! N-gram label language model: estimation, truncation, conditional queries,
//! and persistence.
//!
//! Counting windows never cross utterance boundaries and no begin/end
//! sentinel symbols are used. The model keeps counts for every order
//! `1..=N` so that conditional queries with short histories (segments near
//! an utterance start) are answered from matching lower-order statistics.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

/// Default add-alpha smoothing constant for conditional queries.
pub const DEFAULT_ALPHA: f64 = 0.01;

/// Order-N label language model with raw window counts.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramLM {
    order: usize,
    alphabet_size: usize,
    alpha: f64,
    /// counts[k-1]: occurrences of each length-k window, k = 1..=order
    counts: Vec<HashMap<Vec<usize>, u64>>,
    /// context_counts[k-1][ctx] = sum over y of counts[k-1][ctx . y]
    context_counts: Vec<HashMap<Vec<usize>, u64>>,
    /// number of full order-N windows
    total_windows: u64,
}

/// The top-K most probable N-grams of a model, in descending probability.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKTable {
    order: usize,
    alphabet_size: usize,
    entries: Vec<(Vec<usize>, f64)>,
    renormalized: bool,
}

impl TopKTable {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn entries(&self) -> &[(Vec<usize>, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn renormalized(&self) -> bool {
        self.renormalized
    }
}

/// Estimate an order-N model from segment-level label sequences.
///
/// Joint probabilities are maximum-likelihood relative frequencies; `alpha`
/// only affects conditional queries.
pub fn train_lm(
    sequences: &[Vec<usize>],
    order: usize,
    alphabet_size: usize,
    alpha: f64,
) -> Result<NGramLM> {
    if order == 0 {
        return Err(Error::config("n-gram order must be >= 1"));
    }
    if alphabet_size == 0 {
        return Err(Error::config("alphabet size must be >= 1"));
    }
    if alpha < 0.0 || !alpha.is_finite() {
        return Err(Error::config("alpha must be >= 0"));
    }
    for seq in sequences {
        if seq.is_empty() {
            return Err(Error::data("label sequences must be nonempty"));
        }
        if let Some(&bad) = seq.iter().find(|&&y| y >= alphabet_size) {
            return Err(Error::data(format!(
                "label {bad} out of range for alphabet size {alphabet_size}"
            )));
        }
    }

    let mut counts: Vec<HashMap<Vec<usize>, u64>> = vec![HashMap::new(); order];
    for seq in sequences {
        for k in 1..=order {
            if seq.len() < k {
                continue;
            }
            for start in 0..=(seq.len() - k) {
                *counts[k - 1]
                    .entry(seq[start..start + k].to_vec())
                    .or_insert(0) += 1;
            }
        }
    }
    let total_windows: u64 = counts[order - 1].values().sum();
    if total_windows == 0 {
        return Err(Error::config(format!(
            "no order-{order} windows: every sequence is shorter than {order}"
        )));
    }

    let mut context_counts: Vec<HashMap<Vec<usize>, u64>> = vec![HashMap::new(); order];
    for k in 1..=order {
        for (window, &c) in &counts[k - 1] {
            *context_counts[k - 1]
                .entry(window[..k - 1].to_vec())
                .or_insert(0) += c;
        }
    }

    Ok(NGramLM {
        order,
        alphabet_size,
        alpha,
        counts,
        context_counts,
        total_windows,
    })
}

impl NGramLM {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn total_windows(&self) -> u64 {
        self.total_windows
    }

    /// Joint maximum-likelihood probability of a full order-N window.
    pub fn joint_prob(&self, z: &[usize]) -> f64 {
        if z.len() != self.order {
            return 0.0;
        }
        let c = self.counts[self.order - 1].get(z).copied().unwrap_or(0);
        c as f64 / self.total_windows as f64
    }

    /// Smoothed conditional probability of `next` after `history`.
    ///
    /// The history is truncated to its most recent `N-1` symbols; shorter
    /// histories are answered from the matching lower-order counts. With
    /// `alpha = 0` and an unseen context the query falls back to uniform.
    pub fn cond_prob(&self, next: usize, history: &[usize]) -> f64 {
        let keep = history.len().min(self.order - 1);
        let ctx = &history[history.len() - keep..];
        let k = keep + 1;
        let ctx_count = self.context_counts[k - 1]
            .get(ctx)
            .copied()
            .unwrap_or(0) as f64;
        let mut window = Vec::with_capacity(k);
        window.extend_from_slice(ctx);
        window.push(next);
        let c = self.counts[k - 1].get(&window).copied().unwrap_or(0) as f64;
        let denom = ctx_count + self.alpha * self.alphabet_size as f64;
        if denom > 0.0 {
            (c + self.alpha) / denom
        } else {
            1.0 / self.alphabet_size as f64
        }
    }

    /// The `k_top` most frequent order-N windows, tie-broken lexicographically.
    pub fn topk(&self, k_top: usize, renormalize: bool) -> Result<TopKTable> {
        if k_top == 0 {
            return Err(Error::config("k_top must be >= 1"));
        }
        let total = self.total_windows as f64;
        let mut entries: Vec<(Vec<usize>, f64)> = self.counts[self.order - 1]
            .iter()
            .map(|(z, &c)| (z.clone(), c as f64 / total))
            .collect();
        entries.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("finite probabilities")
                .then_with(|| a.0.cmp(&b.0))
        });
        entries.truncate(k_top);
        if renormalize {
            let sum: f64 = entries.iter().map(|(_, p)| p).sum();
            for (_, p) in &mut entries {
                *p /= sum;
            }
        }
        Ok(TopKTable {
            order: self.order,
            alphabet_size: self.alphabet_size,
            entries,
            renormalized: renormalize,
        })
    }
}

// ---------------------------------------------------------------------------
// Persistence: header plus one `z_1 ... z_k count` line per stored window,
// covering every order 1..=N.
// ---------------------------------------------------------------------------

const LM_MAGIC: &str = "segodm-ngram v1";

pub fn save_lm(lm: &NGramLM, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(LM_MAGIC);
    out.push('\n');
    out.push_str(&format!("order {}\n", lm.order));
    out.push_str(&format!("alphabet_size {}\n", lm.alphabet_size));
    out.push_str(&format!("alpha {}\n", lm.alpha));
    for k in 1..=lm.order {
        let mut windows: Vec<(&Vec<usize>, &u64)> = lm.counts[k - 1].iter().collect();
        windows.sort_by(|a, b| a.0.cmp(b.0));
        for (z, c) in windows {
            let syms: Vec<String> = z.iter().map(|s| s.to_string()).collect();
            out.push_str(&format!("{} {c}\n", syms.join(" ")));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_lm(path: &Path) -> Result<NGramLM> {
    let content = fs::read_to_string(path)?;
    let err = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    fn header_field<'a>(
        lines: &mut std::iter::Enumerate<std::str::Lines<'a>>,
        key: &str,
        path: &Path,
    ) -> Result<(usize, &'a str)> {
        let (i, line) = lines.next().ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: "unexpected end of file".into(),
        })?;
        let rest = line
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("expected `{key} ...`"),
            })?;
        Ok((i + 1, rest.trim()))
    }

    let mut lines = content.lines().enumerate();
    let magic_line = lines.next().map(|(_, l)| l).unwrap_or("");
    if magic_line != LM_MAGIC {
        return Err(err(1, format!("unsupported model format `{magic_line}`")));
    }
    let (ln, raw) = header_field(&mut lines, "order", path)?;
    let order: usize = raw.parse().map_err(|_| err(ln, "invalid order".into()))?;
    if order == 0 {
        return Err(err(ln, "order must be >= 1".into()));
    }
    let (ln, raw) = header_field(&mut lines, "alphabet_size", path)?;
    let alphabet_size: usize = raw
        .parse()
        .map_err(|_| err(ln, "invalid alphabet_size".into()))?;
    let (ln, raw) = header_field(&mut lines, "alpha", path)?;
    let alpha: f64 = raw.parse().map_err(|_| err(ln, "invalid alpha".into()))?;

    let mut counts: Vec<HashMap<Vec<usize>, u64>> = vec![HashMap::new(); order];
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 2 {
            return Err(err(i + 1, "expected `z_1 ... z_k count`".into()));
        }
        let k = toks.len() - 1;
        if k > order {
            return Err(err(
                i + 1,
                format!("window of order {k} exceeds header order {order}"),
            ));
        }
        let mut z = Vec::with_capacity(k);
        for tok in &toks[..k] {
            let s: usize = tok
                .parse()
                .map_err(|_| err(i + 1, format!("invalid symbol `{tok}`")))?;
            if s >= alphabet_size {
                return Err(err(i + 1, format!("symbol {s} out of range")));
            }
            z.push(s);
        }
        let c: u64 = toks[k]
            .parse()
            .map_err(|_| err(i + 1, format!("invalid count `{}`", toks[k])))?;
        if counts[k - 1].insert(z, c).is_some() {
            return Err(err(i + 1, "duplicate window".into()));
        }
    }

    let total_windows: u64 = counts[order - 1].values().sum();
    let mut context_counts: Vec<HashMap<Vec<usize>, u64>> = vec![HashMap::new(); order];
    for k in 1..=order {
        for (window, &c) in &counts[k - 1] {
            *context_counts[k - 1]
                .entry(window[..k - 1].to_vec())
                .or_insert(0) += c;
        }
    }
    Ok(NGramLM {
        order,
        alphabet_size,
        alpha,
        counts,
        context_counts,
        total_windows,
    })
}
