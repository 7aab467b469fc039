//! Layer ranking, top-k% selection and the text report that carries the
//! selection to fine-tuning.
//!
//! ```text
//! # layer report
//! k_percent	30
//! # name	score	rank	selected
//! latent.conv1	0.0123	1	1
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

#[derive(Clone, Debug, PartialEq)]
pub struct LayerEntry {
    pub name: String,
    pub score: f64,
    /// 1-based position in descending score order.
    pub rank: usize,
    pub selected: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerReport {
    pub k_percent: f64,
    /// Entries in rank order.
    pub entries: Vec<LayerEntry>,
}

/// `⌈k% · layers⌉`; the small slack absorbs binary round-off in `k/100`.
pub fn selected_count(layers: usize, k_percent: f64) -> usize {
    ((k_percent * layers as f64 / 100.0) - 1e-9).ceil().max(0.0) as usize
}

fn check_k(k_percent: f64) -> Result<()> {
    if k_percent > 0.0 && k_percent <= 100.0 {
        Ok(())
    } else {
        Err(Error::range("k_percent", k_percent, "(0, 100]"))
    }
}

/// Ranks layers by descending score (ties by name) and selects the top
/// `⌈k% · L⌉`.
pub fn rank_and_select(scores: &[(String, f64)], k_percent: f64) -> Result<LayerReport> {
    check_k(k_percent)?;
    if scores.is_empty() {
        return Err(Error::invalid("rank_and_select", "no layer scores"));
    }
    if let Some((name, s)) = scores.iter().find(|(_, s)| !s.is_finite()) {
        return Err(Error::invalid("rank_and_select", format!("score of `{name}` is {s}")));
    }
    let mut order: Vec<&(String, f64)> = scores.iter().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let keep = selected_count(scores.len(), k_percent);
    let entries = order
        .into_iter()
        .enumerate()
        .map(|(i, (name, score))| LayerEntry {
            name: name.clone(),
            score: *score,
            rank: i + 1,
            selected: i < keep,
        })
        .collect();
    Ok(LayerReport { k_percent, entries })
}

/// Same budget as [`rank_and_select`] but layers chosen uniformly at random;
/// scores are zero and ranks follow the random order.
pub fn random_selection<S: AsRef<str>>(names: &[S], k_percent: f64, seed: u64) -> Result<LayerReport> {
    check_k(k_percent)?;
    if names.is_empty() {
        return Err(Error::invalid("random_selection", "no layers"));
    }
    let mut order: Vec<&str> = names.iter().map(AsRef::as_ref).collect();
    order.shuffle(&mut stream(seed, Purpose::Selection, 0));
    let keep = selected_count(names.len(), k_percent);
    let entries = order
        .into_iter()
        .enumerate()
        .map(|(i, name)| LayerEntry {
            name: name.to_string(),
            score: 0.0,
            rank: i + 1,
            selected: i < keep,
        })
        .collect();
    Ok(LayerReport { k_percent, entries })
}

impl LayerReport {
    pub fn selected_names(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| e.selected)
            .map(|e| e.name.clone())
            .collect()
    }

    pub fn unselected_names(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| !e.selected)
            .map(|e| e.name.clone())
            .collect()
    }

    /// Fails unless the report names exactly the given groups.
    pub fn check_names<S: AsRef<str>>(&self, groups: &[S]) -> Result<()> {
        let mut mine: Vec<&str> = self.entries.iter().map(|e| e.name.as_str()).collect();
        let mut theirs: Vec<&str> = groups.iter().map(AsRef::as_ref).collect();
        mine.sort_unstable();
        theirs.sort_unstable();
        if let Some(m) = mine.iter().find(|n| theirs.binary_search(n).is_err()) {
            return Err(Error::invalid(
                "layer_report",
                format!("report names `{m}`, which the model does not have"),
            ));
        }
        if let Some(m) = theirs.iter().find(|n| mine.binary_search(n).is_err()) {
            return Err(Error::invalid(
                "layer_report",
                format!("model group `{m}` is missing from the report"),
            ));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# layer report\n");
        let _ = writeln!(s, "k_percent\t{}", self.k_percent);
        s.push_str("# name\tscore\trank\tselected\n");
        for e in &self.entries {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", e.name, e.score, e.rank, u8::from(e.selected));
        }
        s
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let bad = |line: usize, reason: String| Error::Config {
            location: format!("{origin}:{line}"),
            reason,
        };
        let mut k_percent = None;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f[0] == "k_percent" && f.len() == 2 {
                let k: f64 = f[1].parse().map_err(|_| bad(n, format!("bad k_percent `{}`", f[1])))?;
                check_k(k).map_err(|e| bad(n, e.to_string()))?;
                k_percent = Some(k);
                continue;
            }
            if f.len() != 4 {
                return Err(bad(n, format!("expected 4 fields, found {}", f.len())));
            }
            let score: f64 = f[1].parse().map_err(|_| bad(n, format!("bad score `{}`", f[1])))?;
            let rank: usize = f[2].parse().map_err(|_| bad(n, format!("bad rank `{}`", f[2])))?;
            let selected = match f[3] {
                "1" => true,
                "0" => false,
                other => return Err(bad(n, format!("bad selected flag `{other}`"))),
            };
            entries.push(LayerEntry {
                name: f[0].to_string(),
                score,
                rank,
                selected,
            });
        }
        let k_percent = k_percent.ok_or_else(|| bad(0, "missing k_percent line".into()))?;
        if entries.is_empty() {
            return Err(bad(0, "report lists no layers".into()));
        }
        let mut ranks: Vec<usize> = entries.iter().map(|e| e.rank).collect();
        ranks.sort_unstable();
        if ranks.iter().enumerate().any(|(i, &r)| r != i + 1) {
            return Err(bad(0, "ranks are not a permutation of 1..=L".into()));
        }
        let want = selected_count(entries.len(), k_percent);
        let got = entries.iter().filter(|e| e.selected).count();
        if got != want {
            return Err(bad(0, format!("{got} layers selected, k_percent implies {want}")));
        }
        entries.sort_by_key(|e| e.rank);
        Ok(LayerReport { k_percent, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        LayerReport::parse(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn named(v: &[f64]) -> Vec<(String, f64)> {
        v.iter().enumerate().map(|(i, &s)| (format!("l{i}"), s)).collect()
    }

    #[test]
    fn counts() {
        assert_eq!(selected_count(3, 34.0), 2);
        assert_eq!(selected_count(22, 30.0), 7);
        assert_eq!(selected_count(10, 30.0), 3);
        assert_eq!(selected_count(22, 100.0), 22);
        assert_eq!(selected_count(22, 10.0), 3);
    }

    #[test]
    fn ranking_example() {
        let r = rank_and_select(&named(&[3.0, 1.0, 2.0]), 34.0).unwrap();
        assert_eq!(r.selected_names(), vec!["l0", "l2"]);
        assert_eq!(r.entries.iter().map(|e| e.rank).collect::<Vec<_>>(), vec![1, 2, 3]);
        let all = rank_and_select(&named(&[3.0, 1.0, 2.0]), 100.0).unwrap();
        assert_eq!(all.selected_names().len(), 3);
        assert!(rank_and_select(&[], 30.0).is_err());
        assert!(rank_and_select(&named(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn ties_break_by_name() {
        let scores = vec![("b".to_string(), 1.0), ("a".to_string(), 1.0)];
        let r = rank_and_select(&scores, 50.0).unwrap();
        assert_eq!(r.selected_names(), vec!["a"]);
    }

    #[test]
    fn text_round_trip() {
        let r = rank_and_select(&named(&[0.1, 1e-17, 3.5, 2.25]), 30.0).unwrap();
        let back = LayerReport::parse(&r.to_text(), "mem").unwrap();
        assert_eq!(back, r);
        let broken = r.to_text().replace("\t1\n", "\t0\n");
        assert!(LayerReport::parse(&broken, "mem").is_err());
    }

    #[test]
    fn random_selection_has_the_same_budget() {
        let names: Vec<String> = (0..22).map(|i| format!("g{i}")).collect();
        let a = random_selection(&names, 30.0, 1).unwrap();
        let b = random_selection(&names, 30.0, 2).unwrap();
        assert_eq!(a.selected_names().len(), 7);
        assert_ne!(a.selected_names(), b.selected_names());
        a.check_names(&names).unwrap();
        assert!(a.check_names(&names[1..]).is_err());
    }
}
