use std::collections::BTreeSet;
use std::path::Path;

use log::warn;
use serde::Serialize;

use super::url::{normalize_url, NormalizedUrl};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum SourceClass {
    Unreliable,
    Reliable,
    Unknown,
}

/// Blacklisted (unreliable) and whitelisted (reliable) source domains.
///
/// The two sets are disjoint; a domain listed in both is kept as unreliable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SourceCatalog {
    unreliable: BTreeSet<String>,
    reliable: BTreeSet<String>,
    overlap: Vec<String>,
}

fn clean_domain(entry: &str) -> Option<String> {
    let entry = entry.trim();
    if entry.is_empty() {
        return None;
    }
    if entry.contains('/') || entry.contains(':') {
        return normalize_url(entry).ok().map(|n| n.host().to_string());
    }
    let lower = entry.to_ascii_lowercase();
    let mut d = lower.trim_end_matches('.');
    while let Some(rest) = d.strip_prefix("www.") {
        if rest.is_empty() {
            break;
        }
        d = rest;
    }
    Some(d.to_string())
}

impl SourceCatalog {
    pub fn new<I, J, S, T>(unreliable: I, reliable: J) -> Self
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = T>,
        S: AsRef<str>,
        T: AsRef<str>,
    {
        let unreliable: BTreeSet<String> = unreliable
            .into_iter()
            .filter_map(|d| clean_domain(d.as_ref()))
            .collect();
        let mut overlap = Vec::new();
        let reliable = reliable
            .into_iter()
            .filter_map(|d| clean_domain(d.as_ref()))
            .filter(|d| {
                if unreliable.contains(d) {
                    overlap.push(d.clone());
                    false
                } else {
                    true
                }
            })
            .collect();
        overlap.sort();
        overlap.dedup();
        SourceCatalog {
            unreliable,
            reliable,
            overlap,
        }
    }

    pub fn unreliable(&self) -> &BTreeSet<String> {
        &self.unreliable
    }

    pub fn reliable(&self) -> &BTreeSet<String> {
        &self.reliable
    }

    /// Domains that appeared in both input lists and were dropped from the reliable set.
    pub fn overlap(&self) -> &[String] {
        &self.overlap
    }

    /// Classifies a host by walking its parent domains: any blacklisted
    /// suffix wins over any whitelisted one.
    pub fn classify_host(&self, host: &str) -> SourceClass {
        if super::url::host_suffixes(host).any(|s| self.unreliable.contains(s)) {
            SourceClass::Unreliable
        } else if super::url::host_suffixes(host).any(|s| self.reliable.contains(s)) {
            SourceClass::Reliable
        } else {
            SourceClass::Unknown
        }
    }
}

pub fn classify_domain(url: &NormalizedUrl, catalog: &SourceCatalog) -> SourceClass {
    catalog.classify_host(url.host())
}

fn read_domain_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

pub fn load_source_catalog(unreliable_path: &Path, reliable_path: &Path) -> Result<SourceCatalog> {
    let unreliable = read_domain_list(unreliable_path)?;
    let reliable = read_domain_list(reliable_path)?;
    let catalog = SourceCatalog::new(unreliable, reliable);
    if catalog.unreliable.is_empty() {
        return Err(Error::Input(format!(
            "{}: unreliable source list is empty",
            unreliable_path.display()
        )));
    }
    for d in &catalog.overlap {
        warn!("domain {d} is listed as both unreliable and reliable; treating it as unreliable");
    }
    Ok(catalog)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn catalog() -> SourceCatalog {
        SourceCatalog::new(["blacklisted.it", "fake.news"], ["corriere.it", "www.repubblica.it"])
    }

    #[test]
    fn classifies_by_list() {
        let c = catalog();
        let u = normalize_url("https://fake.news/a").unwrap();
        assert_eq!(classify_domain(&u, &c), SourceClass::Unreliable);
        let r = normalize_url("https://www.repubblica.it/a").unwrap();
        assert_eq!(classify_domain(&r, &c), SourceClass::Reliable);
        let k = normalize_url("https://example.org/").unwrap();
        assert_eq!(classify_domain(&k, &c), SourceClass::Unknown);
    }

    #[test]
    fn parent_domain_match() {
        let c = catalog();
        let u = normalize_url("news.blacklisted.it/story").unwrap();
        assert_eq!(classify_domain(&u, &c), SourceClass::Unreliable);
        // no partial-label matches
        let v = normalize_url("notblacklisted.it/story").unwrap();
        assert_eq!(classify_domain(&v, &c), SourceClass::Unknown);
    }

    #[test]
    fn loads_files_with_comments_and_overlap() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.txt");
        let good = dir.path().join("good.txt");
        let mut f = std::fs::File::create(&bad).unwrap();
        writeln!(f, "# fact-checker blacklist\n\nWWW.X.it\nother.it  # trailing").unwrap();
        for i in 0..22 {
            writeln!(f, "site{i}.it").unwrap();
        }
        let mut g = std::fs::File::create(&good).unwrap();
        writeln!(g, "x.it\nansa.it\n").unwrap();
        let c = load_source_catalog(&bad, &good).unwrap();
        assert_eq!(c.unreliable().len(), 24);
        assert!(c.unreliable().contains("x.it"));
        assert!(!c.reliable().contains("x.it"));
        assert_eq!(c.reliable().len(), 1);
        assert_eq!(c.overlap(), ["x.it".to_string()]);
    }

    #[test]
    fn empty_blacklist_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.txt");
        let good = dir.path().join("good.txt");
        std::fs::write(&bad, "# nothing\n").unwrap();
        std::fs::write(&good, "ansa.it\n").unwrap();
        assert!(load_source_catalog(&bad, &good).is_err());
        assert!(matches!(
            load_source_catalog(&dir.path().join("missing"), &good),
            Err(Error::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn blacklisted_never_reliable(
            bad in proptest::collection::vec("[a-c]{1,2}\\.(it|com)", 1..5),
            good in proptest::collection::vec("[a-c]{1,2}\\.(it|com)", 0..5),
            sub in "[a-z]{0,3}",
            pick in any::<proptest::sample::Index>(),
        ) {
            let c = SourceCatalog::new(&bad, &good);
            prop_assert!(c.unreliable().is_disjoint(c.reliable()));
            let d = pick.get(&bad);
            let host = if sub.is_empty() { d.clone() } else { format!("{sub}.{d}") };
            let u = normalize_url(&host).unwrap();
            prop_assert_eq!(classify_domain(&u, &c), SourceClass::Unreliable);
        }
    }
}
