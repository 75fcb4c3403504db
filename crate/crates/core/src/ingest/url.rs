//! URL canonicalization.
//!
//! The canonical form drops the scheme, userinfo, fragment, default ports,
//! leading `www.` labels and trailing path slashes, and removes tracking query
//! parameters (`utm_*`, `fbclid`, `gclid`). Everything else in the query is
//! kept verbatim and in order.

use std::fmt;
use std::net::IpAddr;

use serde::{Deserialize, Serialize};
use url::{Host, Url};

use crate::error::{Error, Result};

const TRACKING_PREFIXES: &[&str] = &["utm_"];
const TRACKING_KEYS: &[&str] = &["fbclid", "gclid"];

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NormalizedUrl {
    pub canonical: String,
    /// Last two host labels (whole host for IPs and single-label hosts).
    pub domain: String,
    host: String,
}

impl NormalizedUrl {
    /// Lowercased host with leading `www.` labels removed, without port.
    pub fn host(&self) -> &str {
        &self.host
    }

    /// The host followed by each parent domain, longest first.
    pub fn host_suffixes(&self) -> impl Iterator<Item = &str> {
        host_suffixes(&self.host)
    }
}

impl fmt::Display for NormalizedUrl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical)
    }
}

pub(crate) fn host_suffixes(host: &str) -> impl Iterator<Item = &str> {
    let is_ip = host.parse::<IpAddr>().is_ok() || host.starts_with('[');
    let mut next = Some(host);
    std::iter::from_fn(move || {
        let current = next?;
        next = if is_ip {
            None
        } else {
            current.find('.').map(|i| &current[i + 1..]).filter(|s| !s.is_empty())
        };
        Some(current)
    })
}

fn strip_www(host: &str) -> &str {
    let mut h = host;
    while let Some(rest) = h.strip_prefix("www.") {
        if rest.is_empty() {
            break;
        }
        h = rest;
    }
    h
}

fn split_scheme(raw: &str) -> &str {
    if let Some(idx) = raw.find("://") {
        let scheme = &raw[..idx];
        let valid = scheme.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
            && scheme
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'));
        if valid {
            return &raw[idx + 3..];
        }
    }
    raw.strip_prefix("//").unwrap_or(raw)
}

fn is_tracking(param: &str) -> bool {
    let name = param.split('=').next().unwrap_or("").to_ascii_lowercase();
    TRACKING_KEYS.contains(&name.as_str()) || TRACKING_PREFIXES.iter().any(|p| name.starts_with(p))
}

/// Two-label fallback for the registered domain.
pub fn registered_domain(host: &str) -> &str {
    if host.parse::<IpAddr>().is_ok() || host.starts_with('[') {
        return host;
    }
    let trimmed = host.trim_end_matches('.');
    let mut dots = trimmed.rmatch_indices('.');
    dots.next();
    match dots.next() {
        Some((i, _)) => &trimmed[i + 1..],
        None => trimmed,
    }
}

pub fn normalize_url(raw: &str) -> Result<NormalizedUrl> {
    let reject = |reason: &str| Error::Url {
        raw: raw.to_string(),
        reason: reason.to_string(),
    };
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(reject("empty"));
    }
    let rest = split_scheme(trimmed);
    if rest.starts_with('/') || rest.starts_with('?') || rest.starts_with('#') {
        return Err(reject("no host"));
    }
    let parsed = Url::parse(&format!("http://{rest}")).map_err(|e| reject(&e.to_string()))?;
    let host = match parsed.host() {
        Some(Host::Domain(d)) if !d.is_empty() => d.to_string(),
        Some(Host::Ipv4(ip)) => ip.to_string(),
        Some(Host::Ipv6(ip)) => format!("[{ip}]"),
        _ => return Err(reject("no host")),
    };
    let host = strip_www(host.trim_end_matches('.')).to_string();
    if host.is_empty() {
        return Err(reject("no host"));
    }

    let mut canonical = host.clone();
    if let Some(port) = parsed.port().filter(|p| *p != 443) {
        canonical.push(':');
        canonical.push_str(&port.to_string());
    }
    canonical.push_str(parsed.path().trim_end_matches('/'));
    if let Some(query) = parsed.query() {
        let kept: Vec<&str> = query
            .split('&')
            .filter(|p| !p.is_empty() && !is_tracking(p))
            .collect();
        if !kept.is_empty() {
            canonical.push('?');
            canonical.push_str(&kept.join("&"));
        }
    }

    Ok(NormalizedUrl {
        domain: registered_domain(&host).to_string(),
        canonical,
        host,
    })
}
