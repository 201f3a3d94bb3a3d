use std::collections::BTreeMap;

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::grammar::{PlateDistribution, PlateSpec, RegionTable, DIGITS, SUFFIX_LETTERS};

pub type Histogram<K> = BTreeMap<K, u64>;

/// One histogram per character position. Positions 1-2 and 7-8 hold
/// letters, 3-6 digits.
pub fn char_position_histogram(plates: &[PlateSpec]) -> [Histogram<char>; 8] {
    let mut out: [Histogram<char>; 8] = Default::default();
    for p in plates {
        for (h, c) in out.iter_mut().zip(p.chars()) {
            *h.entry(c).or_default() += 1;
        }
    }
    out
}

/// Character counts pooled over the prefix, digit and suffix groups.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SymbolHistograms {
    pub prefix: Histogram<char>,
    pub digit: Histogram<char>,
    pub suffix: Histogram<char>,
}

pub fn symbol_histograms(plates: &[PlateSpec]) -> SymbolHistograms {
    let mut out = SymbolHistograms::default();
    for p in plates {
        for (i, c) in p.chars().into_iter().enumerate() {
            let h = match i {
                0 | 1 => &mut out.prefix,
                2..=5 => &mut out.digit,
                _ => &mut out.suffix,
            };
            *h.entry(c).or_default() += 1;
        }
    }
    out
}

/// Plate counts per region; every region of the table is present, possibly
/// with zero. Old and new prefixes of a region land in the same bucket.
pub fn region_distribution(plates: &[PlateSpec]) -> Histogram<String> {
    let mut out: Histogram<String> = RegionTable::standard()
        .regions()
        .map(|r| (r.to_string(), 0))
        .collect();
    for p in plates {
        *out.entry(p.region().to_string()).or_default() += 1;
    }
    out
}

/// Per-position character probabilities implied by a sampling distribution.
pub fn position_probabilities(dist: &PlateDistribution) -> [BTreeMap<char, f64>; 8] {
    let mut out: [BTreeMap<char, f64>; 8] = Default::default();
    let total: f64 = dist.prefix.values().sum();
    for (p, &w) in &dist.prefix {
        for (i, c) in p.chars().enumerate().take(2) {
            *out[i].entry(c).or_default() += w / total;
        }
    }
    for (k, weights) in dist.digits.iter().enumerate() {
        let s: f64 = weights.iter().sum();
        for (d, &w) in DIGITS.iter().zip(weights) {
            if w > 0.0 {
                out[2 + k].insert(*d, w / s);
            }
        }
    }
    for (k, weights) in dist.suffix.iter().enumerate() {
        let s: f64 = weights.iter().sum();
        for (c, &w) in SUFFIX_LETTERS.iter().zip(weights) {
            if w > 0.0 {
                out[6 + k].insert(*c, w / s);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Divergence {
    /// Pearson statistic over the reference support, expected counts scaled
    /// to the observed total.
    pub chi_square: f64,
    /// Half the L1 distance between the normalized histograms, including
    /// observed mass outside the reference support.
    pub total_variation: f64,
    /// Reference categories minus one.
    pub dof: usize,
    /// Upper-tail probability of `chi_square` under the reference.
    pub p_value: f64,
    /// Observed count falling on categories the reference gives no mass;
    /// pooled into one "other" bucket that enters TV but not the statistic.
    pub outside_support: u64,
}

/// Compares observed counts with reference weights (counts or probabilities).
pub fn compare_distributions<K: Ord>(observed: &BTreeMap<K, u64>, reference: &BTreeMap<K, f64>) -> Result<Divergence> {
    let n: u64 = observed.values().sum();
    if n == 0 {
        return Err(Error::arg("observed histogram is empty"));
    }
    if reference.values().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::arg("reference weights must be finite and non-negative"));
    }
    let rtotal: f64 = reference.values().sum();
    if rtotal <= 0.0 {
        return Err(Error::arg("reference histogram is empty"));
    }
    let nf = n as f64;
    let mut chi = 0.0;
    let mut tv = 0.0;
    let mut support = 0usize;
    for (k, &w) in reference {
        let o = observed.get(k).copied().unwrap_or(0) as f64;
        let q = w / rtotal;
        tv += (o / nf - q).abs();
        if q > 0.0 {
            support += 1;
            let e = nf * q;
            chi += (o - e) * (o - e) / e;
        }
    }
    let outside: u64 = observed
        .iter()
        .filter(|(k, _)| reference.get(*k).is_none_or(|&w| w == 0.0))
        .map(|(_, &c)| c)
        .sum();
    // Zero-weight reference keys already contributed |o/n - 0| above.
    let outside_unlisted: u64 = observed
        .iter()
        .filter(|(k, _)| !reference.contains_key(*k))
        .map(|(_, &c)| c)
        .sum();
    tv += outside_unlisted as f64 / nf;
    let dof = support.saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        let d = ChiSquared::new(dof as f64).map_err(|e| Error::arg(e.to_string()))?;
        d.sf(chi)
    };
    Ok(Divergence {
        chi_square: chi,
        total_variation: 0.5 * tv,
        dof,
        p_value,
        outside_support: outside,
    })
}

/// Quantile `p` of the chi-square distribution with `dof` degrees of freedom.
pub fn chi_square_quantile(dof: usize, p: f64) -> Result<f64> {
    let d = ChiSquared::new(dof as f64).map_err(|e| Error::arg(e.to_string()))?;
    Ok(d.inverse_cdf(p))
}

fn to_weights<K: Ord + Clone>(h: &Histogram<K>) -> BTreeMap<K, f64> {
    h.iter().map(|(k, &v)| (k.clone(), v as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportDivergence {
    pub positions: Vec<Divergence>,
    pub prefix: Divergence,
    pub digit: Divergence,
    pub suffix: Divergence,
    pub region: Divergence,
}

/// Histograms of a plate set and, when a reference set is given, their
/// divergence from it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionReport {
    pub count: usize,
    pub ev_count: usize,
    pub positions: Vec<Histogram<char>>,
    pub symbols: SymbolHistograms,
    pub regions: Histogram<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub divergence: Option<ReportDivergence>,
}

pub fn distribution_report(plates: &[PlateSpec], reference: Option<&[PlateSpec]>) -> Result<DistributionReport> {
    let positions = char_position_histogram(plates);
    let symbols = symbol_histograms(plates);
    let regions = region_distribution(plates);
    let divergence = match reference {
        None => None,
        Some(r) => {
            let rp = char_position_histogram(r);
            let rs = symbol_histograms(r);
            let rr = region_distribution(r);
            Some(ReportDivergence {
                positions: positions
                    .iter()
                    .zip(&rp)
                    .map(|(o, e)| compare_distributions(o, &to_weights(e)))
                    .collect::<Result<_>>()?,
                prefix: compare_distributions(&symbols.prefix, &to_weights(&rs.prefix))?,
                digit: compare_distributions(&symbols.digit, &to_weights(&rs.digit))?,
                suffix: compare_distributions(&symbols.suffix, &to_weights(&rs.suffix))?,
                region: compare_distributions(&regions, &to_weights(&rr))?,
            })
        }
    };
    Ok(DistributionReport {
        count: plates.len(),
        ev_count: plates.iter().filter(|p| p.is_ev()).count(),
        positions: positions.to_vec(),
        symbols,
        regions,
        divergence,
    })
}

/// Long-format CSV (`histogram,key,count`) of every histogram in a report.
pub fn report_csv(report: &DistributionReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["histogram", "key", "count"]).map_err(csv_err)?;
    for (i, h) in report.positions.iter().enumerate() {
        let name = format!("position{}", i + 1);
        for (k, v) in h {
            w.write_record([name.as_str(), &k.to_string(), &v.to_string()]).map_err(csv_err)?;
        }
    }
    for (name, h) in [
        ("prefix", &report.symbols.prefix),
        ("digit", &report.symbols.digit),
        ("suffix", &report.symbols.suffix),
    ] {
        for (k, v) in h {
            w.write_record([name, &k.to_string(), &v.to_string()]).map_err(csv_err)?;
        }
    }
    for (k, v) in &report.regions {
        w.write_record(["region", k, &v.to_string()]).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}
