//! Category composition of level-1 clusters and of their level-2 sub-clusters.

use std::collections::BTreeMap;
use std::io::Write;

use super::semantic_id::CodeMap;
use super::CodecError;

pub const UNKNOWN_CATEGORY: &str = "(unknown)";

/// Category counts of one cluster, largest first (ties by name).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryHistogram {
    pub size: usize,
    pub counts: Vec<(String, usize)>,
}

impl CategoryHistogram {
    fn from_counts(counts: BTreeMap<String, usize>) -> Self {
        let size = counts.values().sum();
        let mut counts: Vec<(String, usize)> = counts.into_iter().collect();
        counts.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self { size, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct L1Cluster {
    pub code: u32,
    pub all: CategoryHistogram,
    /// Sub-clusters ordered by size, largest first (ties by code).
    pub sub_clusters: Vec<(u32, CategoryHistogram)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterReport {
    pub clusters: Vec<L1Cluster>,
}

impl ClusterReport {
    /// CSV `l1_code,l2_code_or_ALL,category,count`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["l1_code", "l2_code_or_ALL", "category", "count"])?;
        for c in &self.clusters {
            let l1 = c.code.to_string();
            for (cat, n) in &c.all.counts {
                wr.write_record([l1.as_str(), "ALL", cat, &n.to_string()])?;
            }
            for (l2, hist) in &c.sub_clusters {
                let l2 = l2.to_string();
                for (cat, n) in &hist.counts {
                    wr.write_record([l1.as_str(), l2.as_str(), cat, &n.to_string()])?;
                }
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Groups items by their first code, then by their second, and counts categories in each group.
/// Items without a category are counted as `(unknown)`.
pub fn analyze_hierarchy(
    map: &CodeMap,
    categories: &[Option<String>],
) -> Result<ClusterReport, CodecError> {
    if !categories.iter().any(Option::is_some) {
        return Err(CodecError::NoCategories);
    }
    let mut tree: BTreeMap<u32, BTreeMap<Option<u32>, BTreeMap<String, usize>>> = BTreeMap::new();
    for (item, id) in map.iter() {
        let cat = categories
            .get(item.index())
            .and_then(|c| c.clone())
            .unwrap_or_else(|| UNKNOWN_CATEGORY.to_string());
        let l1 = tree.entry(id[0]).or_default();
        *l1.entry(None).or_default().entry(cat.clone()).or_default() += 1;
        if let Some(&l2) = id.get(1) {
            *l1.entry(Some(l2)).or_default().entry(cat).or_default() += 1;
        }
    }
    let clusters = tree
        .into_iter()
        .map(|(code, mut groups)| {
            let all = CategoryHistogram::from_counts(groups.remove(&None).unwrap_or_default());
            let mut sub_clusters: Vec<(u32, CategoryHistogram)> = groups
                .into_iter()
                .map(|(l2, counts)| {
                    (
                        l2.expect("sub-cluster code"),
                        CategoryHistogram::from_counts(counts),
                    )
                })
                .collect();
            sub_clusters.sort_by(|a, b| b.1.size.cmp(&a.1.size).then(a.0.cmp(&b.0)));
            L1Cluster {
                code,
                all,
                sub_clusters,
            }
        })
        .collect();
    Ok(ClusterReport { clusters })
}
