use std::collections::BTreeMap;

/// Lowercased alphanumeric runs of at least two characters.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
}

/// Class-based tf-idf: each cluster is one pseudo-document. Score is the
/// in-cluster count times `ln((1 + C) / (1 + df)) + 1`, where `C` is the
/// number of clusters and `df` the number of clusters using the term.
/// Ties break alphabetically.
pub fn tfidf_labels(cluster_texts: &[Vec<&str>], top_n: usize) -> Vec<Vec<String>> {
    let counts: Vec<BTreeMap<String, usize>> = cluster_texts
        .iter()
        .map(|texts| {
            let mut m = BTreeMap::new();
            for t in texts {
                for tok in tokenize(t) {
                    *m.entry(tok).or_insert(0) += 1;
                }
            }
            m
        })
        .collect();
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for m in &counts {
        for term in m.keys() {
            *df.entry(term.as_str()).or_insert(0) += 1;
        }
    }
    let c = counts.len() as f64;
    counts
        .iter()
        .map(|m| {
            let mut scored: Vec<(&str, f64)> = m
                .iter()
                .map(|(term, &n)| {
                    let idf = ((1.0 + c) / (1.0 + df[term.as_str()] as f64)).ln() + 1.0;
                    (term.as_str(), n as f64 * idf)
                })
                .collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
            scored.into_iter().take(top_n).map(|(t, _)| t.to_string()).collect()
        })
        .collect()
}
