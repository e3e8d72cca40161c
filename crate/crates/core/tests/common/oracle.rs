//! Brute-force reference implementations. These deliberately share no code
//! with the library beyond the tokenizer: every score is recomputed from raw
//! token counts and sorted exhaustively.

use std::cmp::Ordering;
use std::collections::HashMap;

/// Exhaustive BM25 with Lucene idf. `docs` are (id, tokens).
pub fn bm25_all(docs: &[(String, Vec<String>)], query: &[String], k1: f64, b: f64) -> Vec<(String, f64)> {
    let n = docs.len() as f64;
    let avg = docs.iter().map(|(_, t)| t.len() as f64).sum::<f64>() / n;
    let mut df: HashMap<&str, f64> = HashMap::new();
    for (_, toks) in docs {
        let mut seen: Vec<&str> = toks.iter().map(String::as_str).collect();
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_default() += 1.0;
        }
    }
    docs.iter()
        .map(|(id, toks)| {
            let len = toks.len() as f64;
            let mut score = 0.0;
            for q in query {
                let tf = toks.iter().filter(|t| *t == q).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let nq = df[q.as_str()];
                let idf = (1.0 + (n - nq + 0.5) / (nq + 0.5)).ln();
                score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avg));
            }
            (id.clone(), score)
        })
        .collect()
}

/// Sorts descending by score, ties by ascending id, drops `exclude`, keeps `k`.
pub fn rank_desc(mut scored: Vec<(String, f64)>, exclude: &[&str], k: usize) -> Vec<(String, f64)> {
    scored.retain(|(id, _)| !exclude.contains(&id.as_str()));
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

pub fn cosine_similarity(u: &[f32], v: &[f32]) -> f64 {
    let (mut uv, mut uu, mut vv) = (0.0f64, 0.0f64, 0.0f64);
    for (a, b) in u.iter().zip(v) {
        uv += *a as f64 * *b as f64;
        uu += *a as f64 * *a as f64;
        vv += *b as f64 * *b as f64;
    }
    uv / (uu.sqrt() * vv.sqrt())
}

/// MaxSim over rows taken as stored (the store normalises rows at load).
pub fn max_sim(q_rows: &[Vec<f32>], d_rows: &[Vec<f32>]) -> f64 {
    q_rows
        .iter()
        .map(|q| {
            d_rows
                .iter()
                .map(|d| q.iter().zip(d).map(|(a, b)| *a as f64 * *b as f64).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum::<f64>()
        / q_rows.len() as f64
}

pub fn min_max(raw: &[f64]) -> Vec<f64> {
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    raw.iter()
        .map(|x| if hi > lo { (x - lo) / (hi - lo) } else { 1.0 })
        .collect()
}

/// Macro precision, recall, F1 and accuracy over classes seen in either column.
pub fn macro_metrics(truth: &[&str], pred: &[&str]) -> (f64, f64, f64, f64) {
    let mut classes: Vec<&str> = truth.iter().chain(pred).cloned().collect();
    classes.sort_unstable();
    classes.dedup();
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for c in &classes {
        let tp = truth.iter().zip(pred).filter(|(t, p)| *t == c && *p == c).count() as f64;
        let predicted = pred.iter().filter(|p| *p == c).count() as f64;
        let actual = truth.iter().filter(|t| *t == c).count() as f64;
        let p = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let r = if actual > 0.0 { tp / actual } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        p_sum += p;
        r_sum += r;
        f_sum += f;
    }
    let m = classes.len() as f64;
    let acc = truth.iter().zip(pred).filter(|(t, p)| t == p).count() as f64 / truth.len() as f64;
    (p_sum / m, r_sum / m, f_sum / m, acc)
}

/// Exhaustive hybrid ranking for every query in `corpus`, as JSON lines of
/// `{"query_id": .., "ranking": [[id, score], ..]}`.
pub fn hybrid_golden(
    corpus: &harmoniser_core::Corpus,
    store: &harmoniser_core::embedding::EmbeddingStore,
    weights: (f64, f64, f64),
) -> String {
    use harmoniser_core::corpus::build_input_sequence;
    use harmoniser_core::lexical::tokenize;

    let docs: Vec<(String, Vec<String>)> = corpus
        .iter()
        .map(|q| (q.id.0.clone(), tokenize(&build_input_sequence(q).unwrap())))
        .collect();
    let rows = |id: &str| -> Vec<Vec<f32>> {
        let rec = store.get(&id.into()).unwrap();
        let m = rec.tokens.as_ref().unwrap();
        (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
    };
    let mut out = String::new();
    let mut ids: Vec<&str> = docs.iter().map(|d| d.0.as_str()).collect();
    ids.sort_unstable();
    for q in &ids {
        let (_, q_tokens) = docs.iter().find(|d| d.0 == *q).unwrap();
        let lexical: HashMap<String, f64> = bm25_all(&docs, q_tokens, 1.5, 0.75).into_iter().collect();
        let pool: Vec<&str> = ids.iter().copied().filter(|c| c != q).collect();
        let qv = &store.get(&(*q).into()).unwrap().dense;
        let raw_d: Vec<f64> = pool
            .iter()
            .map(|c| cosine_similarity(qv, &store.get(&(*c).into()).unwrap().dense))
            .collect();
        let raw_l: Vec<f64> = pool.iter().map(|c| lexical[*c]).collect();
        let q_rows = rows(q);
        let raw_m: Vec<f64> = pool.iter().map(|c| max_sim(&q_rows, &rows(c))).collect();
        let (nd, nl, nm) = (min_max(&raw_d), min_max(&raw_l), min_max(&raw_m));
        let (wd, wl, wm) = weights;
        let fused: Vec<(String, f64)> = pool
            .iter()
            .enumerate()
            .map(|(i, c)| (c.to_string(), (wd * nd[i] + wl * nl[i] + wm * nm[i]) / (wd + wl + wm)))
            .collect();
        let ranked = rank_desc(fused, &[], usize::MAX);
        let line = serde_json::json!({"query_id": q, "ranking": ranked});
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}
