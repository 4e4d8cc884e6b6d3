//! Token attributions for a query.
//!
//! For each of the retriever's top documents the relevance score is
//! attributed to the query tokens with Integrated Gradients (midpoint
//! Riemann sum, zero baseline). The per-document vectors are averaged into
//! one score per token and then normalized per query.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Query;
use crate::retriever::{RankedList, Retriever, Scorer};
use crate::{Error, Result};

pub const DEFAULT_STEPS: usize = 64;
pub const DEFAULT_K_DOCS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionVector {
    pub doc_id: String,
    /// One value per query token, in query order.
    pub values: Vec<f64>,
    pub steps: usize,
    pub baseline: String,
}

/// Integrated Gradients of `s(q, doc)` with respect to the scorer's
/// query-side inputs.
///
/// Token `i` receives `Σ_dims (x_i − x'_i) · (1/m) Σ_{s=1..m} ∇_i s(x' + ((s − ½)/m)(x − x'))`
/// with `x'` the all-zeros baseline.
pub fn ig_single<S: Scorer + ?Sized>(
    scorer: &S,
    tokens: &[String],
    doc_id: &str,
    steps: usize,
) -> Result<AttributionVector> {
    if steps == 0 {
        return Err(Error::InvalidArgument(
            "integration steps must be at least 1".into(),
        ));
    }
    if tokens.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot attribute a query with no tokens".into(),
        ));
    }
    let input = scorer.input_of(tokens);
    let baseline = scorer.baseline_of(tokens);
    let delta: Vec<Vec<f64>> = input
        .iter()
        .zip(&baseline)
        .map(|(x, b)| x.iter().zip(b).map(|(x, b)| x - b).collect())
        .collect();

    let mut grad_sum: Vec<Vec<f64>> = delta.iter().map(|d| vec![0.0; d.len()]).collect();
    for s in 1..=steps {
        let alpha = (s as f64 - 0.5) / steps as f64;
        let point: Vec<Vec<f64>> = baseline
            .iter()
            .zip(&delta)
            .map(|(b, d)| b.iter().zip(d).map(|(b, d)| b + alpha * d).collect())
            .collect();
        let grad = scorer.gradient(tokens, &point, doc_id)?;
        if grad.len() != grad_sum.len() {
            return Err(Error::LengthMismatch {
                expected: grad_sum.len(),
                got: grad.len(),
            });
        }
        for (acc, g) in grad_sum.iter_mut().zip(&grad) {
            acc.iter_mut().zip(g).for_each(|(a, g)| *a += g);
        }
    }

    let m = steps as f64;
    let values = delta
        .iter()
        .zip(&grad_sum)
        .map(|(d, g)| d.iter().zip(g).map(|(d, g)| d * (g / m)).sum())
        .collect();
    Ok(AttributionVector {
        doc_id: doc_id.to_string(),
        values,
        steps,
        baseline: "zero".into(),
    })
}

/// Elementwise mean of exactly `k` per-document attribution vectors.
pub fn aggregate(vectors: &[Vec<f64>], k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "cannot aggregate over zero documents".into(),
        ));
    }
    if vectors.len() != k {
        return Err(Error::LengthMismatch {
            expected: k,
            got: vectors.len(),
        });
    }
    let n = vectors[0].len();
    let mut sum = vec![0.0; n];
    for v in vectors {
        if v.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: v.len(),
            });
        }
        sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
    }
    let k = k as f64;
    Ok(sum.into_iter().map(|s| s / k).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationScheme {
    None,
    /// Sign-preserving `α_i / Σ_j |α_j|`.
    #[default]
    L1,
    MinMax,
    ZScore,
}

impl FromStr for NormalizationScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "l1" => Ok(Self::L1),
            "minmax" => Ok(Self::MinMax),
            "zscore" => Ok(Self::ZScore),
            other => Err(Error::InvalidArgument(format!(
                "unknown normalization scheme `{other}` (expected none, l1, minmax or zscore)"
            ))),
        }
    }
}

impl fmt::Display for NormalizationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::L1 => "l1",
            Self::MinMax => "minmax",
            Self::ZScore => "zscore",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub scores: Vec<f64>,
    /// Set when the denominator vanished and the raw scores were returned.
    pub degenerate: bool,
}

pub fn normalize(raw: &[f64], scheme: NormalizationScheme) -> Result<Normalized> {
    if raw.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot normalize an empty score vector".into(),
        ));
    }
    let scaled = |offset: f64, denom: f64| {
        if denom == 0.0 || !denom.is_finite() {
            Normalized {
                scores: raw.to_vec(),
                degenerate: true,
            }
        } else {
            Normalized {
                scores: raw.iter().map(|a| (a - offset) / denom).collect(),
                degenerate: false,
            }
        }
    };
    Ok(match scheme {
        NormalizationScheme::None => Normalized {
            scores: raw.to_vec(),
            degenerate: false,
        },
        NormalizationScheme::L1 => scaled(0.0, raw.iter().map(|a| a.abs()).sum()),
        NormalizationScheme::MinMax => {
            let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
            let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            scaled(min, max - min)
        }
        NormalizationScheme::ZScore => {
            let n = raw.len() as f64;
            let mean = raw.iter().sum::<f64>() / n;
            let var = raw.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
            scaled(mean, var.sqrt())
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributedQuery {
    pub query_id: String,
    pub tokens: Vec<String>,
    /// `α_i`: mean attribution over `doc_ids`.
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub scheme: NormalizationScheme,
    pub normalization_degenerate: bool,
    /// Number of documents actually averaged.
    pub k_used: usize,
    pub doc_ids: Vec<String>,
    pub steps: usize,
    /// The ranked list was empty; `raw` is uniform `1/n`.
    pub no_evidence: bool,
}

/// Attributes `query` against the head of `ranked` (at most `k` documents).
///
/// `ranked` must come from `retriever`. If it is empty, every token gets the
/// uniform raw score `1/n` and `no_evidence` is set.
pub fn attribute_query(
    query: &Query,
    ranked: &RankedList,
    k: usize,
    steps: usize,
    retriever: &dyn Retriever,
    scheme: NormalizationScheme,
) -> Result<AttributedQuery> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "attribution needs k ≥ 1 documents".into(),
        ));
    }
    let n = query.tokens.len();
    if n == 0 {
        return Err(Error::InvalidArgument(format!(
            "query `{}` has no tokens",
            query.id
        )));
    }
    let doc_ids: Vec<String> = ranked.head(k).iter().map(|(id, _)| id.clone()).collect();
    let (raw, no_evidence) = if doc_ids.is_empty() {
        (vec![1.0 / n as f64; n], true)
    } else {
        let vectors = retriever.attribute(query, &doc_ids, steps)?;
        let values: Vec<Vec<f64>> = vectors
            .into_iter()
            .map(|v| {
                if v.values.len() == n {
                    Ok(v.values)
                } else {
                    Err(Error::LengthMismatch {
                        expected: n,
                        got: v.values.len(),
                    })
                }
            })
            .collect::<Result<_>>()?;
        (aggregate(&values, doc_ids.len())?, false)
    };
    let normalized = normalize(&raw, scheme)?;
    Ok(AttributedQuery {
        query_id: query.id.clone(),
        tokens: query.tokens.clone(),
        raw,
        normalized: normalized.scores,
        scheme,
        normalization_degenerate: normalized.degenerate,
        k_used: doc_ids.len(),
        doc_ids,
        steps,
        no_evidence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, Document};
    use crate::retriever::{DenseModel, NativeRetriever, SparseModel};
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    fn toy_dense() -> DenseModel {
        DenseModel::from_parts(
            2,
            HashMap::from([
                ("a".to_string(), vec![1.0, 0.0]),
                ("b".to_string(), vec![0.0, 1.0]),
            ]),
            vec![("d1".into(), vec![2.0, 4.0]), ("d2".into(), vec![2.0, 4.0])],
        )
        .unwrap()
    }

    fn sparse_corpus() -> Corpus {
        Corpus::from_documents(
            [
                "apple apple banana cherry",
                "banana banana cherry date",
                "cherry date elder fig",
                "apple fig fig grape",
                "grape honey apple banana",
            ]
            .iter()
            .enumerate()
            .map(|(i, t)| Document {
                id: format!("d{i}"),
                title: None,
                text: t.to_string(),
            })
            .collect(),
        )
        .unwrap()
    }

    #[test]
    fn linear_scorer_single_step_is_exact() {
        let m = toy_dense();
        let v = ig_single(&m, &toks(&["a", "b"]), "d1", 1).unwrap();
        assert_eq!(v.values, vec![1.0, 2.0]);
        assert_eq!(v.values.iter().sum::<f64>(), 3.0);
        assert_eq!(v.baseline, "zero");
    }

    #[test]
    fn input_at_baseline_gets_zero_attribution() {
        let m = toy_dense();
        let v = ig_single(&m, &toks(&["x", "y"]), "d1", 16).unwrap();
        assert_eq!(v.values, vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_arguments() {
        let m = toy_dense();
        assert!(ig_single(&m, &toks(&["a"]), "d1", 0).is_err());
        assert!(ig_single(&m, &[], "d1", 4).is_err());
        assert!(matches!(
            ig_single(&m, &toks(&["a"]), "zz", 4),
            Err(Error::UnknownDoc(_))
        ));
    }

    #[test]
    fn sparse_single_token_matches_c_ln2() {
        let m = SparseModel::build(&sparse_corpus(), 1, 0);
        let tokens = toks(&["apple"]);
        let c = m.idf_of("apple") * 2.0;
        let v = ig_single(&m, &tokens, "d0", 256).unwrap();
        assert!((v.values[0] - c * 2f64.ln()).abs() <= 1e-5 * c);
        let exact = m.exact_integrated_gradients(&tokens, "d0").unwrap();
        assert!((exact[0] - c * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sparse_quadrature_converges_monotonically() {
        let m = SparseModel::build(&sparse_corpus(), 4, 3);
        let tokens = toks(&["apple", "banana", "cherry"]);
        let exact = m.exact_integrated_gradients(&tokens, "d0").unwrap();
        let mut previous = f64::INFINITY;
        for steps in [8, 16, 32, 64, 128] {
            let v = ig_single(&m, &tokens, "d0", steps).unwrap();
            let err = v
                .values
                .iter()
                .zip(&exact)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < previous, "steps {steps}: {err} !< {previous}");
            previous = err;
        }
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(
            aggregate(&[vec![1.0, 2.0], vec![3.0, 4.0]], 2).unwrap(),
            [2.0, 3.0]
        );
        assert_eq!(aggregate(&[vec![5.0, -1.0]], 1).unwrap(), [5.0, -1.0]);
        let three = [vec![1.0; 3], vec![2.0; 3], vec![3.0; 3]];
        assert_eq!(aggregate(&three, 3).unwrap(), [2.0, 2.0, 2.0]);
        assert!(aggregate(&[vec![1.0], vec![1.0, 2.0]], 2).is_err());
        assert!(aggregate(&[], 0).is_err());
        assert!(aggregate(&[vec![1.0]], 2).is_err());
    }

    #[test]
    fn normalization_examples() {
        let l1 = normalize(&[1.0, -1.0, 2.0], NormalizationScheme::L1).unwrap();
        assert_eq!(l1.scores, [0.25, -0.25, 0.5]);
        assert!(!l1.degenerate);

        let zero = normalize(&[0.0, 0.0], NormalizationScheme::L1).unwrap();
        assert_eq!(zero.scores, [0.0, 0.0]);
        assert!(zero.degenerate);

        let mm = normalize(&[2.0, 4.0, 6.0], NormalizationScheme::MinMax).unwrap();
        assert_eq!(mm.scores, [0.0, 0.5, 1.0]);
        assert!(
            normalize(&[3.0, 3.0], NormalizationScheme::MinMax)
                .unwrap()
                .degenerate
        );

        let z = normalize(&[1.0, 3.0], NormalizationScheme::ZScore).unwrap();
        assert_eq!(z.scores, [-1.0, 1.0]);
        assert!(
            normalize(&[3.0], NormalizationScheme::ZScore)
                .unwrap()
                .degenerate
        );

        assert_eq!(
            normalize(&[0.3, -2.0], NormalizationScheme::None)
                .unwrap()
                .scores,
            [0.3, -2.0]
        );
        assert!(normalize(&[], NormalizationScheme::L1).is_err());
        assert!("softmax".parse::<NormalizationScheme>().is_err());
        assert_eq!(
            "zscore".parse::<NormalizationScheme>().unwrap(),
            NormalizationScheme::ZScore
        );
    }

    #[test]
    fn identical_documents_average_to_the_single_vector() {
        let r = NativeRetriever::Dense(toy_dense());
        let q = Query::new("q", "a b");
        let ranked = r.search(&q, 100).unwrap();
        let aq = attribute_query(&q, &ranked, 5, 1, &r, NormalizationScheme::None).unwrap();
        assert_eq!(aq.k_used, 2);
        assert_eq!(aq.raw, [1.0, 2.0]);
        assert_eq!(aq.doc_ids, ["d1", "d2"]);
        assert!(!aq.no_evidence);
    }

    #[test]
    fn short_ranked_list_averages_over_what_exists() {
        let r = NativeRetriever::Sparse(SparseModel::build(&sparse_corpus(), 2, 2));
        let q = Query::new("q", "apple banana");
        let ranked = r.search(&q, 100).unwrap();
        let head = RankedList {
            query_id: "q".into(),
            entries: ranked.entries[..3].to_vec(),
        };
        let aq = attribute_query(&q, &head, 5, 32, &r, NormalizationScheme::L1).unwrap();
        assert_eq!(aq.k_used, 3);
        let per_doc: Vec<Vec<f64>> = head
            .entries
            .iter()
            .map(|(d, _)| ig_single(r.scorer(), &q.tokens, d, 32).unwrap().values)
            .collect();
        assert_eq!(aq.raw, aggregate(&per_doc, 3).unwrap());
        let l1: f64 = aq.normalized.iter().map(|x| x.abs()).sum();
        assert!((l1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_ranked_list_falls_back_to_uniform() {
        let r = NativeRetriever::Dense(toy_dense());
        let q = Query::new("q", "w x y z");
        let aq = attribute_query(
            &q,
            &RankedList::empty("q"),
            5,
            8,
            &r,
            NormalizationScheme::L1,
        )
        .unwrap();
        assert_eq!(aq.raw, [0.25; 4]);
        assert!(aq.no_evidence);
        assert_eq!(aq.k_used, 0);
    }

    proptest! {
        #[test]
        fn l1_is_scale_invariant(
            raw in proptest::collection::vec(-10.0f64..10.0, 1..12),
            c in 0.01f64..100.0,
        ) {
            let a = normalize(&raw, NormalizationScheme::L1).unwrap();
            let scaled: Vec<f64> = raw.iter().map(|x| x * c).collect();
            let b = normalize(&scaled, NormalizationScheme::L1).unwrap();
            prop_assert_eq!(a.degenerate, b.degenerate);
            for (x, y) in a.scores.iter().zip(&b.scores) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn sparse_completeness_holds(
            words in proptest::collection::vec(0usize..8, 1..5),
            doc in 0usize..5,
            seed in 0u64..1000,
        ) {
            let vocab = ["apple", "banana", "cherry", "date", "elder", "fig", "grape", "honey"];
            let corpus = sparse_corpus();
            let m = SparseModel::build(&corpus, seed, 3);
            let tokens: Vec<String> = words.iter().map(|&i| vocab[i].to_string()).collect();
            let doc_id = format!("d{doc}");
            let v = ig_single(&m, &tokens, &doc_id, 256).unwrap();
            let s = m.score(&tokens, &doc_id).unwrap();
            let total: f64 = v.values.iter().sum();
            prop_assert!((total - s).abs() <= 1e-3 * s.abs().max(1.0));
        }
    }
}
