//! Retrieval scoring: cumulative match accuracy at chosen ranks and mean
//! average precision over a query/gallery protocol.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::descriptor::{rank_gallery, DescriptorSet};
use crate::error::{Error, Result};
use crate::rerank::{rerank, ReRankConfig};

/// Which gallery entries count and which ranks are reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalProtocol {
    /// Drop gallery entries that share both camera and identity with the
    /// query, the usual convention for cross-camera retrieval.
    pub exclude_same_camera_same_id: bool,
    /// Ranks at which match accuracy is reported; must be ascending.
    pub ranks_reported: Vec<usize>,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            exclude_same_camera_same_id: true,
            ranks_reported: vec![1, 5, 20],
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.ranks_reported.is_empty() {
            return Err(Error::config("ranks_reported must not be empty"));
        }
        if self.ranks_reported[0] == 0 {
            return Err(Error::config("ranks must be positive"));
        }
        if self.ranks_reported.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!(
                "ranks {:?} must be strictly ascending",
                self.ranks_reported
            )));
        }
        Ok(())
    }
}

/// Scores for one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Match accuracy per reported rank, always including 1, 5, and 20.
    pub cmc: BTreeMap<usize, f64>,
    /// Mean of the per-query average precisions.
    pub map_score: f64,
    /// `(query key, average precision)` in query order.
    pub per_query_ap: Vec<(String, f64)>,
    pub num_queries: usize,
    pub protocol: EvalProtocol,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    rank1: f64,
    rank5: f64,
    rank20: f64,
    #[serde(rename = "mAP")]
    map_score: f64,
    num_queries: usize,
    protocol: &'a EvalProtocol,
}

impl EvalReport {
    /// Renders the report with a fixed field order.
    pub fn to_json(&self) -> String {
        let json = ReportJson {
            rank1: self.cmc[&1],
            rank5: self.cmc[&5],
            rank20: self.cmc[&20],
            map_score: self.map_score,
            num_queries: self.num_queries,
            protocol: &self.protocol,
        };
        let mut text = serde_json::to_string_pretty(&json).expect("report serialization");
        text.push('\n');
        text
    }
}

/// Writes the per-query average precisions as a TSV table.
pub fn write_per_query_ap(out: &mut dyn Write, report: &EvalReport) -> std::io::Result<()> {
    writeln!(out, "query\taverage_precision")?;
    for (key, ap) in &report.per_query_ap {
        writeln!(out, "{key}\t{ap:.6}")?;
    }
    Ok(())
}

/// Identity and camera labels for one side of the evaluation.
#[derive(Debug, Clone, Copy)]
pub struct SideLabels<'a> {
    pub identities: &'a [u32],
    pub cameras: &'a [u32],
}

fn check_permutation(ranking: &[usize], gallery_len: usize, query: &str) -> Result<()> {
    if ranking.len() != gallery_len {
        return Err(Error::contract(format!(
            "ranking for query {query} lists {} entries, gallery has {gallery_len}",
            ranking.len()
        )));
    }
    let mut seen = vec![false; gallery_len];
    for &j in ranking {
        if j >= gallery_len || seen[j] {
            return Err(Error::contract(format!(
                "ranking for query {query} is not a permutation of the gallery"
            )));
        }
        seen[j] = true;
    }
    Ok(())
}

/// Scores fully ranked galleries against identity labels.
///
/// `rankings[q]` lists gallery indices for query `q` best first and must be a
/// permutation of the whole gallery. A query left without any same-identity
/// gallery entry after the protocol exclusions is a protocol violation and is
/// reported by key rather than silently scored as zero.
pub fn score_rankings(
    rankings: &[Vec<usize>],
    query_keys: &[String],
    queries: SideLabels,
    gallery: SideLabels,
    protocol: &EvalProtocol,
) -> Result<EvalReport> {
    protocol.validate()?;
    let num_queries = rankings.len();
    if num_queries == 0 {
        return Err(Error::contract("no queries to score"));
    }
    if query_keys.len() != num_queries
        || queries.identities.len() != num_queries
        || queries.cameras.len() != num_queries
    {
        return Err(Error::contract(format!(
            "{num_queries} rankings with {} keys, {} identities, {} cameras",
            query_keys.len(),
            queries.identities.len(),
            queries.cameras.len()
        )));
    }
    if gallery.identities.len() != gallery.cameras.len() {
        return Err(Error::contract(
            "gallery identity and camera lists differ in length".to_string(),
        ));
    }
    let gallery_len = gallery.identities.len();

    let mut ranks: Vec<usize> = protocol.ranks_reported.clone();
    for required in [1, 5, 20] {
        if !ranks.contains(&required) {
            ranks.push(required);
        }
    }

    let mut hits_at: BTreeMap<usize, usize> = ranks.iter().map(|&r| (r, 0)).collect();
    let mut per_query_ap = Vec::with_capacity(num_queries);

    for (q, ranking) in rankings.iter().enumerate() {
        let key = &query_keys[q];
        check_permutation(ranking, gallery_len, key)?;
        let qid = queries.identities[q];
        let qcam = queries.cameras[q];

        let mut position = 0usize;
        let mut found = 0usize;
        let mut first_match = None;
        let mut precision_sum = 0.0f64;
        for &j in ranking {
            if protocol.exclude_same_camera_same_id
                && gallery.identities[j] == qid
                && gallery.cameras[j] == qcam
            {
                continue;
            }
            position += 1;
            if gallery.identities[j] == qid {
                found += 1;
                precision_sum += found as f64 / position as f64;
                if first_match.is_none() {
                    first_match = Some(position);
                }
            }
        }
        let first = first_match.ok_or_else(|| {
            Error::Protocol(format!(
                "query {key} has no valid gallery match under the active protocol"
            ))
        })?;
        for (&rank, hits) in hits_at.iter_mut() {
            if first <= rank {
                *hits += 1;
            }
        }
        per_query_ap.push((key.clone(), precision_sum / found as f64));
    }

    let cmc: BTreeMap<usize, f64> = hits_at
        .into_iter()
        .map(|(rank, hits)| (rank, hits as f64 / num_queries as f64))
        .collect();
    let map_score = per_query_ap.iter().map(|(_, ap)| ap).sum::<f64>() / num_queries as f64;
    Ok(EvalReport {
        cmc,
        map_score,
        per_query_ap,
        num_queries,
        protocol: protocol.clone(),
    })
}

/// Match accuracy per rank; see [`score_rankings`].
pub fn cmc(
    rankings: &[Vec<usize>],
    query_keys: &[String],
    queries: SideLabels,
    gallery: SideLabels,
    protocol: &EvalProtocol,
) -> Result<BTreeMap<usize, f64>> {
    Ok(score_rankings(rankings, query_keys, queries, gallery, protocol)?.cmc)
}

/// Mean average precision; see [`score_rankings`].
pub fn mean_average_precision(
    rankings: &[Vec<usize>],
    query_keys: &[String],
    queries: SideLabels,
    gallery: SideLabels,
    protocol: &EvalProtocol,
) -> Result<f64> {
    Ok(score_rankings(rankings, query_keys, queries, gallery, protocol)?.map_score)
}

/// Ranks every query against the gallery, optionally re-ranked, and scores
/// the result. Returns the report plus the ranked `(gallery index, distance)`
/// lists that produced it.
pub fn evaluate(
    queries: &DescriptorSet,
    gallery: &DescriptorSet,
    protocol: &EvalProtocol,
    rerank_config: Option<&ReRankConfig>,
) -> Result<(EvalReport, Vec<Vec<(usize, f64)>>)> {
    if queries.is_empty() || gallery.is_empty() {
        return Err(Error::contract(
            "evaluation needs nonempty query and gallery sets".to_string(),
        ));
    }
    let ranked: Vec<Vec<(usize, f64)>> = match rerank_config {
        Some(config) => rerank(queries, gallery, config)?,
        None => queries
            .records
            .iter()
            .map(|record| rank_gallery(&record.values, gallery))
            .collect::<Result<_>>()?,
    };
    let rankings: Vec<Vec<usize>> = ranked
        .iter()
        .map(|order| order.iter().map(|&(j, _)| j).collect())
        .collect();
    let query_keys: Vec<String> = queries.records.iter().map(|r| r.key.clone()).collect();
    let query_ids: Vec<u32> = queries.records.iter().map(|r| r.identity).collect();
    let query_cams: Vec<u32> = queries.records.iter().map(|r| r.camera).collect();
    let gallery_ids: Vec<u32> = gallery.records.iter().map(|r| r.identity).collect();
    let gallery_cams: Vec<u32> = gallery.records.iter().map(|r| r.camera).collect();
    let report = score_rankings(
        &rankings,
        &query_keys,
        SideLabels {
            identities: &query_ids,
            cameras: &query_cams,
        },
        SideLabels {
            identities: &gallery_ids,
            cameras: &gallery_cams,
        },
        protocol,
    )?;
    Ok((report, ranked))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::DescriptorRecord;
    use crate::rng::Rng;

    fn keys(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("q{i}")).collect()
    }

    fn protocol_with_ranks(ranks: &[usize]) -> EvalProtocol {
        EvalProtocol {
            exclude_same_camera_same_id: false,
            ranks_reported: ranks.to_vec(),
        }
    }

    #[test]
    fn perfect_retrieval_scores_one_everywhere() {
        // Three queries, each with its single match ranked first.
        let rankings = vec![vec![0, 1, 2], vec![1, 0, 2], vec![2, 0, 1]];
        let report = score_rankings(
            &rankings,
            &keys(3),
            SideLabels {
                identities: &[10, 11, 12],
                cameras: &[0, 0, 0],
            },
            SideLabels {
                identities: &[10, 11, 12],
                cameras: &[1, 1, 1],
            },
            &EvalProtocol::default(),
        )
        .unwrap();
        for accuracy in report.cmc.values() {
            assert_eq!(*accuracy, 1.0);
        }
        assert_eq!(report.map_score, 1.0);
        assert_eq!(report.num_queries, 3);
    }

    #[test]
    fn first_match_at_position_three_moves_the_curve() {
        let rankings = vec![vec![0, 1, 2, 3]];
        let report = score_rankings(
            &rankings,
            &keys(1),
            SideLabels {
                identities: &[7],
                cameras: &[0],
            },
            SideLabels {
                identities: &[1, 2, 7, 3],
                cameras: &[1, 1, 1, 1],
            },
            &protocol_with_ranks(&[1, 3, 20]),
        )
        .unwrap();
        assert_eq!(report.cmc[&1], 0.0);
        assert_eq!(report.cmc[&3], 1.0);
        assert_eq!(report.cmc[&20], 1.0);
        // One ground-truth match at position 3.
        assert!((report.map_score - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn two_matches_at_one_and_three_average_to_five_sixths() {
        let rankings = vec![vec![0, 1, 2, 3]];
        let report = score_rankings(
            &rankings,
            &keys(1),
            SideLabels {
                identities: &[7],
                cameras: &[0],
            },
            SideLabels {
                identities: &[7, 2, 7, 3],
                cameras: &[1, 1, 1, 1],
            },
            &protocol_with_ranks(&[1, 5]),
        )
        .unwrap();
        assert!((report.map_score - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-9);
        assert_eq!(report.per_query_ap.len(), 1);
        assert_eq!(report.per_query_ap[0].0, "q0");
    }

    #[test]
    fn a_single_match_at_position_k_gives_ap_one_over_k() {
        for k in 1..=6 {
            let ranking: Vec<usize> = (0..6).collect();
            let mut gallery_ids = vec![0u32; 6];
            gallery_ids[k - 1] = 7;
            let report = score_rankings(
                &[ranking],
                &keys(1),
                SideLabels {
                    identities: &[7],
                    cameras: &[0],
                },
                SideLabels {
                    identities: &gallery_ids,
                    cameras: &[1; 6],
                },
                &protocol_with_ranks(&[1]),
            )
            .unwrap();
            assert!((report.map_score - 1.0 / k as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn same_camera_same_identity_entries_are_excluded() {
        // Gallery: the query's own-camera twin (excluded), a distractor, and
        // the true cross-camera match.
        let rankings = vec![vec![0, 1, 2]];
        let query = SideLabels {
            identities: &[1],
            cameras: &[0],
        };
        let gallery = SideLabels {
            identities: &[1, 2, 1],
            cameras: &[0, 0, 1],
        };
        let excluded = score_rankings(
            &rankings,
            &keys(1),
            query,
            gallery,
            &EvalProtocol::default(),
        )
        .unwrap();
        assert_eq!(excluded.cmc[&1], 0.0);
        assert!((excluded.map_score - 0.5).abs() < 1e-9);

        let kept = score_rankings(
            &rankings,
            &keys(1),
            query,
            gallery,
            &protocol_with_ranks(&[1, 5, 20]),
        )
        .unwrap();
        assert_eq!(kept.cmc[&1], 1.0);
        assert!((kept.map_score - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn a_query_without_valid_matches_names_itself() {
        let rankings = vec![vec![0]];
        let err = score_rankings(
            &rankings,
            &["lonely".to_string()],
            SideLabels {
                identities: &[1],
                cameras: &[0],
            },
            SideLabels {
                identities: &[1],
                cameras: &[0],
            },
            &EvalProtocol::default(),
        )
        .unwrap_err();
        match err {
            Error::Protocol(msg) => assert!(msg.contains("lonely")),
            other => panic!("expected a protocol error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_rankings_are_rejected() {
        let bad = vec![vec![0, 0]];
        let err = score_rankings(
            &bad,
            &keys(1),
            SideLabels {
                identities: &[1],
                cameras: &[0],
            },
            SideLabels {
                identities: &[1, 1],
                cameras: &[1, 1],
            },
            &EvalProtocol::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn cmc_is_monotone_on_random_fixtures() {
        let mut rng = Rng::seeded(83);
        let ranks: Vec<usize> = (1..=10).collect();
        let protocol = EvalProtocol {
            exclude_same_camera_same_id: true,
            ranks_reported: ranks.clone(),
        };
        for _ in 0..100 {
            let gallery_len = 10;
            let mut gallery_ids: Vec<u32> =
                (0..gallery_len).map(|_| rng.below(3) as u32).collect();
            let gallery_cams: Vec<u32> =
                (0..gallery_len).map(|_| rng.below(2) as u32).collect();
            let qid = rng.below(3) as u32;
            let qcam = rng.below(2) as u32;
            // Guarantee a valid cross-camera match.
            gallery_ids[0] = qid;
            let gallery_cams = {
                let mut cams = gallery_cams;
                cams[0] = 1 - qcam;
                cams
            };
            let mut ranking: Vec<usize> = (0..gallery_len).collect();
            rng.shuffle(&mut ranking);
            let report = score_rankings(
                &[ranking],
                &keys(1),
                SideLabels {
                    identities: &[qid],
                    cameras: &[qcam],
                },
                SideLabels {
                    identities: &gallery_ids,
                    cameras: &gallery_cams,
                },
                &protocol,
            )
            .unwrap();
            let curve: Vec<f64> = ranks.iter().map(|r| report.cmc[r]).collect();
            for pair in curve.windows(2) {
                assert!(pair[0] <= pair[1]);
            }
        }
    }

    fn random_descriptors(
        n: usize,
        id_of: impl Fn(usize) -> u32,
        cam_of: impl Fn(usize) -> u32,
        rng: &mut Rng,
    ) -> DescriptorSet {
        let mut set = DescriptorSet::new(4);
        for i in 0..n {
            set.push(DescriptorRecord {
                key: format!("d{i:03}"),
                identity: id_of(i),
                camera: cam_of(i),
                values: (0..4).map(|_| rng.uniform(-1.0, 1.0) as f32).collect(),
            })
            .unwrap();
        }
        set
    }

    #[test]
    fn evaluation_is_invariant_to_gallery_storage_order() {
        let mut rng = Rng::seeded(89);
        let queries = random_descriptors(4, |i| i as u32 % 2, |_| 0, &mut rng);
        let gallery = random_descriptors(12, |i| i as u32 % 2, |i| 1 + (i as u32 % 2), &mut rng);
        let (report, _) = evaluate(&queries, &gallery, &EvalProtocol::default(), None).unwrap();

        let mut shuffled = gallery.clone();
        shuffled.records.reverse();
        let (report_shuffled, _) =
            evaluate(&queries, &shuffled, &EvalProtocol::default(), None).unwrap();
        assert_eq!(report.cmc, report_shuffled.cmc);
        assert_eq!(report.map_score, report_shuffled.map_score);
        assert_eq!(report.per_query_ap, report_shuffled.per_query_ap);
    }

    #[test]
    fn self_retrieval_with_gallery_copies_is_perfect() {
        let mut rng = Rng::seeded(97);
        let queries = random_descriptors(5, |i| i as u32, |_| 0, &mut rng);
        let mut gallery = DescriptorSet::new(4);
        for record in &queries.records {
            gallery
                .push(DescriptorRecord {
                    key: format!("copy_{}", record.key),
                    identity: record.identity,
                    camera: 1,
                    values: record.values.clone(),
                })
                .unwrap();
        }
        let (report, ranked) =
            evaluate(&queries, &gallery, &EvalProtocol::default(), None).unwrap();
        assert_eq!(report.cmc[&1], 1.0);
        assert_eq!(report.map_score, 1.0);
        assert_eq!(ranked[0][0].1, 0.0);

        // The blend with weight 1 keeps the original permutation, so the
        // report is unchanged when re-ranking is toggled on that way.
        let passthrough = ReRankConfig {
            k1: 2,
            k2: 1,
            lambda: 1.0,
        };
        let (rr_report, _) =
            evaluate(&queries, &gallery, &EvalProtocol::default(), Some(&passthrough)).unwrap();
        assert_eq!(report.cmc, rr_report.cmc);
        assert_eq!(report.map_score, rr_report.map_score);
    }

    #[test]
    fn report_json_has_the_documented_field_order() {
        let rankings = vec![vec![0]];
        let report = score_rankings(
            &rankings,
            &keys(1),
            SideLabels {
                identities: &[1],
                cameras: &[0],
            },
            SideLabels {
                identities: &[1],
                cameras: &[1],
            },
            &EvalProtocol::default(),
        )
        .unwrap();
        let json = report.to_json();
        let rank1 = json.find("\"rank1\"").unwrap();
        let rank5 = json.find("\"rank5\"").unwrap();
        let rank20 = json.find("\"rank20\"").unwrap();
        let map_pos = json.find("\"mAP\"").unwrap();
        let nq = json.find("\"num_queries\"").unwrap();
        let proto = json.find("\"protocol\"").unwrap();
        assert!(rank1 < rank5 && rank5 < rank20 && rank20 < map_pos);
        assert!(map_pos < nq && nq < proto);
        assert!(json.ends_with('\n'));

        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed["rank1"], 1.0);
        assert_eq!(parsed["mAP"], 1.0);
        assert_eq!(parsed["num_queries"], 1);
        assert_eq!(parsed["protocol"]["exclude_same_camera_same_id"], true);
    }

    #[test]
    fn protocols_validate_their_ranks() {
        assert!(EvalProtocol::default().validate().is_ok());
        let empty = EvalProtocol {
            exclude_same_camera_same_id: true,
            ranks_reported: vec![],
        };
        assert!(empty.validate().is_err());
        let unsorted = EvalProtocol {
            exclude_same_camera_same_id: true,
            ranks_reported: vec![5, 1],
        };
        assert!(unsorted.validate().is_err());
        let zero = EvalProtocol {
            exclude_same_camera_same_id: true,
            ranks_reported: vec![0, 1],
        };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn per_query_table_is_tab_separated() {
        let rankings = vec![vec![0]];
        let report = score_rankings(
            &rankings,
            &["alpha".to_string()],
            SideLabels {
                identities: &[1],
                cameras: &[0],
            },
            SideLabels {
                identities: &[1],
                cameras: &[1],
            },
            &EvalProtocol::default(),
        )
        .unwrap();
        let mut buffer = Vec::new();
        write_per_query_ap(&mut buffer, &report).unwrap();
        let text = String::from_utf8(buffer).unwrap();
        assert_eq!(text, "query\taverage_precision\nalpha\t1.000000\n");
    }
}
