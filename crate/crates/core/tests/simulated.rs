use std::collections::BTreeSet;

use ranloc::pipeline::{self, PipelineOptions};
use ranloc::simulator::{corner_case_suite, generate, EventLabel, ScenarioConfig};
use ranloc::{DetectorConfig, EventDataset};

fn base() -> ScenarioConfig {
    ScenarioConfig {
        seed: 11,
        fleet_size: 300,
        duration_hours: 24.0,
        ..Default::default()
    }
}

fn flagged(ds: &EventDataset, prefilter: bool) -> BTreeSet<String> {
    let report = pipeline::run(ds, &DetectorConfig::default(), PipelineOptions { prefilter, workers: 2 }).unwrap();
    report.i_final_names(ds).into_iter().map(str::to_owned).collect()
}

#[test]
fn clean_fleet_raises_nothing() {
    let s = generate(&base()).unwrap();
    assert!(s.stats.bounces > 0);
    let ds = s.dataset::<f64>().unwrap();
    assert!(flagged(&ds, true).is_empty());
}

#[test]
fn spoofed_identities_are_found() {
    let s = generate(&ScenarioConfig {
        attack_count: 5,
        ..base()
    })
    .unwrap();
    let ds = s.dataset::<f64>().unwrap();
    assert_eq!(flagged(&ds, true), s.truth.spoofed);
    assert!(flagged(&ds, false).is_superset(&s.truth.spoofed));
}

#[test]
fn ran_only_spoof_escapes_the_prefilter() {
    let s = generate(&ScenarioConfig {
        attack_count: 4,
        attack_nas_fraction: 0.0,
        ..base()
    })
    .unwrap();
    let ds = s.dataset::<f64>().unwrap();
    let with = flagged(&ds, true);
    let without = flagged(&ds, false);
    assert!(with.is_subset(&without));
    assert!(without.is_superset(&s.truth.spoofed));
    assert!(with.intersection(&s.truth.spoofed).count() < s.truth.spoofed.len());
}

fn spoof_findings(s: &ranloc::simulator::Scenario, prefilter: bool) -> usize {
    let ds = s.dataset::<f64>().unwrap();
    let report = pipeline::run(&ds, &DetectorConfig::default(), PipelineOptions { prefilter, workers: 2 }).unwrap();
    report
        .findings
        .iter()
        .filter(|f| {
            [f.prev_ordinal, f.next_ordinal]
                .iter()
                .any(|&o| s.truth.labels[o as usize] == EventLabel::Spoof)
        })
        .count()
}

#[test]
fn zero_offset_attack_is_not_an_anomaly() {
    let s = generate(&ScenarioConfig {
        attack_count: 5,
        attack_offset_km: 0.0,
        ..base()
    })
    .unwrap();
    assert_eq!(s.warnings.len(), 5);
    assert_eq!(spoof_findings(&s, false), 0);
    let far = generate(&ScenarioConfig {
        attack_count: 5,
        ..base()
    })
    .unwrap();
    assert!(spoof_findings(&far, false) >= 10);
}

#[test]
fn bounce_and_idle_labels_present() {
    let s = generate(&base()).unwrap();
    let labels: BTreeSet<_> = s.truth.labels.iter().copied().collect();
    assert!(labels.contains(&EventLabel::CornerIdle));
    assert!(labels.contains(&EventLabel::CornerBounce));
    assert!(!labels.contains(&EventLabel::Spoof));
}

#[test]
fn corner_cases_behave() {
    for sc in corner_case_suite() {
        let ds = sc.dataset::<f64>().unwrap();
        for prefilter in [true, false] {
            let report = pipeline::run(&ds, &DetectorConfig::default(), PipelineOptions { prefilter, workers: 1 }).unwrap();
            let n = report.findings.len();
            match sc.name {
                "idle_gap" | "bounce_rtd" => assert_eq!(n, 0, "{}", sc.name),
                "bounce_no_rtd" => {
                    assert!(n >= 1);
                    // once both queues hold more than m samples the bounce is tolerated
                    let last = ds.len() as u32 - 1;
                    assert!(report.findings.iter().all(|f| f.next_ordinal < last - 4));
                }
                other => panic!("unexpected scenario {other}"),
            }
        }
    }
}
