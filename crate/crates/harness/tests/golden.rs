use std::collections::HashSet;
use std::time::Duration;

use reactor_core::SessionStatus;
use reactor_harness::golden::{run_golden_trace, GoldenOptions, GOLDEN_TRANSCRIPT};

#[tokio::test]
async fn golden_trace_passes() {
    let report = run_golden_trace(GoldenOptions::default()).await;
    assert!(report.passed, "{:#?}\n{}", report.failures, report.transcript.join("\n"));
    assert!(report.pdf_overlap);
    assert_eq!(report.pdf_pages, vec![vec![45], vec![88]]);
    assert_eq!(report.max_pages_per_call, 1);
    assert!(report.elapsed_ms < 5_000);
    // Two parallel groups of 150 ms plus one summarizer call.
    assert!(report.elapsed_ms >= 450, "{}", report.elapsed_ms);
    assert!(report.elapsed_ms < 900, "{}", report.elapsed_ms);
}

#[tokio::test(start_paused = true)]
async fn fixture_is_frozen() {
    assert_eq!(GOLDEN_TRANSCRIPT.lines().count(), 13);
    let report = run_golden_trace(GoldenOptions::default()).await;
    assert_eq!(report.transcript, GOLDEN_TRANSCRIPT.lines().collect::<Vec<_>>());
    assert_eq!(report.outcome.turns, 4);
}

#[tokio::test(start_paused = true)]
async fn missing_page_is_detected_as_a_divergence() {
    let options = GoldenOptions { missing_pages: HashSet::from([88]), ..Default::default() };
    let report = run_golden_trace(options).await;
    assert!(!report.passed);
    let d = report.divergence.expect("divergence");
    assert_eq!(d.line, 7);
    assert_eq!(d.expected.as_deref(), Some("result[PDFParser]: Q1 2013 ARR: $4.6M"));
    assert!(d.actual.unwrap().contains("page 88 unavailable"));
    assert_eq!(report.outcome.status, SessionStatus::Failed);
    assert!(report.failures[0].starts_with("transcript diverges at line 8"));
}

#[tokio::test(start_paused = true)]
async fn serial_parser_does_not_overlap() {
    let options = GoldenOptions { pdf_max_parallel: 1, ..Default::default() };
    let report = run_golden_trace(options).await;
    assert!(report.passed, "{:#?}", report.failures);
    assert!(!report.pdf_overlap);
}

#[tokio::test(start_paused = true)]
async fn streamed_session_matches_the_fixture() {
    let options = GoldenOptions { streaming: true, tool_latency: Duration::from_millis(40), ..Default::default() };
    let report = run_golden_trace(options).await;
    assert!(report.passed, "{:#?}", report.failures);
}
