use lrs_core::guidance::{parse_alpha_beta, GuidanceError, ParseErrorKind, ParseOptions};
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    file: String,
    #[serde(default)]
    alphas: Vec<f64>,
    #[serde(default)]
    betas: Vec<f64>,
    error: Option<String>,
    lenient_betas: Option<Vec<f64>>,
}

const DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/responses");

fn assert_close(got: &[f64], want: &[f64], what: &str) {
    assert_eq!(got.len(), want.len(), "{what}");
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-12, "{what}: {got:?} vs {want:?}");
    }
}

fn kind_name(kind: &ParseErrorKind) -> &'static str {
    match kind {
        ParseErrorKind::MissingKey(_) => "missing_key",
        ParseErrorKind::NonNumeric { .. } => "non_numeric",
        ParseErrorKind::AlphaSum { .. } => "alpha_sum",
        ParseErrorKind::Invalid(GuidanceError::BetaOutOfRange { .. }) => "beta_range",
        ParseErrorKind::Invalid(_) => "invalid",
    }
}

#[test]
fn response_corpus() {
    let cases: Vec<Case> =
        serde_json::from_str(&std::fs::read_to_string(format!("{DIR}/manifest.json")).unwrap()).unwrap();
    assert!(cases.len() >= 10);
    for case in cases {
        let text = std::fs::read_to_string(format!("{DIR}/{}", case.file)).unwrap();
        let strict = parse_alpha_beta(&text, 4, ParseOptions::default());
        match &case.error {
            None => {
                let ab = strict.unwrap_or_else(|e| panic!("{}: {e}", case.file));
                assert_close(ab.alphas(), &case.alphas, &case.file);
                assert_close(ab.betas(), &case.betas, &case.file);
            }
            Some(kind) => {
                let err = strict.expect_err(&case.file);
                assert_eq!(kind_name(&err.kind), kind, "{}", case.file);
                assert_eq!(err.raw, text, "raw text is kept");
            }
        }
        if let Some(want) = &case.lenient_betas {
            let ab = parse_alpha_beta(&text, 4, ParseOptions { lenient: true }).unwrap();
            assert_close(ab.betas(), want, &case.file);
        }
    }
}
