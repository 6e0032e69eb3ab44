use nirsim::config::RunConfig;
use nirsim::error::Error;
use proptest::prelude::*;

fn keys(err: Error) -> Vec<String> {
    match err {
        Error::Config(v) => v.into_iter().map(|v| v.key).collect(),
        other => panic!("expected a config error, got {other}"),
    }
}

#[test]
fn empty_text_gives_defaults() {
    let c = RunConfig::parse("").unwrap();
    assert_eq!(c, RunConfig::default());
    assert_eq!(c.params.d, 3);
    assert_eq!(c.params.e, 0.3);
    assert_eq!(c.params.sigma, 1.0);
    assert_eq!(c.params.pot_alpha, 2.0);
    assert_eq!(c.path.t_half, 8.0);
    assert_eq!(c.path.dt, 0.05);
}

#[test]
fn comments_and_blank_lines_are_ignored() {
    let c = RunConfig::parse("# header\n\n  e = 0.5   # coupling\nT_list = 2, 4,8\n").unwrap();
    assert_eq!(c.params.e, 0.5);
    assert_eq!(c.t_list, vec![2.0, 4.0, 8.0]);
}

#[test]
fn unsupported_dimension_names_d() {
    let err = RunConfig::parse("d = 7").unwrap_err();
    let msg = err.to_string();
    assert_eq!(keys(err), vec!["d"]);
    assert!(msg.contains("d:"), "{msg}");
}

#[test]
fn every_violation_is_reported() {
    let err = RunConfig::parse("d = x\nfoo = 1\ndt = -1\nthin = 0\ne = 0.1\ne = 0.2").unwrap_err();
    let k = keys(err);
    for key in ["d", "foo", "dt", "thin", "e"] {
        assert!(k.iter().any(|x| x == key), "missing {key} in {k:?}");
    }
}

#[test]
fn type_mismatch_names_key() {
    assert_eq!(
        keys(RunConfig::parse("steps = 1.5").unwrap_err()),
        vec!["steps"]
    );
    assert_eq!(
        keys(RunConfig::parse("lags = 1, two").unwrap_err()),
        vec!["lags"]
    );
}

#[test]
fn t_list_must_fit_the_grid() {
    let k = keys(RunConfig::parse("dt = 0.3\nT = 0.9\nT_list = 0.9, 1.0").unwrap_err());
    assert_eq!(k, vec!["T_list"]);
}

#[test]
fn ref_charge_auto_follows_coupling() {
    let c = RunConfig::parse("e = 0.7").unwrap();
    assert!(c.auto_ref_charge);
    assert_eq!(c.test.ref_charge, 0.7);
    let c = RunConfig::parse("e = 0.7\ntest_ref_charge = 0.2").unwrap();
    assert!(!c.auto_ref_charge);
    assert_eq!(c.test.ref_charge, 0.2);
}

#[test]
fn hash_is_pinned_and_ignores_output_dir() {
    let a = RunConfig::default();
    // SHA-256 of the canonical text: independent of platform and build
    assert_eq!(a.hash_hex(), "6d274cad109b6a64");
    let b = RunConfig::parse("output_dir = elsewhere").unwrap();
    assert_eq!(a.hash(), b.hash());
    let c = RunConfig::parse("seed = 2").unwrap();
    assert_ne!(a.hash(), c.hash());
}

#[test]
fn canonical_text_lists_every_key() {
    let text = RunConfig::default().serialize();
    assert_eq!(text.lines().count(), 29);
    assert!(text.contains("test_ref_charge = auto"));
}

fn arb_config() -> impl Strategy<Value = RunConfig> {
    (
        3usize..=5,
        0.0f64..2.0,
        0.5f64..2.0,
        (1u32..4, 1u32..20),
        (1u64..10_000, 0u64..1000, 1u64..5, 1usize..8, any::<u64>()),
        prop::collection::vec(0.1f64..10.0, 1..5),
        any::<bool>(),
    )
        .prop_map(|(d, e, sigma, (dt_inv, t_steps), (steps, burn, thin, chains, seed), lags, auto)| {
            let mut text = format!(
                "d = {d}\ne = {e:?}\nsigma = {sigma:?}\ndt = {:?}\nT = {:?}\n",
                1.0 / dt_inv as f64,
                t_steps as f64 / dt_inv as f64
            );
            text += &format!("steps = {}\nburn_in = {burn}\nthin = {thin}\nchains = {chains}\nseed = {seed}\n", steps * thin * 2);
            let mut lags = lags;
            lags.sort_by(f64::total_cmp);
            lags.dedup();
            let l: Vec<String> = lags.iter().map(|x| format!("{x:?}")).collect();
            text += &format!("lags = {}\n", l.join(", "));
            text += &format!("T_list = {:?}\n", t_steps as f64 / dt_inv as f64);
            if !auto {
                text += "test_ref_charge = 0.25\n";
            }
            RunConfig::parse(&text).unwrap_or_else(|e| panic!("{e}\n{text}"))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn serialization_round_trips(c in arb_config()) {
        let text = c.serialize();
        let back = RunConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.serialize(), text);
        prop_assert_eq!(back.hash(), c.hash());
    }
}
