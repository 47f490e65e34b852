use pwchaos::chaos::*;
use pwchaos::leaves::LeafOptions;
use pwchaos::recurrence::SequenceMode;
use pwchaos::spectral::{analyze_origin, derived_constants, ogap};
use pwchaos::system::{builtin_example, parse_system, HomoclinicReference, Params, PiecewiseSystem};

fn ex1() -> (PiecewiseSystem, HomoclinicReference) {
    let (s, h) = builtin_example("ex1", &Params::new()).unwrap();
    (s, h.unwrap())
}

fn setup(sys: &PiecewiseSystem, hom: &HomoclinicReference, eps: f64) -> ChaosSetup {
    let c = derived_constants(&analyze_origin(sys, Some(hom)).unwrap());
    let gap = ogap(c.k0, 1.0, eps).max(43.0);
    let seq = periodic_time_sequence(sys, hom, &c, eps, 1.0, 0.0, gap, 1.0, 4, SequenceMode::TandKnu, 0.05).unwrap();
    ChaosSetup::new(sys, hom, eps, seq, LeafOptions::default(), SearchOptions::default()).unwrap()
}

#[test]
fn glued_window_shadows_its_symbols() {
    let (s, h) = ex1();
    let st = setup(&s, &h, 1e-3);
    let e = SymbolWindow::centered("111").unwrap();
    let r = glue(&st, &e).unwrap();
    assert!(r.verified, "{:?}", r.property_c);
    assert!(r.alpha0.abs() <= 0.5);
    assert!(r.glue.g_b0 * r.glue.g_b1 < 0.0);
    for side in [&r.forward, &r.backward] {
        assert!(side.nested_ok);
        assert!(side.nested_log10_widths.windows(2).all(|w| w[1] < w[0]));
        assert!(side.gap_checks.iter().all(|g| g.ok));
        assert!(side.stages.iter().all(|k| k.monotone));
    }
    assert_eq!(r.gaps.len(), 2);
    assert!(r.gaps.iter().all(|g| g.inner_crossings == 1), "{:?}", r.gaps);
    assert!(r.sup_distances.values().all(|&d| d < 0.05));

    // The same orbit does not shadow a different window.
    let orbit = GluedOrbit::new(r.tau_star, &r.backward, &r.forward);
    let wrong = SymbolWindow::centered("101").unwrap();
    let rep = verify_property_c(&s, &orbit, &st.seq, &wrong, &h, 0.05, 0.01, true).unwrap();
    assert!(!rep.pass);
    let code = code_orbit(&s, &orbit, &st.seq, &h, -1, 1, 0.05, 0.01).unwrap();
    assert_eq!(code, vec![Some(1); 3]);
}

#[test]
fn trailing_zeros_keep_the_leaf() {
    let (s, h) = ex1();
    let st = setup(&s, &h, 1e-3);
    let e = SymbolWindow::centered("010").unwrap();
    let r = search_forward(&st, &e, 0.0).unwrap();
    assert!(r.ln_d.is_none());
    assert!(r.stages.is_empty());
    assert_eq!(r.d(), 0.0);
}

#[test]
fn backward_search_mirrors_forward_on_reversible_example() {
    let (s, h) = ex1();
    let st = setup(&s, &h, 1e-3);
    let e = SymbolWindow::centered("111").unwrap();
    let tau = 0.01;
    let f = search_forward(&st, &e, tau).unwrap();
    let b = search_backward(&st, &e, -tau).unwrap();
    let (lf, lb) = (f.ln_d.unwrap(), b.ln_d.unwrap());
    assert!((lf - lb).abs() < 1e-8 * lf.abs(), "{lf} vs {lb}");
}

#[test]
fn refuses_when_invariant_directions_share_a_side() {
    let (ex, h) = ex1();
    // Any admissible sequence will do; the refusal comes from the hypotheses.
    let seq = setup(&ex, &h, 1e-3).seq;
    for (file, scenario) in [("scenario3.cfg", 3), ("scenario4.cfg", 4)] {
        let path = format!("{}/../../configs/{file}", env!("CARGO_MANIFEST_DIR"));
        let s = parse_system(&std::fs::read_to_string(path).unwrap()).unwrap();
        let rep = analyze_origin(&s, Some(&h)).unwrap();
        assert!(rep.verdicts.f0 && rep.verdicts.f1 && rep.verdicts.k_transversality, "{file}");
        assert!(!rep.verdicts.f2, "{file}");
        assert_eq!(rep.scenario, Some(scenario), "{file}");
        let r = ChaosSetup::new(&s, &h, 1e-3, seq.clone(), LeafOptions::default(), SearchOptions::default());
        assert!(matches!(r, Err(ChaosError::Hypotheses(_))), "{file}");
    }
}
