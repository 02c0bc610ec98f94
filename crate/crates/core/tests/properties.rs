mod common;

use std::collections::BTreeSet;

use kbqa_core::constructor::{integrate, ConstructorConfig, SchemaCandidates, SketchBeam};
use kbqa_core::dataset::{AnswerVerdict, LfVerdict};
use kbqa_core::discriminator::{decide_ranked, Mode};
use kbqa_core::eval::{exact_match, f1_lenient, f1_regular};
use kbqa_core::executor::{check_validity, execute, AnswerSet};
use kbqa_core::kb::{perturb_kb, Deletion, PerturbationPlan};
use kbqa_core::linker::{build_lexicon, detect_mentions, normalize, EntityLinker, LinkedEntities};
use kbqa_core::retriever::{CandidateLogicalForm, Source};
use kbqa_core::scorer::{
    binary_loss, contrastive_loss, metric_at, multiclass_loss, tune_threshold, LinearScorer,
    Threshold, ThresholdPoint,
};
use kbqa_core::sexpr::{
    canonical_key, canonicalize, extract_sketch, parse_sexpr, print_sexpr, SExpr,
};
use kbqa_core::synth::{
    random_kb, random_sexpr, random_valid_sexpr, world, RandomKbConfig, WorldConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Randomly swaps AND operands throughout.
fn shuffle_ands(e: &SExpr, rng: &mut impl Rng) -> SExpr {
    match e {
        SExpr::And(a, b) => {
            let (a, b) = (shuffle_ands(a, rng), shuffle_ands(b, rng));
            if rng.gen_bool(0.5) {
                SExpr::and(b, a)
            } else {
                SExpr::and(a, b)
            }
        }
        SExpr::Join(r, x) => SExpr::join(r.clone(), shuffle_ands(x, rng)),
        SExpr::Count(x) => SExpr::count(shuffle_ands(x, rng)),
        SExpr::ArgMax(x, r) => SExpr::ArgMax(Box::new(shuffle_ands(x, rng)), r.clone()),
        SExpr::ArgMin(x, r) => SExpr::ArgMin(Box::new(shuffle_ands(x, rng)), r.clone()),
        other => other.clone(),
    }
}

fn answer_verdict() -> impl Strategy<Value = AnswerVerdict> {
    prop_oneof![
        Just(AnswerVerdict::NoAnswer),
        prop::collection::btree_set("[a-e]", 1..5)
            .prop_map(|s| AnswerVerdict::Answers(AnswerSet(s))),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn print_parse_round_trip(seed in any::<u64>()) {
        let e = random_sexpr(&mut rng(seed), 5);
        prop_assert_eq!(parse_sexpr(&print_sexpr(&e)).unwrap(), e);
    }

    #[test]
    fn canonicalize_is_idempotent(seed in any::<u64>()) {
        let e = random_sexpr(&mut rng(seed), 5);
        let c = canonicalize(&e);
        prop_assert_eq!(canonicalize(&c), c);
    }

    #[test]
    fn executor_matches_brute_force(seed in any::<u64>()) {
        let mut r = rng(seed);
        let kb = random_kb(&mut r, &RandomKbConfig::default());
        let e = random_valid_sexpr(&mut r, &kb, 4);
        prop_assert_eq!(execute(&e, &kb).unwrap(), common::brute_force(&e, &kb));
    }

    #[test]
    fn canonicalize_preserves_execution(seed in any::<u64>()) {
        let mut r = rng(seed);
        let kb = random_kb(&mut r, &RandomKbConfig::default());
        let e = random_valid_sexpr(&mut r, &kb, 4);
        let c = canonicalize(&e);
        prop_assert!(check_validity(&c, &kb).valid);
        prop_assert_eq!(execute(&c, &kb).unwrap(), execute(&e, &kb).unwrap());
    }

    #[test]
    fn em_ignores_and_operand_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let e = random_sexpr(&mut r, 5);
        let shuffled = shuffle_ands(&e, &mut r);
        prop_assert_eq!(canonical_key(&e), canonical_key(&shuffled));
        prop_assert_eq!(exact_match(&LfVerdict::Form(shuffled), &LfVerdict::Form(e)), 1.0);
    }

    #[test]
    fn f1_is_symmetric_and_lenient_dominates(
        a in answer_verdict(),
        b in answer_verdict(),
        ideal in prop::collection::btree_set("[a-e]", 1..5),
    ) {
        prop_assert_eq!(f1_regular(&a, &b), f1_regular(&b, &a));
        let ideal = AnswerSet(ideal);
        prop_assert!(f1_lenient(&a, &b, Some(&ideal)) >= f1_regular(&a, &b));
        prop_assert_eq!(f1_lenient(&a, &b, None), f1_regular(&a, &b));
    }

    #[test]
    fn tuned_threshold_is_optimal_over_sweep(
        raw in prop::collection::vec((prop::option::of(-3i32..3), any::<bool>()), 1..30),
    ) {
        let points: Vec<ThresholdPoint> = raw
            .iter()
            .map(|(s, valid)| {
                let mut p = ThresholdPoint::binary(0.0, *valid);
                p.score = s.map(|v| v as f64 * 0.5);
                p
            })
            .collect();
        let t = tune_threshold(&points, "em").unwrap();
        prop_assert_eq!(metric_at(&points, t.tau), t.tuned_value);
        for k in -8..=8 {
            prop_assert!(metric_at(&points, k as f64 * 0.25) <= t.tuned_value);
        }
    }

    #[test]
    fn raising_tau_never_answers_more(scores in prop::collection::vec(-5.0f64..5.0, 1..20), lo in -6.0f64..6.0, d in 0.0f64..3.0) {
        let answered = |tau: f64| scores.iter().filter(|s| !Threshold::fixed(tau).predicts_nk(Some(**s))).count();
        prop_assert!(answered(lo + d) <= answered(lo));
    }

    #[test]
    fn contrastive_loss_is_shift_invariant(
        w in prop::collection::vec(-1.0f64..1.0, 4),
        bias in -2.0f64..2.0,
        gold in prop::collection::vec(-1.0f64..1.0, 4),
        neg in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..5),
        shift in prop::collection::vec(-2.0f64..2.0, 4),
    ) {
        let model = LinearScorer { weights: w, bias };
        let negs: Vec<&[f64]> = neg.iter().map(Vec::as_slice).collect();
        let (base, _) = contrastive_loss(&model, &gold, &negs).unwrap();
        let add = |v: &[f64]| v.iter().zip(&shift).map(|(a, b)| a + b).collect::<Vec<f64>>();
        let shifted: Vec<Vec<f64>> = neg.iter().map(|v| add(v)).collect();
        let snegs: Vec<&[f64]> = shifted.iter().map(Vec::as_slice).collect();
        let (moved, g) = contrastive_loss(&model, &add(&gold), &snegs).unwrap();
        prop_assert!((base - moved).abs() < 1e-9);
        prop_assert!(g.bias.abs() < 1e-12);
        prop_assert!(base >= 0.0);
    }

    #[test]
    fn analytic_gradients_match_finite_differences(
        w in prop::collection::vec(-1.0f64..1.0, 3),
        bias in -1.0f64..1.0,
        classes in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 2..5),
        label in any::<bool>(),
    ) {
        let model = LinearScorer { weights: w, bias };
        let refs: Vec<&[f64]> = classes.iter().map(Vec::as_slice).collect();
        let checks: Vec<Box<dyn Fn(&LinearScorer) -> (f64, kbqa_core::scorer::Gradient)>> = vec![
            Box::new(|m| contrastive_loss(m, refs[0], &refs[1..]).unwrap()),
            Box::new(|m| multiclass_loss(m, &refs, refs.len() - 1).unwrap()),
            Box::new(|m| binary_loss(m, refs[0], label).unwrap()),
        ];
        let h = 1e-6;
        for f in &checks {
            let (_, g) = f(&model);
            for i in 0..=model.weights.len() {
                let nudge = |d: f64| {
                    let mut m = model.clone();
                    if i < m.weights.len() { m.weights[i] += d } else { m.bias += d }
                    f(&m).0
                };
                let numeric = (nudge(h) - nudge(-h)) / (2.0 * h);
                let analytic = if i < g.weights.len() { g.weights[i] } else { g.bias };
                prop_assert!((numeric - analytic).abs() <= 1e-5 * (1.0 + analytic.abs()), "{numeric} vs {analytic}");
            }
        }
    }

    #[test]
    fn decisions_keep_nk_implies_na(seed in any::<u64>(), tau in -1.0f64..2.0) {
        let mut r = rng(seed);
        let kb = random_kb(&mut r, &RandomKbConfig::default());
        let mut pool: Vec<CandidateLogicalForm> = (0..r.gen_range(0..6))
            .map(|_| {
                let mut c = CandidateLogicalForm::new(&random_valid_sexpr(&mut r, &kb, 3), Source::Constructed);
                c.score = Some(r.gen_range(0.0..1.0));
                c
            })
            .collect();
        pool.sort_by(kbqa_core::retriever::rank_order);
        let threshold = Threshold::fixed(tau);
        for mode in [Mode::Unanswerability, Mode::Egc, Mode::TopRanked] {
            let p = decide_ranked("q", &pool, Some(&threshold), &kb, mode);
            prop_assert!(p.is_consistent());
            if p.logical_form.is_nk() {
                prop_assert!(p.answer.is_na());
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mentions_are_deterministic_and_disjoint(seed in any::<u64>(), picks in prop::collection::vec(0usize..100, 1..6)) {
        let mut r = rng(seed);
        let kb = random_kb(&mut r, &RandomKbConfig::default());
        let labels: Vec<&str> = kb.entities().map(|e| e.label.as_str()).collect();
        let filler = ["which", "of", "the", "and", "is"];
        let question: Vec<&str> = picks
            .iter()
            .flat_map(|&i| [labels[i % labels.len()], filler[i % filler.len()]])
            .collect();
        let question = question.join(" ");
        let lex = build_lexicon(&kb);
        let first = detect_mentions(&question, &lex);
        prop_assert_eq!(&first, &detect_mentions(&question, &lex));
        for pair in first.windows(2) {
            prop_assert!(pair[0].end <= pair[1].start);
        }
        for m in &first {
            prop_assert!(lex.lookup(&normalize(&m.surface)).is_some());
        }
        let linked: BTreeSet<String> = EntityLinker::new(&kb).link(&question).entity_ids().into_iter().collect();
        let wanted: BTreeSet<String> = picks
            .iter()
            .map(|&i| kb.entities().find(|e| e.label == labels[i % labels.len()]).unwrap().id.clone())
            .collect();
        prop_assert_eq!(linked, wanted);
    }

    #[test]
    fn integrate_is_complete_sound_and_schema_only(seed in 0u64..1000) {
        let mut r = rng(seed);
        let w = world(&mut r, &WorldConfig::default(), 30);
        let cfg = ConstructorConfig::default();
        let plan = PerturbationPlan {
            deletions: w.kb.facts().iter().step_by(3).cloned().map(Deletion::Fact).collect(),
            seed: 0,
        };
        let (reduced, _) = perturb_kb(&w.kb, &w.examples, &plan).unwrap();
        for ex in &w.examples {
            let gold = ex.gold_lf.form().unwrap();
            let beam = SketchBeam::single(extract_sketch(gold));
            let schema = SchemaCandidates::from_ids(
                gold.classes().into_iter().chain(["type_00"]),
                gold.relations().into_iter().chain(["rel_00"]),
            );
            let linked = LinkedEntities::from_ids(gold.entities());
            let out = integrate(&beam, &schema, &linked, &w.kb, &cfg);
            prop_assert!(out.iter().any(|c| c.key == canonical_key(gold)));
            for c in &out {
                prop_assert!(check_validity(&c.expr, &w.kb).valid);
                prop_assert!(execute(&c.expr, &w.kb).is_ok());
            }
            let again = integrate(&beam, &schema, &linked, &reduced, &cfg);
            prop_assert_eq!(out, again);
        }
    }
}
