use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swlm_core::analysis::{
    collect_gates, cosine, gate_kde, gaussian_kde, load_ttr_points, nearest_neighbors, nearest_rows,
    oov_transfer, param_report, pca_curve, ttr_fit, word_matrix, Side, TtrPoint,
};
use swlm_core::config::RunConfig;
use swlm_core::corpus::{tokenize_text, Vocabulary};
use swlm_core::model::{prepare_subwords, LanguageModel};
use swlm_core::tying::count_parameters;
use swlm_numcore::{ParamLayout, ParamRegistry, Tensor};

fn model(config: &str, text: &str) -> LanguageModel {
    let run = RunConfig::parse(config).unwrap();
    let tokens = tokenize_text(text);
    let vocab = Vocabulary::build(&tokens, 1).unwrap();
    let sub = prepare_subwords(&run, &vocab).unwrap();
    let mut lm = LanguageModel::assemble(run, vocab, sub).unwrap();
    lm.params = lm.arch.init_params(&mut ChaCha8Rng::seed_from_u64(3), 0.1);
    lm
}

const TEXT: &str = "the cat walks and the dog walked\nthe cats are walking to a dog\nlook at the looking cat\n";

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[test]
fn neighbors_exclude_query_and_are_sorted() {
    let lm = model("units=morph\nd_lm=8\nmorph_passes=3\n", TEXT);
    for side in [Side::Input, Side::Output] {
        let r = nearest_neighbors(&lm, "cat", side, 5).unwrap();
        let n = r.neighbors.unwrap();
        assert_eq!(n.len(), 5);
        assert!(n.iter().all(|x| x.word != "cat" && x.similarity <= 1.0 + 1e-9));
        assert!(n.windows(2).all(|w| w[0].similarity >= w[1].similarity));
    }
    assert!(nearest_neighbors(&lm, "zebras", Side::Output, 3).is_err());
    let oov = nearest_neighbors(&lm, "walks", Side::Input, 3).unwrap();
    assert!(oov.in_vocabulary);
}

#[test]
fn unsegmentable_oov_is_not_available() {
    let lm = model("units=syl\nd_s=4\nd_hw=8\nd_lm=8\n", TEXT);
    let r = nearest_neighbors(&lm, "looooook", Side::Input, 3).unwrap();
    assert!(!r.in_vocabulary);
    assert_eq!(r.neighbors, None);
    assert_eq!(r.status, "not available");
}

#[test]
fn segmentable_oov_is_embedded_on_the_fly() {
    let lm = model("units=char\nd_lm=8\nfilter_widths=1,2\nfeature_maps=3,5\nchar_dim=4\n", TEXT);
    let r = nearest_neighbors(&lm, "tac", Side::Input, 4).unwrap();
    assert!(!r.in_vocabulary);
    assert_eq!(r.neighbors.unwrap().len(), 4);
}

#[test]
fn duplicate_rows_have_similarity_one() {
    let m = Tensor::<f64>::from_vec(&[3, 2], vec![1.0, 2.0, -1.0, 0.5, 1.0, 2.0]).unwrap();
    let r = nearest_rows(&m, &[1.0, 2.0], 2, Some(0));
    assert_eq!(r[0].0, 2);
    assert!((r[0].1 - 1.0).abs() < 1e-12);
}

#[test]
fn pca_examples() {
    let rank1 = Tensor::<f64>::from_vec(&[4, 3], (0..12).map(|i| ((i / 3) as f64) * [1.0, -2.0, 0.5][i % 3]).collect())
        .unwrap();
    assert!((pca_curve(&rank1).unwrap().points[0].1 - 1.0).abs() < 1e-9);
    let same = Tensor::<f64>::full(&[5, 3], 0.7);
    assert!(pca_curve(&same).unwrap().points.iter().all(|p| p.1 == 1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let iso = Tensor::<f64>::from_vec(&[5000, 10], (0..50_000).map(|_| gaussian(&mut rng)).collect()).unwrap();
    let c = pca_curve(&iso).unwrap();
    assert!((c.points[4].1 - 0.5).abs() < 0.05, "{:?}", c.points);
    assert!(pca_curve(&Tensor::<f64>::zeros(&[1, 3])).is_err());
}

#[test]
fn fully_tied_model_has_identical_input_and_output_curves() {
    let lm = model("units=morph\nreuse=rerw\nd_lm=8\nmorph_passes=3\n", TEXT);
    let a = pca_curve(&word_matrix(&lm, Side::Input).unwrap()).unwrap();
    let b = pca_curve(&word_matrix(&lm, Side::Output).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn gate_density_spikes_at_one_half_for_zero_parameters() {
    let lm = model("units=morph\nd_lm=8\nmorph_passes=3\n", TEXT);
    let zero = ParamRegistry::<f32>::zeros(lm.arch.layout().clone());
    let words: Vec<usize> = (0..lm.vocab().len()).collect();
    let gates = collect_gates(&lm.arch, &zero, lm.units(), &words, Side::Input, 1).unwrap();
    assert!(gates.iter().all(|&g| g == 0.5));
    let k = gate_kde(&lm.arch, &zero, lm.units(), &words, Side::Input).unwrap();
    let peak = k.density.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert!((k.xs[peak] - 0.5).abs() < 1e-3);
    assert!((k.integral - 1.0).abs() < 1e-3);
    assert!(gate_kde(&lm.arch, &zero, lm.units(), &[], Side::Input).is_err());
}

#[test]
fn trained_gates_integrate_to_one() {
    let lm = model("units=syl\nd_s=4\nd_hw=8\nd_lm=8\n", TEXT);
    let words: Vec<usize> = (0..lm.vocab().len()).collect();
    for side in [Side::Input, Side::Output] {
        let k = gate_kde(&lm.arch, &lm.params, lm.units(), &words, side).unwrap();
        assert!((k.integral - 1.0).abs() < 1e-3, "{}", k.integral);
    }
}

#[test]
fn ttr_fixture_matches_published_regression() {
    let points = load_ttr_points().unwrap();
    assert_eq!(points.len(), 10);
    let ru = points.iter().find(|p| p.label == "ru-small").unwrap();
    assert!((ru.ttr - 0.062).abs() < 1e-12 && ru.delta_ppl == 127.0);
    let fit = ttr_fit(&points).unwrap();
    assert!((fit.slope / 2109.0 - 1.0).abs() < 0.15, "{}", fit.slope);
    assert!((fit.pearson_r.unwrap() - 0.84).abs() < 0.1);
}

#[test]
fn ttr_exact_line() {
    let pts: Vec<TtrPoint> = [0.01, 0.03, 0.05]
        .iter()
        .map(|&x| TtrPoint {
            label: String::new(),
            ttr: x,
            delta_ppl: 2109.0 * x,
        })
        .collect();
    let f = ttr_fit(&pts).unwrap();
    assert!((f.slope - 2109.0).abs() < 1e-9);
    assert!((f.pearson_r.unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn oov_transfer_on_subset_adds_nothing() {
    let lm = model("units=char\nd_lm=8\nfilter_widths=1,2\nfeature_maps=3,5\nchar_dim=4\n", TEXT);
    let r = oov_transfer(&lm, &tokenize_text(TEXT), 2, 5).unwrap();
    assert_eq!((r.new_oov_tokens, r.new_oov_types), (0, 0));
    assert_eq!(r.eval_vocab_size, lm.vocab().len());
    let direct = lm.arch.evaluate(&lm.params, lm.units(), &lm.encode(&tokenize_text(TEXT)), 2, 5).unwrap();
    assert!((r.ppl - direct.ppl).abs() < 1e-9);
}

#[test]
fn char_oov_means_an_unseen_character() {
    let lm = model("units=char\nd_lm=8\nfilter_widths=1,2\nfeature_maps=3,5\nchar_dim=4\n", TEXT);
    let test = tokenize_text("the tac walks zebra\nthe xyz cat tac\n");
    let r = oov_transfer(&lm, &test, 2, 4).unwrap();
    assert_eq!(r.new_oov_types, 2);
    assert_eq!(r.new_oov_tokens, 2);
    assert_eq!(r.eval_vocab_size, lm.vocab().len() + 1);
    assert!(r.ppl.is_finite());
}

#[test]
fn parameter_report_rows() {
    let row = |units: &str, size: &str, reuse: &str, words: usize, subs: usize| {
        let run = RunConfig::parse(&format!("units={units}\nsize={size}\nreuse={reuse}\n")).unwrap();
        (format!("{units}-{size}-{reuse}"), run, words, subs)
    };
    let rows = vec![
        row("morph", "small", "none", 10_000, 3_400),
        row("morph", "small", "re", 10_000, 3_400),
        row("morph", "small", "rw", 10_000, 3_400),
        row("morph", "small", "rerw", 10_000, 3_400),
        row("word", "medium", "none", 33_278, 0),
        row("word", "medium", "re", 33_278, 0),
    ];
    let got: Vec<String> = param_report(&rows).unwrap().into_iter().map(|r| r.millions).collect();
    assert_eq!(got, ["2.3", "1.7", "2.2", "1.5", "50.1", "28.4"]);
    assert_eq!(count_parameters(&ParamLayout::new(), vec![]).unique_params, 0);
}

proptest! {
    #[test]
    fn cosine_is_symmetric_with_unit_self_similarity(
        a in proptest::collection::vec(-5.0f64..5.0, 4),
        b in proptest::collection::vec(-5.0f64..5.0, 4),
    ) {
        prop_assert!((cosine(&a, &b) - cosine(&b, &a)).abs() < 1e-12);
        if a.iter().any(|x| x.abs() > 1e-3) {
            prop_assert!((cosine(&a, &a) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn variance_curves_rise_to_one(data in proptest::collection::vec(-3.0f64..3.0, 8 * 4)) {
        let m = Tensor::<f64>::from_vec(&[8, 4], data).unwrap();
        let c = pca_curve(&m).unwrap();
        prop_assert!(c.points.windows(2).all(|w| w[1].1 >= w[0].1));
        prop_assert!(c.points.iter().all(|p| (0.0..=1.0).contains(&p.1)));
        prop_assert_eq!(c.points.last().unwrap().1, 1.0);
    }

    #[test]
    fn kde_integrates_to_one(xs in proptest::collection::vec(-2.0f64..2.0, 1..60)) {
        let k = gaussian_kde(&xs, 1001).unwrap();
        prop_assert!((k.integral - 1.0).abs() < 1e-3, "{}", k.integral);
    }

    #[test]
    fn ttr_slope_is_scale_equivariant(
        pts in proptest::collection::vec((0.001f64..0.1, -50.0f64..300.0), 2..12),
        c in 0.1f64..10.0,
    ) {
        let mk = |s: f64| pts.iter().map(|&(x, y)| TtrPoint { label: String::new(), ttr: x, delta_ppl: s * y }).collect::<Vec<_>>();
        let a = ttr_fit(&mk(1.0)).unwrap().slope;
        let b = ttr_fit(&mk(c)).unwrap().slope;
        prop_assert!((b - c * a).abs() <= 1e-9 * (1.0 + (c * a).abs()));
    }
}
