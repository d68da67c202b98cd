use inkrnn::cells::{gru_step, init_params, lstm_step, CellKind, CellParams, CellState, GateTrace};
use inkrnn::classifier::{argmax, ClassifierModel, NetSpec};
use inkrnn::data_io::{
    builtin_templates, load_checkpoint, read_jsonl, render_svg, save_checkpoint, synthesize_corpus, write_jsonl, Corpus, SynthConfig,
};
use inkrnn::generator::{GenConfig, GenModel, MixtureParams};
use inkrnn::ink::{InkSequence, LineFeature, PenState, RawPoint};
use inkrnn::numcore::{softmax, Gradients, Matrix, Mode, ParamSet};
use inkrnn::optim::{adam_step, plateau_schedule, AdamState, OptConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn arb_vec(len: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, len)
}

/// Random multi-stroke ink with strictly increasing stroke ids.
fn arb_ink() -> impl Strategy<Value = InkSequence> {
    prop::collection::vec(prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..8), 1..5).prop_map(|strokes| {
        let pts = strokes
            .iter()
            .enumerate()
            .flat_map(|(s, pts)| pts.iter().map(move |&(x, y)| RawPoint::new(x, y, s as u32)))
            .collect();
        InkSequence::new(pts, Some(0)).unwrap()
    })
}

fn arb_feats() -> impl Strategy<Value = Vec<LineFeature>> {
    prop::collection::vec((arb_vec(4, -3.0, 3.0), any::<bool>()), 1..12).prop_map(|rows| {
        rows.into_iter()
            .map(|(v, down)| {
                let (d, u) = if down { (1.0, 0.0) } else { (0.0, 1.0) };
                LineFeature([v[0], v[1], v[2], v[3], d, u])
            })
            .collect()
    })
}

fn randomized_cell(kind: CellKind, seed: u64, std: f64) -> (ParamSet, CellParams) {
    let mut r = rng(seed);
    let mut ps = ParamSet::new();
    let cell = init_params(&mut ps, "c", kind, 3, 5, &mut r).unwrap();
    for t in ps.tensors_mut() {
        *t = Matrix::gaussian(t.rows(), t.cols(), std, &mut r);
    }
    (ps, cell)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_a_shift_invariant_distribution(v in arb_vec(7, -50.0, 50.0), c in -100.0f64..100.0) {
        let p = softmax(&v);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&q| q >= 0.0));
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gates_are_open_intervals_and_gru_state_is_bounded(seed in 0u64..1000, xs in prop::collection::vec(arb_vec(3, -5.0, 5.0), 1..10)) {
        let (ps, cell) = randomized_cell(CellKind::Gru, seed, 1.0);
        let CellParams::Gru(p) = &cell else { unreachable!() };
        let mut s = CellState::zeros(CellKind::Gru, 5);
        for x in &xs {
            let (next, trace) = gru_step(&ps, p, x, &s).unwrap();
            let GateTrace::Gru { reset, update, .. } = trace else { unreachable!() };
            prop_assert!(reset.iter().chain(&update).all(|&g| g > 0.0 && g < 1.0));
            prop_assert!(next.h.iter().all(|&h| h.abs() < 1.0));
            let (again, _) = gru_step(&ps, p, x, &s).unwrap();
            prop_assert_eq!(&again, &next);
            s = next;
        }
        let (ps, cell) = randomized_cell(CellKind::Lstm, seed, 1.0);
        let CellParams::Lstm(p) = &cell else { unreachable!() };
        let mut s = CellState::zeros(CellKind::Lstm, 5);
        for x in &xs {
            let (next, trace) = lstm_step(&ps, p, x, &s).unwrap();
            let GateTrace::Lstm { input, forget, output, .. } = trace else { unreachable!() };
            prop_assert!(input.iter().chain(&forget).chain(&output).all(|&g| g > 0.0 && g < 1.0));
            s = next;
        }
    }

    #[test]
    fn classifier_outputs_a_distribution(seed in 0u64..1000, feats in arb_feats()) {
        let spec = NetSpec { hidden: vec![4, 3], full_dim: 5, ..NetSpec::preset("desk-clf", 4).unwrap() };
        let mut r = rng(seed);
        let mut m = ClassifierModel::new(&spec, &mut r).unwrap();
        for t in m.params.tensors_mut() {
            *t = Matrix::gaussian(t.rows(), t.cols(), 0.5, &mut r);
        }
        let p = m.forward(&feats, Mode::Eval, &mut rng(0)).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&q| q >= 0.0));
        prop_assert_eq!(&m.forward(&feats, Mode::Eval, &mut rng(1)).unwrap(), &p);
        // With p = 0 every sub-sequence is the full sequence.
        let ens = m.predict_ensemble(&feats, 3, 0.0, &mut rng(2)).unwrap();
        prop_assert_eq!(argmax(&ens), argmax(&p));
    }

    #[test]
    fn generator_heads_are_normalized(seed in 0u64..1000, o in arb_vec(6, -1.0, 1.0)) {
        let cfg = GenConfig { output_dim: 6, hidden_dim: 5, embed_dim: 3, transform_dim: 3, mixtures: 4, ..GenConfig::preset("desk-gen", 3).unwrap() };
        let mut r = rng(seed);
        let mut m = GenModel::new(&cfg, &mut r).unwrap();
        for t in m.params.tensors_mut() {
            *t = Matrix::gaussian(t.rows(), t.cols(), 2.0, &mut r);
        }
        let mix = m.gmm_head(&o).unwrap();
        prop_assert!((mix.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(mix.sigma_x.iter().chain(&mix.sigma_y).all(|&s| s > 0.0));
        prop_assert!(mix.log_density(0.3, -0.2).is_finite());
        let pen = m.pen_head(&o).unwrap();
        prop_assert!((pen.0.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_ends_or_is_flagged(seed in 0u64..1000, cap in 1usize..25) {
        let cfg = GenConfig { output_dim: 6, hidden_dim: 5, embed_dim: 3, transform_dim: 3, mixtures: 2, ..GenConfig::preset("desk-gen", 3).unwrap() };
        let mut r = rng(seed);
        let mut m = GenModel::new(&cfg, &mut r).unwrap();
        for t in m.params.tensors_mut() {
            *t = Matrix::gaussian(t.rows(), t.cols(), 1.0, &mut r);
        }
        let s = m.sample_character((seed % 3) as usize, &mut r, cap).unwrap();
        prop_assert!(s.tokens.len() <= cap);
        let ended = s.tokens.last().map(|t| t.pen) == Some(PenState::End);
        prop_assert!(ended != s.truncated);
    }

    #[test]
    fn mixture_density_is_positive(raw in arb_vec(15, -2.0, 2.0), x in -5.0f64..5.0, y in -5.0f64..5.0) {
        let mix = MixtureParams::from_raw(&raw, 3).unwrap();
        prop_assert!(inkrnn::generator::gmm_density(&mix, x, y) > 0.0);
    }

    #[test]
    fn first_adam_step_ignores_gradient_scale(g in arb_vec(6, -10.0, 10.0), k in 0.01f64..100.0) {
        prop_assume!(g.iter().all(|v| v.abs() > 1e-3));
        let mut ps = ParamSet::new();
        ps.add("w", Matrix::zeros(6, 1)).unwrap();
        let cfg = OptConfig::default();
        let step = |scale: f64| {
            let mut p = ps.clone();
            let grads = Gradients::from_tensors(vec![Matrix::from_vec(6, 1, g.iter().map(|v| v * scale).collect()).unwrap()]);
            let mut st = AdamState::new(&p);
            adam_step(&mut p, &grads, &mut st, &cfg, cfg.lr).unwrap();
            p.flatten()
        };
        for (a, b) in step(1.0).iter().zip(step(k)) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn learning_rate_never_increases(history in prop::collection::vec(0.0f64..10.0, 0..40)) {
        let cfg = OptConfig { patience: 2, ..OptConfig::default() };
        let mut last = cfg.lr;
        for n in 0..=history.len() {
            let lr = plateau_schedule(&history[..n], &cfg);
            prop_assert!(lr <= last && lr >= cfg.min_lr);
            last = lr;
        }
    }

    #[test]
    fn jsonl_round_trip_is_exact(inks in prop::collection::vec(arb_ink(), 1..6)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let corpus = Corpus::new(inks, 1, None).unwrap();
        write_jsonl(&corpus, &path).unwrap();
        prop_assert_eq!(read_jsonl(&path).unwrap().samples, corpus.samples);
    }

    #[test]
    fn svg_has_one_polyline_per_stroke(ink in arb_ink()) {
        let svg = render_svg(&ink).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let n = doc.descendants().filter(|n| n.has_tag_name("polyline")).count();
        prop_assert_eq!(n, ink.stroke_count());
    }
}

#[test]
fn checkpoints_restore_single_precision_bits() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..5 {
        let mut r = rng(seed);
        let m = GenModel::new(&GenConfig::preset("desk-gen", 4).unwrap(), &mut r).unwrap();
        let base = dir.path().join(format!("g{seed}"));
        save_checkpoint(&base, "generator", serde_json::to_value(m.config()).unwrap(), &m.params).unwrap();
        let ck = load_checkpoint(&base).unwrap();
        let cfg: GenConfig = serde_json::from_value(ck.config).unwrap();
        let back = GenModel::from_params(&cfg, ck.params).unwrap();
        for (a, b) in m.params.flatten().iter().zip(back.params.flatten()) {
            assert_eq!((*a as f32).to_bits(), (b as f32).to_bits());
        }
    }
}

#[test]
fn synthesis_is_reproducible_per_seed() {
    let t = &builtin_templates()[..6];
    let cfg = SynthConfig::default();
    let a = synthesize_corpus(t, 5, &cfg, &mut rng(3)).unwrap();
    let b = synthesize_corpus(t, 5, &cfg, &mut rng(3)).unwrap();
    let c = synthesize_corpus(t, 5, &cfg, &mut rng(4)).unwrap();
    assert_eq!(a.samples, b.samples);
    assert_ne!(a.samples, c.samples);
}
