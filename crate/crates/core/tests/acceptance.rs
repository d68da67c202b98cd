//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --release --test acceptance -- 3 4`.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::time::Instant;

use inkrnn::cells::{init_params, CellKind, CellParams, FORGET_BIAS};
use inkrnn::classifier::{ClassifierModel, Example, NetSpec};
use inkrnn::data_io::{
    builtin_templates, quality_report, read_jsonl, render_svg, save_checkpoint, load_checkpoint, synthesize_corpus, write_jsonl,
    Corpus, SynthConfig,
};
use inkrnn::generator::{gmm_density, GenConfig, GenExample, GenModel, MixtureParams, PenLoss};
use inkrnn::ink::{
    normalization_stats, normalize_coordinates, preprocess, to_gen_tokens, to_line_features, GenToken, InkSequence, PenState,
    PreprocessConfig, RawPoint,
};
use inkrnn::numcore::{finite_difference_params, max_relative_error, Matrix, Mode, ParamSet, Tape, DEFAULT_STEP};
use inkrnn::optim::OptConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CLASSES: usize = 10;
const CLF_EPOCHS: usize = 40;
const GEN_EPOCHS: usize = 80;
const GEN_LR: f64 = 0.003;
/// Classes of the deliberately confusable template pair.
const ELL: usize = 4;
const HOOK: usize = 9;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randomize(ps: &mut ParamSet, std: f64, r: &mut ChaCha8Rng) {
    for t in ps.tensors_mut() {
        *t = Matrix::gaussian(t.rows(), t.cols(), std, r);
    }
}

fn gradient_error<F>(ps: &ParamSet, loss: F) -> f64
where
    F: Fn(&ParamSet, bool) -> (f64, Option<inkrnn::numcore::Gradients>),
{
    let analytic = loss(ps, true).1.expect("gradient");
    let numeric = finite_difference_params(|p| Ok(loss(p, false).0), ps, DEFAULT_STEP).expect("finite differences");
    max_relative_error(&analytic.flatten(), &numeric.flatten())
}

fn cell_error(kind: CellKind, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut ps = ParamSet::new();
    let cell = init_params(&mut ps, "cell", kind, 3, 4, &mut r).unwrap();
    randomize(&mut ps, 0.6, &mut r);
    let xs: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    let run = |ps: &ParamSet, cell: &CellParams, want: bool| {
        let mut tape = Tape::new(ps);
        let mut s = cell.zero_state(&mut tape);
        let mut hs = Vec::new();
        for x in &xs {
            let v = tape.input(x);
            s = cell.step_tape(&mut tape, v, s).unwrap().0;
            hs.push(s.h);
        }
        let pooled = tape.add_n(&hs).unwrap();
        let loss = tape.softmax_xent(pooled, 2, 1.0).unwrap();
        (tape.scalar(loss), want.then(|| tape.backward(loss).unwrap()))
    };
    gradient_error(&ps, |p, want| run(p, &cell, want))
}

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let lstm = cell_error(CellKind::Lstm, 1);
    let gru = cell_error(CellKind::Gru, 2);

    let spec = NetSpec {
        input_dim: 6,
        hidden: vec![4],
        full_dim: 4,
        classes: 3,
        cell: CellKind::Gru,
        dropout_pool: 0.0,
        dropout_input: 0.0,
    };
    let mut r = rng(3);
    let mut clf = ClassifierModel::new(&spec, &mut r).unwrap();
    randomize(&mut clf.params, 0.7, &mut r);
    let feats = to_line_features(
        &InkSequence::from_triples(&[(0.0, 0.0, 0), (0.4, 0.9, 0), (1.0, 0.2, 0), (0.1, -0.5, 1), (0.8, -0.3, 1)], None).unwrap(),
    )
    .unwrap();
    assert_eq!(feats.len(), 4);
    let batch = [Example { feats, label: 1 }];
    let clf_err = gradient_error(&clf.params, |p, want| {
        let m = ClassifierModel::from_params(&spec, p.clone()).unwrap();
        if want {
            let (l, g) = m.nll_loss_and_grad(&batch, Mode::Eval, &mut rng(0)).unwrap();
            (l, Some(g))
        } else {
            (m.nll_loss(&batch, Mode::Eval, &mut rng(0)).unwrap(), None)
        }
    });

    let cfg = GenConfig {
        classes: 3,
        embed_dim: 4,
        transform_dim: 3,
        hidden_dim: 6,
        output_dim: 5,
        mixtures: 2,
        ..GenConfig::preset("desk-gen", 3).unwrap()
    };
    let mut r = rng(4);
    let mut gen = GenModel::new(&cfg, &mut r).unwrap();
    randomize(&mut gen.params, 0.6, &mut r);
    let tokens = [
        GenToken { dx: 0.4, dy: -0.7, pen: PenState::Down },
        GenToken { dx: -0.2, dy: 0.3, pen: PenState::Up },
        GenToken::end(),
    ];
    let (_, g) = gen.gen_loss_and_grad(&tokens, 1, Mode::Eval, &mut rng(0)).unwrap();
    let embed_touched = g.get(gen.net.embedding).column_values(1).iter().any(|&v| v != 0.0);
    let gen_err = gradient_error(&gen.params, |p, want| {
        let m = GenModel::from_params(&cfg, p.clone()).unwrap();
        if want {
            let (l, g) = m.gen_loss_and_grad(&tokens, 1, Mode::Eval, &mut rng(0)).unwrap();
            (l, Some(g))
        } else {
            (m.gen_loss(&tokens, 1, Mode::Eval, &mut rng(0)).unwrap(), None)
        }
    });

    let secs = start.elapsed().as_secs_f64();
    let worst = lstm.max(gru).max(clf_err).max(gen_err);
    verdict(
        worst < 1e-4 && embed_touched && secs < 60.0,
        format!(
            "max rel. error LSTM {lstm:.1e}, GRU {gru:.1e}, classifier {clf_err:.1e}, generator {gen_err:.1e} (limit 1e-4); embedding column in gradient: {embed_touched}; {secs:.1} s"
        ),
    )
}

fn random_character(r: &mut ChaCha8Rng) -> InkSequence {
    let strokes = r.random_range(1..4u32);
    let mut pts = Vec::new();
    for s in 0..strokes {
        for _ in 0..r.random_range(2..12) {
            pts.push(RawPoint::new(r.random_range(-50.0..150.0), r.random_range(-80.0..120.0), s));
        }
    }
    InkSequence::new(pts, None).unwrap()
}

fn preprocessing_oracle() -> Verdict {
    let seg = InkSequence::from_triples(&[(0.0, 0.0, 0), (1.0, 0.0, 0)], None).unwrap();
    let st = normalization_stats(&seg).unwrap();
    let example_ok = (st.mu_x - 0.5).abs() < 1e-9 && (st.delta_x - (1.0f64 / 12.0).sqrt()).abs() < 1e-9 && st.mu_y.abs() < 1e-9;

    let mut r = rng(5);
    let (mut worst_stats, mut worst_idem) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let ink = random_character(&mut r);
        let (once, _) = normalize_coordinates(&ink).unwrap();
        let s = normalization_stats(&once).unwrap();
        worst_stats = worst_stats.max(s.mu_x.abs()).max(s.mu_y.abs()).max((s.delta_x - 1.0).abs());
        let (twice, _) = normalize_coordinates(&once).unwrap();
        for (a, b) in once.points().iter().zip(twice.points()) {
            worst_idem = worst_idem.max((a.x - b.x).abs()).max((a.y - b.y).abs());
        }
    }
    verdict(
        example_ok && worst_stats < 1e-6 && worst_idem < 1e-6,
        format!(
            "segment example mu_x {:.12}, delta_x {:.12}; over 1000 characters max |recomputed - target| {worst_stats:.1e}, max idempotence drift {worst_idem:.1e}",
            st.mu_x, st.delta_x
        ),
    )
}

fn gmm_correctness() -> Verdict {
    let unit = MixtureParams::from_raw(&[0.0; 5], 1).unwrap();
    let at_origin = gmm_density(&unit, 0.0, 0.0);
    let origin_ok = (at_origin - 1.0 / (2.0 * PI)).abs() < 1e-9;

    let mut r = rng(6);
    let (h, n) = (0.025, 400i32);
    let mut worst_integral = 0.0f64;
    for _ in 0..50 {
        let m = r.random_range(1..=5);
        let mut raw = Vec::with_capacity(5 * m);
        raw.extend((0..m).map(|_| r.random_range(-2.0..2.0)));
        raw.extend((0..2 * m).map(|_| r.random_range(-3.0..3.0)));
        raw.extend((0..2 * m).map(|_| r.random_range(0.25f64.ln()..1.5f64.ln())));
        let mix = MixtureParams::from_raw(&raw, m).unwrap();
        let mut total = 0.0;
        for i in -n..n {
            for j in -n..n {
                total += gmm_density(&mix, (i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
            }
        }
        worst_integral = worst_integral.max((total * h * h - 1.0).abs());
    }

    let raw: Vec<f64> = (0..15).map(|_| r.random_range(-1.0..1.0)).collect();
    let mix = MixtureParams::from_raw(&raw, 3).unwrap();
    let draws: Vec<(f64, f64)> = (0..100_000).map(|_| mix.sample(&mut r)).collect();
    let (mx, my) = mix.mean();
    let mut worst_z = 0.0f64;
    for (axis, target) in [(0, mx), (1, my)] {
        let v: Vec<f64> = draws.iter().map(|d| if axis == 0 { d.0 } else { d.1 }).collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        worst_z = worst_z.max((mean - target).abs() / (var / n).sqrt());
    }
    verdict(
        origin_ok && worst_integral < 1e-2 && worst_z < 3.0,
        format!(
            "density at origin {at_origin:.12}; worst grid-integral error {worst_integral:.1e} over 50 mixtures; Monte-Carlo mean off by {worst_z:.2} standard errors"
        ),
    )
}

fn loss_equivalence() -> Verdict {
    let base = GenConfig {
        classes: 4,
        embed_dim: 5,
        transform_dim: 4,
        hidden_dim: 7,
        output_dim: 6,
        mixtures: 3,
        ..GenConfig::preset("desk-gen", 4).unwrap()
    };
    let equal = GenConfig { loss_weights: [1.0, 1.0, 1.0], ..base.clone() };
    let plain = GenConfig { pen_loss: PenLoss::Plain, ..equal.clone() };
    let mut r = rng(7);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mut weighted = GenModel::new(&equal, &mut r).unwrap();
        randomize(&mut weighted.params, 0.4, &mut r);
        let unweighted = GenModel::from_params(&plain, weighted.params.clone()).unwrap();
        let len = r.random_range(1..15);
        let mut tokens: Vec<GenToken> = (0..len)
            .map(|_| GenToken {
                dx: r.random_range(-1.5..1.5),
                dy: r.random_range(-1.5..1.5),
                pen: if r.random_bool(0.25) { PenState::Up } else { PenState::Down },
            })
            .collect();
        tokens.push(GenToken::end());
        let class = r.random_range(0..4);
        let a = weighted.gen_loss(&tokens, class, Mode::Eval, &mut rng(0)).unwrap();
        let b = unweighted.gen_loss(&tokens, class, Mode::Eval, &mut rng(0)).unwrap();
        worst = worst.max((a - b).abs());
    }

    // Zeroed head weights make both heads emit their biases.
    let one = GenConfig { mixtures: 1, ..base };
    let mut m = GenModel::new(&one, &mut r).unwrap();
    randomize(&mut m.params, 0.5, &mut r);
    m.params.get_mut(m.net.w_gmm).fill(0.0);
    m.params.get_mut(m.net.w_softmax).fill(0.0);
    let (pi, mu_x, mu_y, ln_sx, ln_sy) = (0.3, 0.1, -0.2, -0.5f64, 0.2f64);
    m.params.get_mut(m.net.b_gmm).data_mut().copy_from_slice(&[pi, mu_x, mu_y, ln_sx, ln_sy]);
    let logits = [1.0f64, -0.5, 0.0];
    m.params.get_mut(m.net.b_softmax).data_mut().copy_from_slice(&logits);
    let tokens = [GenToken { dx: 0.7, dy: 0.4, pen: PenState::Up }, GenToken::end()];
    let (sx, sy) = (ln_sx.exp(), ln_sy.exp());
    let normal = |x: f64, mu: f64, s: f64| (-(x - mu).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt());
    let z: f64 = logits.iter().map(|v| v.exp()).sum();
    let expect = -(normal(0.7, mu_x, sx) * normal(0.4, mu_y, sy)).ln() - 5.0 * (logits[1].exp() / z).ln() - 100.0 * (logits[2].exp() / z).ln();
    let got = m.gen_loss(&tokens, 3, Mode::Eval, &mut rng(0)).unwrap();
    let hand = (got - expect).abs();
    verdict(
        worst < 1e-12 && hand < 1e-9,
        format!("max |weighted(1,1,1) - plain| {worst:.1e} over 100 sequences; two-token case {got:.12} vs hand {expect:.12}"),
    )
}

fn recognition_examples(c: &Corpus) -> Vec<Example> {
    c.samples
        .iter()
        .map(|s| Example {
            feats: to_line_features(&preprocess(s, &PreprocessConfig::RECOGNITION).unwrap()).unwrap(),
            label: s.label.unwrap(),
        })
        .collect()
}

struct DeskData {
    train: Corpus,
    test_examples: Vec<Example>,
}

fn desk_data() -> DeskData {
    let templates = &builtin_templates()[..CLASSES];
    let cfg = SynthConfig::default();
    let train = synthesize_corpus(templates, 200, &cfg, &mut rng(1)).unwrap();
    let test = synthesize_corpus(templates, 50, &cfg, &mut rng(2)).unwrap();
    DeskData { test_examples: recognition_examples(&test), train }
}

fn train_classifier(train: &[Example]) -> (ClassifierModel, usize) {
    let spec = NetSpec::preset("desk-clf", CLASSES).unwrap();
    let mut m = ClassifierModel::new(&spec, &mut rng(3)).unwrap();
    let opt = OptConfig { max_epochs: CLF_EPOCHS, ..OptConfig::default() };
    let history = m.train(train, &opt, &mut rng(4), |_| {}).unwrap();
    (m, history.len())
}

fn checkpoint_bytes(m: &ClassifierModel) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("clf");
    save_checkpoint(&base, "classifier", serde_json::to_value(m.spec()).unwrap(), &m.params).unwrap();
    let mut bytes = fs::read(dir.path().join("clf.json")).unwrap();
    bytes.extend(fs::read(dir.path().join("clf.bin")).unwrap());
    bytes
}

fn desk_classification(data: &DeskData) -> (Verdict, ClassifierModel) {
    let train = recognition_examples(&data.train);
    let start = Instant::now();
    let (m, epochs) = train_classifier(&train);
    let secs = start.elapsed().as_secs_f64();
    let acc = m.evaluate(&data.test_examples, 1, 0.0, &mut rng(0)).unwrap().accuracy;
    let (again, _) = train_classifier(&train);
    let same = checkpoint_bytes(&m) == checkpoint_bytes(&again);
    (
        verdict(
            acc >= 0.95 && secs <= 600.0 && epochs <= 60 && same,
            format!("test accuracy {acc:.4} (need 0.95) after {epochs} epochs in {secs:.1} s; retrained checkpoint byte-identical: {same}"),
        ),
        m,
    )
}

fn ensemble_trend(data: &DeskData, m: &ClassifierModel) -> Verdict {
    let sizes = [1usize, 5, 10, 30];
    let full = m.evaluate(&data.test_examples, 1, 0.0, &mut rng(0)).unwrap().accuracy;
    let mut means = [0.0; 4];
    for seed in 0..5u64 {
        for (k, &n) in sizes.iter().enumerate() {
            let mut hits = 0;
            for (i, ex) in data.test_examples.iter().enumerate() {
                // Same stream per example, so smaller ensembles are prefixes.
                let mut r = rng(1_000_000 * (seed + 1) + i as u64);
                let probs = m.predict_ensemble(&ex.feats, n, 0.3, &mut r).unwrap();
                hits += (inkrnn::classifier::argmax(&probs) == ex.label) as usize;
            }
            means[k] += hits as f64 / data.test_examples.len() as f64 / 5.0;
        }
    }
    let monotone = means.windows(2).all(|w| w[1] >= w[0]);
    verdict(
        monotone && means[3] >= full - 0.005,
        format!(
            "mean accuracy over 5 seeds for ensembles 1/5/10/30: {:.4} {:.4} {:.4} {:.4}; full sequence {full:.4}",
            means[0], means[1], means[2], means[3]
        ),
    )
}

fn generation_quality(data: &DeskData, clf: &ClassifierModel) -> Verdict {
    let examples: Vec<GenExample> = data
        .train
        .samples
        .iter()
        .map(|s| GenExample {
            tokens: to_gen_tokens(&preprocess(s, &PreprocessConfig::GENERATION).unwrap()).unwrap(),
            class_id: s.label.unwrap(),
        })
        .collect();
    let cfg = GenConfig::preset("desk-gen", CLASSES).unwrap();
    let mut gen = GenModel::new(&cfg, &mut rng(5)).unwrap();
    let opt = OptConfig { lr: GEN_LR, max_epochs: GEN_EPOCHS, ..OptConfig::default() };
    let start = Instant::now();
    gen.train(&examples, &opt, &mut rng(6), |_| {}).unwrap();
    let train_secs = start.elapsed().as_secs_f64();

    let classes: Vec<usize> = (0..CLASSES).collect();
    let (mut accs, mut truncated, mut samples, mut flagged) = (Vec::new(), 0, 0, 0);
    for seed in 0..5u64 {
        let rep = quality_report(&gen, clf, &classes, 100, 3, &mut rng(100 + seed)).unwrap();
        accs.push(rep.overall);
        truncated += rep.truncated;
        samples += rep.samples;
        let pair = rep.worst.iter().any(|q| {
            (q.class == HOOK && q.most_confused_with == Some(ELL)) || (q.class == ELL && q.most_confused_with == Some(HOOK))
        });
        flagged += pair as usize;
    }
    let worst_acc = accs.iter().cloned().fold(f64::INFINITY, f64::min);
    let accs: Vec<String> = accs.iter().map(|a| format!("{a:.3}")).collect();
    verdict(
        worst_acc >= 0.8 && truncated == 0 && flagged >= 3,
        format!(
            "generated-sample accuracy per seed [{}] (need 0.80); {truncated} truncated of {samples}; ell/hook pair among 3 worst in {flagged}/5 seeds; generator trained in {train_secs:.1} s",
            accs.join(", ")
        ),
    )
}

fn init_contract() -> Verdict {
    let spec = NetSpec::preset("net1", 3755).unwrap();
    let m = ClassifierModel::new(&spec, &mut rng(8)).unwrap();
    let gen = GenModel::new(&GenConfig::preset("desk-gen", CLASSES).unwrap(), &mut rng(9)).unwrap();
    let (mut forget, mut other_bias_ok, mut forget_ok) = (0, true, true);
    let mut variance = None;
    for (_, name, t) in m.params.iter().chain(gen.params.iter()) {
        if t.cols() == 1 {
            if name.ends_with(".b_f") {
                forget += 1;
                forget_ok &= t.data().iter().all(|&v| v == FORGET_BIAS);
            } else {
                other_bias_ok &= t.data().iter().all(|&v| v == 0.0);
            }
        } else if t.shape() == (500, 500) && variance.is_none() {
            let n = t.len() as f64;
            let mean = t.data().iter().sum::<f64>() / n;
            variance = Some(t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0));
        }
    }
    let var = variance.unwrap_or(f64::NAN);
    verdict(
        forget == 2 && forget_ok && other_bias_ok && (0.008f64.powi(2)..=0.012f64.powi(2)).contains(&var),
        format!(
            "{forget} forget-gate biases all 5.0: {forget_ok}; other biases all zero: {other_bias_ok}; 500x500 weight variance {var:.3e} (band [6.4e-5, 1.44e-4])"
        ),
    )
}

fn serialization(data: &DeskData) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let m = ClassifierModel::new(&NetSpec::preset("desk-clf", CLASSES).unwrap(), &mut rng(10)).unwrap();
    let mut trained = m.clone();
    randomize(&mut trained.params, 0.3, &mut rng(11));
    let base = dir.path().join("model");
    save_checkpoint(&base, "classifier", serde_json::Value::Null, &trained.params).unwrap();
    let back = load_checkpoint(&base).unwrap().params;
    let bit_exact = trained
        .params
        .flatten()
        .iter()
        .zip(back.flatten())
        .all(|(a, b)| (*a as f32).to_bits() == (b as f32).to_bits() && b == (*a as f32) as f64);

    let path = dir.path().join("train.jsonl");
    write_jsonl(&data.train, &path).unwrap();
    let read = read_jsonl(&path).unwrap();
    let lossless = read.samples == data.train.samples && read.classes == data.train.classes;

    let mut svgs = 0;
    let mut well_formed = true;
    let gen = GenModel::new(&GenConfig::preset("desk-gen", CLASSES).unwrap(), &mut rng(12)).unwrap();
    let mut r = rng(13);
    let mut inks: Vec<InkSequence> = data.train.samples.iter().step_by(40).cloned().collect();
    for c in 0..CLASSES {
        inks.push(gen.sample_character(c, &mut r, 30).unwrap().ink);
    }
    for ink in &inks {
        let svg = render_svg(ink).unwrap();
        well_formed &= roxmltree::Document::parse(&svg).is_ok();
        svgs += 1;
    }
    verdict(
        bit_exact && lossless && well_formed,
        format!(
            "checkpoint bit-exact at f32: {bit_exact}; JSONL round trip of {} samples lossless: {lossless}; {svgs} SVGs well-formed: {well_formed}",
            data.train.len()
        ),
    )
}

fn main() {
    let wanted: BTreeSet<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |n: u32| wanted.is_empty() || wanted.contains(&n);
    let mut failures = 0;
    let mut report = |n: u32, title: &str, v: Verdict| {
        println!("{} [{n}] {title}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failures += !v.pass as usize;
    };

    if run(1) {
        report(1, "gradient suite", gradient_suite());
    }
    if run(2) {
        report(2, "preprocessing oracle", preprocessing_oracle());
    }
    if run(3) {
        report(3, "mixture density", gmm_correctness());
    }
    if run(4) {
        report(4, "loss equivalence", loss_equivalence());
    }
    if run(5) || run(6) || run(7) || run(9) {
        let data = desk_data();
        if run(5) || run(6) || run(7) {
            let (v, clf) = desk_classification(&data);
            if run(5) {
                report(5, "desk-scale classification", v);
            }
            if run(6) {
                report(6, "ensemble trend", ensemble_trend(&data, &clf));
            }
            if run(7) {
                report(7, "generation quality loop", generation_quality(&data, &clf));
            }
        }
        if run(8) {
            report(8, "initialization contract", init_contract());
        }
        if run(9) {
            report(9, "serialization", serialization(&data));
        }
    } else if run(8) {
        report(8, "initialization contract", init_contract());
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
