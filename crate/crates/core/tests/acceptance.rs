//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the lines always reach the terminal.
//! A failed criterion prints FAIL and the summary counts it; the exit status is non-zero
//! only with `ACCEPTANCE_STRICT=1`, so `cargo test` still runs the remaining targets.

mod common;

use std::collections::HashSet;
use std::process::Command as Process;
use std::rc::Rc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::oracles;
use common::toy::{reference_toy, Policy};
use recall_core::cli::{Preset, Settings};
use recall_core::data::{Dataset, ImageRecord, Split};
use recall_core::decoder::{
    beam_search, greedy, mix, score, DecoderDims, DecoderParams, DecoderVars, FnStepper, Session, Strategy,
};
use recall_core::metrics::{bleu, build_df, cider_d, rouge_l, CIDER_SIGMA};
use recall_core::objectives::{evaluate_split, train_rl, train_xe, EpochLog, Phase};
use recall_core::params::ParamSet;
use recall_core::retrieval::{
    batch_loss, build_recall_cache, train_retrieval, triplet_loss, triplet_loss_value, RecallCache, RecalledWordSet,
    RetrievalDims, RetrievalModel, RetrievalVars,
};
use recall_core::synth::generate;
use recall_core::tensor::{grad_check_report, relative_error, Tape, Tensor, TensorError, Var};
use recall_core::vocab::{BOS, EOS};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn fixed(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

type Loss = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>>;

/// Reduces an op's output to a scalar through a fixed random projection.
fn projected(op: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError> + 'static) -> Loss {
    Box::new(move |tape, v| {
        let y = op(tape, v)?;
        let n = tape.value(y).len();
        let w = tape.constant(random(&[n], 99));
        let flat = tape.slice(y, 0, n)?;
        tape.matmul(flat, w)
    })
}

fn small_decoder(seed: u64, dims: DecoderDims, copy: bool) -> DecoderParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = DecoderParams::new(dims, copy, &mut rng).unwrap();
    for t in [&mut p.lstm1_b, &mut p.lstm2_b, &mut p.switch_b] {
        t.data_mut().iter_mut().for_each(|x| *x += rng.random_range(-0.5..0.5));
    }
    p.embed.data_mut().iter_mut().for_each(|x| *x *= 5.0);
    p
}

fn random_image(rng: &mut ChaCha8Rng, d: usize, k: usize) -> ImageRecord {
    let regions = (0..k).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    ImageRecord::new("img".into(), Split::Train, regions, vec![vec![4, EOS]]).unwrap()
}

fn random_recall(rng: &mut ChaCha8Rng, vocab: usize, m: usize) -> RecalledWordSet {
    let mut ids: Vec<usize> = (4..vocab).collect();
    ids.shuffle(rng);
    ids.truncate(m);
    RecalledWordSet::new(ids, vec![]).unwrap()
}

fn gradient_suite() -> Verdict {
    let mask: Rc<[bool]> = vec![true, false, false, true, false].into();
    let mut cases: Vec<(&str, Vec<Tensor<f64>>, Loss)> = vec![
        ("matmul", vec![random(&[3, 4], 20), random(&[4, 2], 21)], projected(|t, v| t.matmul(v[0], v[1]))),
        ("matvec", vec![random(&[3, 4], 22), random(&[4], 23)], projected(|t, v| t.matmul(v[0], v[1]))),
        ("vecmat", vec![random(&[3], 24), random(&[3, 5], 25)], projected(|t, v| t.matmul(v[0], v[1]))),
        ("dot", vec![random(&[5], 26), random(&[5], 27)], projected(|t, v| t.matmul(v[0], v[1]))),
        ("add", vec![random(&[2, 3], 28), random(&[2, 3], 29)], projected(|t, v| t.add(v[0], v[1]))),
        ("add_bias", vec![random(&[2, 3], 30), random(&[3], 31)], projected(|t, v| t.add_bias(v[0], v[1]))),
        ("sub", vec![random(&[4], 32), random(&[4], 33)], projected(|t, v| t.sub(v[0], v[1]))),
        ("mul", vec![random(&[4], 34), random(&[4], 35)], projected(|t, v| t.mul(v[0], v[1]))),
        ("mul_scalar", vec![random(&[], 36), random(&[4], 37)], projected(|t, v| t.mul_scalar(v[0], v[1]))),
        ("affine", vec![random(&[4], 38)], projected(|t, v| t.affine(v[0], -1.3, 0.2))),
        ("scale", vec![random(&[4], 61)], projected(|t, v| t.scale(v[0], 2.5))),
        ("neg", vec![random(&[4], 62)], projected(|t, v| t.neg(v[0]))),
        ("one_minus", vec![random(&[4], 63)], projected(|t, v| t.one_minus(v[0]))),
        ("tanh", vec![random(&[4], 39)], projected(|t, v| t.tanh(v[0]))),
        ("sigmoid", vec![random(&[4], 40)], projected(|t, v| t.sigmoid(v[0]))),
        ("relu", vec![fixed(&[4], &[0.5, -0.4, 0.9, -0.2])], projected(|t, v| t.relu(v[0]))),
        ("exp", vec![random(&[4], 41)], projected(|t, v| t.exp(v[0]))),
        ("sqrt", vec![fixed(&[3], &[0.5, 1.2, 2.0])], projected(|t, v| t.sqrt(v[0]))),
        ("ln", vec![fixed(&[3], &[0.5, 1.2, 2.0])], projected(|t, v| t.ln(v[0], 1e-12))),
        ("softmax", vec![random(&[5], 42)], projected(|t, v| t.softmax(v[0]))),
        ("softmax rows", vec![random(&[2, 3], 43)], projected(|t, v| t.softmax(v[0]))),
        ("masked_softmax", vec![random(&[5], 44)], projected(move |t, v| t.masked_softmax(v[0], mask.clone()))),
        ("concat", vec![random(&[2], 45), random(&[3], 46)], projected(|t, v| t.concat(&[v[0], v[1], v[0]]))),
        ("stack", vec![random(&[3], 47), random(&[3], 48)], projected(|t, v| t.stack(&[v[0], v[1]]))),
        ("add_n", vec![random(&[3], 49), random(&[3], 50)], projected(|t, v| t.add_n(&[v[0], v[1], v[1]]))),
        ("sum", vec![random(&[2, 2], 51)], projected(|t, v| t.sum(v[0]))),
        ("mean", vec![random(&[5], 52)], projected(|t, v| t.mean(v[0]))),
        ("embedding", vec![random(&[4, 3], 53)], projected(|t, v| t.embedding(v[0], &[2, 0, 2]))),
        ("embedding_row", vec![random(&[4, 3], 54)], projected(|t, v| t.embedding_row(v[0], 1))),
        ("slice", vec![random(&[6], 55)], projected(|t, v| t.slice(v[0], 2, 3))),
        ("row", vec![random(&[3, 4], 64)], projected(|t, v| t.row(v[0], 1))),
        ("gather", vec![random(&[2, 3], 56)], projected(|t, v| t.gather(v[0], &[5, 0, 5]))),
        ("pick", vec![random(&[4], 57)], projected(|t, v| t.pick(v[0], 2))),
        ("scatter", vec![random(&[3], 58)], projected(|t, v| t.scatter(v[0], &[4, 1, 2], 6))),
        ("transpose", vec![random(&[2, 3], 59)], projected(|t, v| t.transpose(v[0]))),
        ("max", vec![fixed(&[4], &[0.1, 0.9, -0.3, 0.5])], projected(|t, v| t.max(v[0]))),
        ("normalize", vec![random(&[4], 60)], projected(|t, v| t.normalize(v[0]))),
    ];

    // triplet loss on a score matrix whose hinges are all clear of zero
    let scores = fixed(&[3, 3], &[0.5, 0.6, 0.1, 0.25, 0.9, 0.0, 0.2, 0.1, 0.45]);
    cases.push(("triplet_loss", vec![scores], Box::new(|t, v| triplet_loss(t, v[0], 0.2))));

    let rdims = RetrievalDims { feature_dim: 4, vocab_size: 9, embed_dim: 3, hidden: 4, attention_dim: 3 };
    let retrieval = RetrievalModel::<f64>::new(rdims, 0.2, &mut ChaCha8Rng::seed_from_u64(70)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let images: Vec<ImageRecord> = (0..3).map(|_| random_image(&mut rng, 4, 2)).collect();
    let captions: Vec<Vec<usize>> = vec![vec![4, 5, 6], vec![7, 8], vec![5, 4, 8, 7]];
    let point: Vec<Tensor<f64>> = retrieval.params().into_iter().map(|(_, t)| t.clone()).collect();
    cases.push((
        "retrieval batch loss",
        point,
        Box::new(move |t, v| {
            let vars = RetrievalVars::from_slice(v);
            let batch: Vec<(&ImageRecord, &[usize])> =
                images.iter().zip(&captions).map(|(i, c)| (i, c.as_slice())).collect();
            batch_loss(t, &vars, &batch, 0.2)
        }),
    ));

    let ddims = DecoderDims { feature_dim: 4, vocab_size: 10, embed_dim: 3, hidden: 5, attention_dim: 3 };
    let decoder = small_decoder(14, ddims, true);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let img = random_image(&mut rng, 4, 3);
    let rec = random_recall(&mut rng, 10, 3);
    let point: Vec<Tensor<f64>> = decoder.params().into_iter().map(|(_, t)| t.clone()).collect();
    cases.push((
        "decode step loss",
        point,
        Box::new(move |tape, v| {
            let vars = DecoderVars::from_slice(v);
            let mut s = Session::new(tape, &decoder, vars, &img, &rec, false)?;
            let st = s.start();
            let a = s.step(&st, BOS)?;
            let b = s.step(&a.state, rec.words()[0])?;
            let tape = &mut *s.tape;
            let pa = tape.pick(a.p, rec.words()[1])?;
            let pb = tape.pick(b.p, 8)?;
            let la = tape.ln(pa, 1e-12)?;
            let lb = tape.ln(pb, 1e-12)?;
            let total = tape.add(la, lb)?;
            tape.neg(total)
        }),
    ));

    let mut worst = (0.0f64, "");
    for (name, point, f) in &cases {
        match grad_check_report(f, point, 1e-5) {
            Ok(r) if r.max_relative_error > worst.0 => worst = (r.max_relative_error, name),
            Ok(_) => {}
            Err(e) => return verdict(false, format!("{}: {}", name, e)),
        }
    }
    verdict(worst.0 <= 1e-4, format!("{} cases, worst relative error {:.2e} ({})", cases.len(), worst.0, worst.1))
}

/// Mass that the mixture at switch value `s` puts on the recalled words.
fn copy_mass(pv: &[f64], pr: &[f64], recalled: &HashSet<usize>, s: f64) -> f64 {
    let mut tape = Tape::new();
    let s = tape.constant(Tensor::scalar(s).unwrap());
    let a = tape.constant(Tensor::vector(pv.to_vec()).unwrap());
    let b = tape.constant(Tensor::vector(pr.to_vec()).unwrap());
    let p = mix(&mut tape, s, a, b).unwrap();
    recalled.iter().map(|&w| tape.data(p)[w]).sum()
}

fn distribution_invariants() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut max_sum_err, mut max_mix_err) = (0.0f64, 0.0f64);
    let mut failures = Vec::new();
    let configs = 10_000;
    for n in 0..configs {
        let vocab = rng.random_range(6..12);
        let dims = DecoderDims {
            feature_dim: rng.random_range(2..5),
            vocab_size: vocab,
            embed_dim: rng.random_range(2..4),
            hidden: rng.random_range(2..5),
            attention_dim: rng.random_range(2..4),
        };
        let copy = rng.random_bool(0.8);
        let p = small_decoder(rng.random(), dims, copy);
        let k = rng.random_range(1..4);
        let img = random_image(&mut rng, dims.feature_dim, k);
        let m = rng.random_range(0..5usize.min(vocab - 4));
        let rec = random_recall(&mut rng, vocab, m);
        let allowed: HashSet<usize> = rec.words().iter().copied().collect();
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape, false);
        let mut s = Session::new(&mut tape, &p, vars, &img, &rec, false).unwrap();
        let mut state = s.start();
        let mut prev = BOS;
        for _ in 0..2 {
            let out = s.step(&state, prev).unwrap();
            let tape = &*s.tape;
            let probs = tape.data(out.p);
            max_sum_err = max_sum_err.max((probs.iter().sum::<f64>() - 1.0).abs());
            if probs.iter().any(|&x| x < 0.0) {
                failures.push(format!("config {}: negative probability", n));
            }
            match (out.s, out.pr) {
                (Some(sw), Some(pr)) => {
                    if m == 0 || !copy {
                        failures.push(format!("config {}: switch active without recalled words", n));
                    }
                    let sv = tape.item(sw);
                    let pr = tape.data(pr);
                    if pr.iter().enumerate().any(|(w, &x)| x != 0.0 && !allowed.contains(&w)) {
                        failures.push(format!("config {}: copy mass outside the recalled words", n));
                    }
                    if !(sv > 0.0 && sv < 1.0) {
                        failures.push(format!("config {}: switch {} outside (0, 1)", n, sv));
                    }
                    let pv = tape.data(out.pv);
                    for w in 0..vocab {
                        max_mix_err = max_mix_err.max((probs[w] - (1.0 - sv) * pv[w] - sv * pr[w]).abs());
                    }
                    if copy_mass(pv, pr, &allowed, (1.0 + sv) / 2.0) <= copy_mass(pv, pr, &allowed, sv) {
                        failures.push(format!("config {}: copy mass not increasing in the switch", n));
                    }
                }
                _ => {
                    if copy && m > 0 {
                        failures.push(format!("config {}: copy branch missing", n));
                    }
                    if probs != tape.data(out.pv) {
                        failures.push(format!("config {}: switch not zero without recalled words", n));
                    }
                }
            }
            prev = rng.random_range(4..vocab);
            state = out.state;
        }
    }
    let pass = failures.is_empty() && max_sum_err <= 1e-9 && max_mix_err <= 1e-12;
    let first = failures.first().map(|f| format!("; {}", f)).unwrap_or_default();
    verdict(
        pass,
        format!(
            "{} configurations x 2 steps, max |sum P - 1| {:.1e}, max mixture residual {:.1e}, P >= 0, switch in (0, 1), \
             copy mass monotone in the switch{}",
            configs, max_sum_err, max_mix_err, first
        ),
    )
}

fn triplet_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let data: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = Tensor::matrix(8, 8, data.clone()).unwrap();
        if triplet_loss_value(&t, 0.2).unwrap() != oracles::triplet(&data, 8, 0.2) {
            mismatches += 1;
        }
    }
    verdict(mismatches == 0, format!("1000 random 8x8 matrices, {} mismatches", mismatches))
}

fn estimator_exactness() -> Verdict {
    let toy = reference_toy();
    let n = 50_000;
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    let mut record = |label: String, exact: Vec<f64>, mc: Vec<f64>| {
        let err = exact.iter().zip(&mc).map(|(a, b)| relative_error(*a, *b)).fold(0.0, f64::max);
        worst = worst.max(err);
        lines.push(format!("{} {:.2}%", label, 100.0 * err));
    };
    let exact = toy.expected_reward_grad(&[(Policy::Full, -1.0)]);
    record("scst".into(), exact, toy.scst_mc(n, &mut ChaCha8Rng::seed_from_u64(11)));
    for lambda in [0.0, 0.5, 1.0] {
        let exact = toy.expected_reward_grad(&[(Policy::Off, -lambda), (Policy::Full, -(1.0 - lambda))]);
        let mc = toy.combined_mc(n, lambda, &mut ChaCha8Rng::seed_from_u64(12), &mut ChaCha8Rng::seed_from_u64(13));
        record(format!("combined λ={}", lambda), exact, mc);
    }
    verdict(worst <= 0.05, format!("{} samples, worst coordinate error: {}", n, lines.join(", ")))
}

/// Desk data, a trained retrieval model and its recall cache.
struct Desk {
    settings: Settings,
    dataset: Dataset,
    recall: RecallCache,
    val_recall: Option<(f64, f64)>,
    retrieval_time: Duration,
}

fn desk() -> Desk {
    let settings = Settings::preset(Preset::Desk);
    let start = Instant::now();
    let (dataset, corpus, vocab) = generate(&settings.synthetic_spec()).unwrap();
    let dims = settings.retrieval_dims(dataset.feature_dim().unwrap(), vocab.len());
    let mut model =
        RetrievalModel::<f64>::new(dims, settings.margin, &mut ChaCha8Rng::seed_from_u64(settings.seed)).unwrap();
    let log = train_retrieval(&mut model, &dataset, &settings.retrieval_train(), |_| {}).unwrap();
    let retrieval_time = start.elapsed();
    let recall = build_recall_cache(&model, &dataset, &corpus, settings.k, settings.exclude_own, None).unwrap().cache;
    Desk { settings, dataset, recall, val_recall: log.last().and_then(|e| e.val_recall), retrieval_time }
}

fn retrieval_learnability(d: &Desk) -> Verdict {
    let epochs = d.settings.ret_epochs;
    match d.val_recall {
        Some((r1, r5)) => verdict(
            epochs <= 30 && r1 >= 0.6 && r5 >= 0.9 && within(d.retrieval_time, 300.0),
            format!("{} epochs, val R@1 {:.3}, R@5 {:.3}, {:.0} s", epochs, r1, r5, d.retrieval_time.as_secs_f64()),
        ),
        None => verdict(false, "no validation split".into()),
    }
}

fn train_caption(d: &Desk, seed: u64, copy: bool) -> (DecoderParams<f64>, Vec<EpochLog>) {
    let s = &d.settings;
    let dims = s.decoder_dims(d.dataset.feature_dim().unwrap(), s.vocab);
    let mut params = DecoderParams::<f64>::new(dims, copy, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let cfg = recall_core::objectives::TrainConfig { seed, ..s.train_config(Phase::Xe) };
    let log = train_xe(&mut params, &d.dataset, &d.recall, &cfg, |_| {}).unwrap();
    (params, log)
}

fn strategy(s: &Settings) -> Strategy {
    if s.beam <= 1 {
        Strategy::Greedy
    } else {
        Strategy::Beam(s.beam)
    }
}

fn cider_on(d: &Desk, params: &DecoderParams<f64>, split: Split) -> f64 {
    evaluate_split(params, &d.dataset, &d.recall, split, strategy(&d.settings), d.settings.max_len).unwrap().cider_d
}

fn captioning_learnability(d: &Desk) -> (Verdict, DecoderParams<f64>) {
    let start = Instant::now();
    let s = &d.settings;
    let mut wins = 0;
    let mut parts = Vec::new();
    let mut first = None;
    let mut best_ppl = f64::INFINITY;
    for i in 0..3 {
        let seed = s.seed + i;
        let (full, log) = train_caption(d, seed, true);
        let (ablation, _) = train_caption(d, seed, false);
        let (cf, ca) = (cider_on(d, &full, Split::Val), cider_on(d, &ablation, Split::Val));
        wins += (cf > ca) as usize;
        let ppl = log.iter().filter_map(|r| r.val_perplexity).fold(f64::INFINITY, f64::min);
        parts.push(format!("seed {}: CIDEr-D {:.3} vs {:.3}, min ppl {:.3}", seed, cf, ca, ppl));
        if i == 0 {
            best_ppl = ppl;
            first = Some(full);
        }
    }
    let elapsed = start.elapsed();
    let pass = best_ppl <= 2.0 && s.xe_epochs <= 40 && wins == 3 && within(elapsed, 900.0);
    let detail = format!(
        "{} epochs, val perplexity {:.3}, copy beats ablation on {}/3 seeds ({}), {:.0} s",
        s.xe_epochs,
        best_ppl,
        wins,
        parts.join("; "),
        elapsed.as_secs_f64()
    );
    (verdict(pass, detail), first.unwrap())
}

fn rl_improvement(d: &Desk, xe: &DecoderParams<f64>) -> Verdict {
    let start = Instant::now();
    let s = &d.settings;
    let before = cider_on(d, xe, Split::Train);
    let mut params = xe.clone();
    train_rl(&mut params, &d.dataset, &d.recall, &s.train_config(Phase::Rl), |_| {}).unwrap();
    let after = cider_on(d, &params, Split::Train);
    let elapsed = start.elapsed();
    verdict(
        after - before >= 0.02 && s.rl_epochs == 10 && s.lambda == 0.5 && within(elapsed, 600.0),
        format!(
            "train CIDEr-D {:.4} -> {:.4} ({:+.2} points) after {} epochs at λ = {}, {:.0} s",
            before,
            after,
            100.0 * (after - before),
            s.rl_epochs,
            s.lambda,
            elapsed.as_secs_f64()
        ),
    )
}

/// Every sequence over `words` of length 1..=`max_len`.
fn all_sentences(words: &[usize], max_len: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = vec![vec![]];
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..max_len {
        frontier = frontier
            .iter()
            .flat_map(|p| {
                words.iter().map(move |&w| {
                    let mut q = p.clone();
                    q.push(w);
                    q
                })
            })
            .collect();
        out.extend(frontier.iter().cloned());
    }
    out.remove(0);
    out
}

fn metric_oracles() -> Verdict {
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let (cands, refs) = oracles::random_instance(seed);
        let stats = build_df(&refs).unwrap();
        for (c, r) in cands.iter().zip(&refs) {
            worst = worst.max((cider_d(c, r, &stats, CIDER_SIGMA) - oracles::cider_d(c, r, &refs)).abs());
            worst = worst.max((rouge_l(c, r) - oracles::rouge_l(c, r)).abs());
        }
        for n in 1..=4 {
            worst = worst.max((bleu(&cands, &refs, n).unwrap() - oracles::bleu(&cands, &refs, n)).abs());
        }
    }

    // the reference itself scores highest among every sentence over a small vocabulary
    let corpus = vec![vec![vec![4, 5, 6]], vec![vec![5, 6, 7]], vec![vec![7, 8, 4]], vec![vec![8, 8, 5]]];
    let stats = build_df(&corpus).unwrap();
    let candidates = all_sentences(&[4, 5, 6, 7, 8], 4);
    let mut violations = 0;
    for refs in &corpus {
        let own = &refs[0];
        let (c_own, r_own) = (cider_d(own, refs, &stats, CIDER_SIGMA), rouge_l(own, refs));
        let b_own: Vec<f64> =
            (1..=3).map(|n| bleu(std::slice::from_ref(own), std::slice::from_ref(refs), n).unwrap()).collect();
        for c in &candidates {
            violations += (cider_d(c, refs, &stats, CIDER_SIGMA) > c_own + 1e-12) as usize;
            violations += (rouge_l(c, refs) > r_own + 1e-12) as usize;
            for n in 1..=3 {
                violations += (bleu(std::slice::from_ref(c), std::slice::from_ref(refs), n).unwrap()
                    > b_own[n - 1] + 1e-12) as usize;
            }
        }
    }
    verdict(
        worst <= 1e-9 && violations == 0,
        format!(
            "100 random instances, max deviation {:.1e}; identical candidate maximal over {} enumerated sentences x 4 \
             references, {} violations",
            worst,
            candidates.len(),
            violations
        ),
    )
}

/// Deterministic pseudo-random next-token distribution for a prefix.
fn toy_dist(seed: u64, v: usize, prefix: &[usize]) -> Vec<f64> {
    let mut h = seed;
    for &t in prefix {
        h = h.wrapping_mul(0x100000001b3).wrapping_add(t as u64 + 1);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    let raw: Vec<f64> = (0..v).map(|_| 2.0 * rng.random_range(-1.0..1.0)).collect();
    let m = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = raw.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Most probable complete sequence by enumeration; ties go to the lexicographically smaller one.
fn exhaustive(v: usize, max_len: usize, dist: &mut dyn FnMut(&[usize]) -> Vec<f64>) -> (Vec<usize>, f64) {
    fn go(
        v: usize,
        max_len: usize,
        dist: &mut dyn FnMut(&[usize]) -> Vec<f64>,
        prefix: &mut Vec<usize>,
        lp: f64,
        best: &mut (Vec<usize>, f64),
    ) {
        if prefix.last() == Some(&EOS) || prefix.len() == max_len {
            if lp > best.1 || (lp == best.1 && *prefix < best.0) {
                *best = (prefix.clone(), lp);
            }
            return;
        }
        let d = dist(prefix);
        for w in 0..v {
            if d[w] > 0.0 {
                prefix.push(w);
                go(v, max_len, dist, prefix, lp + d[w].ln(), best);
                prefix.pop();
            }
        }
    }
    let mut best = (vec![], f64::NEG_INFINITY);
    go(v, max_len, dist, &mut vec![], 0.0, &mut best);
    best
}

fn decoding_contracts() -> Verdict {
    let mut failures = Vec::new();
    let dims = DecoderDims { feature_dim: 4, vocab_size: 6, embed_dim: 3, hidden: 5, attention_dim: 3 };
    for seed in 0..100u64 {
        let p = small_decoder(seed, dims, seed % 2 == 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let img = random_image(&mut rng, 4, 3);
        let rec = random_recall(&mut rng, 6, 2);
        let g = p.decode(&img, &rec, Strategy::Greedy, 8, false).unwrap();
        if p.decode(&img, &rec, Strategy::Beam(1), 8, false).unwrap() != g {
            failures.push(format!("beam 1 differs from greedy for model {}", seed));
        }
        for strategy in [Strategy::Greedy, Strategy::Beam(2), Strategy::Beam(3)] {
            if p.decode(&img, &rec, strategy, 8, false).unwrap() != p.decode(&img, &rec, strategy, 8, false).unwrap() {
                failures.push(format!("{:?} not deterministic for model {}", strategy, seed));
            }
        }
        let a = p.sample(&img, &rec, 8, false, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = p.sample(&img, &rec, 8, false, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        if a != b {
            failures.push(format!("seeded sampling not reproducible for model {}", seed));
        }
        if seed < 20 {
            // full-width beam on the decoder itself against enumeration of every 3-step caption
            let beam = p.decode(&img, &rec, Strategy::Beam(6), 3, false).unwrap();
            let mut dist = |prefix: &[usize]| -> Vec<f64> {
                let mut tape = Tape::new();
                let vars = p.bind(&mut tape, false);
                let mut s = Session::new(&mut tape, &p, vars, &img, &rec, false).unwrap();
                let mut state = s.start();
                let mut prev = BOS;
                for &w in prefix {
                    state = s.step(&state, prev).unwrap().state;
                    prev = w;
                }
                let out = s.step(&state, prev).unwrap();
                s.tape.value(out.p).to_f64_vec()
            };
            let (tokens, lp) = exhaustive(6, 3, &mut dist);
            if beam.tokens != tokens || (beam.logprob - lp).abs() > 1e-12 {
                failures.push(format!("full-width beam misses the best caption of model {}", seed));
            }
        }
    }
    for seed in 0..100u64 {
        let mut m = FnStepper::new(4, |p: &[usize]| toy_dist(seed, 4, p));
        let got = beam_search(&mut m, 4, 3).unwrap();
        let (tokens, lp) = exhaustive(4, 3, &mut |p: &[usize]| toy_dist(seed, 4, p));
        if got.tokens != tokens || (got.logprob - lp).abs() > 1e-12 {
            failures.push(format!("full-width beam misses the best sequence of toy {}", seed));
        }
        let g = greedy(&mut m, 3).unwrap();
        if beam_search(&mut m, 1, 3).unwrap() != g {
            failures.push(format!("beam 1 differs from greedy for toy {}", seed));
        }
        if score(&mut m, &g.tokens).unwrap() != g {
            failures.push(format!("rescoring the greedy caption of toy {} differs", seed));
        }
    }
    let first = failures.first().map(|f| format!("; {}", f)).unwrap_or_default();
    verdict(
        failures.is_empty(),
        format!(
            "100 decoder models (beam 1 = greedy, repeatable), 20 decoder + 100 toy models full-width beam = \
             enumeration, {} failures{}",
            failures.len(),
            first
        ),
    )
}

fn cli_smoke() -> Verdict {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().to_str().unwrap();
    let steps: [&[&str]; 6] = [
        &["synth"],
        &["train_retrieval"],
        &["build_recall"],
        &["train_caption"],
        &["optimize_cider"],
        &["evaluate", "--split", "test"],
    ];
    for args in steps {
        let out = Process::new(env!("CARGO_BIN_EXE_recall"))
            .args(["--workdir", work, "--preset", "desk"])
            .args(args)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap();
        if !out.status.success() {
            return verdict(
                false,
                format!("`{}` exited with {:?}: {}", args[0], out.status.code(), String::from_utf8_lossy(&out.stderr)),
            );
        }
    }
    let text = match std::fs::read_to_string(dir.path().join("report.json")) {
        Ok(t) => t,
        Err(e) => return verdict(false, format!("report.json: {}", e)),
    };
    let report: serde_json::Value = match serde_json::from_str(&text) {
        Ok(v) => v,
        Err(e) => return verdict(false, format!("report.json is not JSON: {}", e)),
    };
    let metric = |k: &str| report[k].as_f64().filter(|x| x.is_finite() && *x >= 0.0);
    let fields = ["bleu1", "bleu4", "rouge_l", "cider_d"].iter().all(|k| metric(k).is_some());
    let images = report["n_images"].as_u64().unwrap_or(0);
    let split = report["split"].as_str() == Some("test");
    verdict(
        fields && images > 0 && split,
        format!(
            "6 commands exit 0; report on {} test images, CIDEr-D {:.3}, {:.0} s",
            images,
            metric("cider_d").unwrap_or(f64::NAN),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn timed(limit_s: Option<f64>, f: impl FnOnce() -> Verdict) -> Verdict {
    let start = Instant::now();
    let mut v = f();
    if let Some(limit) = limit_s {
        let t = start.elapsed().as_secs_f64();
        if t >= limit {
            v.pass = false;
            v.detail.push_str(&format!("; took {:.0} s, limit {:.0} s", t, limit));
        }
    }
    v
}

/// Criteria selected by `ACCEPTANCE_CRITERIA=1,4,9`; all when unset.
fn selected() -> Vec<usize> {
    match std::env::var("ACCEPTANCE_CRITERIA") {
        Ok(list) => list.split(',').filter_map(|x| x.trim().parse().ok()).collect(),
        Err(_) => (1..=10).collect(),
    }
}

fn main() {
    // the default harness's `--list` probe expects no output
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let want = selected();
    let on = |n: usize| want.contains(&n);
    let mut results: Vec<(usize, Verdict)> = Vec::new();
    let mut report = |n: usize, name: &str, v: Verdict| {
        println!("{} {:>2} {}: {}", if v.pass { "PASS" } else { "FAIL" }, n, name, v.detail);
        results.push((n, v));
    };
    if on(1) {
        report(1, "gradient suite", timed(Some(60.0), gradient_suite));
    }
    if on(2) {
        report(2, "distribution invariants", distribution_invariants());
    }
    if on(3) {
        report(3, "triplet-loss oracle", triplet_oracle());
    }
    if on(4) {
        report(4, "estimator exactness", estimator_exactness());
    }
    if on(5) || on(6) || on(7) {
        let d = desk();
        if on(5) {
            report(5, "retrieval learnability", retrieval_learnability(&d));
        }
        if on(6) || on(7) {
            let (v, xe) = captioning_learnability(&d);
            if on(6) {
                report(6, "captioning learnability and recall benefit", v);
            }
            if on(7) {
                report(7, "RL improvement", rl_improvement(&d, &xe));
            }
        }
    }
    if on(8) {
        report(8, "metric oracles", metric_oracles());
    }
    if on(9) {
        report(9, "decoding contracts", decoding_contracts());
    }
    if on(10) {
        report(10, "CLI smoke run", cli_smoke());
    }
    let failed = results.iter().filter(|r| !r.1.pass).count();
    println!("acceptance: {}/{} criteria pass", results.len() - failed, results.len());
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
