//! Acceptance criteria, one pass/fail line each.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the report.

mod common;

use std::time::{Duration, Instant};

use gazefuse::ablation::{ablation_sweep, AblationMask};
use gazefuse::corpus::{Corpus, Split, TargetVector, TokenRecord};
use gazefuse::evaluation::{evaluate_corpus, format_half_even, EvalReport};
use gazefuse::features::{featurize_corpus, FeatureVector};
use gazefuse::models::checkpoint::parameter_checksum;
use gazefuse::models::{fit_linear, fit_median, predict, FusionModel, Mode, Model};
use gazefuse::store::{zero_store, EmbeddingStore, StoreError, TokenKey};
use gazefuse::training::{adamw_step, train, HyperParams, OptimizerState};
use gazefuse::models::ParamSlot;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Option<Duration>, fn() -> Outcome);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let res = f();
    let took = start.elapsed();
    match (res, limit) {
        (Ok(detail), Some(l)) if took > l => Err(format!("{detail}; took {took:?}, limit {l:?}")),
        (Ok(detail), _) => Ok(format!("{detail} ({took:.2?})")),
        (Err(e), _) => Err(e),
    }
}

// 1. Overall MAE = mean of the four per-target MAEs, rendered half-to-even at 3 decimals.
fn overall_mae_arithmetic() -> Outcome {
    let rows: [(&str, [f64; 4], &str); 5] = [
        ("median dev", [5.931, 2.578, 8.999, 5.886], "5.848"),
        ("lr dev", [5.615, 2.570, 8.574, 5.768], "5.632"),
        ("svr dev", [5.203, 2.492, 8.118, 5.650], "5.366"),
        ("median test-1", [5.448, 2.440, 8.361, 5.661], "5.478"),
        ("median test-2", [3.459, 2.436, 6.524, 5.857], "4.569"),
    ];
    for (name, maes, printed) in rows {
        let r = EvalReport::from_target_maes(maes, 1, None);
        let got = format_half_even(r.overall, 3);
        check(got == printed, format!("{name}: rendered {got}, expected {printed}"))?;
    }
    Ok("5/5 table rows reproduced".into())
}

// 2. Analytic gradients of the fusion network against central differences.
fn gradient_check() -> Outcome {
    const STEP: f64 = 1e-5;
    // Gradients smaller than this are compared absolutely: central differences
    // carry ~1e-11 of cancellation noise that a pure ratio would amplify.
    const FLOOR: f64 = 1e-6;
    let mut r = common::rng(2);
    let mut worst = 0.0f64;
    for trial in 0..50 {
        let dim = r.gen_range(0..=8);
        let hidden = r.gen_range(1..=8);
        let mut net = FusionModel::initialized(dim, hidden, 0.0, &mut r).unwrap();
        for b in net.param_slots()[1].values.iter_mut() {
            *b = r.gen_range(-0.5..0.5);
        }
        for b in net.param_slots()[3].values.iter_mut() {
            *b = r.gen_range(-0.5..0.5);
        }
        // Draw an input that keeps every pre-activation away from the ReLU kink,
        // where the finite difference straddles two linear pieces.
        let (emb, feats) = loop {
            let emb: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
            let feats = [r.gen_range(1..=4) as f64, r.gen_range(1..=12) as f64, r.gen_range(0.2..5.0)];
            if pre_activations(&net, &emb, feats).iter().all(|z| z.abs() > 1e-3) {
                break (emb, feats);
            }
        };
        let upstream: [f64; 4] = std::array::from_fn(|_| r.gen_range(-1.0..1.0));
        let (_, cache) = net.forward(&emb, feats, Mode::Infer).unwrap();
        let analytic = net.backward(&cache, upstream).unwrap();
        let analytic: Vec<Vec<f64>> = analytic.slices().iter().map(|s| s.to_vec()).collect();

        let objective = |n: &FusionModel| -> f64 {
            let y = n.predict_one(&emb, feats).unwrap();
            y.iter().zip(upstream).map(|(a, b)| a * b).sum()
        };
        for (slot, grads) in analytic.iter().enumerate() {
            for (i, &a) in grads.iter().enumerate() {
                let orig = net.param_slices()[slot][i];
                net.param_slots()[slot].values[i] = orig + STEP;
                let plus = objective(&net);
                net.param_slots()[slot].values[i] = orig - STEP;
                let minus = objective(&net);
                net.param_slots()[slot].values[i] = orig;
                let numeric = (plus - minus) / (2.0 * STEP);
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
                worst = worst.max(err);
                check(
                    err < 1e-4,
                    format!("trial {trial} slot {slot} index {i}: analytic {a}, numeric {numeric}, rel {err:e}"),
                )?;
            }
        }
    }
    Ok(format!("50 models, max relative error {worst:.2e}"))
}

fn pre_activations(net: &FusionModel, emb: &[f64], feats: [f64; 3]) -> Vec<f64> {
    let h = net.hidden();
    let x: Vec<f64> = emb.iter().copied().chain(feats).collect();
    (0..h)
        .map(|j| net.b_hidden()[j] + x.iter().enumerate().map(|(i, xi)| xi * net.w_hidden()[i * h + j]).sum::<f64>())
        .collect()
}

fn design(feats: &[FeatureVector]) -> Vec<[f64; 4]> {
    feats.iter().map(|f| { let a = f.to_array(); [a[0], a[1], a[2], 1.0] }).collect()
}

fn normal_equation_residual(x: &[[f64; 4]], y: &[f64], w: [f64; 4]) -> f64 {
    let n = x.len() as f64;
    let scale = n * x.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())) * y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let resid: Vec<f64> = x.iter().zip(y).map(|(row, t)| row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() - t).collect();
    (0..4)
        .map(|j| x.iter().zip(&resid).map(|(row, r)| row[j] * r).sum::<f64>().abs())
        .fold(0.0, f64::max)
        / scale
}

// 3. Ridge with λ = 0 recovers planted coefficients and satisfies the normal equations.
fn linear_oracle_recovery() -> Outcome {
    let mut r = common::rng(3);
    let records = common::sentences(&mut r, "SYN", "xx", 0, 300, |r| common::random_word(r, 6));
    let unlabeled = Corpus::new(records.clone(), Split::Test).unwrap();
    let store = common::random_store(&mut r, &[&unlabeled], 2);
    let w_true = [[1.5, 0.25, 2.0, 0.5], [0.75, 1.25, 0.0, 0.1], [2.0, 0.5, 1.0, 3.0]];
    let b_true = [4.0, 1.0, 2.5, 0.5];
    let planted = |f: &FeatureVector| -> [f64; 4] {
        let x = f.to_array();
        std::array::from_fn(|k| b_true[k] + (0..3).map(|j| w_true[j][k] * x[j]).sum::<f64>())
    };
    let train = common::label_with(records.clone(), &store, Split::Train, planted);
    let lin = fit_linear(&train, &store, 0.0).map_err(|e| e.to_string())?;
    let mut max_err = 0.0f64;
    for k in 0..4 {
        for (fitted, planted) in lin.weights.iter().zip(&w_true) {
            max_err = max_err.max((fitted[k] - planted[k]).abs());
        }
        max_err = max_err.max((lin.bias[k] - b_true[k]).abs());
    }
    check(max_err < 1e-6, format!("coefficient error {max_err:e}"))?;

    let feats = featurize_corpus(&train, &store).unwrap();
    let x = design(&feats);
    let mut worst = 0.0f64;
    // planted data, then noisy data where the residual is nonzero
    let noisy = common::label_with(records, &store, Split::Train, |f| {
        let y = planted(f);
        let jitter = (f.word_char_len as f64 * 0.37 + f.rel_len * 1.3).sin();
        y.map(|v| (v + 3.0 * jitter).clamp(0.0, 100.0))
    });
    for corpus in [&train, &noisy] {
        let lin = fit_linear(corpus, &store, 0.0).map_err(|e| e.to_string())?;
        let targets = corpus.targets().unwrap();
        for k in 0..4 {
            let y: Vec<f64> = targets.iter().map(|t| t.to_array()[k]).collect();
            let w = [lin.weights[0][k], lin.weights[1][k], lin.weights[2][k], lin.bias[k]];
            worst = worst.max(normal_equation_residual(&x, &y, w));
        }
    }
    check(worst < 1e-8, format!("normal-equation residual {worst:e}"))?;
    Ok(format!("coefficient error {max_err:.1e}, scaled residual {worst:.1e}"))
}

// 4. Median baseline matches a full-sort oracle exactly.
fn median_oracle() -> Outcome {
    let mut r = common::rng(4);
    let mut even = 0;
    for trial in 0..1000 {
        let n = r.gen_range(1..=40);
        if n % 2 == 0 {
            even += 1;
        }
        let coarse = r.gen_bool(0.3);
        let records: Vec<TokenRecord> = (0..n)
            .map(|i| {
                let v: [f64; 4] = std::array::from_fn(|_| {
                    if coarse {
                        r.gen_range(0..5) as f64 * 25.0
                    } else {
                        r.gen_range(0.0..=100.0)
                    }
                });
                TokenRecord {
                    dataset: "D".into(),
                    language: "xx".into(),
                    sentence_id: i as u32,
                    word_id: 0,
                    word: "w".into(),
                    targets: Some(TargetVector::new(v).unwrap()),
                }
            })
            .collect();
        let corpus = Corpus::new(records, Split::Train).unwrap();
        let fitted = fit_median(&corpus).map_err(|e| e.to_string())?;
        let targets = corpus.targets().unwrap();
        for k in 0..4 {
            let mut col: Vec<f64> = targets.iter().map(|t| t.to_array()[k]).collect();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let oracle = if n % 2 == 1 { col[n / 2] } else { (col[n / 2 - 1] + col[n / 2]) / 2.0 };
            check(
                fitted.medians[k].to_bits() == oracle.to_bits(),
                format!("trial {trial} target {k}: {} vs oracle {oracle}", fitted.medians[k]),
            )?;
        }
    }
    Ok(format!("1000 corpora ({even} even-sized) exact"))
}

// 5. The fusion model learns a synthetic target far better than the median.
fn learning_sanity() -> Outcome {
    let (train_c, dev_c) = common::rel_len_task(5, 500, 200);
    let store = gazefuse::store::zero_store_for([&train_c, &dev_c], 8).unwrap();
    let hp = HyperParams { seed: 5, ..HyperParams::default() };
    let (net, _) = train(&train_c, &dev_c, &store, &hp).map_err(|e| e.to_string())?;
    let fusion = predict(&Model::Fusion(net), &dev_c, Some(&store), AblationMask::NONE).unwrap();
    let fusion = evaluate_corpus(&fusion, &dev_c).unwrap().overall;
    let median = Model::Median(fit_median(&train_c).unwrap());
    let median = evaluate_corpus(&predict(&median, &dev_c, None, AblationMask::NONE).unwrap(), &dev_c)
        .unwrap()
        .overall;
    let gain = 1.0 - fusion / median;
    check(
        gain >= 0.5,
        format!("fusion dev MAE {fusion:.4} vs median {median:.4}: improvement {:.1}% < 50%", gain * 100.0),
    )?;
    Ok(format!("fusion {fusion:.4} vs median {median:.4} ({:.1}% better)", gain * 100.0))
}

fn scalar_step(theta: f64, g: f64, state: &mut OptimizerState, hp: &HyperParams, lr: f64) -> f64 {
    let mut v = [theta];
    let mut slots = [ParamSlot { values: &mut v, decay: true }];
    adamw_step(&mut slots, &[&[g]], state, hp, lr).unwrap();
    v[0]
}

// 6. AdamW single-step cases and convergence on a quadratic.
fn adamw_formula() -> Outcome {
    let base = HyperParams::default();
    let no_decay = HyperParams { weight_decay: 0.0, ..base };
    let theta = scalar_step(0.75, 0.0, &mut OptimizerState::new(), &no_decay, 0.1);
    check((theta - 0.75).abs() < 1e-12, format!("zero-grad identity: {theta}"))?;

    let decay = HyperParams { weight_decay: 1e-2, ..base };
    let theta = scalar_step(2.0, 0.0, &mut OptimizerState::new(), &decay, 5e-2);
    let expected = 2.0 * (1.0 - 5e-2 * 1e-2);
    check((theta - expected).abs() < 1e-12, format!("decay shrink: {theta} vs {expected}"))?;

    let unit = HyperParams { adam_beta1: 0.0, adam_beta2: 0.0, adam_eps: 0.0, weight_decay: 0.0, ..base };
    let theta = scalar_step(1.0, 1.0, &mut OptimizerState::new(), &unit, 0.1);
    check((theta - 0.9).abs() < 1e-12, format!("unit step: {theta}"))?;

    let quad = HyperParams { weight_decay: 0.0, ..base };
    let mut worst = 0.0f64;
    for minimizer in [3.0, -2.0, 0.5] {
        let mut theta = 0.0;
        let mut st = OptimizerState::new();
        for _ in 0..5000 {
            theta = scalar_step(theta, 2.0 * (theta - minimizer), &mut st, &quad, 1e-2);
        }
        worst = worst.max((theta - minimizer).abs());
    }
    check(worst < 1e-6, format!("quadratic distance {worst:e}"))?;
    Ok(format!("hand cases exact, quadratic within {worst:.1e}"))
}

// 7. The sweep is inference-only masking of a fixed model.
fn ablation_identity() -> Outcome {
    let mut r = common::rng(7);
    let (train_c, dev_c) = common::rel_len_task(7, 300, 120);
    let store = common::random_store(&mut r, &[&train_c, &dev_c], 8);
    let hp = HyperParams { epochs: 5, hidden: 32, seed: 7, ..HyperParams::default() };
    let (net, _) = train(&train_c, &dev_c, &store, &hp).map_err(|e| e.to_string())?;
    let model = Model::Fusion(net);
    let before = parameter_checksum(&model);
    let rows = ablation_sweep(&model, &dev_c, &store).map_err(|e| e.to_string())?;
    check(parameter_checksum(&model) == before, "model changed during sweep")?;
    check(rows.len() == 8, format!("{} rows", rows.len()))?;
    for row in &rows {
        let direct = predict(&model, &dev_c, Some(&store), row.mask).unwrap();
        let direct = evaluate_corpus(&direct, &dev_c).unwrap();
        let same = direct.mae.iter().zip(&row.report.mae).all(|(a, b)| a.to_bits() == b.to_bits())
            && direct.overall.to_bits() == row.report.overall.to_bits();
        check(same, format!("row {} differs from direct predict", row.mask))?;
    }

    // Same keys, different words: with every feature masked over zero vectors
    // the model sees identical inputs.
    let zs = zero_store(&dev_c, 8).unwrap();
    let zero_model = {
        let (net, _) = train(&train_c, &dev_c, &gazefuse::store::zero_store_for([&train_c, &dev_c], 8).unwrap(), &hp)
            .map_err(|e| e.to_string())?;
        Model::Fusion(net)
    };
    let renamed: Vec<TokenRecord> = dev_c
        .records()
        .iter()
        .map(|rec| TokenRecord { word: format!("{}xyz", rec.word.repeat(2)), ..rec.clone() })
        .collect();
    let renamed = Corpus::new(renamed, Split::Dev).unwrap();
    let all = AblationMask::from_bits(7);
    let a = predict(&zero_model, &dev_c, Some(&zs), all).unwrap();
    let b = predict(&zero_model, &renamed, Some(&zs), all).unwrap();
    check(
        a.iter().flatten().zip(b.iter().flatten()).all(|(x, y)| x.to_bits() == y.to_bits()),
        "all-feature mask predictions depend on the word",
    )?;
    let unmasked_a = predict(&zero_model, &dev_c, Some(&zs), AblationMask::NONE).unwrap();
    let unmasked_b = predict(&zero_model, &renamed, Some(&zs), AblationMask::NONE).unwrap();
    check(unmasked_a != unmasked_b, "unmasked predictions should see the word lengths")?;
    Ok("8 rows bitwise equal to direct predict, checksum stable, masked output word-independent".into())
}

// 8. Two identical CLI runs produce byte-identical files.
fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (train_c, dev_c) = common::rel_len_task(8, 200, 80);
    common::write_corpus_file(d, "train.csv", &train_c);
    common::write_corpus_file(d, "dev.csv", &dev_c);
    std::fs::write(d.join("hp.cfg"), "epochs = 4\nhidden = 32\nbatch_size = 16\n").unwrap();
    let p = |name: &str| d.join(name).to_string_lossy().into_owned();
    let commands: Vec<Vec<String>> = vec![
        vec!["import-embeddings", "--corpus", &p("train.csv"), "--corpus", &p("dev.csv"), "--zero-dim", "8", "--out", &p("s.bin")],
        vec!["train", "--train", &p("train.csv"), "--dev", &p("dev.csv"), "--emb", &p("s.bin"), "--config", &p("hp.cfg"), "--seed", "7", "--out", &p("m.bin")],
        vec!["evaluate", "--model", &p("m.bin"), "--data", &p("dev.csv"), "--emb", &p("s.bin"), "--out", &p("eval.csv")],
        vec!["ablate", "--model", &p("m.bin"), "--data", &p("dev.csv"), "--emb", &p("s.bin"), "--out", &p("abl.csv")],
    ]
    .into_iter()
    .map(|c| c.into_iter().map(String::from).collect())
    .collect();
    let outputs = ["s.bin", "m.bin", "m.bin.log.csv", "eval.csv", "abl.csv"];
    let mut runs: Vec<Vec<Vec<u8>>> = Vec::new();
    for _ in 0..2 {
        for cmd in &commands {
            let mut out = Vec::new();
            let mut err = Vec::new();
            let argv = std::iter::once("gazefuse".to_string()).chain(cmd.iter().cloned());
            let code = gazefuse::cli::run(argv, &mut out, &mut err);
            check(code == 0, format!("{} exited {code}: {}", cmd[0], String::from_utf8_lossy(&err)))?;
        }
        let files = outputs.iter().map(|f| std::fs::read(d.join(f)).unwrap()).collect::<Vec<_>>();
        for f in outputs {
            std::fs::remove_file(d.join(f)).unwrap();
        }
        runs.push(files);
    }
    for (i, name) in outputs.iter().enumerate() {
        check(!runs[0][i].is_empty(), format!("{name} is empty"))?;
        check(runs[0][i] == runs[1][i], format!("{name} differs between runs"))?;
    }
    Ok(format!("{} output files byte-identical", outputs.len()))
}

// 9. Randomized store round-trips and declared corruption errors.
fn store_round_trip() -> Outcome {
    let mut r = common::rng(9);
    let specials = [0.0f32, -0.0, f32::MIN_POSITIVE, 1e-45, f32::MAX, f32::MIN, 1.0, -1.0];
    let (mut magic, mut trunc, mut crc) = (0, 0, 0);
    for trial in 0..1000 {
        let dim = r.gen_range(1..=16);
        let n_ds = r.gen_range(1..=4);
        let names: Vec<String> = (0..n_ds).map(|i| format!("{}{i}", common::random_word(&mut r, 4))).collect();
        let mut store = EmbeddingStore::new(dim, names).unwrap();
        for _ in 0..r.gen_range(0..=30) {
            let key = TokenKey {
                dataset_index: r.gen_range(0..n_ds) as u16,
                sentence_id: r.gen(),
                word_id: r.gen_range(0..64),
            };
            let v = (0..dim)
                .map(|_| if r.gen_bool(0.2) { specials[r.gen_range(0..specials.len())] } else { r.gen_range(-1e3f32..1e3) })
                .collect();
            store.insert(key, r.gen_range(1..=u16::MAX), v).unwrap();
        }
        let bytes = store.to_bytes().unwrap();
        check(bytes.len() == store.serialized_len(), format!("trial {trial}: size"))?;
        let back = EmbeddingStore::from_bytes(&bytes).map_err(|e| format!("trial {trial}: {e}"))?;
        check(back.len() == store.len(), format!("trial {trial}: count"))?;
        for ((ka, ea), (kb, eb)) in store.entries().zip(back.entries()) {
            let bits_equal = ea.vector.iter().zip(&eb.vector).all(|(a, b)| a.to_bits() == b.to_bits());
            check(ka == kb && ea.tok_len == eb.tok_len && bits_equal, format!("trial {trial}: entry {ka}"))?;
        }
        check(back.to_bytes().unwrap() == bytes, format!("trial {trial}: re-serialization differs"))?;

        let mut bad = bytes.clone();
        bad[r.gen_range(0..8)] ^= 0x20;
        check(matches!(EmbeddingStore::from_bytes(&bad), Err(StoreError::BadMagic)), format!("trial {trial}: magic"))?;
        magic += 1;

        let header_len = bytes.len() - 4 - store.len() * (12 + 4 * dim);
        if !store.is_empty() {
            let cut = r.gen_range(header_len + 1..bytes.len() - 4);
            check(
                matches!(EmbeddingStore::from_bytes(&bytes[..cut]), Err(StoreError::TruncatedFile { .. })),
                format!("trial {trial}: truncation at {cut}"),
            )?;
            trunc += 1;
        }
        let mut bad = bytes.clone();
        let at = r.gen_range(header_len..bytes.len());
        bad[at] ^= 1 << r.gen_range(0..8);
        check(
            matches!(EmbeddingStore::from_bytes(&bad), Err(StoreError::ChecksumMismatch { .. })),
            format!("trial {trial}: flipped byte {at}"),
        )?;
        crc += 1;
    }
    Ok(format!("1000 stores bit-identical; {magic} magic, {trunc} truncation, {crc} checksum corruptions detected"))
}

#[test]
fn acceptance_criteria() {
    let criteria: Vec<Criterion> = vec![
        ("1 overall-MAE arithmetic", Some(Duration::from_secs(1)), overall_mae_arithmetic),
        ("2 gradient check", None, gradient_check),
        ("3 linear-oracle recovery", Some(Duration::from_secs(1)), linear_oracle_recovery),
        ("4 median-oracle equivalence", None, median_oracle),
        ("5 learning sanity", Some(Duration::from_secs(120)), learning_sanity),
        ("6 AdamW formula check", None, adamw_formula),
        ("7 ablation identity", None, ablation_identity),
        ("8 determinism", None, cli_determinism),
        ("9 store round-trip", None, store_round_trip),
    ];
    let mut failed = Vec::new();
    for (name, limit, f) in criteria {
        match timed(limit, f) {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(why) => {
                println!("[FAIL] {name}: {why}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
