//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured numbers (visible with `-- --nocapture`).
//!
//! Run: cargo test -p affect-cli --test acceptance -- --nocapture

use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use affect_core::data::synth::{generate_dataset, SynthSpec};
use affect_core::data::{AugmentPolicy, BalancedStream, LoadedDataset};
use affect_core::loss::weighted_cross_entropy;
use affect_core::metrics::{au_f1, ccc, macro_f1};
use affect_core::model::{
    model_forward_opts, positional_encoding, scaled_dot_attention,
    scaled_dot_attention_with_weights, tma_forward, Mode, ModelConfig, ModelParams,
};
use affect_core::rng::Rng;
use affect_core::tensor::check::{check_gradients, max_rel_err, numerical_grad, DEFAULT_H};
use affect_core::tensor::Tape;
use affect_core::train::checkpoint::encode_checkpoint;
use affect_core::train::{evaluate, fit, fit_resume, load_checkpoint, Task, TrainConfig, Trainer};
use affect_core::{EXPR_CLASSES};

fn rand_tensor(rng: &mut Rng, shape: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let n: usize = shape.iter().product();
    (
        (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        shape.to_vec(),
    )
}

// ── Criterion 1: gradient suite ─────────────────────────────────────

#[test]
fn gradient_suite() {
    let started = Instant::now();
    let tol = 1e-4;
    let mut worst = 0.0f64;
    let mut rng = Rng::new(1001);

    // Every differentiable op, checked against central differences.
    let mut check = |name: &str,
                     inputs: &[(Vec<f64>, Vec<usize>)],
                     build: &dyn Fn(
        &mut Tape,
        &[affect_core::tensor::NodeId],
    )
        -> affect_core::Result<affect_core::tensor::NodeId>| {
        let err = check_gradients(build, inputs, DEFAULT_H, tol)
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        worst = worst.max(err);
    };

    let a33 = rand_tensor(&mut rng, &[3, 3]);
    let b33 = rand_tensor(&mut rng, &[3, 3]);
    let a34 = rand_tensor(&mut rng, &[3, 4]);
    let b42 = rand_tensor(&mut rng, &[4, 2]);
    check("matmul", &[a34.clone(), b42.clone()], &|t, ids| {
        let c = t.matmul(ids[0], ids[1])?;
        Ok(t.sum_all(c))
    });
    check("add", &[a33.clone(), b33.clone()], &|t, ids| {
        let c = t.add(ids[0], ids[1])?;
        Ok(t.sum_all(c))
    });
    check("sub", &[a33.clone(), b33.clone()], &|t, ids| {
        let c = t.sub(ids[0], ids[1])?;
        Ok(t.sum_all(c))
    });
    check("mul", &[a33.clone(), b33.clone()], &|t, ids| {
        let c = t.mul(ids[0], ids[1])?;
        Ok(t.sum_all(c))
    });
    let denom: Vec<f64> = (0..9).map(|_| rng.uniform(0.5, 1.5)).collect();
    check("div", &[a33.clone(), (denom, vec![3, 3])], &|t, ids| {
        let c = t.div(ids[0], ids[1])?;
        Ok(t.sum_all(c))
    });
    check("affine_scale", std::slice::from_ref(&a33), &|t, ids| {
        let c = t.affine(ids[0], -0.75, 0.5);
        Ok(t.mean_all(c))
    });
    check("transpose", std::slice::from_ref(&a34), &|t, ids| {
        let c = t.transpose(ids[0])?;
        Ok(t.sum_all(c))
    });
    check("concat_lastdim", &[a33.clone(), a34.clone()], &|t, ids| {
        let c = t.concat_lastdim(&[ids[0], ids[1]])?;
        Ok(t.mean_all(c))
    });
    check("slice_time", std::slice::from_ref(&a34), &|t, ids| {
        let c = t.slice_time(ids[0], 1, 2)?;
        Ok(t.sum_all(c))
    });
    check("slice_lastdim", std::slice::from_ref(&a34), &|t, ids| {
        let c = t.slice_lastdim(ids[0], 1, 2)?;
        Ok(t.sum_all(c))
    });
    check("gather_rows", std::slice::from_ref(&a34), &|t, ids| {
        let c = t.gather_rows(ids[0], &[2, 0, 2, 1])?;
        Ok(t.sum_all(c))
    });
    check("mean_all", std::slice::from_ref(&a33), &|t, ids| Ok(t.mean_all(ids[0])));
    check("sum_all", std::slice::from_ref(&a33), &|t, ids| Ok(t.sum_all(ids[0])));
    let relu_in: Vec<f64> = (0..12)
        .map(|_| {
            let v = rng.uniform(0.1, 1.0);
            if rng.chance(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    check("relu", &[(relu_in, vec![3, 4])], &|t, ids| {
        let c = t.relu(ids[0]);
        Ok(t.sum_all(c))
    });
    check("tanh_elem", std::slice::from_ref(&a33), &|t, ids| {
        let c = t.tanh_elem(ids[0]);
        Ok(t.mean_all(c))
    });
    let probe35 = rand_tensor(&mut rng, &[3, 5]).0;
    check(
        "softmax_lastdim",
        &[rand_tensor(&mut rng, &[3, 5])],
        &|t, ids| {
            let s = t.softmax_lastdim(ids[0])?;
            let p = t.constant(probe35.clone(), vec![3, 5])?;
            let weighted = t.mul(s, p)?;
            Ok(t.sum_all(weighted))
        },
    );
    let ln_probe = rand_tensor(&mut rng, &[3, 4]).0;
    check(
        "layer_norm_lastdim",
        &[
            rand_tensor(&mut rng, &[3, 4]),
            rand_tensor(&mut rng, &[4]),
            rand_tensor(&mut rng, &[4]),
        ],
        &|t, ids| {
            let y = t.layer_norm_lastdim(ids[0], ids[1], ids[2])?;
            let p = t.constant(ln_probe.clone(), vec![3, 4])?;
            let weighted = t.mul(y, p)?;
            Ok(t.sum_all(weighted))
        },
    );
    let conv_probe = rand_tensor(&mut rng, &[5, 2]).0;
    check(
        "conv1d_temporal",
        &[
            rand_tensor(&mut rng, &[5, 3]),
            rand_tensor(&mut rng, &[3, 3, 2]),
            rand_tensor(&mut rng, &[2]),
        ],
        &|t, ids| {
            let y = t.conv1d_temporal(ids[0], ids[1], ids[2])?;
            let p = t.constant(conv_probe.clone(), vec![5, 2])?;
            let weighted = t.mul(y, p)?;
            Ok(t.sum_all(weighted))
        },
    );
    let ce_targets = vec![0usize, 3, 2, 4];
    let ce_weights = vec![1.5, 0.5, 2.0, 1.0, 0.25];
    check(
        "cross_entropy_rows",
        &[rand_tensor(&mut rng, &[4, 5])],
        &|t, ids| t.cross_entropy_rows(ids[0], &ce_targets, &ce_weights),
    );
    let bce_targets: Vec<f64> = (0..12).map(|_| f64::from(rng.chance(0.5))).collect();
    let bce_weights = vec![1.0, 2.0, 0.5, 1.25];
    check(
        "bce_logits",
        &[rand_tensor(&mut rng, &[3, 4])],
        &|t, ids| t.bce_logits(ids[0], &bce_targets, &bce_weights),
    );

    // Full model: T=4, d_v=6, d_m=8, H=2, one layer. Numerical gradient over
    // every parameter tensor for a combined three-head loss.
    let cfg = ModelConfig {
        d_v: 6,
        d_m: 8,
        num_heads: 2,
        d_k: 4,
        d_ffn: 16,
        num_layers: 1,
        conv_kernel: 3,
        max_t: 8,
        dropout_rate: 0.0,
        seed: 21,
    };
    let params = ModelParams::init(&cfg, 21).unwrap();
    let t_len = 4;
    let features = rand_tensor(&mut rng, &[t_len, cfg.d_v]).0;
    let loss_of = |p: &ModelParams| -> f64 {
        let mut tape = Tape::new();
        let reg = p.register(&mut tape).unwrap();
        let mut drng = Rng::new(0);
        let out = affect_core::model::model_forward(
            &mut tape, &features, t_len, &cfg, &reg, Mode::Infer, &mut drng,
        )
        .unwrap();
        let va2 = tape.mul(out.va, out.va).unwrap();
        let expr2 = tape.mul(out.expr_logits, out.expr_logits).unwrap();
        let au2 = tape.mul(out.au_logits, out.au_logits).unwrap();
        let s1 = tape.mean_all(va2);
        let s2 = tape.mean_all(expr2);
        let s3 = tape.mean_all(au2);
        let s12 = tape.add(s1, s2).unwrap();
        let total = tape.add(s12, s3).unwrap();
        tape.value(total)[0]
    };
    // Analytic gradients in one pass.
    let mut tape = Tape::new();
    let reg = params.register(&mut tape).unwrap();
    let mut drng = Rng::new(0);
    let out = affect_core::model::model_forward(
        &mut tape, &features, t_len, &cfg, &reg, Mode::Infer, &mut drng,
    )
    .unwrap();
    let va2 = tape.mul(out.va, out.va).unwrap();
    let expr2 = tape.mul(out.expr_logits, out.expr_logits).unwrap();
    let au2 = tape.mul(out.au_logits, out.au_logits).unwrap();
    let s1 = tape.mean_all(va2);
    let s2 = tape.mean_all(expr2);
    let s3 = tape.mean_all(au2);
    let s12 = tape.add(s1, s2).unwrap();
    let total = tape.add(s12, s3).unwrap();
    tape.backward(total).unwrap();
    let named = params.named();
    for (i, (name, p)) in named.iter().enumerate() {
        let analytic = tape
            .grad(reg.all_ids()[i])
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; p.data.len()]);
        let numeric = numerical_grad(
            |probe| {
                let mut perturbed = params.clone();
                perturbed.tensors_mut()[i].1.data = probe.to_vec();
                loss_of(&perturbed)
            },
            &p.data,
            DEFAULT_H,
        );
        let err = max_rel_err(&analytic, &numeric);
        worst = worst.max(err);
        assert!(err < tol, "full model parameter {name}: rel err {err:.3e}");
    }

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "gradient suite took {elapsed:.1}s, budget 30s");
    println!("[PASS] gradient suite: max rel err {worst:.3e} (< 1e-4) in {elapsed:.1}s (< 30s)");
}

// ── Criterion 2: attention invariants ───────────────────────────────

#[test]
fn attention_invariants() {
    let mut rng = Rng::new(1002);

    // Softmax rows sum to 1 and outputs stay in the value hull.
    for _ in 0..100 {
        let t = 2 + rng.below(6);
        let d = 1 + rng.below(5);
        let mut tape = Tape::new();
        let q = tape.constant(rand_tensor(&mut rng, &[t, d]).0, vec![t, d]).unwrap();
        let k = tape.constant(rand_tensor(&mut rng, &[t, d]).0, vec![t, d]).unwrap();
        let vd = rand_tensor(&mut rng, &[t, d]).0;
        let v = tape.constant(vd.clone(), vec![t, d]).unwrap();
        let (out, weights) = scaled_dot_attention_with_weights(&mut tape, q, k, v).unwrap();
        for r in 0..t {
            let sum: f64 = tape.value(weights)[r * t..(r + 1) * t].iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "row sum {sum}");
        }
        for c in 0..d {
            let col: Vec<f64> = (0..t).map(|r| vd[r * d + c]).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for r in 0..t {
                let o = tape.value(out)[r * d + c];
                assert!(o >= lo - 1e-12 && o <= hi + 1e-12, "hull violation {o}");
            }
        }
    }

    // H=1 multi-head equals the single-head composition.
    let cfg = ModelConfig {
        d_v: 6,
        d_m: 8,
        num_heads: 1,
        d_k: 8,
        d_ffn: 16,
        num_layers: 1,
        conv_kernel: 3,
        max_t: 8,
        dropout_rate: 0.0,
        seed: 3,
    };
    let params = ModelParams::init(&cfg, 3).unwrap();
    let t_len = 5;
    let x_data = rand_tensor(&mut rng, &[t_len, cfg.d_m]).0;
    let mut tape = Tape::new();
    let reg = params.register(&mut tape).unwrap();
    let x = tape.constant(x_data, vec![t_len, cfg.d_m]).unwrap();
    let b = &params.blocks[0];
    let ids = reg.all_ids();
    // Walk order: conv_w, conv_b, then the block's four projections.
    let (wq, wk, wv, wo) = (ids[2], ids[3], ids[4], ids[5]);
    assert_eq!(tape.shape(wq), b.attn.w_q.shape.as_slice());
    let fused = tma_forward(&mut tape, x, wq, wk, wv, wo, 1).unwrap();
    let q = tape.matmul(x, wq).unwrap();
    let k = tape.matmul(x, wk).unwrap();
    let v = tape.matmul(x, wv).unwrap();
    let attn = scaled_dot_attention(&mut tape, q, k, v).unwrap();
    let manual = tape.matmul(attn, wo).unwrap();
    let max_diff = tape
        .value(fused)
        .iter()
        .zip(tape.value(manual).iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(max_diff <= 1e-10, "H=1 mismatch {max_diff}");

    // Permutation equivariance without positional encoding, broken with it.
    let cfg = ModelConfig {
        d_v: 6,
        d_m: 8,
        num_heads: 2,
        d_k: 4,
        d_ffn: 16,
        num_layers: 1,
        conv_kernel: 1,
        max_t: 8,
        dropout_rate: 0.0,
        seed: 4,
    };
    let params = ModelParams::init(&cfg, 4).unwrap();
    let t_len = 4;
    let x = rand_tensor(&mut rng, &[t_len, cfg.d_v]).0;
    let perm = [2usize, 0, 3, 1];
    let mut permuted = vec![0.0; x.len()];
    for (dst, &src) in perm.iter().enumerate() {
        permuted[dst * cfg.d_v..(dst + 1) * cfg.d_v]
            .copy_from_slice(&x[src * cfg.d_v..(src + 1) * cfg.d_v]);
    }
    let forward = |data: &[f64], positional: bool| {
        let mut tape = Tape::new();
        let reg = params.register(&mut tape).unwrap();
        let mut drng = Rng::new(0);
        let out = model_forward_opts(
            &mut tape, data, t_len, &cfg, &reg, Mode::Infer, &mut drng, positional,
        )
        .unwrap();
        out.extract(&tape)
    };
    let base = forward(&x, false);
    let moved = forward(&permuted, false);
    let mut equiv_err = 0.0f64;
    for (dst, &src) in perm.iter().enumerate() {
        for c in 0..EXPR_CLASSES {
            equiv_err =
                equiv_err.max((moved.expr_logits[dst][c] - base.expr_logits[src][c]).abs());
        }
    }
    assert!(equiv_err <= 1e-10, "equivariance error {equiv_err}");
    let base_pe = forward(&x, true);
    let moved_pe = forward(&permuted, true);
    let mut pe_diff = 0.0f64;
    for (dst, &src) in perm.iter().enumerate() {
        for c in 0..EXPR_CLASSES {
            pe_diff =
                pe_diff.max((moved_pe.expr_logits[dst][c] - base_pe.expr_logits[src][c]).abs());
        }
    }
    assert!(pe_diff > 1e-6, "positional encoding failed to break equivariance");

    // Positional rows really differ across time.
    let table = positional_encoding(4, 8).unwrap();
    assert_ne!(table[0..8], table[8..16]);

    println!(
        "[PASS] attention invariants: row sums, value hull, H=1 oracle ({max_diff:.1e}), equivariance {equiv_err:.1e} / broken with PE ({pe_diff:.2e})"
    );
}

// ── Criterion 3: metric oracles ─────────────────────────────────────

#[test]
fn metric_oracles() {
    let mut rng = Rng::new(1003);

    // Moment-formula oracle, written independently of the implementation.
    let ccc_oracle = |p: &[f64], g: &[f64]| -> f64 {
        let n = p.len() as f64;
        let mp = p.iter().sum::<f64>() / n;
        let mg = g.iter().sum::<f64>() / n;
        let cov = p.iter().zip(g).map(|(&a, &b)| (a - mp) * (b - mg)).sum::<f64>() / n;
        let vp = p.iter().map(|&a| (a - mp) * (a - mp)).sum::<f64>() / n;
        let vg = g.iter().map(|&b| (b - mg) * (b - mg)).sum::<f64>() / n;
        let d = mp - mg;
        if vp + vg + d * d == 0.0 {
            1.0
        } else {
            2.0 * cov / (vp + vg + d * d)
        }
    };
    for _ in 0..10_000 {
        let n = 2 + rng.below(40);
        let p: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let g: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let ours = ccc(&p, &g).unwrap();
        assert!((ours - ccc_oracle(&p, &g)).abs() <= 1e-12);
    }
    // Worked example: moments cov=2.5, var_p=1.25, var_g=5, dmean^2=6.25
    // give 2*2.5/12.5 = 0.4.
    let worked = ccc(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 8.0]).unwrap();
    let oracle = ccc_oracle(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 8.0]);
    assert!((worked - oracle).abs() <= 1e-15);
    assert!((worked - 0.4).abs() <= 1e-15, "worked example gave {worked}");

    // Confusion-matrix brute force for both F1 flavors, exact agreement.
    for _ in 0..1000 {
        let k = 2 + rng.below(7);
        let n = 1 + rng.below(50);
        let pred: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let gold: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let mut oracle_sum = 0.0;
        for c in 0..k {
            let tp = pred
                .iter()
                .zip(&gold)
                .filter(|&(&p, &g)| p == c && g == c)
                .count() as f64;
            let pc = pred.iter().filter(|&&p| p == c).count() as f64;
            let gc = gold.iter().filter(|&&g| g == c).count() as f64;
            if pc + gc > 0.0 {
                oracle_sum += 2.0 * tp / (pc + gc);
            }
        }
        assert_eq!(macro_f1(&pred, &gold, k).unwrap(), oracle_sum / k as f64);
    }
    for _ in 0..1000 {
        let n = 1 + rng.below(30);
        let mk = |rng: &mut Rng| -> Vec<[u8; 12]> {
            (0..n)
                .map(|_| std::array::from_fn(|_| rng.chance(0.4) as u8))
                .collect()
        };
        let pred = mk(&mut rng);
        let gold = mk(&mut rng);
        let (per_unit, mean) = au_f1(&pred, &gold).unwrap();
        let mut oracle_mean = 0.0;
        for u in 0..12 {
            let tp = (0..n).filter(|&i| pred[i][u] == 1 && gold[i][u] == 1).count() as f64;
            let pc = (0..n).filter(|&i| pred[i][u] == 1).count() as f64;
            let gc = (0..n).filter(|&i| gold[i][u] == 1).count() as f64;
            let f = if pc + gc == 0.0 { 0.0 } else { 2.0 * tp / (pc + gc) };
            assert_eq!(per_unit[u], f);
            oracle_mean += f / 12.0;
        }
        assert!((mean - oracle_mean).abs() <= 1e-15);
    }

    println!(
        "[PASS] metric oracles: ccc matches moments on 10^4 pairs, worked example {worked:.6}; macro/AU F1 match brute force on 10^3 instances"
    );
}

// ── Criterion 4: overfit ────────────────────────────────────────────

fn overfit_dataset() -> LoadedDataset {
    generate_dataset(
        &SynthSpec {
            classes: 8,
            videos_per_class: 8,
            frames_per_video: 16,
            stream_dims: vec![8, 8],
            feature_noise: 0.2,
            separation: 3.0,
            va_noise: 0.35,
            au_flip_prob: 0.05,
            seed: 2024,
        },
        "train",
    )
    .unwrap()
}

fn overfit_model(d_v: usize) -> ModelConfig {
    ModelConfig {
        d_v,
        d_m: 16,
        num_heads: 4,
        d_k: 4,
        d_ffn: 32,
        num_layers: 1,
        conv_kernel: 3,
        max_t: 16,
        dropout_rate: 0.0,
        seed: 7,
    }
}

fn overfit_train(task: Task) -> TrainConfig {
    TrainConfig {
        task,
        epochs: 200,
        batch_size: 32,
        eval_batch_size: 16,
        win_len: 16,
        stride: 16,
        lr: 0.01,
        seed: 7,
        augment: AugmentPolicy::off(),
        balanced: true,
    }
}

fn run_overfit(task: Task, target: f64) -> (u32, f64, f64) {
    let ds = overfit_dataset();
    assert_eq!(ds.d_v, 16);
    assert_eq!(ds.videos.len() , 64, "64 one-window videos");
    let cfg = overfit_model(ds.d_v);
    let tc = overfit_train(task);
    let mut trainer = Trainer::new(&cfg, &tc, &ds).unwrap();
    let started = Instant::now();
    let mut best = f64::NEG_INFINITY;
    let mut reached_at = 0;
    for epoch in 1..=tc.epochs {
        trainer.train_epoch(&ds).unwrap();
        let report = evaluate(&cfg, &trainer.params, &ds, tc.win_len, tc.win_len, 16).unwrap();
        let score = report.score(task.score_tracks()).unwrap();
        best = best.max(score);
        if score >= target {
            reached_at = epoch;
            break;
        }
    }
    (reached_at, best, started.elapsed().as_secs_f64())
}

#[test]
fn overfit_expression() {
    let (epoch, best, secs) = run_overfit(Task::Expr, 0.95);
    assert!(
        epoch > 0,
        "expression training peaked at macro-F1 {best:.3} within 200 epochs"
    );
    assert!(secs < 120.0, "took {secs:.1}s, budget 120s");
    println!(
        "[PASS] overfit expression: train macro-F1 >= 0.95 at epoch {epoch} in {secs:.1}s (< 120s)"
    );
}

#[test]
fn overfit_valence_arousal() {
    let (epoch, best, secs) = run_overfit(Task::Va, 0.9);
    assert!(
        epoch > 0,
        "VA training peaked at ccc_mean {best:.3} within 200 epochs"
    );
    assert!(secs < 120.0, "took {secs:.1}s, budget 120s");
    println!(
        "[PASS] overfit valence-arousal: train ccc_mean >= 0.9 at epoch {epoch} in {secs:.1}s (< 120s)"
    );
}

// ── Criterion 5: determinism ────────────────────────────────────────

fn affect_cmd() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_affect"));
    cmd.env_remove("AFFECT_SEED");
    cmd
}

fn expect_ok(out: &Output) {
    assert!(
        out.status.code() == Some(0),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn cli_train_run(dir: &Path, tag: &str) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    let data = dir.join(format!("data_{tag}"));
    let spec = dir.join("spec.cfg");
    fs::write(
        &spec,
        "[synth]\nclasses = 3\nvideos_per_class = 2\nframes_per_video = 8\ndim_a = 6\nseed = 13\n",
    )
    .unwrap();
    let out = affect_cmd()
        .args([
            "synth",
            "--spec",
            spec.to_str().unwrap(),
            "--out",
            data.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    expect_ok(&out);
    let cfg = dir.join("train.cfg");
    fs::write(
        &cfg,
        "[model]\nd_m = 8\nnum_heads = 2\nd_ffn = 16\nnum_layers = 1\nmax_t = 8\n\n[train]\nlr = 0.002\nseed = 13\n",
    )
    .unwrap();
    let run_dir = dir.join(format!("run_{tag}"));
    let manifest = data.join("manifest.tsv");
    let out = affect_cmd()
        .args([
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--train-manifest",
            manifest.to_str().unwrap(),
            "--val-manifest",
            manifest.to_str().unwrap(),
            "--task",
            "expr",
            "--epochs",
            "2",
            "--out",
            run_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    expect_ok(&out);
    (
        fs::read(run_dir.join("best.afck")).unwrap(),
        fs::read(run_dir.join("last.afck")).unwrap(),
        fs::read(run_dir.join("train.log")).unwrap(),
    )
}

#[test]
fn determinism_and_resume() {
    // Two full CLI training runs with the same seed are byte-identical.
    let dir = tempfile::tempdir().unwrap();
    let (best1, last1, log1) = cli_train_run(dir.path(), "a");
    let (best2, last2, log2) = cli_train_run(dir.path(), "b");
    assert_eq!(best1, best2, "best checkpoints differ between identical runs");
    assert_eq!(last1, last2, "last checkpoints differ between identical runs");
    assert_eq!(log1, log2, "epoch logs differ between identical runs");

    // Run-then-resume matches the straight-through run bit for bit.
    let ds = generate_dataset(
        &SynthSpec {
            classes: 3,
            videos_per_class: 2,
            frames_per_video: 8,
            stream_dims: vec![6],
            seed: 77,
            ..SynthSpec::default()
        },
        "train",
    )
    .unwrap();
    let cfg = ModelConfig {
        d_v: ds.d_v,
        d_m: 8,
        num_heads: 2,
        d_k: 4,
        d_ffn: 16,
        num_layers: 1,
        conv_kernel: 3,
        max_t: 8,
        dropout_rate: 0.1,
        seed: 13,
    };
    let tc = |epochs: u32| TrainConfig {
        task: Task::Expr,
        epochs,
        batch_size: 4,
        eval_batch_size: 4,
        win_len: 8,
        stride: 8,
        lr: 1e-3,
        seed: 13,
        augment: AugmentPolicy::default(),
        balanced: true,
    };
    let straight = fit(&cfg, &tc(3), &ds, &ds, None).unwrap();
    let ck_dir = tempfile::tempdir().unwrap();
    fit(&cfg, &tc(2), &ds, &ds, Some(ck_dir.path())).unwrap();
    let loaded = load_checkpoint(&ck_dir.path().join("last.afck")).unwrap();
    let resumed = fit_resume(&loaded, &tc(3), &ds, &ds, None).unwrap();
    assert_eq!(
        encode_checkpoint(&straight.last),
        encode_checkpoint(&resumed.last),
        "resume diverged from the straight run"
    );

    println!("[PASS] determinism: identical cmd_train runs byte-identical; run-then-resume bit-exact");
}

// ── Criterion 6: format golden tests ────────────────────────────────

#[test]
fn format_golden() {
    use affect_core::data::feature::{decode_feature_bytes, encode_feature_bytes, FeatureSequence};
    use affect_core::data::labels::{decode_label_text, encode_label_text};
    use affect_core::train::checkpoint::decode_checkpoint;

    let mut rng = Rng::new(1006);

    // AFSQ: byte-exact round trip.
    let features: Vec<f64> = (0..5 * 8)
        .map(|_| (rng.uniform(-1.0, 1.0) as f32) as f64)
        .collect();
    let seq = FeatureSequence::new("golden".into(), (0..5).collect(), features, 8).unwrap();
    let bytes = encode_feature_bytes(&seq).unwrap();
    let back = decode_feature_bytes(&bytes).unwrap();
    assert_eq!(encode_feature_bytes(&back).unwrap(), bytes);

    // Labels: byte-exact round trip.
    let text = "#affectlabels v1\n0,0.125000,-0.250000,3,1,0,0,1,0,0,0,0,1,0,0,1,1\n4,-5,-5,1,0,0,0,0,0,0,0,0,0,0,0,0,1\n";
    let set = decode_label_text(text).unwrap();
    assert_eq!(encode_label_text(&set), text);

    // AFCK: byte-exact round trip through a real training artifact.
    let ds = generate_dataset(
        &SynthSpec {
            classes: 2,
            videos_per_class: 2,
            frames_per_video: 8,
            stream_dims: vec![4],
            seed: 55,
            ..SynthSpec::default()
        },
        "train",
    )
    .unwrap();
    let cfg = ModelConfig {
        d_v: ds.d_v,
        d_m: 8,
        num_heads: 2,
        d_k: 4,
        d_ffn: 16,
        num_layers: 1,
        conv_kernel: 3,
        max_t: 8,
        dropout_rate: 0.0,
        seed: 55,
    };
    let tc = TrainConfig {
        task: Task::Expr,
        epochs: 1,
        batch_size: 4,
        eval_batch_size: 4,
        win_len: 8,
        stride: 8,
        lr: 1e-3,
        seed: 55,
        augment: AugmentPolicy::off(),
        balanced: true,
    };
    let outcome = fit(&cfg, &tc, &ds, &ds, None).unwrap();
    let ck_bytes = encode_checkpoint(&outcome.last);
    let ck_back = decode_checkpoint(&ck_bytes).unwrap();
    assert_eq!(encode_checkpoint(&ck_back), ck_bytes);

    // Corrupted headers: the specified errors and exit codes.
    let dir = tempfile::tempdir().unwrap();

    let mut bad_afsq = bytes.clone();
    bad_afsq[0..4].copy_from_slice(b"XXXX");
    match decode_feature_bytes(&bad_afsq) {
        Err(affect_core::Error::Format { offset: 0, .. }) => {}
        other => panic!("expected format error at byte 0, got {other:?}"),
    }

    let mut bad_afck = ck_bytes.clone();
    bad_afck.truncate(bad_afck.len() / 2);
    assert!(matches!(
        decode_checkpoint(&bad_afck),
        Err(affect_core::Error::Format { .. })
    ));

    match decode_label_text("#wrong v9\n") {
        Err(affect_core::Error::Format { offset: 0, .. }) => {}
        other => panic!("expected format error at byte 0, got {other:?}"),
    }

    // Exit codes through the binary: corrupted checkpoint -> 2,
    // unknown file format -> 2.
    let afck_path = dir.path().join("broken.afck");
    fs::write(&afck_path, &bad_afck).unwrap();
    let manifest = dir.path().join("m.tsv");
    fs::write(&manifest, "v\tf.afsq\tl.labels\n").unwrap();
    let out = affect_cmd()
        .args([
            "eval",
            "--checkpoint",
            afck_path.to_str().unwrap(),
            "--manifest",
            manifest.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("byte"));

    let junk = dir.path().join("junk");
    fs::write(&junk, b"???").unwrap();
    let out = affect_cmd()
        .args(["inspect", "--file", junk.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    println!("[PASS] format golden: AFSQ/AFCK/label round-trips byte-exact; corrupted headers give format errors and exit 2");
}

// ── Criterion 7: imbalance mitigation ───────────────────────────────

#[test]
fn imbalance_mitigation() {
    // 90/10 two-class split: balanced draws land 50/50 within 5 points.
    let mut keys: Vec<Option<u8>> = Vec::new();
    keys.extend(std::iter::repeat_n(Some(0u8), 90));
    keys.extend(std::iter::repeat_n(Some(1u8), 10));
    let mut stream = BalancedStream::new(&keys, Rng::new(1007)).unwrap();
    let draws = 10_000;
    let mut counts = [0usize; 2];
    for _ in 0..draws {
        let idx = stream.next_index();
        counts[usize::from(idx >= 90)] += 1;
    }
    let freq0 = counts[0] as f64 / draws as f64;
    let freq1 = counts[1] as f64 / draws as f64;
    assert!((freq0 - 0.5).abs() <= 0.05, "class 0 frequency {freq0}");
    assert!((freq1 - 0.5).abs() <= 0.05, "class 1 frequency {freq1}");

    // Uniform logits with uniform weights score exactly ln 8.
    let t = 6;
    let mut tape = Tape::new();
    let logits = tape
        .variable(vec![0.5; t * EXPR_CLASSES], vec![t, EXPR_CLASSES])
        .unwrap();
    let loss = weighted_cross_entropy(
        &mut tape,
        logits,
        &vec![2u8; t],
        &vec![true; t],
        &[1.0; EXPR_CLASSES],
        &(0..t as u64).collect::<Vec<_>>(),
    )
    .unwrap();
    let value = tape.value(loss)[0];
    assert!(
        (value - (EXPR_CLASSES as f64).ln()).abs() <= 1e-12,
        "uniform CE {value}"
    );

    println!(
        "[PASS] imbalance mitigation: 90/10 split drawn at {freq0:.3}/{freq1:.3}; uniform CE = ln 8 within 1e-12"
    );
}
