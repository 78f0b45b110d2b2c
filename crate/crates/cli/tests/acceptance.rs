//! Release gate: every numbered criterion the project promises, one test
//! each, each printing a single `criterion NN: PASS|FAIL` line with the
//! measured quantities. The math criteria (01-04) run in-process against the
//! library; the pipeline criteria (05-10) drive the installed binary in
//! scratch directories exactly as an operator would. The three training
//! criteria that share a world (05, 06) reuse one set of cached runs.
//!
//! Budgeted criteria time themselves and fail when over budget; the wall
//! clocks here assume the single-core worker this gate is pinned to.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use reclab_core::eval::{ndcg_at, read_eval};
use reclab_core::augment::{quantile_filter, read_scores, UserScore};
use reclab_core::policy::{ModelConfig, PolicyModel};
use reclab_core::prompting::render_target;
use reclab_core::rewards::{score_response, FORMAT_REWARD, HIT_REWARD, MALFORMED_REWARD};
use reclab_core::rng::{self, salt};
use reclab_core::synth::{generate_world, load_labels, WorldConfig};
use reclab_core::train::sft::sft_loss_eager;
use reclab_core::train::{advantages, grpo_loss, read_metrics, GrpoPart, KlTerm, TokenizedSample};
use reclab_tensor::{AdamState, Tape, Tensor, Value};
use tempfile::TempDir;

// ---------------------------------------------------------------------------
// Shared plumbing

const SEEDS: [u64; 3] = [17, 18, 19];

/// Supervised recipe used by the learnability runs: the best setting found
/// for this model scale on the default world.
const SFT_SET: &[&str] = &[
    "--set",
    "run.learning_rate=7e-4",
    "--set",
    "sft.steps=2000",
    "--set",
    "sft.log_every=100",
];

/// Policy-optimization recipe layered on top of the supervised checkpoint.
const GRPO_SET: &[&str] = &[
    "--set",
    "run.learning_rate=1e-4",
    "--set",
    "grpo.rounds=100",
];

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Deterministic uniform in [-1, 1) off the library's splitmix stream.
fn uniform(state: &mut u64) -> f64 {
    (rng::splitmix(state) >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

/// Deterministic uniform in [0, 1).
fn unit(state: &mut u64) -> f64 {
    (rng::splitmix(state) >> 11) as f64 / (1u64 << 53) as f64
}

fn run_cli(dir: &Path, subcommand: &str, sets: &[&str], extra: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_reclab"))
        .arg(subcommand)
        .arg("--out")
        .arg(dir)
        .args(sets)
        .args(extra)
        .output()
        .expect("spawn pipeline binary");
    assert!(
        out.status.success(),
        "`reclab {subcommand}` failed in {}:\n{}",
        dir.display(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn seed_set(seed: u64) -> Vec<String> {
    vec!["--set".into(), format!("run.seed={seed}")]
}

/// Read HR@k for one split out of the evaluation artifact.
fn read_hr(dir: &Path, split: &str, k: usize) -> f64 {
    let rows = read_eval(&dir.join("eval.csv")).expect("read eval artifact");
    rows.iter()
        .find(|r| r.split == split && r.k == k)
        .unwrap_or_else(|| panic!("no {split} HR@{k} row in eval.csv"))
        .hr
}

fn reward_curve(dir: &Path) -> Vec<f64> {
    read_metrics(&dir.join("grpo_metrics.csv"))
        .expect("read policy-optimization metrics")
        .iter()
        .filter_map(|r| r.mean_reward)
        .collect()
}

/// Trailing moving average with the given window.
fn smoothed(xs: &[f64], w: usize) -> Vec<f64> {
    if xs.len() < w {
        return Vec::new();
    }
    (w - 1..xs.len())
        .map(|i| xs[i + 1 - w..=i].iter().sum::<f64>() / w as f64)
        .collect()
}

fn non_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|p| p[1] >= p[0] - 1e-9)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn rel_err(num: f64, ana: f64) -> f64 {
    let denom = (num.abs() + ana.abs()).max(1e-8);
    (num - ana).abs() / denom
}

// ---------------------------------------------------------------------------
// Cached heavyweight runs: one world per seed, supervised then
// policy-optimized, with per-phase wall clocks.

struct BaseRun {
    sft_hr1: f64,
    grpo_hr1: f64,
    rewards: Vec<f64>,
    sft_secs: f64,
    grpo_secs: f64,
    _dir: TempDir,
}

static BASE: OnceLock<Vec<BaseRun>> = OnceLock::new();

fn base_runs() -> &'static [BaseRun] {
    BASE.get_or_init(|| SEEDS.iter().map(|&s| build_base(s)).collect())
}

fn build_base(seed: u64) -> BaseRun {
    let dir = TempDir::new().expect("scratch dir");
    let seeded = seed_set(seed);
    let seeded: Vec<&str> = seeded.iter().map(String::as_str).collect();

    let t0 = Instant::now();
    run_cli(dir.path(), "synth", &seeded, &[]);
    run_cli(dir.path(), "filter", &seeded, &[]);
    run_cli(dir.path(), "sft", &seeded, SFT_SET);
    run_cli(dir.path(), "eval", &seeded, &["--model", "sft"]);
    let sft_secs = t0.elapsed().as_secs_f64();
    let sft_hr1 = read_hr(dir.path(), "test", 1);

    let t1 = Instant::now();
    run_cli(dir.path(), "grpo", &seeded, GRPO_SET);
    run_cli(dir.path(), "eval", &seeded, &["--model", "grpo"]);
    let grpo_secs = t1.elapsed().as_secs_f64();
    let grpo_hr1 = read_hr(dir.path(), "test", 1);
    let rewards = reward_curve(dir.path());

    BaseRun {
        sft_hr1,
        grpo_hr1,
        rewards,
        sft_secs,
        grpo_secs,
        _dir: dir,
    }
}

// ---------------------------------------------------------------------------
// criterion 01 — autodiff matches central finite differences, op level and
// composed losses, relative error < 1e-5, under a minute.

/// Every inputs-to-scalar graph the op sweep uses, rebuilt fresh per call so
/// finite differences can re-evaluate it at perturbed points.
fn op_graph(inputs: &[Tensor; 6], pick_ids: &[usize], row_ids: &[usize]) -> (Tape, Value, Vec<Value>) {
    let mut tape = Tape::new();
    let vals: Vec<Value> = inputs.iter().map(|t| tape.input(t)).collect();
    let (x, w, b, g, be, m) = (vals[0], vals[1], vals[2], vals[3], vals[4], vals[5]);
    let h0 = tape.matmul(x, w).unwrap();
    let h1 = tape.add_row(h0, b).unwrap();
    let h2 = tape.layer_norm(h1, g, be).unwrap();
    let h3 = tape.gelu(h2).unwrap();
    let logp = tape.log_softmax(h3).unwrap();
    let picked = tape.select_cols(logp, pick_ids).unwrap();
    let s1 = tape.reduce_mean(picked).unwrap();
    let q = tape.softmax(h1).unwrap();
    let qm = tape.mul(q, m).unwrap();
    let qc = tape.clamp(qm, -0.4, 0.6).unwrap();
    let mn = tape.minimum(qc, m).unwrap();
    let s2 = tape.reduce_sum(mn).unwrap();
    let e = tape.scale(h2, 0.3).unwrap();
    let e = tape.exp(e).unwrap();
    let s3 = tape.reduce_mean(e).unwrap();
    let tr = tape.transpose(h3).unwrap();
    let g2 = tape.gather_rows(tr, row_ids).unwrap();
    let s4 = tape.reduce_mean(g2).unwrap();
    let d = inputs[1].cols();
    let r = inputs[0].rows();
    let sl = tape.slice_cols(h3, 0, d.min(2)).unwrap();
    let sl = tape.slice_rows(sl, 0, r.min(2)).unwrap();
    let cc = tape.concat_cols(&[sl, sl]).unwrap();
    let s5 = tape.reduce_mean(cc).unwrap();
    let d = tape.sub(s1, s3).unwrap();
    let d = tape.add_scalar(d, 0.001).unwrap();
    let s2s = tape.scale(s2, 0.11).unwrap();
    let s4s = tape.scale(s4, 0.05).unwrap();
    let s5s = tape.scale(s5, 0.03).unwrap();
    let acc = tape.add(d, s2s).unwrap();
    let acc = tape.add(acc, s4s).unwrap();
    let acc = tape.add(acc, s5s).unwrap();
    let n4 = tape.neg(s4s).unwrap();
    let loss = tape.sub(acc, n4).unwrap();
    (tape, loss, vals)
}

fn op_graph_loss(inputs: &[Tensor; 6], pick_ids: &[usize], row_ids: &[usize]) -> f64 {
    let (tape, loss, _) = op_graph(inputs, pick_ids, row_ids);
    tape.value(loss).item().unwrap()
}

/// Max relative error over every input element of the op graph at one
/// random point.
fn op_sweep_case(seed: u64, dims: (usize, usize, usize)) -> f64 {
    let (r, c, d) = dims;
    let mut state = rng::mix(seed, &[0xACCE97, r as u64, c as u64, d as u64]);
    let mut rand_tensor = |shape: &[usize]| {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| uniform(&mut state)).collect();
        Tensor::from_vec(shape, data).unwrap().with_grad()
    };
    let inputs: [Tensor; 6] = [
        rand_tensor(&[r, c]),
        rand_tensor(&[c, d]),
        rand_tensor(&[d]),
        rand_tensor(&[d]),
        rand_tensor(&[d]),
        rand_tensor(&[r, d]),
    ];
    let pick_ids: Vec<usize> = (0..r).map(|i| (i * 2 + seed as usize) % d).collect();
    let row_ids: Vec<usize> = vec![0, d - 1];

    let (tape, loss, vals) = op_graph(&inputs, &pick_ids, &row_ids);
    let grads = tape.backward(loss).unwrap();

    let h = 1e-6;
    let mut worst = 0.0f64;
    for (ti, val) in vals.iter().enumerate() {
        let ana = grads.wrt(*val).expect("input gradient").data().to_vec();
        for i in 0..inputs[ti].len() {
            let mut plus = inputs.clone();
            plus[ti].data_mut()[i] += h;
            let mut minus = inputs.clone();
            minus[ti].data_mut()[i] -= h;
            let num = (op_graph_loss(&plus, &pick_ids, &row_ids)
                - op_graph_loss(&minus, &pick_ids, &row_ids))
                / (2.0 * h);
            if num.abs() < 1e-12 && ana[i].abs() < 1e-12 {
                continue;
            }
            worst = worst.max(rel_err(num, ana[i]));
        }
    }
    worst
}

/// A tiny policy and batch for the composed-loss checks.
fn probe_model(seed: u64) -> (PolicyModel, Vec<TokenizedSample>) {
    let cfg = ModelConfig {
        dim: 16,
        layers: 2,
        heads: 2,
        max_len: 32,
        max_new: 4,
    };
    let vocab_size = 24;
    let model = PolicyModel::new(cfg, vocab_size, seed).unwrap();
    let mut state = rng::mix(seed, &[0x5F7BA7C4]);
    let batch: Vec<TokenizedSample> = (0..3)
        .map(|_| {
            let len = 10 + (rng::splitmix(&mut state) % 5) as usize;
            let tokens: Vec<usize> = (0..len)
                .map(|_| (rng::splitmix(&mut state) % vocab_size as u64) as usize)
                .collect();
            let prompt_len = 4 + (rng::splitmix(&mut state) % 3) as usize;
            TokenizedSample { tokens, prompt_len }
        })
        .collect();
    (model, batch)
}

/// Analytic gradients of the supervised loss via the tape, as the trainer
/// computes them.
fn sft_tape_grads(model: &PolicyModel, batch: &[&TokenizedSample]) -> Vec<Tensor> {
    let mut tape = Tape::new();
    let traced = model.trace(&mut tape);
    let mut per_sample = Vec::new();
    for ts in batch {
        let (logps, _) = traced
            .response_logprobs(&mut tape, &ts.tokens[..ts.prompt_len], &ts.tokens[ts.prompt_len..])
            .unwrap();
        let mean_lp = tape.reduce_mean(logps).unwrap();
        per_sample.push(tape.neg(mean_lp).unwrap());
    }
    let mut total = per_sample[0];
    for &v in &per_sample[1..] {
        total = tape.add(total, v).unwrap();
    }
    let loss = tape.scale(total, 1.0 / batch.len() as f64).unwrap();
    let grads = tape.backward(loss).unwrap();
    traced
        .param_values()
        .iter()
        .map(|&v| grads.wrt(v).expect("param gradient").clone())
        .collect()
}

/// Sample a spread of (parameter, element) probe points.
fn probe_indices(model_params: &[usize], per_param: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut state = rng::mix(seed, &[0x1D9]);
    let mut out = Vec::new();
    for (k, &len) in model_params.iter().enumerate() {
        for _ in 0..per_param.min(len) {
            out.push((k, (rng::splitmix(&mut state) % len as u64) as usize));
        }
    }
    out
}

/// The surrogate-loss fixture: prompts, responses, sampled-time
/// log-probabilities (with deliberate on-/off-ratio and clipped offsets),
/// fixed advantages, and one of each divergence-penalty flavor.
struct SurrogateFixture {
    prompts: Vec<Vec<usize>>,
    responses: Vec<Vec<usize>>,
    old_logp: Vec<Vec<f64>>,
    adv: Vec<f64>,
    ref_rows: Tensor,
    ref_logp: Vec<f64>,
}

fn surrogate_fixture(model: &PolicyModel, reference: &PolicyModel) -> SurrogateFixture {
    let mut state = rng::mix(31, &[0x6F]);
    let vocab_size = 24u64;
    let mut seqs = |n: usize| -> Vec<Vec<usize>> {
        (0..n)
            .map(|_| {
                let len = 3 + (rng::splitmix(&mut state) % 3) as usize;
                (0..len)
                    .map(|_| (rng::splitmix(&mut state) % vocab_size) as usize)
                    .collect()
            })
            .collect()
    };
    let prompts = seqs(4);
    let responses = seqs(4);
    let offsets = [0.0, -0.1, 0.3, 0.1];
    let old_logp: Vec<Vec<f64>> = (0..4)
        .map(|i| {
            model
                .response_logprobs(&prompts[i], &responses[i])
                .unwrap()
                .iter()
                .map(|lp| lp + offsets[i])
                .collect()
        })
        .collect();
    let adv = vec![0.8, -0.8, 0.5, -0.5];
    let ref_rows = reference
        .response_distributions(&prompts[0], &responses[0])
        .unwrap();
    let ref_logp = reference
        .response_logprobs(&prompts[1], &responses[1])
        .unwrap();
    SurrogateFixture {
        prompts,
        responses,
        old_logp,
        adv,
        ref_rows,
        ref_logp,
    }
}

/// Build the clipped-surrogate loss for the fixture on a fresh tape.
fn surrogate_loss_graph(model: &PolicyModel, fx: &SurrogateFixture) -> (Tape, Value, Vec<Value>) {
    let mut tape = Tape::new();
    let traced = model.trace(&mut tape);
    let mut parts = Vec::new();
    for i in 0..4 {
        let (picked, rows) = traced
            .response_logprobs(&mut tape, &fx.prompts[i], &fx.responses[i])
            .unwrap();
        let kl = match i {
            0 => Some(KlTerm::Exact {
                new_rows: rows,
                ref_rows: fx.ref_rows.clone(),
            }),
            1 => Some(KlTerm::Sampled {
                ref_logp: fx.ref_logp.clone(),
            }),
            _ => None,
        };
        parts.push(GrpoPart {
            new_logp: picked,
            old_logp: fx.old_logp[i].clone(),
            advantage: fx.adv[i],
            kl,
        });
    }
    let mut it = parts.into_iter();
    let g1: Vec<GrpoPart> = vec![it.next().unwrap(), it.next().unwrap()];
    let g2: Vec<GrpoPart> = vec![it.next().unwrap(), it.next().unwrap()];
    let (loss, _) = grpo_loss(&mut tape, &[g1, g2], 0.2, 0.05).unwrap();
    let params = traced.param_values();
    (tape, loss, params)
}

#[test]
fn criterion_01_gradient_correctness() {
    let t0 = Instant::now();
    // Op-level sweep: 5 shapes x 3 seeds through a graph that uses every op.
    let shapes = [(2, 3, 4), (1, 5, 3), (3, 2, 5), (4, 4, 3), (2, 6, 4)];
    let mut worst_ops = 0.0f64;
    for seed in 1..=3u64 {
        for &dims in &shapes {
            worst_ops = worst_ops.max(op_sweep_case(seed, dims));
        }
    }

    // Composed supervised loss: tape backward vs central differences of the
    // independent eager loss.
    let (model, batch) = probe_model(7);
    let batch_refs: Vec<&TokenizedSample> = batch.iter().collect();
    let ana = sft_tape_grads(&model, &batch_refs);
    let sizes: Vec<usize> = ana.iter().map(Tensor::len).collect();
    let mut probe = PolicyModel::new(
        ModelConfig {
            dim: 16,
            layers: 2,
            heads: 2,
            max_len: 32,
            max_new: 4,
        },
        24,
        7,
    )
    .unwrap();
    let h = 1e-5;
    let mut worst_sft = 0.0f64;
    for (k, i) in probe_indices(&sizes, 2, 41) {
        let nudge = |m: &mut PolicyModel, delta: f64| {
            m.parameters_mut()[k].data_mut()[i] += delta;
        };
        nudge(&mut probe, h);
        let f1 = sft_loss_eager(&probe, &batch_refs).unwrap();
        nudge(&mut probe, -2.0 * h);
        let f2 = sft_loss_eager(&probe, &batch_refs).unwrap();
        nudge(&mut probe, h);
        let num = (f1 - f2) / (2.0 * h);
        let a = ana[k].data()[i];
        if num.abs() < 1e-12 && a.abs() < 1e-12 {
            continue;
        }
        let e = rel_err(num, a);
        if e > 1e-6 {
            eprintln!("probe k={k} i={i} num={num:.3e} ana={a:.3e} rel={e:.3e}");
        }
        worst_sft = worst_sft.max(e);
    }

    // Composed clipped-surrogate loss with both divergence-penalty flavors:
    // tape backward vs central differences of the same graph re-evaluated.
    let reference = PolicyModel::new(
        ModelConfig {
            dim: 16,
            layers: 2,
            heads: 2,
            max_len: 32,
            max_new: 4,
        },
        24,
        11,
    )
    .unwrap();
    let fx = surrogate_fixture(&model, &reference);
    let (tape, loss, params) = surrogate_loss_graph(&model, &fx);
    let grads = tape.backward(loss).unwrap();
    let ana: Vec<Tensor> = params
        .iter()
        .map(|&v| grads.wrt(v).expect("param gradient").clone())
        .collect();
    let mut worst_grpo = 0.0f64;
    for (k, i) in probe_indices(&sizes, 2, 43) {
        let eval_at = |m: &mut PolicyModel, delta: f64| -> f64 {
            m.parameters_mut()[k].data_mut()[i] += delta;
            let (tape, loss, _) = surrogate_loss_graph(m, &fx);
            let v = tape.value(loss).item().unwrap();
            m.parameters_mut()[k].data_mut()[i] -= delta;
            v
        };
        let num = (eval_at(&mut probe, h) - eval_at(&mut probe, -h)) / (2.0 * h);
        let a = ana[k].data()[i];
        if num.abs() < 1e-12 && a.abs() < 1e-12 {
            continue;
        }
        worst_grpo = worst_grpo.max(rel_err(num, a));
    }

    let secs = t0.elapsed().as_secs_f64();
    let pass = worst_ops < 1e-5 && worst_sft < 1e-5 && worst_grpo < 1e-5 && secs < 60.0;
    println!(
        "criterion 01: {} — finite-difference relative error: ops {:.2e}, supervised loss {:.2e}, \
         surrogate loss {:.2e} (tolerance 1e-5); {:.1}s of 60s",
        verdict(pass),
        worst_ops,
        worst_sft,
        worst_grpo,
        secs
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// criterion 02 — two-action bandit: expected update equals brute-force
// enumeration over action tuples, then the hit action is learned.

/// Trainer-side gradient on the two logits for one sampled action pair.
fn bandit_grad(z: &Tensor, actions: [usize; 2], adv: &[f64], logp: &[f64; 2]) -> Vec<f64> {
    let mut tape = Tape::new();
    let zin = tape.input(z);
    let rows = tape.log_softmax(zin).unwrap();
    let group: Vec<GrpoPart> = actions
        .iter()
        .zip(adv)
        .map(|(&a, &advantage)| GrpoPart {
            new_logp: tape.select_cols(rows, &[a]).unwrap(),
            old_logp: vec![logp[a]],
            advantage,
            kl: None,
        })
        .collect();
    let (loss, _) = grpo_loss(&mut tape, &[group], 0.2, 0.0).unwrap();
    let grads = tape.backward(loss).unwrap();
    grads.wrt(zin).expect("logit gradient").data().to_vec()
}

fn softmax2(z: &Tensor) -> [f64; 2] {
    let (a, b) = (z.data()[0], z.data()[1]);
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    [ea / (ea + eb), eb / (ea + eb)]
}

#[test]
fn criterion_02_bandit_micro_oracle() {
    let t0 = Instant::now();
    let hit_action = 1usize;
    let reward = |a: usize| {
        FORMAT_REWARD
            + if a == hit_action { HIT_REWARD } else { 0.0 }
    };

    // Expected update at an asymmetric point: trainer gradient averaged over
    // all G-tuples with their probabilities vs direct enumeration of the
    // policy-gradient formula -(1/G) sum_i A_i (e_{a_i} - pi).
    let z = Tensor::from_vec(&[1, 2], vec![0.3, -0.2]).unwrap().with_grad();
    let pi = softmax2(&z);
    let logp = [pi[0].ln(), pi[1].ln()];
    let mut expected = [0.0f64; 2];
    let mut enumerated = [0.0f64; 2];
    for a1 in 0..2usize {
        for a2 in 0..2usize {
            let p = pi[a1] * pi[a2];
            let adv = advantages(&[reward(a1), reward(a2)], false);
            let g = bandit_grad(&z, [a1, a2], &adv, &logp);
            for j in 0..2 {
                expected[j] += p * g[j];
                let mut direct = 0.0;
                for (i, &a) in [a1, a2].iter().enumerate() {
                    let indicator = if a == j { 1.0 } else { 0.0 };
                    direct += adv[i] * (indicator - pi[j]);
                }
                enumerated[j] += p * (-(direct / 2.0));
            }
        }
    }
    let update_gap = (0..2)
        .map(|j| (expected[j] - enumerated[j]).abs())
        .fold(0.0f64, f64::max);

    // Learning: 500 rounds of sampled groups through the same loss, Adam on
    // the logits, hit probability above 0.9 on every seed.
    let mut all_reached = true;
    let mut finals = Vec::new();
    for seed in [5u64, 6, 7] {
        let mut z = Tensor::zeros(&[1, 2]).with_grad();
        let mut adam = AdamState::new(&[2]);
        let mut reached = false;
        for round in 0..500u64 {
            let pi = softmax2(&z);
            let mut state = rng::mix(seed, &[salt::ROLLOUT, round]);
            let actions = [
                usize::from(unit(&mut state) < pi[1]),
                usize::from(unit(&mut state) < pi[1]),
            ];
            let logp = [pi[0].ln(), pi[1].ln()];
            let adv = advantages(&[reward(actions[0]), reward(actions[1])], false);
            let mut tape = Tape::new();
            let zin = tape.input(&z);
            let rows = tape.log_softmax(zin).unwrap();
            let group: Vec<GrpoPart> = actions
                .iter()
                .zip(&adv)
                .map(|(&a, &advantage)| GrpoPart {
                    new_logp: tape.select_cols(rows, &[a]).unwrap(),
                    old_logp: vec![logp[a]],
                    advantage,
                    kl: None,
                })
                .collect();
            let (loss, _) = grpo_loss(&mut tape, &[group], 0.2, 0.0).unwrap();
            let grads = tape.backward(loss).unwrap();
            let mut params = [&mut z];
            adam.step(&mut params, &[grads.wrt(zin)], 0.05).unwrap();
            if softmax2(&z)[hit_action] > 0.9 {
                reached = true;
                break;
            }
        }
        finals.push(softmax2(&z)[hit_action]);
        all_reached &= reached;
    }

    let secs = t0.elapsed().as_secs_f64();
    let pass = update_gap < 1e-9 && all_reached && secs < 60.0;
    println!(
        "criterion 02: {} — expected-update gap {:.2e} (tolerance 1e-9); hit probability over 0.9 \
         on 3/3 seeds (reached {:?}); {:.1}s of 60s",
        verdict(pass),
        update_gap,
        finals.iter().map(|p| (p * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
        secs
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// criterion 03 — reward range is exactly {-1.0, 0.3, 1.3} over generated
// responses, and rendered targets always score the full 1.3.

#[test]
fn criterion_03_reward_algebra() {
    let mut state = rng::mix(99, &[0xC3]);
    let mut seen = [false; 3];
    let titles = ["emberfall run", "novalight", "frostgate song mark"];
    for case in 0..5000u64 {
        let id = rng::splitmix(&mut state) % 10_000;
        let title = titles[(rng::splitmix(&mut state) % 3) as usize];
        let think = " <think> the run leans one way </think>";
        let response = match case % 8 {
            0 => format!("[ITEM_{id:04}] {title}"),
            1 => format!("[ITEM_{id:04}] {title}{think}"),
            2 => format!("ITEM_{id:04}] {title}"),
            3 => format!("{title} with no tag at all"),
            4 => String::from("complete nonsense output"),
            5 => format!("[ITEM_{id:04}] [ITEM_{id:04}] {title}"),
            6 => String::new(),
            7 => format!("[ITEM_{id:04}] {title} <think> unclosed"),
            _ => unreachable!(),
        };
        let target = (rng::splitmix(&mut state) % 10_000) as u32;
        let total = score_response(&response, target, false).total;
        let expected = [MALFORMED_REWARD, FORMAT_REWARD, FORMAT_REWARD + HIT_REWARD];
        let slot = expected.iter().position(|&e| total == e);
        assert!(
            slot.is_some(),
            "reward {total} outside {{-1.0, 0.3, 1.3}} for response {response:?}"
        );
        seen[slot.unwrap()] = true;
    }

    // Rendered targets, with and without a reasoning block, always parse
    // back to a full-credit response against their own target.
    let world = generate_world(&WorldConfig::default(), 17).unwrap();
    let mut full_credit = true;
    let mut n_rendered = 0usize;
    for (i, seq) in world.sequences.iter().enumerate() {
        let (_, target) = seq.history_and_target(9).unwrap();
        let cot = (i % 2 == 0).then_some("the early picks and the late picks agree");
        let rendered = render_target(&world.catalog, target, cot).unwrap();
        full_credit &= score_response(&rendered, target, false).total
            == FORMAT_REWARD + HIT_REWARD;
        n_rendered += 1;
    }

    let pass = seen.iter().all(|&s| s) && full_credit;
    println!(
        "criterion 03: {} — 5000 generated responses all scored in {{-1.0, 0.3, 1.3}} with every \
         value attained; {} rendered targets all scored 1.3",
        verdict(pass),
        n_rendered
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// criterion 04 — hand-checked advantage arithmetic, exact retention counts
// across the full quantile grid, and the closed-form ranking metric value.

#[test]
fn criterion_04_advantage_filter_ndcg_oracles() {
    // Mean-centering against hand arithmetic.
    let adv = advantages(&[1.3, 0.3, 0.3, 1.3, -1.0], false);
    let hand = [0.86, -0.14, -0.14, 0.86, -1.44];
    for (a, h) in adv.iter().zip(hand) {
        assert!((a - h).abs() < 1e-12, "advantage {a} vs hand value {h}");
    }
    assert!(adv.iter().sum::<f64>().abs() < 1e-9);
    assert_eq!(advantages(&[1.0, 1.0, 1.0], false), vec![0.0, 0.0, 0.0]);
    let norm = advantages(&[2.0, 0.0], true);
    let expect = 1.0 / (1.0 + 1e-8);
    assert!((norm[0] - expect).abs() < 1e-12 && (norm[1] + expect).abs() < 1e-12);
    let mut state = rng::mix(4, &[0xADA]);
    let noisy: Vec<f64> = (0..17).map(|_| uniform(&mut state)).collect();
    assert!(advantages(&noisy, false).iter().sum::<f64>().abs() < 1e-9);

    // Retention count is exactly ceil(p*N) over the whole grid, and the
    // retained set is the top of the score order.
    let mut grid_ok = true;
    for n in 1..=40usize {
        for j in 1..=100usize {
            let p = j as f64 / 100.0;
            let mut scores: Vec<UserScore> = (0..n)
                .map(|i| {
                    let s = ((i * 37 + 11) % n) as f64 / n as f64;
                    UserScore {
                        user_id: i as u32,
                        s_prime: 0.0,
                        s_dprime: 0.0,
                        s,
                        retained: false,
                    }
                })
                .collect();
            quantile_filter(&mut scores, p).unwrap();
            let kept: Vec<f64> =
                scores.iter().filter(|u| u.retained).map(|u| u.s).collect();
            let expected = j * n / 100 + usize::from(j * n % 100 != 0);
            if kept.len() != expected {
                grid_ok = false;
            }
            let mut sorted: Vec<f64> = scores.iter().map(|u| u.s).collect();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let cutoff = sorted[expected - 1];
            if kept.iter().any(|&s| s < cutoff) {
                grid_ok = false;
            }
        }
    }

    // Closed-form check: a rank-3 hit inside a cutoff of 5 discounts to
    // exactly 1/log2(4) = 0.5, and the hit indicator behaves at the edges.
    let closed_form = ndcg_at(3, 5) == 0.5
        && ndcg_at(1, 5) == 1.0
        && reclab_core::eval::hr_at(3, 5) == 1.0
        && reclab_core::eval::hr_at(6, 5) == 0.0
        && ndcg_at(6, 5) == 0.0;

    let pass = grid_ok && closed_form;
    println!(
        "criterion 04: {} — centered advantages match hand arithmetic (sum-to-zero < 1e-9); \
         retention grid (N 1..=40, p 0.01..=1.00) exact; rank-3@5 discount = 0.5 exactly",
        verdict(pass)
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// criterion 05 — supervised training on the default world lifts held-out
// HR@1 over 10 candidates from the 0.10 uniform baseline to at least 0.30.

#[test]
fn criterion_05_supervised_learnability() {
    let runs = base_runs();
    let per_seed: Vec<f64> = runs.iter().map(|r| r.sft_hr1).collect();
    let hr = mean(&per_seed);
    let secs: f64 = runs.iter().map(|r| r.sft_secs).sum();
    let pass = hr >= 0.30 && secs < 600.0;
    println!(
        "criterion 05: {} — held-out HR@1 after supervised training: mean {:.4} over seeds \
         {:?} (per-seed {:?}), uniform baseline 0.10, required >= 0.30; {:.0}s of 600s",
        verdict(pass),
        hr,
        SEEDS,
        per_seed,
        secs
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// criterion 06 — policy optimization on top of the supervised checkpoint
// gains at least +0.05 held-out HR@1 on average, with a non-decreasing
// smoothed training-reward curve on at least 2 of 3 seeds.

#[test]
fn criterion_06_policy_optimization_gain() {
    let runs = base_runs();
    let gains: Vec<f64> = runs.iter().map(|r| r.grpo_hr1 - r.sft_hr1).collect();
    let gain = mean(&gains);
    let monotone = runs
        .iter()
        .filter(|r| non_decreasing(&smoothed(&r.rewards, 20)))
        .count();
    let secs: f64 = runs.iter().map(|r| r.grpo_secs).sum();
    let pass = gain >= 0.05 && monotone >= 2 && secs < 1200.0;
    println!(
        "criterion 06: {} — held-out HR@1 gain over the supervised checkpoint: mean {:+.4} \
         (per-seed {:?}), required >= +0.05; smoothed reward non-decreasing on {}/3 seeds \
         (need 2); {:.0}s of 1200s",
        verdict(pass),
        gain,
        gains.iter().map(|g| (g * 10_000.0).round() / 10_000.0).collect::<Vec<_>>(),
        monotone,
        secs
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// criterion 07 — training on 100% unsanitized leaky reasoning inflates the
// final training reward while losing held-out HR@1, with no overlap across
// seeds against the filtered-and-sanitized mix.

struct ArmOutcome {
    final_reward: f64,
    test_hr1: f64,
}

fn leak_arm(seed: u64, leaky: bool) -> ArmOutcome {
    let dir = TempDir::new().expect("scratch dir");
    let mut set: Vec<String> = vec![
        "--set".into(),
        format!("run.seed={seed}"),
        "--set".into(),
        "world.leaky_cot_fraction=1.0".into(),
        "--set".into(),
        "run.learning_rate=7e-4".into(),
        "--set".into(),
        "sft.steps=1200".into(),
        "--set".into(),
        "sft.log_every=100".into(),
    ];
    if leaky {
        for kv in [
            "datagen.sanitize=false",
            "run.retention_sft=1.0",
            "run.retention_grpo=1.0",
        ] {
            set.push("--set".into());
            set.push(kv.into());
        }
    }
    let set: Vec<&str> = set.iter().map(String::as_str).collect();
    run_cli(dir.path(), "synth", &set, &[]);
    run_cli(dir.path(), "filter", &set, &[]);
    run_cli(dir.path(), "sft", &set, &[]);
    run_cli(
        dir.path(),
        "grpo",
        &set,
        &["--set", "run.learning_rate=1e-4", "--set", "grpo.rounds=100"],
    );
    run_cli(dir.path(), "eval", &set, &["--model", "grpo"]);
    let rewards = reward_curve(dir.path());
    let tail = &rewards[rewards.len().saturating_sub(20)..];
    ArmOutcome {
        final_reward: mean(tail),
        test_hr1: read_hr(dir.path(), "test", 1),
    }
}

#[test]
fn criterion_07_reward_inflation_from_leaky_reasoning() {
    let t0 = Instant::now();
    let leaky: Vec<ArmOutcome> = SEEDS.iter().map(|&s| leak_arm(s, true)).collect();
    let mixed: Vec<ArmOutcome> = SEEDS.iter().map(|&s| leak_arm(s, false)).collect();

    let leaky_reward_min = leaky.iter().map(|a| a.final_reward).fold(f64::MAX, f64::min);
    let mixed_reward_max = mixed.iter().map(|a| a.final_reward).fold(f64::MIN, f64::max);
    let leaky_hr_max = leaky.iter().map(|a| a.test_hr1).fold(f64::MIN, f64::max);
    let mixed_hr_min = mixed.iter().map(|a| a.test_hr1).fold(f64::MAX, f64::min);

    let secs = t0.elapsed().as_secs_f64();
    let reward_inflated = leaky_reward_min > mixed_reward_max;
    let hr_degraded = leaky_hr_max < mixed_hr_min;
    let pass = reward_inflated && hr_degraded && secs < 1800.0;
    println!(
        "criterion 07: {} — final training reward: leaky min {:.4} vs mixed max {:.4} \
         (need leaky strictly above); held-out HR@1: leaky max {:.4} vs mixed min {:.4} \
         (need leaky strictly below); leaky rewards {:?}, mixed rewards {:?}, leaky HR {:?}, \
         mixed HR {:?}; {:.0}s of 1800s",
        verdict(pass),
        leaky_reward_min,
        mixed_reward_max,
        leaky_hr_max,
        mixed_hr_min,
        leaky.iter().map(|a| (a.final_reward * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
        mixed.iter().map(|a| (a.final_reward * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
        leaky.iter().map(|a| a.test_hr1).collect::<Vec<_>>(),
        mixed.iter().map(|a| a.test_hr1).collect::<Vec<_>>(),
        secs
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// criterion 08 — consistency filtering on a half-noisy world keeps >= 80%
// clean-caption users at p = 0.1.

#[test]
fn criterion_08_filtering_efficacy() {
    let dir = TempDir::new().expect("scratch dir");
    let set = [
        "--set",
        "run.seed=17",
        "--set",
        "world.noisy_user_fraction=0.5",
        "--set",
        "world.noisy_eta=0.8",
    ];
    run_cli(dir.path(), "synth", &set, &[]);
    run_cli(dir.path(), "filter", &set, &["--p", "0.1"]);
    let scores = read_scores(&dir.path().join("scores.csv")).unwrap();
    let (user_labels, _) = load_labels(&dir.path().join("labels.jsonl")).unwrap();
    let clean: std::collections::HashMap<u32, bool> = user_labels
        .iter()
        .map(|u| (u.user_id, u.clean_captions))
        .collect();
    let retained: Vec<u32> = scores
        .iter()
        .filter(|s| s.retained)
        .map(|s| s.user_id)
        .collect();
    let n_clean = retained.iter().filter(|u| clean[u]).count();
    let fraction = n_clean as f64 / retained.len() as f64;
    let pass = fraction >= 0.80;
    println!(
        "criterion 08: {} — retention at p=0.1 on a half-noisy world kept {}/{} clean-caption \
         users ({:.0}%), required >= 80%",
        verdict(pass),
        n_clean,
        retained.len(),
        fraction * 100.0
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// criterion 09 — stress ranking: the optimized checkpoint re-evaluated
// against 99 sampled negatives (no retraining) stays above the 0.10 uniform
// baseline at HR@10 but below its own 10-candidate HR@5.

#[test]
fn criterion_09_stress_ranking_protocol() {
    let t0 = Instant::now();
    let dir = TempDir::new().expect("scratch dir");
    let set = [
        "--set",
        "run.seed=17",
        "--set",
        "world.n_items=150",
        "--set",
        "model.max_len=1024",
    ];
    run_cli(dir.path(), "synth", &set, &[]);
    run_cli(dir.path(), "filter", &set, &[]);
    run_cli(dir.path(), "sft", &set, SFT_SET);
    run_cli(dir.path(), "grpo", &set, GRPO_SET);
    run_cli(dir.path(), "eval", &set, &["--model", "grpo", "--set", "eval.ks=[5]"]);
    let hr5_narrow = read_hr(dir.path(), "test", 5);
    run_cli(
        dir.path(),
        "eval",
        &set,
        &[
            "--model",
            "grpo",
            "--set",
            "run.candidates_k=99",
            "--set",
            "eval.ks=[10]",
        ],
    );
    let hr10_wide = read_hr(dir.path(), "test", 10);
    let secs = t0.elapsed().as_secs_f64();
    let pass = hr10_wide > 0.10 && hr10_wide < hr5_narrow;
    println!(
        "criterion 09: {} — HR@10 under 99 negatives {:.4} (must beat uniform 0.10) vs \
         10-candidate HR@5 {:.4} (must stay below); {:.0}s",
        verdict(pass),
        hr10_wide,
        hr5_narrow,
        secs
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// criterion 10 — identical config and seed reproduce byte-identical
// artifacts, and a checkpoint survives a load/save round trip bit-exactly.

const COMPARED_ARTIFACTS: &[&str] = &[
    "catalog.jsonl",
    "sequences.jsonl",
    "labels.jsonl",
    "records.jsonl",
    "scores.csv",
    "samples.jsonl",
    "vocab.txt",
    "model_sft.ckpt",
    "model_grpo.ckpt",
    "sft_metrics.csv",
    "grpo_metrics.csv",
    "eval.csv",
];

fn tiny_pipeline(dir: &Path) {
    let set = [
        "--set",
        "run.seed=23",
        "--set",
        "run.learning_rate=7e-4",
        "--set",
        "sft.steps=25",
        "--set",
        "sft.batch_size=4",
        "--set",
        "sft.log_every=5",
        "--set",
        "grpo.rounds=2",
        "--set",
        "grpo.prompts_per_round=4",
        "--set",
        "model.max_new=24",
    ];
    run_cli(dir, "synth", &set, &[]);
    run_cli(dir, "filter", &set, &[]);
    run_cli(dir, "sft", &set, &[]);
    run_cli(dir, "grpo", &set, &[]);
    run_cli(dir, "eval", &set, &[]);
}

#[test]
fn criterion_10_determinism_and_formats() {
    let a = TempDir::new().expect("scratch dir");
    let b = TempDir::new().expect("scratch dir");
    tiny_pipeline(a.path());
    tiny_pipeline(b.path());

    let mut mismatched: Vec<&str> = Vec::new();
    for name in COMPARED_ARTIFACTS {
        let ba = std::fs::read(a.path().join(name)).unwrap_or_else(|_| panic!("missing {name}"));
        let bb = std::fs::read(b.path().join(name)).unwrap_or_else(|_| panic!("missing {name}"));
        if ba != bb {
            mismatched.push(name);
        }
    }
    // The config snapshot differs only by its write-time header line.
    let strip = |p: PathBuf| -> String {
        std::fs::read_to_string(p)
            .expect("config snapshot")
            .lines()
            .filter(|l| !l.starts_with("# generated_at"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    if strip(a.path().join("config.toml")) != strip(b.path().join("config.toml")) {
        mismatched.push("config.toml");
    }

    let original = std::fs::read(a.path().join("model_sft.ckpt")).unwrap();
    let reloaded = PolicyModel::load(&a.path().join("model_sft.ckpt")).unwrap();
    let rt = a.path().join("roundtrip.ckpt");
    reloaded.save(&rt).unwrap();
    let rewritten = std::fs::read(&rt).unwrap();
    let roundtrip_exact = original == rewritten;

    let pass = mismatched.is_empty() && roundtrip_exact;
    println!(
        "criterion 10: {} — {} artifacts byte-identical across an identical re-run \
         (mismatches: {:?}); checkpoint load/save round trip bit-exact: {}",
        verdict(pass),
        COMPARED_ARTIFACTS.len() + 1,
        mismatched,
        roundtrip_exact
    );
    assert!(pass);
}
