//! Acceptance checks, one PASS/FAIL line per criterion. Run with
//! `cargo test -p diarize-cli --test acceptance`; pass criterion numbers
//! (e.g. `-- 3 9`) to run a subset.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::f64::consts::TAU;
use std::fs::{self, File};
use std::io::BufReader;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use diarize_cli::commands::{cmd_embed, cmd_synth, cmd_train, EmbedArgs, Globals, SynthArgs, TrainArgs};
use diarize_cli::embeddings::read_embeddings;
use diarize_cli::manifest::Manifest;
use diarize_cli::RunConfig;
use diarize_core::autodiff::gradcheck::{central_difference, relative_error};
use diarize_core::autodiff::{Tape, Tensor, Var};
use diarize_core::checkpoint::Checkpoint;
use diarize_core::clustering::{KMeans, XMeans};
use diarize_core::dsp::{frame_count, frame_signal, read_feature_cache, FeatureConfig};
use diarize_core::encoder::{EncoderConfig, EncoderModel};
use diarize_core::metrics::{der, nmi, purity, rttm, Annotation, LabelPair};
use diarize_core::trainer::{hinge_mean, mine_semi_hard, pairwise_sq_distances, sample_batch, triplet_loss, Trainer, Triple};
use diarize_core::{Audio, FeatureExtractor, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tempfile::TempDir;

type Outcome = Result<String, String>;

fn ensure(ok: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(message())
    }
}

// ---------------------------------------------------------------- 1

type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Var;

/// `sum(op(inputs) ⊙ probe)` and, optionally, its gradient per input.
fn probe_loss(shapes: &[Vec<usize>], values: &[Vec<f64>], probe: &[f64], build: &Build, grads: bool) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = shapes
        .iter()
        .zip(values)
        .map(|(s, v)| tape.leaf(Tensor::new(s.clone(), v.clone()).unwrap().with_requires_grad(true)))
        .collect();
    let out = build(&mut tape, &vars);
    let p = tape.constant(Tensor::new(tape.shape(out).to_vec(), probe.to_vec()).unwrap());
    let weighted = tape.mul(out, p).unwrap();
    let loss = tape.sum(weighted);
    let value = tape.value(loss).values()[0];
    if !grads {
        return (value, Vec::new());
    }
    tape.backward(loss).unwrap();
    let g = vars.iter().map(|&v| tape.grad(v).map_or_else(|| vec![0.0; tape.value(v).len()], <[f64]>::to_vec)).collect();
    (value, g)
}

fn primitive_error(shapes: &[Vec<usize>], seed: u64, lo: f64, hi: f64, build: &Build) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<Vec<f64>> = shapes.iter().map(|s| (0..s.iter().product()).map(|_| rng.random_range(lo..hi)).collect()).collect();
    let out_len = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = shapes.iter().zip(&values).map(|(s, v)| tape.leaf(Tensor::new(s.clone(), v.clone()).unwrap())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).len()
    };
    let probe: Vec<f64> = (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, analytic) = probe_loss(shapes, &values, &probe, build, true);
    (0..shapes.len())
        .map(|k| {
            let mut f = |x: &[f64]| {
                let mut vals = values.clone();
                vals[k] = x.to_vec();
                probe_loss(shapes, &vals, &probe, build, false).0
            };
            relative_error(&analytic[k], &central_difference(&mut f, &values[k], 1e-5))
        })
        .fold(0.0, f64::max)
}

fn signed_relu(t: &mut Tape<f64>, v: &[Var]) -> Var {
    // magnitudes in [0.1, 1) with fixed signs keep inputs off the kink
    let signs = t.constant(Tensor::new(vec![4, 5], (0..20).map(|i| if i % 3 == 0 { -1.0 } else { 1.0 }).collect()).unwrap());
    let x = t.mul(v[0], signs).unwrap();
    t.relu(x)
}

fn criterion_gradients() -> Outcome {
    let m34 = vec![3, 4];
    #[allow(clippy::type_complexity)]
    let cases: Vec<(&str, Vec<Vec<usize>>, f64, f64, f64, Box<Build>)> = vec![
        ("matmul", vec![vec![3, 4], vec![4, 5]], -1.0, 1.0, 1e-6, Box::new(|t, v| t.matmul(v[0], v[1]).unwrap())),
        ("transpose", vec![m34.clone()], -1.0, 1.0, 1e-6, Box::new(|t, v| t.transpose(v[0]).unwrap())),
        ("add", vec![m34.clone(), m34.clone()], -1.0, 1.0, 1e-6, Box::new(|t, v| t.add(v[0], v[1]).unwrap())),
        ("sub", vec![m34.clone(), m34.clone()], -1.0, 1.0, 1e-6, Box::new(|t, v| t.sub(v[0], v[1]).unwrap())),
        ("mul", vec![m34.clone(), m34.clone()], -1.0, 1.0, 1e-6, Box::new(|t, v| t.mul(v[0], v[1]).unwrap())),
        ("scale", vec![m34.clone()], -1.0, 1.0, 1e-6, Box::new(|t, v| t.scale(v[0], -1.7))),
        ("add_scalar", vec![m34.clone()], -1.0, 1.0, 1e-6, Box::new(|t, v| t.add_scalar(v[0], 0.3))),
        ("add_row_bias", vec![m34.clone(), vec![4]], -1.0, 1.0, 1e-6, Box::new(|t, v| t.add_row_bias(v[0], v[1]).unwrap())),
        ("conv1d_k1", vec![vec![5, 3], vec![3, 4], vec![4]], -1.0, 1.0, 1e-6, Box::new(|t, v| t.conv1d_k1(v[0], v[1], v[2]).unwrap())),
        ("relu", vec![vec![4, 5]], 0.1, 1.0, 1e-4, Box::new(signed_relu)),
        ("softmax rows", vec![vec![4, 6]], -2.0, 2.0, 1e-6, Box::new(|t, v| t.softmax(v[0], 1).unwrap())),
        ("softmax cols", vec![vec![4, 6]], -2.0, 2.0, 1e-6, Box::new(|t, v| t.softmax(v[0], 0).unwrap())),
        ("mean over time", vec![vec![5, 3]], -1.0, 1.0, 1e-6, Box::new(|t, v| t.mean_axis(v[0], 0).unwrap())),
        ("mean over features", vec![vec![5, 3]], -1.0, 1.0, 1e-6, Box::new(|t, v| t.mean_axis(v[0], 1).unwrap())),
        ("sum", vec![vec![5, 3]], -1.0, 1.0, 1e-6, Box::new(|t, v| t.sum(v[0]))),
        ("concat", vec![vec![3, 2], vec![3, 4], vec![3, 1]], -1.0, 1.0, 1e-6, Box::new(|t, v| t.concat_cols(v).unwrap())),
        ("layer_norm", vec![vec![4, 6], vec![6], vec![6]], -1.0, 1.0, 1e-6, Box::new(|t, v| t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap())),
        ("row lookup", vec![vec![4, 3]], -1.0, 1.0, 1e-6, Box::new(|t, v| t.gather_rows(v[0], &[3, 0, 3, 1]).unwrap())),
        ("sq distance", vec![m34.clone(), m34], -1.0, 1.0, 1e-6, Box::new(|t, v| t.row_sq_dist(v[0], v[1]).unwrap())),
    ];
    let mut worst_smooth = 0.0f64;
    for (name, shapes, lo, hi, tol, build) in &cases {
        for seed in 0..20 {
            let err = primitive_error(shapes, seed, *lo, *hi, build.as_ref());
            ensure(err <= *tol, || format!("{name} seed {seed}: relative error {err:e} > {tol:e}"))?;
            if *tol < 1e-4 {
                worst_smooth = worst_smooth.max(err);
            }
        }
    }

    let tiny = EncoderConfig { input_dim: 3, hidden_dim: 8, num_heads: 2, num_layers: 1, max_positions: 8, ..EncoderConfig::default() };
    let mut worst_encoder = 0.0f64;
    for seed in 0..20 {
        let model = EncoderModel::<f64>::init(tiny.clone(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut random = |r: usize, c: usize| Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let segments = [random(4, 3), random(4, 3)];
        let upstream = random(2, 8);
        let refs: Vec<&Matrix<f64>> = segments.iter().collect();
        let analytic = model.embedding_gradients(&refs, &upstream).unwrap();
        for (idx, p) in model.params().iter().enumerate().filter(|(_, p)| p.trainable) {
            let mut f = |x: &[f64]| {
                let mut probe = model.clone();
                probe.params_mut().get_mut(idx).tensor.values_mut().copy_from_slice(x);
                let e = probe.embed_batch(&refs).unwrap();
                e.as_slice().iter().zip(upstream.as_slice()).map(|(a, b)| a * b).sum()
            };
            let err = relative_error(&analytic[idx], &central_difference(&mut f, p.tensor.values(), 1e-5));
            ensure(err <= 1e-4, || format!("encoder seed {seed} {}: relative error {err:e}", p.name))?;
            worst_encoder = worst_encoder.max(err);
        }
    }
    Ok(format!("{} primitives x 20 seeds, worst smooth {worst_smooth:.1e}; tiny encoder worst {worst_encoder:.1e}", cases.len()))
}

// ---------------------------------------------------------------- 2

/// Every (anchor, positive, negative) combination, filtered by the rule.
fn mining_oracle(d: &[Vec<f64>], labels: &[usize], margin: f64) -> BTreeSet<Triple> {
    let n = labels.len();
    let mut out = BTreeSet::new();
    for a in 0..n {
        for p in 0..n {
            if a == p || labels[a] != labels[p] {
                continue;
            }
            let dp = d[a][p];
            let mut band: Vec<(f64, usize)> = Vec::new();
            let mut beyond: Vec<(f64, usize)> = Vec::new();
            for m in 0..n {
                if labels[m] == labels[a] {
                    continue;
                }
                let dn = d[a][m];
                if dp <= dn && dn <= dp + margin {
                    band.push((dn, m));
                }
                if dn > dp {
                    beyond.push((dn, m));
                }
            }
            let lowest = |v: &[(f64, usize)]| v.iter().copied().min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            if let Some((_, m)) = lowest(&band) {
                out.insert(Triple { anchor: a, positive: p, negative: m, semi_hard: true });
            } else if let Some((_, m)) = lowest(&beyond) {
                out.insert(Triple { anchor: a, positive: p, negative: m, semi_hard: false });
            }
        }
    }
    out
}

fn criterion_mining() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut triples, mut in_band) = (0, 0);
    for seed in 0..100 {
        let b = rng.random_range(2..=32);
        let speakers = rng.random_range(1..=6);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..speakers)).collect();
        let dim = rng.random_range(1..=4);
        let mut e: Vec<Vec<f64>> = (0..b).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        if seed % 4 == 0 && b > 3 {
            // duplicated rows create distance ties
            e[1] = e[0].clone();
            e[3] = e[2].clone();
        }
        let naive: Vec<Vec<f64>> = e.iter().map(|x| e.iter().map(|y| x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()).collect()).collect();
        let m = Matrix::from_rows(&e).unwrap();
        let d = pairwise_sq_distances(&m);
        for i in 0..b {
            for j in 0..b {
                ensure((d.get(i, j) - naive[i][j]).abs() <= 1e-12, || format!("seed {seed}: distance ({i},{j}) differs"))?;
            }
        }
        let margin = [0.4, 0.8, 1.6][seed % 3];
        let exact = Matrix::from_rows(&naive).unwrap();
        let got: Vec<Triple> = mine_semi_hard(&exact, &labels, margin);
        let got_set: BTreeSet<Triple> = got.iter().copied().collect();
        ensure(got_set.len() == got.len(), || format!("seed {seed}: duplicate triples"))?;
        let want = mining_oracle(&naive, &labels, margin);
        ensure(got_set == want, || format!("seed {seed}: B={b}, {} mined vs {} enumerated", got_set.len(), want.len()))?;
        triples += want.len();
        in_band += want.iter().filter(|t| t.semi_hard).count();
    }
    Ok(format!("100 batches, {triples} triples ({in_band} in band) identical to enumeration"))
}

// ---------------------------------------------------------------- 3

fn hinge(dp: f64, dn: f64, margin: f64) -> f64 {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::vector(vec![dp]));
    let b = tape.leaf(Tensor::vector(vec![dn]));
    let l = hinge_mean(&mut tape, a, b, margin).unwrap();
    tape.value(l).values()[0]
}

fn criterion_loss() -> Outcome {
    let table = [(1.0, 1.0, 0.8, 0.8), (1.0, 1.8, 0.8, 0.0), (1.0, 1.2, 0.8, 0.6)];
    let mut shown = Vec::new();
    for (dp, dn, margin, tabulated) in table {
        let got = hinge(dp, dn, margin);
        let by_hand = f64::max(0.0, dp - dn + margin);
        ensure(got.to_bits() == by_hand.to_bits(), || format!("dp {dp} dn {dn}: {got:?} != hand value {by_hand:?}"))?;
        ensure((got - tabulated).abs() <= f64::EPSILON, || format!("dp {dp} dn {dn}: {got} vs tabulated {tabulated}"))?;
        shown.push(format!("{got:?}"));
    }
    // the same values through embeddings: D_rp² = D_rn² = 25, then D_rn² = D_rp² + α
    let e = Matrix::from_rows(&[[0.0, 0.0], [3.0, 4.0], [0.0, 5.0], [0.0, 5.5]]).unwrap();
    let triples = [
        Triple { anchor: 0, positive: 1, negative: 2, semi_hard: true },
        Triple { anchor: 0, positive: 1, negative: 3, semi_hard: true },
    ];
    let mut tape = Tape::new();
    let v = tape.leaf(Tensor::from_matrix(&e));
    let one = triplet_loss(&mut tape, v, &triples[..1], 0.8).unwrap();
    let other = triplet_loss(&mut tape, v, &triples[1..], 5.25).unwrap();
    let empty = triplet_loss(&mut tape, v, &[], 0.8).unwrap();
    let (one, other, empty) = (tape.value(one).values()[0], tape.value(other).values()[0], tape.value(empty).values()[0]);
    ensure(one == 0.8 && other == 0.0 && empty == 0.0, || format!("embedding losses {one} {other} {empty}"))?;
    Ok(format!("tabulated cases give {}", shown.join(", ")))
}

// ---------------------------------------------------------------- 4

fn entropy(counts: &HashMap<usize, usize>, n: f64) -> f64 {
    counts.values().map(|&c| c as f64 / n).map(|p| -p * p.ln()).sum()
}

fn nmi_purity_oracle(p: &[usize], t: &[usize]) -> (f64, f64) {
    let n = p.len() as f64;
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let (mut pc, mut tc) = (HashMap::new(), HashMap::new());
    for (&a, &b) in p.iter().zip(t) {
        *joint.entry((a, b)).or_insert(0) += 1;
        *pc.entry(a).or_insert(0) += 1;
        *tc.entry(b).or_insert(0) += 1;
    }
    let mi: f64 = joint.iter().map(|(&(a, b), &c)| c as f64 / n * (c as f64 * n / (pc[&a] * tc[&b]) as f64).ln()).sum();
    let denom = (entropy(&pc, n) + entropy(&tc, n)) / 2.0;
    let nmi = if denom == 0.0 { 1.0 } else { mi / denom };
    let majority: usize = pc.keys().map(|&a| tc.keys().map(|&b| joint.get(&(a, b)).copied().unwrap_or(0)).max().unwrap()).sum();
    (nmi, majority as f64 / n)
}

type Turns = Vec<(i64, i64, usize)>;

/// DER on a 1 ms grid, maximizing over every injective speaker mapping.
fn der_oracle(reference: &Turns, hypothesis: &Turns, collar: i64, skip_overlap: bool) -> Option<f64> {
    let horizon = reference.iter().chain(hypothesis).map(|t| t.1).max().unwrap() + collar + 1;
    let nr = reference.iter().map(|t| t.2).max().unwrap() + 1;
    let nh = hypothesis.iter().map(|t| t.2).max().map_or(0, |m| m + 1);
    let active = |turns: &Turns, k: usize, ms: i64| turns.iter().any(|&(s, e, spk)| spk == k && s <= ms && ms < e);
    let mut co = vec![vec![0usize; nh]; nr];
    let (mut worst_case, mut total) = (0usize, 0usize);
    for ms in 0..horizon {
        let r: Vec<bool> = (0..nr).map(|k| active(reference, k, ms)).collect();
        let h: Vec<bool> = (0..nh).map(|k| active(hypothesis, k, ms)).collect();
        let n_ref = r.iter().filter(|&&a| a).count();
        let near = reference.iter().any(|&(s, e, _)| (s - collar <= ms && ms < s + collar) || (e - collar <= ms && ms < e + collar));
        if n_ref == 0 || near || (skip_overlap && n_ref >= 2) {
            continue;
        }
        total += n_ref;
        worst_case += n_ref.max(h.iter().filter(|&&a| a).count());
        for i in (0..nr).filter(|&i| r[i]) {
            for j in (0..nh).filter(|&j| h[j]) {
                co[i][j] += 1;
            }
        }
    }
    if total == 0 {
        return None;
    }
    fn best(co: &[Vec<usize>], row: usize, used: &mut Vec<bool>) -> usize {
        if row == co.len() {
            return 0;
        }
        let mut top = best(co, row + 1, used);
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                top = top.max(co[row][j] + best(co, row + 1, used));
                used[j] = false;
            }
        }
        top
    }
    let matched = best(&co, 0, &mut vec![false; nh]);
    Some((worst_case - matched) as f64 / total as f64)
}

fn annotation(turns: &Turns, prefix: &str) -> Annotation {
    turns.iter().fold(Annotation::new("u"), |a, &(s, e, k)| a.with(s as f64 / 1000.0, e as f64 / 1000.0, format!("{prefix}{k}")).unwrap())
}

fn check_der(name: &str, reference: &Turns, hypothesis: &Turns, collar: i64, skip: bool) -> Result<Option<f64>, String> {
    let want = der_oracle(reference, hypothesis, collar, skip);
    match (der(&annotation(reference, "r"), &annotation(hypothesis, "h"), collar as f64 / 1000.0, skip), want) {
        (Ok(got), Some(w)) => {
            ensure((got.der() - w).abs() <= 1e-9, || format!("{name}: der {} vs oracle {w}", got.der()))?;
            Ok(Some(w))
        }
        (Err(_), None) => Ok(None),
        (got, want) => Err(format!("{name}: scorer {got:?}, oracle {want:?}")),
    }
}

fn criterion_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..1000 {
        let n = rng.random_range(1..=60);
        let (kp, kt) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let p: Vec<usize> = (0..n).map(|_| rng.random_range(0..kp)).collect();
        let t: Vec<usize> = (0..n).map(|_| rng.random_range(0..kt)).collect();
        let pair = LabelPair::new(&p, &t).unwrap();
        let (want_nmi, want_purity) = nmi_purity_oracle(&p, &t);
        let (got_nmi, got_purity) = (nmi(&pair), purity(&pair));
        ensure((got_nmi - want_nmi).abs() <= 1e-9 && (got_purity - want_purity).abs() <= 1e-9, || {
            format!("labeling {case}: nmi {got_nmi} vs {want_nmi}, purity {got_purity} vs {want_purity}")
        })?;
    }

    let twenty = check_der("20% confusion", &vec![(0, 10000, 0)], &vec![(0, 8000, 0), (8000, 10000, 1)], 0, false)?;
    ensure(twenty.is_some_and(|d| (d - 0.2).abs() <= 1e-9), || format!("20% case gave {twenty:?}"))?;
    let swapped = check_der("20% swapped", &vec![(0, 10000, 0)], &vec![(0, 8000, 1), (8000, 10000, 0)], 0, false)?;
    ensure(swapped == twenty, || "relabeled hypothesis changed the score".into())?;
    // a 200 ms late boundary costs 0.2 s without collar and nothing inside a 250 ms collar
    let reference: Turns = vec![(0, 5000, 0), (5000, 10000, 1)];
    let late: Turns = vec![(0, 5200, 0), (5200, 10000, 1)];
    let none = check_der("late boundary, no collar", &reference, &late, 0, true)?;
    ensure(none.is_some_and(|d| (d - 0.02).abs() <= 1e-9), || format!("late boundary gave {none:?}"))?;
    let collared = check_der("late boundary, collar", &reference, &late, 250, true)?;
    ensure(collared == Some(0.0), || format!("collared late boundary gave {collared:?}"))?;
    let overlap: Turns = vec![(0, 6000, 0), (4000, 10000, 1)];
    for skip in [false, true] {
        check_der("overlap", &overlap, &vec![(0, 10000, 0)], 100, skip)?;
    }

    let mut scored = 0;
    for case in 0..150 {
        let (nr, nh) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let turns = |count: usize, k: usize, rng: &mut ChaCha8Rng| -> Turns {
            (0..count)
                .map(|_| {
                    let s = rng.random_range(0..4000) as i64;
                    (s, s + rng.random_range(100..1500) as i64, rng.random_range(0..k))
                })
                .collect()
        };
        let mut reference = turns(rng.random_range(1..8), nr, &mut rng);
        for k in 0..nr {
            let s = rng.random_range(0..4000) as i64;
            reference.push((s, s + 400, k));
        }
        let hypothesis = turns(rng.random_range(1..9), nh, &mut rng);
        if check_der(&format!("random case {case}"), &reference, &hypothesis, [0, 50, 250][case % 3], case % 2 == 0)?.is_some() {
            scored += 1;
        }
    }
    Ok(format!("1000 labelings; DER named cases + {scored}/150 random cases (up to 6x6 speakers) match the oracle"))
}

// ---------------------------------------------------------------- 5

fn blobs(centers: &[Vec<f64>], per: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    let noise = Normal::new(0.0, sigma).unwrap();
    let rows: Vec<Vec<f64>> = centers.iter().flat_map(|c| (0..per).map(|_| c.iter().map(|&x| x + noise.sample(rng)).collect::<Vec<_>>()).collect::<Vec<_>>()).collect();
    Matrix::from_rows(&rows).unwrap()
}

/// `k` centres in the plane, pairwise at least `separation` apart.
fn spread_centers(k: usize, separation: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    while out.len() < k {
        let c = vec![rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)];
        if out.iter().all(|o| ((o[0] - c[0]).powi(2) + (o[1] - c[1]).powi(2)).sqrt() >= separation) {
            out.push(c);
        }
    }
    out
}

fn criterion_clustering() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..100 {
        let (n, dim, k) = (rng.random_range(10..200), rng.random_range(1..6), rng.random_range(1..8));
        let points = Matrix::from_vec(n, dim, (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let fit = KMeans::new(k).seed(seed).n_init(1).fit(&points).unwrap();
        let h = &fit.inertia_history;
        ensure(h.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), || format!("dataset {seed}: inertia rose: {h:?}"))?;
    }
    let mut summary = Vec::new();
    for k in 2..=5 {
        let mut hits = 0;
        for run in 0..50u64 {
            let centers = spread_centers(k, 10.0, &mut rng);
            let points = blobs(&centers, 40, 1.0, &mut rng);
            let est = XMeans::new(2, 10).seed(run).fit(&points).map_err(|e| e.to_string())?.estimated_k;
            ensure(est >= 2, || format!("k={k} run {run}: estimated {est}"))?;
            hits += usize::from(est == k);
        }
        ensure(hits >= 45, || format!("k={k}: {hits}/50 runs recovered k"))?;
        summary.push(format!("k={k} {hits}/50"));
    }
    for run in 0..50u64 {
        let points = blobs(&[vec![0.0, 0.0]], 60, 1.0, &mut rng);
        let est = XMeans::new(2, 10).seed(run).fit(&points).map_err(|e| e.to_string())?.estimated_k;
        ensure(est >= 2, || format!("single blob run {run}: estimated {est}"))?;
    }
    Ok(format!("lloyd monotone on 100 datasets; x-means {}; never below 2", summary.join(", ")))
}

// ---------------------------------------------------------------- 6

fn g(config: Option<&Path>, out: &Path, seed: u64) -> Globals {
    Globals { config: config.map(Path::to_path_buf), seed: Some(seed), out: Some(out.to_path_buf()) }
}

/// Splits a labeled manifest into the first `train_per` regions of every
/// speaker and the rest.
fn split_manifest(path: &Path, train_per: usize) -> (PathBuf, PathBuf) {
    let manifest = Manifest::load(path).unwrap();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let (mut train, mut held) = (Manifest::default(), Manifest::default());
    for e in manifest.entries {
        let count = seen.entry(e.speaker_id.clone().unwrap()).or_insert(0);
        *count += 1;
        if *count <= train_per { train.entries.push(e) } else { held.entries.push(e) }
    }
    let dir = path.parent().unwrap();
    let (a, b) = (dir.join("train.jsonl"), dir.join("heldout.jsonl"));
    fs::write(&a, train.to_jsonl()).unwrap();
    fs::write(&b, held.to_jsonl()).unwrap();
    (a, b)
}

fn heldout_scores(checkpoint: &Path, manifest: &Path, out: &Path) -> Result<(f64, f64, usize), String> {
    cmd_embed(&g(None, out, 0), &EmbedArgs { manifest: manifest.into(), checkpoint: checkpoint.into() }).map_err(|e| e.to_string())?;
    let records = read_embeddings(&mut BufReader::new(File::open(out.join("embeddings.bin")).unwrap())).unwrap();
    let rows: Vec<Vec<f64>> = records.iter().map(|r| r.vector.iter().map(|&v| f64::from(v)).collect()).collect();
    let truth: Vec<&str> = records.iter().map(|r| r.recording_id.as_str()).collect();
    let clusters = KMeans::new(8).seed(0).n_init(4).fit(&Matrix::from_rows(&rows).unwrap()).map_err(|e| e.to_string())?;
    let pair = LabelPair::new(&clusters.assignments, &truth).unwrap();
    Ok((nmi(&pair), purity(&pair), records.len()))
}

fn criterion_end_to_end() -> Outcome {
    let started = Instant::now();
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("corpus");
    cmd_synth(&g(None, &data, 7), &SynthArgs { speakers: 8, segments: 40, conversations: 0, turns: 0, noise: 0.02 }).map_err(|e| e.to_string())?;
    let lines = fs::read_to_string(data.join("manifest.jsonl")).unwrap().lines().count();
    ensure(lines == 320, || format!("manifest has {lines} lines"))?;
    let (train, heldout) = split_manifest(&data.join("manifest.jsonl"), 30);

    let mut config = RunConfig::default();
    config.encoder = EncoderConfig { hidden_dim: 32, num_heads: 4, num_layers: 1, ..EncoderConfig::default() };
    config.batch.batch_size = 64;
    config.batch.speakers_per_batch = 8;
    config.batch.margin = 0.8;
    config.optimizer.learning_rate = 1e-3;
    config.training.iterations = 200;
    config.training.min_segments = 30;
    config.training.checkpoint_interval = 0;
    config.eval.eval_interval = 0;
    let config_path = tmp.path().join("config.json");
    config.save(&config_path).unwrap();

    // untrained reference point with identical initialization
    let untrained = tmp.path().join("untrained");
    let mut zero = config.clone();
    zero.training.iterations = 0;
    let zero_path = tmp.path().join("zero.json");
    zero.save(&zero_path).unwrap();
    let args = TrainArgs { manifest: train.clone(), dev: None, resume: None, cache: None };
    cmd_train(&g(Some(&zero_path), &untrained, 1), &args).map_err(|e| e.to_string())?;
    let (base_nmi, base_purity, _) = heldout_scores(&untrained.join("final.dkc"), &heldout, &tmp.path().join("e0"))?;

    let run = tmp.path().join("run");
    cmd_train(&g(Some(&config_path), &run, 1), &args).map_err(|e| e.to_string())?;
    let log = fs::read_to_string(run.join("train.log")).unwrap();
    let losses: Vec<f64> = log.lines().map(|l| l.split('\t').nth(1).unwrap().parse().unwrap()).collect();
    let (nmi, purity, n) = heldout_scores(&run.join("final.dkc"), &heldout, &tmp.path().join("e1"))?;
    let elapsed = started.elapsed();
    let detail = format!(
        "held-out {n} segments: nmi {nmi:.4} purity {purity:.4} after {} iterations (untrained {base_nmi:.4}/{base_purity:.4}; \
         loss {:.4} -> {:.4}); {:.0} s on {} thread(s)",
        losses.len(),
        losses.first().unwrap_or(&f64::NAN),
        losses.last().unwrap_or(&f64::NAN),
        elapsed.as_secs_f64(),
        std::thread::available_parallelism().map_or(1, |n| n.get())
    );
    ensure(n == 80 && nmi >= 0.9 && purity >= 0.9 && elapsed <= Duration::from_secs(600), || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 7

fn criterion_full_size() -> Outcome {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("corpus");
    cmd_synth(&g(None, &data, 3), &SynthArgs { speakers: 64, segments: 4, conversations: 0, turns: 0, noise: 0.02 }).map_err(|e| e.to_string())?;
    let mut config = RunConfig::default();
    let e = &config.encoder;
    ensure(
        (config.features.feature_dim(), e.hidden_dim, e.num_layers, e.num_heads, config.batch.batch_size, config.batch.speakers_per_batch)
            == (60, 256, 2, 8, 256, 64),
        || format!("default config differs: {config:?}"),
    )?;
    config.training.min_segments = 4;
    let manifest = Manifest::load(&data.join("manifest.jsonl")).unwrap();
    let segments = diarize_cli::dataset::featurize_manifest(&manifest, &config.features).map_err(|e| e.to_string())?;
    let model = EncoderModel::<f64>::init(config.encoder.clone(), 0).map_err(|e| e.to_string())?;
    let mut trainer = Trainer::new(model, config.train_config(), &segments).map_err(|e| e.to_string())?;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = sample_batch(trainer.index(), &config.batch, &mut rng).map_err(|e| e.to_string())?;
    let mut per: BTreeMap<usize, usize> = BTreeMap::new();
    batch.labels.iter().for_each(|&l| *per.entry(l).or_insert(0) += 1);
    ensure(batch.len() == 256 && per.len() == 64 && per.values().all(|&c| c == 4), || format!("batch composition {per:?}"))?;

    let started = Instant::now();
    let record = trainer.step(&segments).map_err(|e| e.to_string())?;
    let step_time = started.elapsed();
    ensure(record.loss.is_finite() && record.triples > 0, || format!("loss {} with {} triples", record.loss, record.triples))?;

    let ck = tmp.path().join("full.dkc");
    fs::write(&ck, trainer.to_checkpoint(config.to_json()).to_bytes().unwrap()).unwrap();
    let few = tmp.path().join("few.jsonl");
    fs::write(&few, Manifest { entries: manifest.entries[..3].to_vec() }.to_jsonl()).unwrap();
    let out = tmp.path().join("emb");
    cmd_embed(&g(None, &out, 0), &EmbedArgs { manifest: few, checkpoint: ck }).map_err(|e| e.to_string())?;
    let records = read_embeddings(&mut BufReader::new(File::open(out.join("embeddings.bin")).unwrap())).unwrap();
    ensure(records.len() == 3 && records.iter().all(|r| r.vector.len() == 256 && r.vector.iter().all(|v| v.is_finite())), || {
        "embedding records are not 3 x 256 finite".into()
    })?;
    Ok(format!(
        "64 speakers x 4 segments, loss {:.4} over {} triples in {:.1} s, embeddings of length 256",
        record.loss,
        record.triples,
        step_time.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- 8

fn loss_column(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(|l| l.split('\t').nth(1).unwrap().to_string()).collect()
}

fn criterion_persistence() -> Outcome {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("corpus");
    cmd_synth(&g(None, &data, 8), &SynthArgs { speakers: 4, segments: 6, conversations: 2, turns: 5, noise: 0.02 }).map_err(|e| e.to_string())?;
    let mut config = RunConfig::default();
    config.encoder = EncoderConfig { hidden_dim: 16, num_heads: 2, num_layers: 1, ..EncoderConfig::default() };
    config.batch.batch_size = 8;
    config.batch.speakers_per_batch = 4;
    config.batch.margin = 1.6;
    config.optimizer.learning_rate = 1e-2;
    config.training.iterations = 12;
    config.training.min_segments = 2;
    config.training.checkpoint_interval = 6;
    config.eval.eval_interval = 0;
    let path = tmp.path().join("config.json");
    config.save(&path).unwrap();
    let args = TrainArgs { manifest: data.join("manifest.jsonl"), dev: None, resume: None, cache: None };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    cmd_train(&g(Some(&path), &a, 3), &args).map_err(|e| e.to_string())?;
    cmd_train(&g(Some(&path), &b, 3), &args).map_err(|e| e.to_string())?;
    let column = loss_column(&a.join("train.log"));
    ensure(column == loss_column(&b.join("train.log")), || "loss columns differ between identical runs".into())?;
    ensure(column.iter().any(|l| l != "0"), || "every loss was zero; the check would be vacuous".into())?;

    let resumed = tmp.path().join("resumed");
    let args = TrainArgs { resume: Some(a.join("checkpoint-000006.dkc")), ..args };
    cmd_train(&g(Some(&path), &resumed, 3), &args).map_err(|e| e.to_string())?;
    let tail = loss_column(&resumed.join("train.log"));
    ensure(tail == column[6..], || format!("resumed losses {tail:?} vs {:?}", &column[6..]))?;
    ensure(fs::read(resumed.join("final.dkc")).unwrap() == fs::read(a.join("final.dkc")).unwrap(), || "final checkpoints differ".into())?;

    let ck_bytes = fs::read(a.join("final.dkc")).unwrap();
    ensure(Checkpoint::from_bytes(&ck_bytes).unwrap().to_bytes().unwrap() == ck_bytes, || "checkpoint re-encode differs".into())?;

    let reference = fs::read_to_string(data.join("reference.rttm")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut texts = vec![reference];
    for _ in 0..50 {
        let mut ann = Annotation::new(format!("rec{}", rng.random_range(0..3)));
        for _ in 0..rng.random_range(1..8) {
            let s: f64 = rng.random_range(0.0..100.0);
            ann.push(s, s + rng.random_range(0.001..10.0), format!("s{}", rng.random_range(0..4))).unwrap();
        }
        texts.push(rttm::to_string(&[ann]));
    }
    for text in &texts {
        let once = rttm::to_string(&rttm::parse(text).unwrap());
        let twice = rttm::to_string(&rttm::parse(&once).unwrap());
        ensure(once == twice, || format!("rttm not byte-stable:\n{once}\n{twice}"))?;
    }

    let saved = fs::read_to_string(a.join("config.json")).unwrap();
    let reloaded = RunConfig::from_json(&saved).unwrap();
    ensure(reloaded.to_json() == saved, || "config.json re-serializes differently".into())?;
    let mut expected = config.clone();
    expected.seed = 3;
    ensure(reloaded == expected, || "config.json reloads to a different config".into())?;
    Ok(format!("{} identical loss lines, resume at 6 bit-identical, {} rttm texts and config byte-stable", column.len(), texts.len()))
}

// ---------------------------------------------------------------- 9

/// Same signal as the core crate's golden test.
fn golden_signal() -> Audio {
    let samples = (0..16000)
        .map(|i| {
            let t = i as f64 / 8000.0;
            let tone: f64 = (1..=5).map(|h| (TAU * 220.0 * h as f64 * t).sin() / h as f64).sum();
            let chirp = (TAU * (300.0 * t + 400.0 * t * t)).sin();
            let envelope = 0.6 + 0.4 * (TAU * 1.5 * t).sin();
            0.3 * envelope * tone + 0.1 * chirp
        })
        .collect();
    Audio::new(samples, 8000)
}

fn criterion_dsp() -> Outcome {
    let mut checked = 0;
    for n in 0..400usize {
        for w in 1..40usize {
            for hop in 1..=w {
                let mut brute = 0;
                while brute * hop + w <= n {
                    brute += 1;
                }
                ensure(frame_count(n, w, hop) == brute, || format!("N={n} W={w} hop={hop}: {} vs {brute}", frame_count(n, w, hop)))?;
                checked += 1;
            }
        }
    }
    for (rate, n, window_ms, overlap_ms) in [(8000, 16000, 25.0, 15.0), (8000, 1234, 25.0, 10.0), (16000, 4000, 32.0, 16.0), (8000, 199, 25.0, 15.0)] {
        let audio = Audio::new(vec![0.1; n], rate);
        let frames = frame_signal(&audio, window_ms, overlap_ms).map(|m| m.rows()).unwrap_or(0);
        let (w, o) = ((window_ms * rate as f64 / 1000.0).round() as usize, (overlap_ms * rate as f64 / 1000.0).round() as usize);
        ensure(frames == frame_count(n, w, w - o), || format!("frame_signal N={n} rate={rate}: {frames} rows"))?;
    }
    let config = FeatureConfig::default();
    let feats = FeatureExtractor::new(config.clone()).unwrap().segment_features(&golden_signal()).unwrap();
    ensure(feats.shape() == (198, 60) && config.frames_per_segment() == 198, || format!("feature shape {:?}", feats.shape()))?;
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/golden_mfcc.dkf");
    let golden: Matrix<f64> = read_feature_cache(&mut BufReader::new(File::open(&golden_path).map_err(|e| format!("{}: {e}", golden_path.display()))?))
        .map_err(|e| e.to_string())?;
    let differing = golden.as_slice().iter().zip(feats.as_slice()).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
    ensure(golden.shape() == feats.shape() && differing == 0, || format!("{differing} golden values differ"))?;
    Ok(format!("{checked} (N, W, hop) triples; 198 x 60 features; {} golden values bit-identical", golden.as_slice().len()))
}

// ----------------------------------------------------------------

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "gradient suite", criterion_gradients),
        (2, "mining oracle", criterion_mining),
        (3, "loss values", criterion_loss),
        (4, "metric oracles", criterion_metrics),
        (5, "clustering", criterion_clustering),
        (6, "end-to-end synthetic overfit", criterion_end_to_end),
        (7, "full-size configuration step", criterion_full_size),
        (8, "determinism and persistence", criterion_persistence),
        (9, "DSP regression", criterion_dsp),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let started = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {id} {name}: {detail} [{secs:.1} s]"),
            Err(reason) => {
                failed += 1;
                println!("FAIL {id} {name}: {reason} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
