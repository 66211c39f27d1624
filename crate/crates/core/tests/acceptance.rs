//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use dtw_align::bench::{run_bench, BenchOptions, Method, Workload};
use dtw_align::dtw::{align_similarity, backtrack_traced, brute_force_align, build_trellis};
use dtw_align::eval::{accuracy, synth_planted, validate_path, LabeledAlignment, ReferenceAlignment};
use dtw_align::io::{
    read_alignments, read_embeddings, write_alignments, write_embeddings, AlignmentRecord, EmbeddingRecord, ValidFlags,
};
use dtw_align::mixup::{discrete_decisions, discrete_mixup, interpolation_mixup, sequence_rng, MixupConfig, MixupMode};
use dtw_align::objectives::{kl_divergence, symmetric_kl, total_loss, DistributionTable, ObjectiveConfig};
use dtw_align::ot::{ot_align, SinkhornConfig};
use dtw_align::{
    align, align_batch, align_batch_par, cosine_similarity_matrix, AlignError, EmbeddingSequence, SimilarityMatrix,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_seq(rng: &mut impl Rng, len: usize, dim: usize) -> EmbeddingSequence {
    let data = (0..len * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    EmbeddingSequence::new(len, dim, data).unwrap()
}

fn random_sim(rng: &mut impl Rng, n: usize, m: usize) -> SimilarityMatrix {
    SimilarityMatrix::new(n, m, (0..n * m).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// The 1000 random instances shared by criteria 2 and 5.
fn structural_suite() -> Vec<(EmbeddingSequence, EmbeddingSequence)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2002);
    (0..1000)
        .map(|_| {
            let n = rng.random_range(1..=64);
            let m = rng.random_range(1..=n.min(16));
            let d = rng.random_range(1..=24);
            (random_seq(&mut rng, n, d), random_seq(&mut rng, m, d))
        })
        .collect()
}

fn c1_oracle_optimality() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut cases = 0;
    for n in 1..=10 {
        for m in 1..=n.min(5) {
            for _ in 0..200 {
                let s = random_sim(&mut rng, n, m);
                let dp = align_similarity(&s).map_err(|e| e.to_string())?;
                let bf = brute_force_align(&s).map_err(|e| e.to_string())?;
                ensure((dp.score() - bf.score()).abs() <= 1e-6, || {
                    format!("{n}x{m}: score {} vs oracle {}", dp.score(), bf.score())
                })?;
                ensure(dp.assignment() == bf.assignment(), || {
                    format!("{n}x{m}: path {:?} vs oracle {:?}", dp.assignment(), bf.assignment())
                })?;
                cases += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "{cases} matrices, scores within 1e-6 and paths identical, {secs:.2} s"
    ))
}

fn c2_structural_guarantees() -> Outcome {
    let mut violations = 0;
    for (f, e) in structural_suite() {
        let p = align(&f, &e).map_err(|err| err.to_string())?;
        let r = validate_path(p.assignment(), e.len());
        let steps_ok = p.assignment().windows(2).all(|w| w[1] - w[0] <= 1);
        if !(r.is_valid() && steps_ok && p.assignment().len() == f.len()) {
            violations += 1;
        }
    }
    ensure(violations == 0, || format!("{violations} violating paths"))?;
    Ok("1000 instances, 0 violations".into())
}

fn c3_degenerate_cases() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3003);
    for n in 1..=20 {
        let d = rng.random_range(1..8);
        let (f, e) = (random_seq(&mut rng, n, d), random_seq(&mut rng, n, d));
        let p = align(&f, &e).map_err(|err| err.to_string())?;
        ensure(p.assignment() == (0..n).collect::<Vec<_>>(), || {
            format!("N=M={n}: {:?}", p.assignment())
        })?;

        let one = random_seq(&mut rng, 1, d);
        let p = align(&f, &one).map_err(|err| err.to_string())?;
        ensure(p.assignment().iter().all(|&j| j == 0), || {
            format!("M=1, N={n}: {:?}", p.assignment())
        })?;

        let longer = random_seq(&mut rng, n + 1, d);
        ensure(
            align(&f, &longer)
                == Err(AlignError::TooFewFrames {
                    n_frames: n,
                    n_tokens: n + 1,
                }),
            || format!("N={n}, M={}: expected TooFewFrames", n + 1),
        )?;
    }
    Ok("identity for N=M, zeros for M=1, TooFewFrames for N<M (N=1..20)".into())
}

fn c4_batch_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4004);
    let mut items = 0;
    for b in 0..100 {
        let size = rng.random_range(1..=16);
        let pairs: Vec<_> = (0..size)
            .map(|_| {
                let n = rng.random_range(1..=64);
                let m = rng.random_range(1..=n.min(16));
                let d = rng.random_range(1..=16);
                (random_seq(&mut rng, n, d), random_seq(&mut rng, m, d))
            })
            .collect();
        let batched = align_batch(&pairs);
        let par = align_batch_par(&pairs);
        for (i, (f, e)) in pairs.iter().enumerate() {
            let single = align(f, e).map_err(|err| err.to_string())?;
            for (name, got) in [("wavefront", &batched[i]), ("parallel", &par[i])] {
                let got = got.as_ref().map_err(|err| err.to_string())?;
                ensure(
                    got.assignment() == single.assignment() && got.score().to_bits() == single.score().to_bits(),
                    || format!("batch {b} item {i}: {name} driver differs"),
                )?;
            }
            items += 1;
        }
    }
    Ok(format!("100 batches, {items} items bitwise equal"))
}

fn c5_positive_infinity_unreachable() -> Outcome {
    let mut reads = 0;
    let mut pos_inf_cells = 0usize;
    for (f, e) in structural_suite() {
        let sim = cosine_similarity_matrix(&f, &e).map_err(|err| err.to_string())?;
        let trellis = build_trellis(&sim).map_err(|err| err.to_string())?;
        pos_inf_cells += trellis.values().iter().filter(|v| **v == f64::INFINITY).count();
        let (_, trace) = backtrack_traced(&trellis);
        ensure(trace.positive_infinity_reads == 0, || {
            format!(
                "{} +inf reads on a {}x{} trellis",
                trace.positive_infinity_reads,
                f.len(),
                e.len()
            )
        })?;
        reads += trace.cells_read;
    }
    Ok(format!(
        "{reads} comparator reads, 0 of them +inf ({pos_inf_cells} +inf cells present)"
    ))
}

fn c6_differential_vs_ot() -> Outcome {
    let (mut dtw_pred, mut ot_pred, mut refs) = (vec![], vec![], vec![]);
    let mut ot_not_better = 0;
    let mut ot_violations = 0;
    let mut dtw_violations = 0;
    let mut dtw_min: f64 = 1.0;
    for seed in 0..100u64 {
        let s = synth_planted(200, 10, 32, 0.1, seed).map_err(|e| e.to_string())?;
        let dtw = align(&s.frames, &s.tokens).map_err(|e| e.to_string())?;
        let ot = ot_align(&s.frames, &s.tokens, &SinkhornConfig::default()).map_err(|e| e.to_string())?;
        let id = format!("seed{seed}");
        let truth = [ReferenceAlignment {
            id: id.clone(),
            assignment: s.planted.clone(),
            word_tokens: None,
        }];
        let d = LabeledAlignment {
            id: id.clone(),
            assignment: dtw.assignment().to_vec(),
        };
        let o = LabeledAlignment {
            id: id.clone(),
            assignment: ot.alignment.assignment.clone(),
        };
        let dtw_acc = accuracy(std::slice::from_ref(&d), &truth).micro_frame_accuracy;
        let ot_acc = accuracy(std::slice::from_ref(&o), &truth).micro_frame_accuracy;
        dtw_min = dtw_min.min(dtw_acc);
        if ot_acc <= dtw_acc {
            ot_not_better += 1;
        }
        if !validate_path(&o.assignment, 10).is_valid() {
            ot_violations += 1;
        }
        if !validate_path(&d.assignment, 10).is_valid() {
            dtw_violations += 1;
        }
        dtw_pred.push(d);
        ot_pred.push(o);
        refs.extend(truth);
    }
    let dtw_micro = accuracy(&dtw_pred, &refs).micro_frame_accuracy;
    let ot_micro = accuracy(&ot_pred, &refs).micro_frame_accuracy;
    let detail = format!(
        "DTW {:.2}% (min seed {:.2}%), OT {:.2}%, OT <= DTW on {ot_not_better}/100 seeds, \
         structural violations OT {ot_violations} / DTW {dtw_violations}",
        100.0 * dtw_micro,
        100.0 * dtw_min,
        100.0 * ot_micro
    );
    ensure(dtw_micro >= 0.99, || format!("DTW accuracy below 0.99: {detail}"))?;
    ensure(ot_not_better >= 90, || format!("OT beat DTW too often: {detail}"))?;
    ensure(ot_violations >= 1 && dtw_violations == 0, || {
        format!("violation counts: {detail}")
    })?;
    Ok(detail)
}

fn c7_speed_direction() -> Outcome {
    let data = Workload::STANDARD.generate().map_err(|e| e.to_string())?;
    let opts = BenchOptions {
        warmup: 1,
        repeats: 3,
        parallel: false,
    };
    let dtw = run_bench(&data, Method::Dtw, opts).map_err(|e| e.to_string())?.result;
    let ot = run_bench(&data, Method::Ot(SinkhornConfig::default()), opts)
        .map_err(|e| e.to_string())?
        .result;
    let ratio = ot.median_pass_seconds / dtw.median_pass_seconds;
    let detail = format!(
        "median pass DTW {:.4} s, OT {:.4} s, OT/DTW = {ratio:.2}x",
        dtw.median_pass_seconds, ot.median_pass_seconds
    );
    ensure(dtw.median_pass_seconds <= ot.median_pass_seconds / 3.0, || {
        detail.clone()
    })?;
    Ok(detail)
}

fn c8_mixup_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8008);
    let (n, m, d) = (40, 7, 16);
    let frames = random_seq(&mut rng, n, d);
    let tokens = random_seq(&mut rng, m, d);
    let path = align(&frames, &tokens).map_err(|e| e.to_string())?.into_assignment();
    for p in [0.0, 0.2, 1.0] {
        let mix = interpolation_mixup(&frames, &tokens, &path, p).map_err(|e| e.to_string())?;
        for (i, &j) in path.iter().enumerate() {
            for k in 0..d {
                let expected = (1.0 - p) * frames.row(i)[k] as f64 + p * tokens.row(j)[k] as f64;
                let got = mix.row(i)[k] as f64;
                ensure((got - expected).abs() <= 1e-6, || {
                    format!("p*={p}, frame {i}, dim {k}: {got} vs {expected}")
                })?;
            }
        }
    }

    let decisions = discrete_decisions(100_000, 0.2, &mut sequence_rng(8, 0));
    let frac = decisions.iter().filter(|&&x| x).count() as f64 / 1e5;
    ensure((frac - 0.2).abs() <= 0.01, || format!("text fraction {frac}"))?;
    let again = discrete_decisions(100_000, 0.2, &mut sequence_rng(8, 0));
    ensure(decisions == again, || "decisions not reproducible".into())?;

    let cfg = MixupConfig::new(0.2, MixupMode::Discrete, 8).map_err(|e| e.to_string())?;
    let a = discrete_mixup(&frames, &tokens, &path, &cfg).map_err(|e| e.to_string())?;
    let b = discrete_mixup(&frames, &tokens, &path, &cfg).map_err(|e| e.to_string())?;
    let bits = |s: &EmbeddingSequence| s.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    ensure(bits(&a) == bits(&b), || {
        "discrete mixup not bitwise reproducible".into()
    })?;
    Ok(format!(
        "interpolation within 1e-6 at p* in {{0, 0.2, 1}}; discrete text fraction {frac:.4}, reproducible"
    ))
}

fn c9_objective_kernels() -> Outcome {
    let cfg = ObjectiveConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9009);
    let mut min_kl = f64::INFINITY;
    for _ in 0..1000 {
        let l = rng.random_range(1..8);
        let v = rng.random_range(2..16);
        let mut table = || {
            let mut probs = Vec::with_capacity(l * v);
            for _ in 0..l {
                let raw: Vec<f64> = (0..v).map(|_| rng.random::<f64>().powi(4)).collect();
                let s: f64 = raw.iter().sum();
                probs.extend(raw.iter().map(|x| x / s));
            }
            DistributionTable::new(l, v, probs).unwrap()
        };
        let (p, q) = (table(), table());
        min_kl = min_kl
            .min(kl_divergence(&p, &q, &cfg).map_err(|e| e.to_string())?)
            .min(kl_divergence(&q, &p, &cfg).map_err(|e| e.to_string())?);
    }
    ensure(min_kl >= -1e-9, || format!("KL reached {min_kl}"))?;

    let p = DistributionTable::from_rows(&[[0.9, 0.1]]).unwrap();
    let q = DistributionTable::from_rows(&[[0.5, 0.5]]).unwrap();
    let pq = kl_divergence(&p, &q, &cfg).map_err(|e| e.to_string())?;
    let qp = kl_divergence(&q, &p, &cfg).map_err(|e| e.to_string())?;
    let sym = symmetric_kl(&p, &q, &cfg).map_err(|e| e.to_string())?;
    for (got, want) in [(pq, 0.3681), (qp, 0.5108), (sym, 0.8789)] {
        ensure((got - want).abs() <= 1e-3, || format!("Bernoulli KL {got} vs {want}"))?;
    }

    let (l_st, l_mt, kl_sm, kl_xm) = (1.0, 2.0, 0.4, 0.6);
    let loss = total_loss(l_st, l_mt, kl_sm, kl_xm, &cfg);
    ensure(loss == 4.0, || format!("lambda=2 total loss {loss}"))?;
    let base = total_loss(1.25, 0.5, 0.375, 0.625, &ObjectiveConfig { lambda: 0.0, ..cfg });
    for lambda in [0.5, 1.0, 2.0, 3.0, 8.0] {
        let c = ObjectiveConfig { lambda, ..cfg };
        let got = total_loss(1.25, 0.5, 0.375, 0.625, &c);
        ensure(got - base == lambda * (0.375 + 0.625) / 2.0, || {
            format!("lambda={lambda}: not linear")
        })?;
    }
    Ok(format!(
        "min KL {min_kl:.3e}; KL {pq:.4}/{qp:.4}/{sym:.4} nats; total loss 4.0 at lambda=2, linear in lambda"
    ))
}

fn c10_io_roundtrip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    for file in 0..100 {
        let count = rng.random_range(0..6);
        let records: Vec<EmbeddingRecord> = (0..count)
            .map(|i| {
                let rows = rng.random_range(1..20);
                let cols = rng.random_range(1..20);
                let data = (0..rows * cols)
                    .map(|_| loop {
                        let v = f32::from_bits(rng.random());
                        if v.is_finite() {
                            break v;
                        }
                    })
                    .collect();
                EmbeddingRecord::new(
                    format!("utt-{file}-{i}-é"),
                    EmbeddingSequence::new(rows, cols, data).unwrap(),
                )
            })
            .collect();
        let mut buf = Vec::new();
        write_embeddings(&mut buf, &records).map_err(|e| e.to_string())?;
        let back = read_embeddings(buf.as_slice()).map_err(|e| e.to_string())?;
        let mut again = Vec::new();
        write_embeddings(&mut again, &back).map_err(|e| e.to_string())?;
        ensure(buf == again, || {
            format!("embedding file {file}: bytes differ after round trip")
        })?;
        for (a, b) in records.iter().zip(&back) {
            let same = a.id == b.id
                && a.sequence.len() == b.sequence.len()
                && a.sequence
                    .data()
                    .iter()
                    .zip(b.sequence.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits());
            ensure(same, || format!("embedding file {file}: record {} differs", a.id))?;
        }

        let alignments: Vec<AlignmentRecord> = (0..rng.random_range(1..6))
            .map(|i| {
                let n = rng.random_range(1..30);
                let m = rng.random_range(1..=n);
                let alignment: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
                let report = validate_path(&alignment, m);
                AlignmentRecord {
                    id: format!("u{file}_{i}"),
                    n_frames: n,
                    n_tokens: m,
                    score: Some(rng.random_range(-1e3..1e3)),
                    method: if i % 2 == 0 { "dtw".into() } else { "ot".into() },
                    valid: ValidFlags::from(&report),
                    alignment,
                    error: None,
                    word_tokens: None,
                }
            })
            .collect();
        let mut buf = Vec::new();
        write_alignments(&mut buf, &alignments).map_err(|e| e.to_string())?;
        let back = read_alignments(buf.as_slice()).map_err(|e| e.to_string())?;
        let mut again = Vec::new();
        write_alignments(&mut again, &back).map_err(|e| e.to_string())?;
        ensure(buf == again, || {
            format!("alignment file {file}: bytes differ after round trip")
        })?;
        for (a, b) in alignments.iter().zip(&back) {
            let same = a == b && a.score.map(f64::to_bits) == b.score.map(f64::to_bits);
            ensure(same, || format!("alignment file {file}: record {} differs", a.id))?;
        }
    }
    Ok("100 embedding files and 100 alignment files lossless".into())
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("1 oracle optimality", c1_oracle_optimality),
        ("2 structural guarantees", c2_structural_guarantees),
        ("3 degenerate cases", c3_degenerate_cases),
        ("4 batch equivalence", c4_batch_equivalence),
        ("5 +inf cells unreachable", c5_positive_infinity_unreachable),
        ("6 differential vs OT baseline", c6_differential_vs_ot),
        ("7 speed direction", c7_speed_direction),
        ("8 mixup exactness", c8_mixup_exactness),
        ("9 objective kernels", c9_objective_kernels),
        ("10 I/O round-trip", c10_io_roundtrip),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
