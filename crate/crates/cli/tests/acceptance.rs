//! Acceptance criteria, one line per criterion.
//!
//! Criteria 6 and 7 need the bibtex split and 50-dimensional GloVe vectors
//! under `$MLC_DATA_ROOT`:
//!
//! ```text
//! bibtex/train.txt  bibtex/val.txt  bibtex/test.txt  bibtex/label_names.txt
//! glove.6B.50d.txt
//! ```
//!
//! Without them those two criteria report SKIP, never PASS.

mod support;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mlc_core::data_io::SparseRow;
use mlc_core::embeddings::{context_regularizer, init_label_embeddings, LabelEmbeddings, WordEmbeddingTable};
use mlc_core::losses::{asl, bce, LossSpec};
use mlc_core::metrics::{ebf1, maf1, mif1};
use mlc_core::model::{decoder_forward, encode, load_checkpoint, LatentInjection, ModelConfig, ModelParams};
use mlc_core::noise::{
    combined_assignment, inject_positive, inject_single_positive, inject_uniform, CombinedMode, NoiseType,
};

use support::{mlc, path_str, stderr, stdout, toy_files};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Verdict) -> Verdict {
    let start = Instant::now();
    let v = f();
    let took = start.elapsed();
    let over = limit.is_some_and(|l| took > l);
    let stamp = |d: String| match limit {
        Some(l) => format!("{d}; {:.2}s of {}s budget", took.as_secs_f64(), l.as_secs()),
        None => format!("{d}; {:.2}s", took.as_secs_f64()),
    };
    match v {
        Verdict::Pass(d) if over => Verdict::Fail(stamp(d) + " (over budget)"),
        Verdict::Pass(d) => Verdict::Pass(stamp(d)),
        Verdict::Fail(d) => Verdict::Fail(stamp(d)),
        skip => skip,
    }
}

// ---------------------------------------------------------------- 1

fn brute(y: &Array2<u8>, p: &Array2<u8>) -> (f64, f64, f64) {
    let (n, l) = y.dim();
    let f1 = |tp: f64, fp: f64, fneg: f64| {
        if tp + fp + fneg == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fneg)
        }
    };
    let mut eb = 0.0;
    for i in 0..n {
        let (mut both, mut ys, mut ps) = (0.0, 0.0, 0.0);
        for j in 0..l {
            both += f64::from(y[[i, j]] & p[[i, j]]);
            ys += f64::from(y[[i, j]]);
            ps += f64::from(p[[i, j]]);
        }
        eb += if ys + ps == 0.0 { 1.0 } else { 2.0 * both / (ys + ps) };
    }
    let (mut tp_all, mut fp_all, mut fn_all, mut ma) = (0.0, 0.0, 0.0, 0.0);
    for j in 0..l {
        let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
        for i in 0..n {
            match (y[[i, j]], p[[i, j]]) {
                (1, 1) => tp += 1.0,
                (0, 1) => fp += 1.0,
                (1, 0) => fneg += 1.0,
                _ => {}
            }
        }
        ma += f1(tp, fp, fneg);
        tp_all += tp;
        fp_all += fp;
        fn_all += fneg;
    }
    (eb / n as f64, f1(tp_all, fp_all, fn_all), ma / l as f64)
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (n, l) = (rng.random_range(1..=20), rng.random_range(1..=8));
        let density = rng.random_range(0.05..0.95);
        let y = Array2::from_shape_simple_fn((n, l), || rng.random_bool(density) as u8);
        let p = Array2::from_shape_simple_fn((n, l), || rng.random_bool(density) as u8);
        let (e, mi, ma) = brute(&y, &p);
        for (got, want) in [
            (ebf1(y.view(), p.view()).unwrap(), e),
            (mif1(y.view(), p.view()).unwrap(), mi),
            (maf1(y.view(), p.view()).unwrap(), ma),
        ] {
            worst = worst.max((got - want).abs());
        }
    }
    check(worst <= 1e-12, format!("1000 random pairs, max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Verdict {
    let mut notes = Vec::new();
    for lambda in ["0", "0.1"] {
        let out = mlc(&["grad-check", "--set", &format!("lambda={lambda}")]);
        let text = stdout(&out);
        let header_ok = text.contains("L=5 d=8 T=2 H=2");
        let arrays = text.lines().filter(|l| l.contains("max_rel=")).count();
        let failing = text
            .lines()
            .filter(|l| l.ends_with("FAIL") && l.contains("max_rel="))
            .count();
        let embeddings_ok = text
            .lines()
            .any(|l| l.starts_with("label_embeddings") && l.ends_with("ok"));
        if !(out.status.success() && header_ok && failing == 0 && embeddings_ok && arrays > 0) {
            return Verdict::Fail(format!(
                "lambda={lambda}: exit {:?}\n{text}{}",
                out.status.code(),
                stderr(&out)
            ));
        }
        let worst = text
            .lines()
            .filter_map(|l| l.split("max_rel=").nth(1))
            .filter_map(|s| s.split_whitespace().next()?.parse::<f64>().ok())
            .fold(0.0, f64::max);
        notes.push(format!("lambda={lambda}: {arrays} arrays, worst {worst:.1e}"));
    }
    Verdict::Pass(notes.join(", "))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let plain = LossSpec {
        lambda: 0.0,
        ..LossSpec::bce()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let y = [rng.random_bool(0.5) as u8];
        let p = [rng.random_range(0.0..1.0)];
        worst = worst.max((asl(&y, &p, &plain).unwrap() - bce(&y, &p, plain.clamp_eps).unwrap()).abs());
    }
    let shifted = LossSpec {
        shift_m: 0.05,
        ..LossSpec::default()
    };
    let mut nonzero = 0;
    for _ in 0..10_000 {
        let p = [rng.random_range(0.0..0.05)];
        if asl(&[0], &p, &shifted).unwrap() != 0.0 {
            nonzero += 1;
        }
    }
    check(
        worst <= 1e-12 && nonzero == 0,
        format!("max |ASL−BCE| {worst:.1e} over 10⁴ pairs; {nonzero} easy negatives with nonzero loss"),
    )
}

// ---------------------------------------------------------------- 4

fn within(hits: usize, trials: usize, p: f64) -> bool {
    let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
    (hits as f64 - trials as f64 * p).abs() <= 4.0 * sigma
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let y = Array2::from_shape_simple_fn((10_000, 100), || rng.random_bool(0.3) as u8);
    let positives = y.iter().filter(|&&v| v == 1).count();
    let mut problems = Vec::new();
    for p in [0.01, 0.1, 0.5] {
        let u = inject_uniform(&y, p, 11).unwrap();
        let flips = y.iter().zip(&u).filter(|(a, b)| a != b).count();
        if !within(flips, y.len(), p) {
            problems.push(format!("type 1 p={p}: {flips} flips"));
        }
        let q = inject_positive(&y, p, 12).unwrap();
        if y.iter().zip(&q).any(|(&a, &b)| b > a) {
            problems.push(format!("type 2 p={p} created a positive"));
        }
        let flips = y.iter().zip(&q).filter(|(a, b)| a != b).count();
        if !within(flips, positives, p) {
            problems.push(format!("type 2 p={p}: {flips} of {positives} positives flipped"));
        }
    }
    let s = inject_single_positive(&y, 13);
    for (a, b) in y.rows().into_iter().zip(s.rows()) {
        let had = a.iter().any(|&v| v == 1);
        let left = b.iter().filter(|&&v| v == 1).count();
        if left != usize::from(had) {
            problems.push("type 3 row without exactly one positive".into());
            break;
        }
    }
    let plan = combined_assignment(30_000, CombinedMode::AlwaysCorrupt, 14);
    for t in [NoiseType::Uniform, NoiseType::Positive, NoiseType::SinglePositive] {
        let n = plan.iter().filter(|c| c.noise == Some(t)).count();
        if !within(n, plan.len(), 1.0 / 3.0) {
            problems.push(format!("combined {t:?}: {n} of 30000 rows"));
        }
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            "all rates within 4σ".into()
        } else {
            problems.join("; ")
        },
    )
}

// ---------------------------------------------------------------- 5

fn train_toy(files: &support::ToyFiles, lambda: &str, out: &Path) -> Result<(), String> {
    let config = files.dir.path().join("run.cfg");
    std::fs::write(
        &config,
        format!(
            "train = {}\nlabel_names = {}\nword_embeddings = {}\nmodel_out = {}\n\
             num_layers = 2\nnum_heads = 2\nencoder_hidden = 16\nepochs = 15\nbatch_size = 10\n\
             learning_rate = 0.01\nseed = 5\n",
            path_str(&files.train),
            path_str(&files.names),
            path_str(&files.words),
            path_str(out)
        ),
    )
    .unwrap();
    let o = mlc(&[
        "train",
        "--config",
        path_str(&config),
        "--set",
        &format!("lambda={lambda}"),
    ]);
    if o.status.success() {
        Ok(())
    } else {
        Err(stderr(&o))
    }
}

fn criterion_5() -> Verdict {
    let table = WordEmbeddingTable::from_entries([
        ("red", vec![0.9, 0.1, 0.0, 0.3]),
        ("blue", vec![0.1, 0.9, 0.2, 0.0]),
        ("car", vec![0.5, 0.5, -0.4, 0.1]),
    ])
    .unwrap();
    let names: Vec<String> = support::LABEL_NAMES.iter().map(|s| s.to_string()).collect();
    let emb = init_label_embeddings(&names, &table, 9).unwrap();
    let (at_init, _) = context_regularizer(&emb);

    let files = toy_files(50, 5);
    let (tied, free) = (files.dir.path().join("tied.ckpt"), files.dir.path().join("free.ckpt"));
    if let Err(e) = train_toy(&files, "1000", &tied).and_then(|_| train_toy(&files, "0", &free)) {
        return Verdict::Fail(e);
    }
    let drift = |p: &Path| load_checkpoint(p).unwrap().embeddings.drift();
    let (d_tied, d_free) = (drift(&tied), drift(&free));
    check(
        at_init == 0.0 && d_tied < d_free,
        format!("L_CB at init = {at_init}; drift with λ=10³ {d_tied:.3e} vs λ=0 {d_free:.3e}"),
    )
}

// ---------------------------------------------------------------- 6, 7

struct Bibtex {
    train: PathBuf,
    val: PathBuf,
    test: PathBuf,
    names: PathBuf,
    glove: PathBuf,
}

fn bibtex() -> Result<Bibtex, String> {
    let root = std::env::var_os("MLC_DATA_ROOT").ok_or("MLC_DATA_ROOT is not set")?;
    let root = PathBuf::from(root);
    let b = Bibtex {
        train: root.join("bibtex/train.txt"),
        val: root.join("bibtex/val.txt"),
        test: root.join("bibtex/test.txt"),
        names: root.join("bibtex/label_names.txt"),
        glove: root.join("glove.6B.50d.txt"),
    };
    for p in [&b.train, &b.val, &b.test, &b.names, &b.glove] {
        if !p.is_file() {
            return Err(format!("{} not found", p.display()));
        }
    }
    Ok(b)
}

fn bibtex_run(b: &Bibtex, extra: &[&str]) -> Result<(f64, f64), String> {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bibtex.cfg");
    let model = dir.path().join("bibtex.ckpt");
    std::fs::write(
        &config,
        format!(
            "train = {}\nval = {}\ntest = {}\nlabel_names = {}\nword_embeddings = {}\nmodel_out = {}\n\
             num_layers = 4\nnum_heads = 2\nencoder_hidden = 256\nepochs = 50\nbatch_size = 32\n\
             learning_rate = 0.001\nselect_on = ebF1\n",
            path_str(&b.train),
            path_str(&b.val),
            path_str(&b.test),
            path_str(&b.names),
            path_str(&b.glove),
            path_str(&model)
        ),
    )
    .unwrap();
    let mut args = vec!["train", "--config", path_str(&config)];
    let sets: Vec<String> = extra.iter().map(|s| s.to_string()).collect();
    for s in &sets {
        args.push("--set");
        args.push(s);
    }
    let o = mlc(&args);
    if !o.status.success() {
        return Err(stderr(&o));
    }
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("test ")).ok_or("no test line")?;
    let field = |key: &str| -> Result<f64, String> {
        line.split_whitespace()
            .find_map(|kv| kv.strip_prefix(key))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| format!("no {key} in {line:?}"))
    };
    Ok((field("ebF1=")?, field("maF1=")?))
}

fn criterion_6() -> Verdict {
    let b = match bibtex() {
        Ok(b) => b,
        Err(e) => return Verdict::Skip(format!("bibtex/GloVe data unavailable ({e})")),
    };
    match bibtex_run(&b, &["lambda=0.1", "seed=0"]) {
        Ok((eb, _)) => check(eb >= 0.40, format!("test ebF1 {eb:.4} (target ≥ 0.40)")),
        Err(e) => Verdict::Fail(e),
    }
}

fn criterion_7() -> Verdict {
    let b = match bibtex() {
        Ok(b) => b,
        Err(e) => return Verdict::Skip(format!("bibtex/GloVe data unavailable ({e})")),
    };
    let mut notes = Vec::new();
    let mut ok = true;
    for seed in ["0", "1"] {
        let seed_set = format!("seed={seed}");
        let anchored = bibtex_run(&b, &["noise=single-positive", "lambda=0.1", &seed_set]);
        let random = bibtex_run(
            &b,
            &[
                "noise=single-positive",
                "lambda=0",
                "word_embeddings=",
                "label_names=",
                &seed_set,
            ],
        );
        match (anchored, random) {
            (Ok((_, a)), Ok((_, r))) => {
                ok &= a >= r;
                notes.push(format!("seed {seed}: maF1 {a:.4} vs {r:.4}"));
            }
            (Err(e), _) | (_, Err(e)) => return Verdict::Fail(e),
        }
    }
    check(ok, notes.join(", "))
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let config = ModelConfig {
        num_features: 12,
        num_labels: 9,
        label_dim: 8,
        num_layers: 2,
        num_heads: 2,
        encoder_hidden: 10,
        feedforward_hidden: 12,
        latent_injection: LatentInjection::EveryBlock,
    };
    let params = ModelParams::init(&config, 8).unwrap();
    let emb = LabelEmbeddings::random(config.num_labels, config.label_dim, 1.0, 8);
    let mut mismatches = 0;
    for _ in 0..100 {
        let pairs = (0..12u32)
            .filter_map(|k| {
                if rng.random_bool(0.5) {
                    Some((k, rng.random_range(-2.0..2.0)))
                } else {
                    None
                }
            })
            .collect();
        let z = encode(&SparseRow::from_pairs(pairs).unwrap(), &params.encoder);
        let base = decoder_forward(z.view(), &emb, &params, &config).probabilities;
        let mut perm: Vec<usize> = (0..config.num_labels).collect();
        perm.shuffle(&mut rng);
        let out = decoder_forward(z.view(), &emb.permute(&perm), &params.permute_labels(&perm), &config).probabilities;
        let want: Array1<f64> = perm.iter().map(|&i| base[i]).collect();
        if out.iter().zip(&want).any(|(a, b)| a.to_bits() != b.to_bits()) {
            mismatches += 1;
        }
    }
    check(
        mismatches == 0,
        format!("{mismatches} of 100 permutations differ in any bit"),
    )
}

/// Name, time budget in seconds, check.
type Criterion = (&'static str, Option<u64>, fn() -> Verdict);

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("metric oracle equivalence", Some(5), criterion_1),
        ("gradient verification", Some(30), criterion_2),
        ("loss reduction identity", None, criterion_3),
        ("noise statistics", Some(30), criterion_4),
        ("regularizer anchor", None, criterion_5),
        ("desk-scale learning on bibtex", Some(3600), criterion_6),
        ("noise-robustness trend on bibtex", None, criterion_7),
        ("permutation equivariance", None, criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.into_iter().enumerate() {
        let verdict = timed(budget.map(Duration::from_secs), run);
        let (tag, detail) = match verdict {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("criterion {}: {tag} {name} ({detail})", i + 1);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
