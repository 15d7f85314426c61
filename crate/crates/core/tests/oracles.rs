use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skelfall::autodiff::{ParamStore, Tape, Tensor};
use skelfall::bench::welch_t_test;
use skelfall::graph::SkeletonGraph;
use skelfall::layers::{septcn_flops, SepTcnLayer, SgcLayer};
use skelfall::metrics::{metrics, ConfusionMatrix};
use skelfall::model::compute_motion;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_edges(r: &mut ChaCha8Rng, v: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for a in 0..v {
        for b in a + 1..v {
            if r.random_bool(0.4) {
                edges.push((a, b));
            }
        }
    }
    edges
}

#[test]
fn sgc_matches_per_node_double_loop() {
    for seed in 0..50 {
        let mut r = rng(seed);
        let v = r.random_range(1..=6);
        let (c_in, c_out, t) = (r.random_range(1..=4), r.random_range(1..=4), r.random_range(1..=5));
        let edges = random_edges(&mut r, v);
        let graph = SkeletonGraph::from_edges(v, &edges).unwrap();

        let mut store = ParamStore::new();
        let layer = SgcLayer::new(&mut store, "s", c_in, c_out, &graph.normalized_adjacency(), &mut r);
        *store.get_mut(layer.mask) = Tensor::randn(&[v, v], 1.0, &mut r);
        let x = Tensor::randn(&[c_in, t, v], 1.0, &mut r);

        let mut tape = Tape::new();
        let params = store.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let y = layer.forward(&mut tape, &params, xv).unwrap();
        let got = tape.value(y).clone();

        // neighbour sets including self, degrees counted with the self loop
        let mut nbrs: Vec<BTreeSet<usize>> = (0..v).map(|i| BTreeSet::from([i])).collect();
        for &(a, b) in &edges {
            nbrs[a].insert(b);
            nbrs[b].insert(a);
        }
        let w = store.get(layer.weight);
        let m = store.get(layer.mask);
        for o in 0..c_out {
            for f in 0..t {
                for i in 0..v {
                    let mut acc = 0.0;
                    for &j in &nbrs[i] {
                        let z = ((nbrs[i].len() * nbrs[j].len()) as f64).sqrt();
                        let mut embedded = 0.0;
                        for c in 0..c_in {
                            embedded += w.at(&[c, o]) * x.at(&[c, f, j]);
                        }
                        acc += m.at(&[i, j]) / z * embedded;
                    }
                    let diff = (got.at(&[o, f, i]) - acc).abs();
                    assert!(diff < 1e-10, "seed {seed} ({o},{f},{i}): {diff}");
                }
            }
        }
    }
}

#[test]
fn sep_tcn_matches_rank_constrained_dense_conv() {
    for seed in 0..30 {
        let mut r = rng(seed + 1000);
        let (c_in, c_out, t, v) = (
            r.random_range(1..=5),
            r.random_range(1..=5),
            r.random_range(1..=6),
            r.random_range(1..=4),
        );
        let mut store = ParamStore::new();
        let layer = SepTcnLayer::new(&mut store, "t", c_in, c_out, &mut r);
        *store.get_mut(layer.bias) = Tensor::randn(&[c_out], 1.0, &mut r);
        let x = Tensor::randn(&[c_in, t, v], 1.0, &mut r);

        let mut tape = Tape::new();
        let params = store.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let y = layer.forward(&mut tape, &params, xv).unwrap();
        let got = tape.value(y);

        let (dw, pw, b) = (
            store.get(layer.depthwise),
            store.get(layer.pointwise),
            store.get(layer.bias),
        );
        for o in 0..c_out {
            for f in 0..t {
                for j in 0..v {
                    let mut acc = b.at(&[o]);
                    for i in 0..c_in {
                        for d in 0..3 {
                            let src = f as isize + d as isize - 1;
                            if (0..t as isize).contains(&src) {
                                acc += pw.at(&[o, i]) * dw.at(&[i, d]) * x.at(&[i, src as usize, j]);
                            }
                        }
                    }
                    assert!((got.at(&[o, f, j]) - acc).abs() < 1e-10);
                }
            }
        }
    }
}

#[test]
fn sep_tcn_multiply_counts() {
    let (sep, dense) = septcn_flops(64, 64, 1, 1, 3);
    assert_eq!((sep, dense), (4288, 12288));
    assert!((dense as f64 / sep as f64 - 2.87).abs() < 0.005);
}

#[test]
fn normalized_adjacency_matches_degree_formula() {
    for seed in 0..40 {
        let mut r = rng(seed + 77);
        let v = r.random_range(1..=8);
        let edges = random_edges(&mut r, v);
        let a = SkeletonGraph::from_edges(v, &edges).unwrap().normalized_adjacency();
        let mut deg = vec![1.0; v];
        for &(p, q) in &edges {
            deg[p] += 1.0;
            deg[q] += 1.0;
        }
        for i in 0..v {
            for j in 0..v {
                let linked = i == j || edges.contains(&(i.min(j), i.max(j)));
                let expect = if linked {
                    1.0 / (deg[i] * deg[j] as f64).sqrt()
                } else {
                    0.0
                };
                assert!((a.at(&[i, j]) - expect).abs() < 1e-15);
                assert_eq!(a.at(&[i, j]), a.at(&[j, i]));
            }
        }
    }
}

#[test]
fn motion_telescopes_back_to_the_clip() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let (d, t, v) = (r.random_range(2..=3), r.random_range(2..=12), r.random_range(1..=6));
        let clip = Tensor::randn(&[d, t, v], 3.0, &mut r);
        let m = compute_motion(&clip).unwrap();
        for c in 0..d {
            for j in 0..v {
                let mut acc = clip.at(&[c, 0, j]);
                assert_eq!(m.at(&[c, 0, j]), 0.0);
                for f in 1..t {
                    acc += m.at(&[c, f, j]);
                    assert!((acc - clip.at(&[c, f, j])).abs() < 1e-12);
                }
            }
        }
    }
    let still = Tensor::full(&[3, 6, 4], -0.75);
    assert!(compute_motion(&still).unwrap().data().iter().all(|&x| x == 0.0));
}

fn names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("c{i}")).collect()
}

#[test]
fn metric_table_row_arithmetic() {
    // precision 100, sensitivity 13/15 = 86.67 for class 0
    let cm = ConfusionMatrix::from_counts(vec![vec![13, 2], vec![0, 220]]).unwrap();
    let r = metrics(&cm, &names(2)).unwrap();
    let c0 = &r.per_class[0];
    assert_eq!(c0.precision, Some(100.0));
    assert!((c0.sensitivity.unwrap() - 86.67).abs() < 0.005);
    assert!((c0.f1.unwrap() - 92.86).abs() < 0.005);
    assert!((r.per_class[1].f1.unwrap() - 99.55).abs() < 0.005);
    assert!((r.macro_f1.unwrap() - 96.2).abs() < 0.05);
    // the rounded pair averages the same way
    assert!(((92.86 + 99.55) / 2.0 - 96.2f64).abs() < 0.05);
}

#[test]
fn metrics_match_independent_recount() {
    let mut r = rng(2024);
    for _ in 0..100 {
        let k = r.random_range(2..=5);
        let counts: Vec<Vec<u64>> = (0..k)
            .map(|_| (0..k).map(|_| r.random_range(0..20)).collect())
            .collect();
        if counts.iter().flatten().sum::<u64>() == 0 {
            continue;
        }
        // expand into individual (truth, prediction) samples and recount
        let mut samples = Vec::new();
        for (t, row) in counts.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                samples.extend(std::iter::repeat_n((t, p), n as usize));
            }
        }
        let cm = ConfusionMatrix::from_counts(counts).unwrap();
        let report = metrics(&cm, &names(k)).unwrap();
        let correct = samples.iter().filter(|(t, p)| t == p).count();
        assert!((report.accuracy - 100.0 * correct as f64 / samples.len() as f64).abs() < 1e-12);
        let (mut ps, mut ss, mut fs) = (vec![], vec![], vec![]);
        for c in 0..k {
            let tp = samples.iter().filter(|&&(t, p)| t == c && p == c).count() as f64;
            let fp = samples.iter().filter(|&&(t, p)| t != c && p == c).count() as f64;
            let fn_ = samples.iter().filter(|&&(t, p)| t == c && p != c).count() as f64;
            let tn = samples.iter().filter(|&&(t, p)| t != c && p != c).count() as f64;
            assert_eq!(tp + fp + fn_ + tn, samples.len() as f64);
            let m = &report.per_class[c];
            let expect = |num: f64, den: f64| (den > 0.0).then(|| 100.0 * num / den);
            for (got, want, acc) in [
                (m.precision, expect(tp, tp + fp), &mut ps),
                (m.sensitivity, expect(tp, tp + fn_), &mut ss),
                (m.f1, expect(2.0 * tp, 2.0 * tp + fp + fn_), &mut fs),
            ] {
                match (got, want) {
                    (Some(g), Some(w)) => {
                        assert!((g - w).abs() < 1e-9, "{g} vs {w}");
                        assert!((0.0..=100.0).contains(&g));
                        acc.push(w);
                    }
                    (None, None) => {}
                    other => panic!("definedness differs: {other:?}"),
                }
            }
            if let (Some(p), Some(s), Some(f)) = (m.precision, m.sensitivity, m.f1) {
                assert!(f >= p.min(s) - 1e-9 && f <= p.max(s) + 1e-9);
            }
        }
        let mean = |v: &Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        for (got, want) in [
            (report.macro_precision, mean(&ps)),
            (report.macro_sensitivity, mean(&ss)),
            (report.macro_f1, mean(&fs)),
        ] {
            match (got, want) {
                (Some(g), Some(w)) => assert!((g - w).abs() < 1e-9),
                (None, None) => {}
                other => panic!("macro definedness differs: {other:?}"),
            }
        }
    }
}

#[test]
fn balanced_binary_accuracy_is_mean_of_one_vs_rest_accuracy() {
    let cm = ConfusionMatrix::from_counts(vec![vec![40, 10], vec![5, 45]]).unwrap();
    let r = metrics(&cm, &names(2)).unwrap();
    let ovr: f64 = (0..2)
        .map(|c| {
            let (tp, _, _, tn) = cm.one_vs_rest(c);
            100.0 * (tp + tn) as f64 / cm.total() as f64
        })
        .sum::<f64>()
        / 2.0;
    assert!((r.accuracy - ovr).abs() < 1e-12);
}

#[test]
fn welch_hand_arithmetic() {
    // a = {2.9, 3.1}: mean 3.0, s² = 0.02; b = {5.3, 5.9}: mean 5.6, s² = 0.18
    // se² = 0.01 + 0.09 = 0.1; t = −2.6/√0.1; df = 0.1² / (0.01² + 0.09²)
    let r = welch_t_test(&[2.9, 3.1], &[5.3, 5.9]).unwrap();
    assert!((r.t - (-8.221921916437786)).abs() < 1e-9, "{}", r.t);
    assert!((r.df - 0.01 / 0.0082).abs() < 1e-9, "{}", r.df);
}
