use std::io::Cursor;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dvrsgd::data::{partition_indices, read_libsvm, save_libsvm, write_libsvm, LibsvmOptions};
use dvrsgd::losses::Target;
use dvrsgd::protocol::{
    decode, encode, read_frame, write_frame, Control, Message, PullRequest, TaskId, UpdatePush,
};
use dvrsgd::{
    load_libsvm, make_synthetic, plain_gradient, vr_gradient, LossKind, ParamVector,
    PartitionStrategy, Problem, Snapshot, SyntheticSpec,
};

fn problem(kind: LossKind, seed: u64) -> Problem {
    let spec = match kind {
        LossKind::MulticlassLogistic => SyntheticSpec::new(kind, 60, 5).classes(3).lambda(0.1),
        LossKind::L2Logistic => SyntheticSpec::new(kind, 60, 6).lambda(0.1),
        LossKind::Quadratic => SyntheticSpec::new(kind, 60, 6).lambda(0.05),
    };
    make_synthetic(&spec.seed(seed)).unwrap()
}

fn random_point(len: usize, seed: u64, scale: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-scale..scale)).collect()
}

fn kinds() -> impl Strategy<Value = LossKind> {
    prop_oneof![
        Just(LossKind::Quadratic),
        Just(LossKind::L2Logistic),
        Just(LossKind::MulticlassLogistic)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn objective_sits_between_curvature_bounds(kind in kinds(), seed in 0u64..1000, a in 0u64..1000, b in 0u64..1000) {
        let p = problem(kind, seed % 7);
        let c = p.curvature();
        let w = random_point(p.param_len(), a, 2.0);
        let v = random_point(p.param_len(), b + 5000, 2.0);
        let g = p.full_gradient(&w).unwrap();
        let d: Vec<f64> = v.iter().zip(&w).map(|(x, y)| x - y).collect();
        let dd: f64 = d.iter().map(|x| x * x).sum();
        let linear = p.objective(&w).unwrap() + g.dot(&d);
        let fv = p.objective(&v).unwrap();
        let slack = 1e-9 * (1.0 + fv.abs());
        prop_assert!(fv <= linear + 0.5 * c.l * dd + slack, "upper bound broken: {fv} vs {}", linear + 0.5 * c.l * dd);
        prop_assert!(fv >= linear + 0.5 * c.mu * dd - slack, "lower bound broken: {fv} vs {}", linear + 0.5 * c.mu * dd);
    }

    #[test]
    fn gradient_matches_central_differences(kind in kinds(), seed in 0u64..1000) {
        let p = problem(kind, 3);
        let w = random_point(p.param_len(), seed, 1.0);
        let g = p.full_gradient(&w).unwrap();
        let h = 1e-6;
        for j in 0..p.param_len() {
            let (mut up, mut down) = (w.clone(), w.clone());
            up[j] += h;
            down[j] -= h;
            let fd = (p.objective(&up).unwrap() - p.objective(&down).unwrap()) / (2.0 * h);
            prop_assert!((fd - g[j]).abs() <= 1e-6 * (1.0 + g[j].abs()), "coordinate {j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn vr_gradient_is_unbiased(kind in kinds(), seed in 0u64..1000) {
        let p = problem(kind, 1);
        let snap = Snapshot::new(&p, random_point(p.param_len(), seed, 1.0).into(), 1).unwrap();
        let w = random_point(p.param_len(), seed + 1, 1.0);
        let mut mean = vec![0.0; p.param_len()];
        for i in 0..p.len() {
            for (m, x) in mean.iter_mut().zip(vr_gradient(&p, &w, &snap, &[i]).unwrap().iter()) {
                *m += x / p.len() as f64;
            }
        }
        let full = p.full_gradient(&w).unwrap();
        for (m, f) in mean.iter().zip(full.iter()) {
            prop_assert!((m - f).abs() <= 1e-12);
        }
    }

    #[test]
    fn partition_covers_every_sample_once(n in 1usize..400, workers in 1usize..17, seed in any::<u64>(), shuffled in any::<bool>()) {
        prop_assume!(workers <= n);
        let strategy = if shuffled { PartitionStrategy::Shuffled(seed) } else { PartitionStrategy::Contiguous };
        let part = partition_indices(n, workers, strategy).unwrap();
        let mut seen = vec![0u32; n];
        for (p, subset) in part.subsets().iter().enumerate() {
            for &i in subset {
                seen[i] += 1;
                prop_assert_eq!(part.assignments()[i] as usize, p);
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let counts = part.counts();
        prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        let total: f64 = part.weights().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        for (q, c) in part.weights().iter().zip(&counts) {
            prop_assert_eq!(*q, *c as f64 / n as f64);
        }
    }

    #[test]
    fn finite_messages_round_trip(
        worker in any::<u32>(),
        t in any::<u64>(),
        w_bar in proptest::collection::vec(-1e9f64..1e9, 0..40),
        delta in proptest::collection::vec(-1e9f64..1e9, 0..40),
    ) {
        let messages = [
            Message::Update(UpdatePush { worker, task: TaskId::update(t), w_bar: w_bar.clone().into(), delta: delta.into() }),
            Message::Pull(PullRequest { worker, task: TaskId::evaluation(t) }),
            Message::Control(Control::SnapshotBroadcast { stage: t, anchor_grad: w_bar.into() }),
        ];
        for msg in messages {
            let bytes = encode(&msg);
            prop_assert_eq!(&decode(&bytes).unwrap(), &msg);
            for cut in 0..bytes.len() {
                prop_assert!(decode(&bytes[..cut]).is_err());
            }
        }
    }
}

#[test]
fn quadratic_optimum_matches_normal_equations() {
    let p = problem(LossKind::Quadratic, 4);
    let d = p.dim();
    let n = p.len() as f64;
    let mut h = DMatrix::<f64>::identity(d, d) * p.lambda();
    let mut rhs = DVector::<f64>::zeros(d);
    for s in p.samples() {
        let mut a = DVector::<f64>::zeros(d);
        for (i, v) in s.features.iter() {
            a[i] = v;
        }
        let Target::Value(b) = s.target else {
            panic!("quadratic sample without a real target")
        };
        h += &a * a.transpose() / n;
        rhs += &a * (b / n);
    }
    let oracle = h.lu().solve(&rhs).unwrap();
    let w = p.solve_optimum(1e-12, 100).unwrap();
    for j in 0..d {
        assert!(
            (w[j] - oracle[j]).abs() <= 1e-10,
            "{j}: {} vs {}",
            w[j],
            oracle[j]
        );
    }
}

#[test]
fn logistic_optimum_has_vanishing_gradient() {
    for kind in [LossKind::L2Logistic, LossKind::MulticlassLogistic] {
        let p = problem(kind, 2);
        let w = p.solve_optimum(1e-10, 100_000).unwrap();
        let gn = p.full_gradient(&w).unwrap().norm();
        assert!(gn <= 1e-10, "{kind:?}: {gn}");
        // strong convexity: nearby points are strictly worse
        let f = p.objective(&w).unwrap();
        let nudged = w.step(1e-3, &random_point(p.param_len(), 9, 1.0));
        assert!(p.objective(&nudged).unwrap() > f);
    }
}

#[test]
fn bounded_row_problem_has_unit_strong_convexity() {
    let p = make_synthetic(
        &SyntheticSpec::new(LossKind::Quadratic, 500, 10)
            .lambda(1.0)
            .row_norm(3.0)
            .seed(5),
    )
    .unwrap();
    let c = p.curvature();
    assert!(c.exact);
    assert!((c.mu - 1.0).abs() <= 1e-12, "mu = {}", c.mu);
    assert!(
        (c.l_sample_max - 10.0).abs() <= 1e-9,
        "max per-sample smoothness {}",
        c.l_sample_max
    );
    for s in p.samples() {
        assert!((s.features.norm_sq() - 9.0).abs() <= 1e-9);
    }
}

#[test]
fn variance_reduction_shrinks_near_the_anchor() {
    let p = problem(LossKind::L2Logistic, 6);
    let anchor = random_point(p.param_len(), 1, 1.0);
    let snap = Snapshot::new(&p, anchor.clone().into(), 1).unwrap();
    let full_at = |w: &[f64]| p.full_gradient(w).unwrap();
    let variance = |w: &[f64], vr: bool| -> f64 {
        let mean = full_at(w);
        (0..p.len())
            .map(|i| {
                let g = if vr {
                    vr_gradient(&p, w, &snap, &[i]).unwrap()
                } else {
                    plain_gradient(&p, w, &[i]).unwrap()
                };
                g.dist_sq(&mean)
            })
            .sum::<f64>()
            / p.len() as f64
    };
    let mut previous = f64::INFINITY;
    for r in [1e-1, 1e-2, 1e-3] {
        let w: Vec<f64> = anchor
            .iter()
            .zip(random_point(p.param_len(), 2, 1.0))
            .map(|(a, d)| a + r * d)
            .collect();
        let (vr, plain) = (variance(&w, true), variance(&w, false));
        assert!(vr < 0.05 * plain, "radius {r}: {vr} vs {plain}");
        assert!(vr < previous);
        previous = vr;
    }
    assert!(variance(&anchor, true) <= 1e-24);
}

#[test]
fn libsvm_files_round_trip() {
    let p = problem(LossKind::MulticlassLogistic, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.svm");
    save_libsvm(&p, &path).unwrap();
    let q = load_libsvm(&path).unwrap();
    assert_eq!(q.len(), p.len());
    assert_eq!(q.num_classes(), p.num_classes());
    // labels are renumbered in first-seen order, so compare through names
    for (a, b) in p.samples().iter().zip(q.samples()) {
        assert_eq!(a.features, b.features);
        let (Target::Class(x), Target::Class(y)) = (a.target, b.target) else {
            panic!("class targets expected")
        };
        assert_eq!(p.label_names()[x], q.label_names()[y]);
    }
    assert_eq!(q.dim(), p.dim());

    let quad = problem(LossKind::Quadratic, 8);
    let mut text = Vec::new();
    write_libsvm(&quad, &mut text).unwrap();
    let opts = LibsvmOptions {
        dim: Some(quad.dim()),
        kind: LossKind::Quadratic,
        lambda: quad.lambda(),
    };
    let back = read_libsvm(Cursor::new(text), "memory", &opts).unwrap();
    let v = random_point(quad.param_len(), 4, 1.0);
    assert_eq!(back.objective(&v).unwrap(), quad.objective(&v).unwrap());
}

#[test]
fn malformed_libsvm_lines_report_their_position() {
    let text = "1 1:0.5 2:1.0\n2 3:oops\n";
    let err = read_libsvm(Cursor::new(text), "bad.svm", &LibsvmOptions::default()).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("bad.svm") && msg.contains('2'), "{msg}");
}

#[test]
fn frames_stream_back_in_order() {
    let msgs = vec![
        Message::AssignTask(TaskId::update(3)),
        Message::PullResponse {
            task: TaskId::update(3),
            w: ParamVector::from(vec![1.0, -2.5]),
        },
        Message::Control(Control::Stop),
    ];
    let mut buf = Vec::new();
    for m in &msgs {
        write_frame(&mut buf, m).unwrap();
    }
    let mut cursor = Cursor::new(buf);
    let mut back = Vec::new();
    while let Some(m) = read_frame(&mut cursor).unwrap() {
        back.push(m);
    }
    assert_eq!(back, msgs);
}
