mod common;

use common::{rng, GradCase, Objective};
use siege_core::diff::{RowSets, Tape, Tensor, Var};
use siege_core::pretext::SpatialLossForm;

const H: f64 = 1e-3;
const FLOOR: f64 = 1e-6;

// Relative error per parameter matrix, `‖a − n‖ / max(‖a‖, ‖n‖)`. Single
// entries near zero are dominated by the O(h²) truncation term, so they are
// checked separately at a smaller step.
#[test]
fn spatial_loss_gradients_match_finite_differences() {
    let mut r = rng(11);
    for g in 0..6 {
        let mut case = GradCase::random(&mut r, 30, 6);
        for form in [SpatialLossForm::Raw, SpatialLossForm::Log] {
            let rep = case.check(Objective::Spatial(form), H, FLOOR);
            assert!(rep.checked > 100, "graph {g}: only {} coordinates checked", rep.checked);
            assert!(rep.max_tensor_rel_error < 1e-4, "graph {g} {form}: {rep:?}");
        }
    }
}

#[test]
fn temporal_loss_gradients_match_finite_differences() {
    let mut r = rng(12);
    for g in 0..6 {
        let mut case = GradCase::random(&mut r, 30, 6);
        let rep = case.check(Objective::Temporal, H, FLOOR);
        assert!(rep.checked > 100, "graph {g}: only {} coordinates checked", rep.checked);
        assert!(rep.max_tensor_rel_error < 1e-4, "graph {g}: {rep:?}");
    }
}

#[test]
fn entrywise_error_shrinks_quadratically_with_step() {
    let mut r = rng(15);
    for g in 0..4 {
        let mut case = GradCase::random(&mut r, 30, 6);
        for objective in [Objective::Spatial(SpatialLossForm::Raw), Objective::Temporal] {
            let coarse = case.check(objective, 1e-3, FLOOR);
            let fine = case.check(objective, 1e-4, FLOOR);
            assert!(fine.max_rel_error < 1e-4, "graph {g} {objective:?}: {fine:?}");
            assert!(
                fine.max_rel_error < coarse.max_rel_error / 20.0 || coarse.max_rel_error < 1e-6,
                "graph {g} {objective:?}: {} then {}",
                coarse.max_rel_error,
                fine.max_rel_error
            );
        }
    }
}

#[test]
fn every_encoder_matrix_receives_spatial_gradient() {
    let mut r = rng(13);
    let mut case = GradCase::random(&mut r, 40, 8);
    case.evaluate(Objective::Spatial(SpatialLossForm::Raw), true);
    for name in ["l1.self", "l1.neigh", "l2.self", "l2.neigh", "proj"] {
        let g = case.encoder.params.grad(name);
        assert!(g.data().iter().any(|&v| v != 0.0), "{name} got no gradient");
    }
    assert!(case.heads.spatial.grad("spatial.w").data().iter().any(|&v| v != 0.0));
}

type Build = Box<dyn Fn(&mut Tape<f64>, Var) -> Var>;

fn primitive_check(build: &Build, rows: usize, cols: usize, x: &[f64]) -> f64 {
    let run = |x: &[f64]| {
        let mut t = Tape::new();
        let a = t.input(Tensor::new(rows, cols, x.to_vec()).unwrap()).unwrap();
        let l = build(&mut t, a);
        (t, a, l)
    };
    let (t, a, l) = run(x);
    let analytic = t.backward(l).unwrap().get(a).unwrap().data().to_vec();
    let value = |x: &[f64]| {
        let (t, _, l) = run(x);
        t.value(l).item()
    };
    let mut worst: f64 = 0.0;
    for k in 0..x.len() {
        let mut up = x.to_vec();
        up[k] += H;
        let mut down = x.to_vec();
        down[k] -= H;
        let n = (value(&up) - value(&down)) / (2.0 * H);
        let rel = (analytic[k] - n).abs() / analytic[k].abs().max(n.abs()).max(FLOOR);
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn primitive_gradients_match_finite_differences() {
    use rand::Rng;
    let mut r = rng(14);
    let (rows, cols) = (7, 5);
    let x: Vec<f64> = (0..rows * cols).map(|_| r.random_range(-2.0..2.0)).collect();
    let w = Tensor::from_fn(cols, 4, |_, _| r.random_range(-1.0..1.0));
    let other = Tensor::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0));

    let cases: Vec<(&str, Build)> = vec![
        ("matmul", {
            let w = w.clone();
            Box::new(move |t, a| {
                let b = t.input(w.clone()).unwrap();
                let m = t.matmul(a, b).unwrap();
                let s = t.sigmoid(m).unwrap();
                t.mean(s).unwrap()
            })
        }),
        ("sigmoid", Box::new(|t, a| {
            let s = t.sigmoid(a).unwrap();
            t.mean(s).unwrap()
        })),
        ("log_sigmoid", Box::new(|t, a| {
            let s = t.log_sigmoid(a).unwrap();
            t.mean(s).unwrap()
        })),
        ("row_dot", {
            let other = other.clone();
            Box::new(move |t, a| {
                let b = t.input(other.clone()).unwrap();
                let d = t.row_dot(a, b).unwrap();
                let s = t.sigmoid(d).unwrap();
                t.mean(s).unwrap()
            })
        }),
        ("l2_normalize_rows", {
            let other = other.clone();
            Box::new(move |t, a| {
                let n = t.l2_normalize_rows(a).unwrap();
                let b = t.input(other.clone()).unwrap();
                t.mse(n, b).unwrap()
            })
        }),
        ("mean_rows", {
            let other = other.clone();
            Box::new(move |t, a| {
                let sets = RowSets::from_lists(&[vec![0u32, 2, 4], vec![], vec![1, 6]]);
                let m = t.mean_rows(a, sets).unwrap();
                let b = t.input(other.select_rows(&[0, 1, 2])).unwrap();
                t.mse(m, b).unwrap()
            })
        }),
        ("gather_rows", {
            let other = other.clone();
            Box::new(move |t, a| {
                let g = t.gather_rows(a, vec![3, 3, 0, 6]).unwrap();
                let b = t.input(other.select_rows(&[0, 1, 2, 3])).unwrap();
                t.mse(g, b).unwrap()
            })
        }),
        ("concat_cols", {
            let other = other.clone();
            Box::new(move |t, a| {
                let b = t.input(other.clone()).unwrap();
                let c = t.concat_cols(a, b).unwrap();
                let s = t.sigmoid(c).unwrap();
                t.mean(s).unwrap()
            })
        }),
        ("add_bias_scale", Box::new(move |t, a| {
            let b = t.input(Tensor::from_fn(1, cols, |_, j| j as f64 * 0.1)).unwrap();
            let s = t.add_bias(a, b).unwrap();
            let s = t.scale(s, -0.7).unwrap();
            let s = t.sigmoid(s).unwrap();
            t.mean(s).unwrap()
        })),
        ("add", {
            let other = other.clone();
            Box::new(move |t, a| {
                let b = t.input(other.clone()).unwrap();
                let s = t.add(a, b).unwrap();
                let s = t.add(s, a).unwrap();
                let s = t.log_sigmoid(s).unwrap();
                t.mean(s).unwrap()
            })
        }),
    ];
    for (name, f) in &cases {
        let worst = primitive_check(f, rows, cols, &x);
        assert!(worst < 1e-4, "{name}: relative error {worst:e}");
    }
}
