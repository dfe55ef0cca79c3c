//! Protocol-level identities between CleanFL, RobustFL and FedERL.

mod common;

use federl_core::budget::BudgetCap;
use federl_core::fed::{epoch_order, run_experiment, EvalMode, EvalPlan, Federation, Method};
use federl_core::image::Image;
use federl_core::losses::cross_entropy_loss;
use federl_core::model::{sgd_step, PassCounter};

fn fed_with(method: Method, rounds: usize, f: impl FnOnce(&mut Federation)) -> Federation {
    let mut fed = common::federation(method, 3, rounds);
    f(&mut fed);
    fed
}

#[test]
fn single_client_equals_centralized_sgd() {
    let fed = common::federation(Method::CleanFL, 1, 3);
    let data = &fed.clients[0];
    let mut clf = fed.classifier(fed.initial_state().global).unwrap();
    for t in 1..=3 {
        for e in 1..=fed.cfg.local_epochs {
            for idx in epoch_order(fed.cfg.seed, 0, t, e, data.len()).chunks(fed.cfg.batch_size) {
                let x: Vec<Image> = idx.iter().map(|&i| data.images()[i].clone()).collect();
                let y: Vec<u16> = idx.iter().map(|&i| data.labels()[i]).collect();
                let g = clf.grad(&x, |p| cross_entropy_loss(p, &y)).unwrap();
                let next = sgd_step(clf.params(), &g, fed.cfg.client_lr).unwrap();
                clf.set_params(next).unwrap();
            }
        }
    }
    let mut state = fed.initial_state();
    for _ in 0..3 {
        state = fed.run_round(&state).unwrap();
    }
    assert_eq!(&state.global, clf.params());
}

#[test]
fn client_order_is_irrelevant_over_rounds() {
    for method in Method::ALL {
        let fed = fed_with(method, 2, |f| f.cfg.t_rob = 2);
        let (mut a, mut b) = (fed.initial_state(), fed.initial_state());
        for _ in 0..2 {
            a = fed.run_round_with_order(&a, &[0, 1, 2]).unwrap();
            b = fed.run_round_with_order(&b, &[2, 0, 1]).unwrap();
        }
        assert_eq!(a.global, b.global, "{method}");
    }
}

fn final_weights(fed: &Federation) -> federl_core::model::ParameterVector {
    let mut s = fed.initial_state();
    for _ in 0..fed.cfg.global_rounds {
        s = fed.run_round(&s).unwrap();
    }
    s.global
}

#[test]
fn dart_never_firing_equals_cleanfl() {
    let clean = final_weights(&fed_with(Method::CleanFL, 3, |_| ()));
    let federl = final_weights(&fed_with(Method::FedERL, 3, |f| f.cfg.t_rob = 4));
    assert_eq!(clean, federl);
}

#[test]
fn zero_dart_lr_equals_cleanfl() {
    let clean = final_weights(&fed_with(Method::CleanFL, 3, |_| ()));
    let federl = final_weights(&fed_with(Method::FedERL, 3, |f| {
        f.cfg.one_shot = true;
        f.dart.lr = 0.0;
    }));
    assert_eq!(clean, federl);
}

#[test]
fn one_shot_equals_robustified_cleanfl() {
    let clean = final_weights(&fed_with(Method::CleanFL, 3, |_| ()));
    let fed = fed_with(Method::FedERL, 3, |f| f.cfg.one_shot = true);
    let (robust, _) = fed.robustify(&clean, 3).unwrap();
    assert_ne!(robust, clean);
    assert_eq!(final_weights(&fed), robust);
}

#[test]
fn curve_points_equal_truncated_one_shot_runs() {
    let test = common::shapes(30, 2);
    let suite = common::suite(&test);
    let fed = fed_with(Method::FedERL, 4, |f| f.cfg.one_shot = true);
    let curve = run_experiment(&fed, &EvalPlan::new(2, EvalMode::Curve), &suite).unwrap();
    assert_eq!(curve.records.iter().map(|r| r.round).collect::<Vec<_>>(), vec![2, 4]);
    for (t, w) in &curve.snapshots {
        let truncated = fed_with(Method::FedERL, *t, |f| f.cfg.one_shot = true);
        assert_eq!(&final_weights(&truncated), w, "round {t}");
    }
    let clean = run_experiment(&fed_with(Method::CleanFL, 4, |_| ()), &EvalPlan::new(2, EvalMode::Protocol), &suite).unwrap();
    for (c, f) in clean.records.iter().zip(&curve.records) {
        assert_eq!((c.time_s, c.energy_j), (f.time_s, f.energy_j));
    }
    assert_eq!(curve.state.server.dart_runs, 2);
}

fn passes(method: Method) -> (u64, u64) {
    let counter = PassCounter::new();
    let fed = fed_with(method, 2, |f| {
        f.cfg.t_rob = 1;
        f.client_counter = Some(counter.clone());
    });
    final_weights(&fed);
    (counter.forward(), counter.backward())
}

#[test]
fn client_pass_counts() {
    let clean = passes(Method::CleanFL);
    assert!(clean.0 > 0);
    assert_eq!(passes(Method::FedERL), clean);
    let robust = passes(Method::RobustFL);
    assert_eq!(robust.0, 3 * clean.0);
    assert_eq!(robust.1, 3 * clean.1);
}

#[test]
fn client_ledgers_do_not_depend_on_t_rob() {
    let test = common::shapes(30, 2);
    let suite = common::suite(&test);
    let ledgers: Vec<_> = [1, 2, 5]
        .into_iter()
        .map(|t_rob| {
            let fed = fed_with(Method::FedERL, 4, |f| {
                f.cfg.t_rob = t_rob;
                f.cap = BudgetCap { time_s: Some(3.0), energy_j: None };
            });
            let out = run_experiment(&fed, &EvalPlan::final_only(), &suite).unwrap();
            assert!(out.halted);
            assert_eq!(out.state.round, 3);
            out.state.ledger
        })
        .collect();
    assert!(ledgers.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn repeated_runs_are_identical() {
    let test = common::shapes(30, 2);
    let suite = common::suite(&test);
    for method in Method::ALL {
        let fed = fed_with(method, 2, |f| f.cfg.t_rob = 1);
        let plan = EvalPlan::new(1, EvalMode::Protocol);
        let a = run_experiment(&fed, &plan, &suite).unwrap();
        let b = run_experiment(&fed, &plan, &suite).unwrap();
        assert_eq!(a.records, b.records, "{method}");
        assert_eq!(a.state.global, b.state.global);
    }
}
