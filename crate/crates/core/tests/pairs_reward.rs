use proptest::prelude::*;
use rllr::neural::{loss_and_grads, Batch, ModelCheckpoint, ModelConfig, PairItem, Role};
use rllr::pairs::{
    build_label_pairs, build_ranked_pairs, incorrect_label, incorrect_label_support, make_label_pairs, pair_stats,
    shifted_rating, shifted_rating_grid, stats_csv, validate_pair, ComparisonPair, PairKind, RankedHyper,
};
use rllr::reward::{bt_prob, check_disjoint, reward_init, rm_eval, score, train_rm, RmHyper};
use rllr::rng::stream;
use rllr::synthlang::{Judge, Label, Task, TaskId};

fn tiny(task: &Task, seed: u64) -> ModelCheckpoint {
    let cfg = ModelConfig { width: 16, layers: 1, heads: 2, context_length: 64, ..ModelConfig::new(task.vocab.len()) };
    ModelCheckpoint::init(cfg, Role::Policy, task.vocab.fingerprint(), &mut stream(seed, &[])).unwrap()
}

#[test]
fn rating_rule_worked_example_and_grid() {
    assert!((shifted_rating(2.8, 0.3) - 1.1).abs() < 1e-12);
    for gold in 0..=10 {
        for u in [-2, -1, 0, 1, 2] {
            let v = shifted_rating_grid(gold, u);
            assert!((0..=10).contains(&v), "gold {gold} u {u} -> {v}");
            assert_ne!(v, gold);
            // the grid form agrees with the real-valued rule
            assert!((shifted_rating(gold as f64 * 0.5, u as f64 * 0.5) - v as f64 * 0.5).abs() < 1e-12);
        }
    }
}

#[test]
fn label_pair_corpora_satisfy_invariants() {
    for id in TaskId::ALL {
        let task = Task::new(id);
        let exs = task.generate(4, 0, 60);
        let (pairs, short) = build_label_pairs(&task, &exs, 2, 9).unwrap();
        assert_eq!(short, if id == TaskId::Polarity { 60 } else { 0 });
        for p in &pairs {
            let ex = exs.iter().find(|e| e.id == p.example_id).unwrap();
            validate_pair(&task, ex, p).unwrap();
            assert_eq!(p.kind, PairKind::LabelSensitive);
        }
        assert_eq!(build_label_pairs(&task, &exs, 2, 9).unwrap().0, pairs);
        let json = rllr::jsonl::to_string(&pairs);
        let back: Vec<ComparisonPair> = json.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(back, pairs);
    }
}

proptest! {
    #[test]
    fn wrong_labels_stay_in_support(id in prop_oneof![Just(TaskId::Polarity), Just(TaskId::Topic4), Just(TaskId::Rating)], gold in 0u8..11, s in 0u64..10_000) {
        let task = Task::new(id);
        let gold = Label(gold % task.spec.num_labels() as u8);
        let l = incorrect_label(&task.spec, gold, &mut stream(s, &[])).unwrap();
        prop_assert_ne!(l, gold);
        prop_assert!(incorrect_label_support(&task.spec, gold).contains(&l));
    }

    #[test]
    fn label_pairs_are_deterministic(n in 1usize..4, s in 0u64..1000) {
        let task = Task::new(TaskId::Topic4);
        let ex = &task.generate(s, 0, 1)[0];
        let a = make_label_pairs(&task, ex, n, &mut stream(s, &[])).unwrap();
        let b = make_label_pairs(&task, ex, n, &mut stream(s, &[])).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.pairs.len(), n);
    }

    #[test]
    fn bt_prob_is_antisymmetric(a in -50.0f64..50.0, b in -50.0f64..50.0) {
        let s = bt_prob(a, b) + bt_prob(b, a);
        prop_assert!((s - 1.0).abs() <= f64::EPSILON);
    }
}

#[test]
fn ranked_pairs_from_a_policy_validate() {
    let task = Task::new(TaskId::Polarity);
    let policy = tiny(&task, 1);
    let exs = task.generate(6, 0, 8);
    let hyper = RankedHyper { max_new: 12, ..Default::default() };
    let r = build_ranked_pairs(&policy, &task, &Judge::default(), &exs, &hyper, 3).unwrap();
    for p in &r.pairs {
        validate_pair(&task, exs.iter().find(|e| e.id == p.example_id).unwrap(), p).unwrap();
    }
    let again = build_ranked_pairs(&policy, &task, &Judge::default(), &exs, &hyper, 3).unwrap();
    assert_eq!(again, r);
    let st = pair_stats(&r.pairs);
    assert_eq!(st.overall.total, r.pairs.len());
    assert!(stats_csv(&st).starts_with("task,total,rationale_sensitive,label_sensitive,fraction\n"));
}

#[test]
fn reward_training_from_a_zero_head() {
    let task = Task::new(TaskId::Topic4);
    let sft = tiny(&task, 2);
    let exs = task.generate(8, 0, 1);
    let (pairs, _) = build_label_pairs(&task, &exs, 1, 1).unwrap();
    let pair = &pairs[0];

    let rm0 = reward_init(&sft, Role::RewardLabel).unwrap();
    let item = PairItem { chosen: pair.chosen_sequence(), rejected: pair.rejected_sequence() };
    let l0 = loss_and_grads(&rm0, Batch::Bt(std::slice::from_ref(&item)), false).unwrap().loss;
    assert!((l0 - std::f64::consts::LN_2).abs() < 1e-15);
    assert_eq!(rm_eval(&rm0, &pairs).unwrap().accuracy, 0.5);

    let zero = train_rm(&sft, Role::RewardLabel, &pairs, &RmHyper { epochs: 0, ..Default::default() }).unwrap();
    assert_eq!(zero.model.params, rm0.params);

    let hyper = RmHyper { epochs: 200, batch_size: 1, lr: 1e-3, seed: 0 };
    let out = train_rm(&sft, Role::RewardLabel, &pairs, &hyper).unwrap();
    assert_eq!(out.metrics.len(), 200);
    let margin = score(&out.model, &item.chosen).unwrap() - score(&out.model, &item.rejected).unwrap();
    assert!(margin > 0.0, "margin {margin}");
    assert_eq!(rm_eval(&out.model, &pairs).unwrap().accuracy, 1.0);
    assert_eq!(out.model.role, Role::RewardLabel);
    assert_eq!(out.model.vocab_fingerprint, sft.vocab_fingerprint);
}

#[test]
fn holdout_must_be_label_sensitive_and_disjoint() {
    let task = Task::new(TaskId::Topic4);
    let rm = reward_init(&tiny(&task, 3), Role::RewardLabel).unwrap();
    let (pairs, _) = build_label_pairs(&task, &task.generate(8, 0, 4), 1, 1).unwrap();
    let mut odd = pairs.clone();
    odd[0].kind = PairKind::RationaleSensitive;
    assert!(rm_eval(&rm, &odd).is_err());
    assert!(check_disjoint(&pairs[..2], &pairs[2..]).is_ok());
    assert!(check_disjoint(&pairs, &pairs[1..2]).is_err());
    let a = rm_eval(&rm, &pairs).unwrap();
    assert_eq!(a, rm_eval(&rm, &pairs).unwrap());
}
