use proptest::prelude::*;
use rllr::rng::stream;
use rllr::synthlang::{
    claimed_counts, oracle_answer, oracle_rationale, parse_label, Answer, Example, Judge, Label, Task, TaskId,
};

/// All count vectors over `families` families summing to `total`.
fn compositions(families: usize, total: u32) -> Vec<Vec<u32>> {
    if families == 1 {
        return vec![vec![total]];
    }
    (0..=total)
        .flat_map(|first| {
            compositions(families - 1, total - first).into_iter().map(move |mut rest| {
                rest.insert(0, first);
                rest
            })
        })
        .collect()
}

fn l1(a: &[u32], b: &[u32]) -> u32 {
    a.iter().zip(b).map(|(x, y)| x.abs_diff(*y)).sum()
}

/// L1-closest total-preserving counts implying `target`, lexicographically
/// largest among ties.
fn brute_force_perturb(task: &Task, truth: &[u32], target: Label) -> Vec<u32> {
    let total = truth.iter().sum();
    compositions(truth.len(), total)
        .into_iter()
        .filter(|c| task.spec.rule(c) == Some(target))
        .min_by(|a, b| l1(a, truth).cmp(&l1(b, truth)).then_with(|| b.cmp(a)))
        .expect("some composition implies every label")
}

#[test]
fn perturbation_matches_brute_force() {
    for id in TaskId::ALL {
        let task = Task::new(id);
        for ex in task.generate(11, 0, 300) {
            for target in task.spec.labels() {
                let got = task.spec.perturb_counts(&ex.evidence, target);
                assert_eq!(got, brute_force_perturb(&task, &ex.evidence, target), "{id} {:?} -> {target:?}", ex.evidence);
            }
        }
    }
}

#[test]
fn topic4_ties_keep_low_index_tokens() {
    let task = Task::new(TaskId::Topic4);
    // [2,3,1,1] and [2,3,2,0] are both 6 away; the larger vector wins
    assert_eq!(task.spec.perturb_counts(&[4, 0, 2, 1], Label(1)), vec![2, 3, 2, 0]);
}

#[test]
fn polarity_swap_is_minimal() {
    let task = Task::new(TaskId::Polarity);
    // a 3/3 split would be a tie, so the winner needs total/2 + 1
    assert_eq!(task.spec.perturb_counts(&[4, 2], Label(1)), vec![2, 4]);
    assert_eq!(task.spec.perturb_counts(&[5, 0], Label(1)), vec![2, 3]);
    assert_eq!(task.spec.perturb_counts(&[1, 0], Label(1)), vec![0, 1]);
}

fn task_strategy() -> impl Strategy<Value = TaskId> {
    prop_oneof![Just(TaskId::Polarity), Just(TaskId::Topic4), Just(TaskId::Rating)]
}

fn example(task: &Task, seed: u64) -> Example {
    task.generate(seed, seed, 1).remove(0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn oracle_answers_parse_to_their_label(id in task_strategy(), seed in 0u64..1_000_000, pick in 0usize..16, s in 0u64..1000) {
        let task = Task::new(id);
        let ex = example(&task, seed);
        let label = Label((pick % task.spec.num_labels()) as u8);
        let ans = oracle_answer(&task.spec, &ex, label, &task.vocab, &mut stream(s, &[])).unwrap();
        prop_assert_eq!(parse_label(&ans.0, &task.spec, &task.vocab), Ok(label));
        let claims: Option<Vec<u32>> = claimed_counts(&task.spec, ans.rationale(&task.vocab), &task.vocab).into_iter().collect();
        let claims = claims.expect("oracle rationales state every family");
        prop_assert_eq!(task.spec.rule(&claims), Some(label));
        prop_assert_eq!(claims.iter().sum::<u32>(), ex.evidence.iter().sum::<u32>());
        if label == ex.gold_label {
            prop_assert_eq!(&claims, &ex.evidence);
        }
    }

    #[test]
    fn gold_answer_dominates_wrong_labels(id in task_strategy(), seed in 0u64..1_000_000, s in 0u64..1000) {
        let task = Task::new(id);
        let ex = example(&task, seed);
        let judge = Judge::default();
        let gold = oracle_answer(&task.spec, &ex, ex.gold_label, &task.vocab, &mut stream(s, &[1])).unwrap();
        let g = judge.score(&task.spec, &ex, &gold, &task.vocab);
        prop_assert!((g - 4.5).abs() < 1e-12);
        for l in task.spec.labels().filter(|&l| l != ex.gold_label) {
            let wrong = oracle_answer(&task.spec, &ex, l, &task.vocab, &mut stream(s, &[2])).unwrap();
            let w = judge.score(&task.spec, &ex, &wrong, &task.vocab);
            prop_assert!((w - 1.5).abs() < 1e-12);
            prop_assert!(g > w);
        }
    }

    #[test]
    fn rank_ignores_order_and_duplicates(id in task_strategy(), seed in 0u64..1_000_000, labels in proptest::collection::vec(0usize..16, 2..6), rot in 0usize..6) {
        let task = Task::new(id);
        let ex = example(&task, seed);
        let judge = Judge::default();
        let answers: Vec<Answer> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| oracle_answer(&task.spec, &ex, Label((l % task.spec.num_labels()) as u8), &task.vocab, &mut stream(i as u64, &[])).unwrap())
            .collect();
        let v = judge.rank(&task.spec, &ex, &answers, &task.vocab).unwrap();
        let mut rotated = answers.clone();
        rotated.rotate_left(rot % answers.len());
        let r = judge.rank(&task.spec, &ex, &rotated, &task.vocab).unwrap();
        for (i, a) in answers.iter().enumerate() {
            let j = rotated.iter().position(|b| b == a).unwrap();
            prop_assert_eq!(v.scores[i], r.scores[j]);
        }
        // appending a copy leaves every score and the relative order intact
        let mut dup = answers.clone();
        dup.push(answers[0].clone());
        let d = judge.rank(&task.spec, &ex, &dup, &task.vocab).unwrap();
        prop_assert_eq!(&d.scores[..answers.len()], &v.scores[..]);
        for i in 0..answers.len() {
            for j in 0..answers.len() {
                prop_assert_eq!(v.positions[i] < v.positions[j], d.positions[i] < d.positions[j]);
            }
        }
    }

    #[test]
    fn rationale_variant_does_not_change_claims(id in task_strategy(), seed in 0u64..1_000_000, a in 0u64..100, b in 0u64..100) {
        let task = Task::new(id);
        let ex = example(&task, seed);
        let ra = oracle_rationale(&task.spec, &ex, ex.gold_label, &task.vocab, &mut stream(a, &[])).unwrap();
        let rb = oracle_rationale(&task.spec, &ex, ex.gold_label, &task.vocab, &mut stream(b, &[])).unwrap();
        prop_assert_eq!(claimed_counts(&task.spec, &ra, &task.vocab), claimed_counts(&task.spec, &rb, &task.vocab));
    }
}

#[test]
fn generated_examples_are_consistent() {
    for id in TaskId::ALL {
        let task = Task::new(id);
        let exs = task.generate(3, 100, 200);
        for (i, ex) in exs.iter().enumerate() {
            assert_eq!(ex.id, 100 + i as u64);
            assert_eq!(task.spec.count_evidence(&ex.input_tokens), ex.evidence);
            assert_eq!(task.spec.rule(&ex.evidence), Some(ex.gold_label));
            let rec = ex.to_record(&task.spec);
            assert_eq!(&Example::from_record(rec, &task.spec).unwrap(), ex);
        }
        assert_eq!(task.generate(3, 100, 200), exs);
    }
}
