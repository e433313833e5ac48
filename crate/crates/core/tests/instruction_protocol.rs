use std::sync::Mutex;

use editforge::instruct::{Generator, InContextPool, Outcome, MAX_ATTEMPTS};
use editforge::providers::stub::StubTextGenerator;
use editforge::providers::{GenerateRequest, TextGenerator};
use editforge::rng::derive;
use editforge::task::EditTaskType;
use editforge::toy::Scene;

fn items(n: usize) -> Vec<(String, EditTaskType)> {
    (0..n)
        .map(|i| {
            let scene = Scene::random(&mut derive(17, &format!("scene/{i}")));
            (scene.caption(), EditTaskType::ALL[i % EditTaskType::ALL.len()])
        })
        .collect()
}

fn run(n: usize) -> (Vec<Outcome>, InContextPool, InContextPool) {
    let stub = StubTextGenerator;
    let generator = Generator::new(&stub);
    let before = InContextPool::seeded();
    let mut pool = before.clone();
    let out = generator.generate_batch(&items(n), &mut pool, 23).unwrap();
    (out, before, pool)
}

#[test]
fn pool_growth_reconciles_with_acceptances() {
    let (out, before, after) = run(100);
    assert_eq!(out.len(), 100);
    let accepted: Vec<_> = out.iter().filter_map(Outcome::record).collect();
    assert_eq!(after.total() - before.total(), accepted.len());
    for task in EditTaskType::ALL {
        let gained = accepted.iter().filter(|r| r.edit_type == task).count();
        assert_eq!(after.len(task) - before.len(task), gained, "{task}");
    }
    let rejected = out.len() - accepted.len();
    eprintln!("accepted {} rejected {rejected}", accepted.len());
    // the stub's deliberate faults must exercise the retry path
    assert!(out.iter().any(|o| matches!(o, Outcome::Accepted { attempts, .. } if *attempts > 1)));
}

#[test]
fn outcomes_do_not_depend_on_worker_count() {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let (a, _, pa) = one.install(|| run(40));
    let (b, _, pb) = four.install(|| run(40));
    assert_eq!(a, b);
    assert_eq!(pa.to_jsonl(), pb.to_jsonl());
}

/// Replies with prose-wrapped JSON until told otherwise.
struct Faulty {
    calls: Mutex<usize>,
    good_after: usize,
}

impl TextGenerator for Faulty {
    fn generate(&self, _req: &GenerateRequest) -> editforge::error::Result<String> {
        let mut n = self.calls.lock().unwrap();
        *n += 1;
        if *n > self.good_after {
            Ok("{'edit': 'add a hat to the cat', 'edited object': 'hat', 'output': 'a cat wearing a hat'}".into())
        } else {
            Ok("Sure, here it is: {'edit': 'x'}".into())
        }
    }
}

#[test]
fn retry_budget_is_three_attempts() {
    let pool = InContextPool::seeded();
    let caption = "a cat sitting in a cafe";
    let late = Faulty { calls: Mutex::new(0), good_after: 2 };
    match Generator::new(&late).generate(caption, EditTaskType::Add, &pool, 1).unwrap() {
        Outcome::Accepted { attempts, .. } => assert_eq!(attempts, 3),
        o => panic!("{o:?}"),
    }
    let never = Faulty { calls: Mutex::new(0), good_after: usize::MAX };
    match Generator::new(&never).generate(caption, EditTaskType::Add, &pool, 1).unwrap() {
        Outcome::Rejected { rejections } => {
            assert_eq!(rejections.len(), MAX_ATTEMPTS);
            assert!(rejections.iter().all(|r| r.reason == "prose_around_json"));
        }
        o => panic!("{o:?}"),
    }
    assert_eq!(*never.calls.lock().unwrap(), MAX_ATTEMPTS);
}
