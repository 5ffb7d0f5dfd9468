use sprecher::network::{Architecture, NetConfig, SprecherNetwork};
use sprecher::tasks::{gen_task, TaskSpec};
use sprecher::train::{evaluate, train_loop, DomainSchedule, LossKind, TrainConfig};

fn run(seed: u64, batch: usize) -> (Vec<f64>, Vec<f64>) {
    let mut spec = TaskSpec::preset("toy2d").unwrap();
    spec.n_train = 256;
    spec.n_test = 128;
    let (train, _) = gen_task(&spec).unwrap();
    let arch = Architecture::parse("2->[6,6]->1").unwrap();
    let cfg = NetConfig {
        seed,
        ..NetConfig::default()
    };
    let mut net = SprecherNetwork::build(&arch, &cfg, train.y.mean()).unwrap();
    let tc = TrainConfig {
        epochs: 60,
        batch_size: batch,
        seed,
        domain_schedule: DomainSchedule::EveryEpoch,
        ..TrainConfig::default()
    };
    let h = train_loop(&mut net, &train, &tc).unwrap();
    (h.epochs.iter().map(|r| r.loss).collect(), net.params())
}

#[test]
fn training_is_deterministic() {
    for batch in [0, 32] {
        let a = run(3, batch);
        let b = run(3, batch);
        assert_eq!(a, b);
        assert_ne!(a, run(4, batch));
    }
}

#[test]
fn training_reduces_loss() {
    let mut spec = TaskSpec::preset("toy2d").unwrap();
    spec.n_train = 256;
    let (train, test) = gen_task(&spec).unwrap();
    let arch = Architecture::parse("2->[8,8]->1").unwrap();
    let mut net = SprecherNetwork::build(&arch, &NetConfig::default(), train.y.mean()).unwrap();
    let before = evaluate(&net, &test, LossKind::Mse).unwrap();
    let tc = TrainConfig {
        epochs: 300,
        lr: 3e-3,
        batch_size: 0,
        ..TrainConfig::default()
    };
    let h = train_loop(&mut net, &train, &tc).unwrap();
    let after = evaluate(&net, &test, LossKind::Mse).unwrap();
    assert!(after < 0.5 * before, "{before} -> {after}");
    assert!(h.best_loss().unwrap() <= h.initial_loss().unwrap());
}
