//! One synchronous round's client fan-out, parallel workers vs the serial
//! reference. The outputs are asserted identical before timing anything:
//! parallelism is a throughput knob here, never a semantics knob.

use criterion::{criterion_group, criterion_main, Criterion};
use saflbench::config::RunConfig;
use saflbench::exec::{map_ordered, map_serial};
use saflbench::model::init_model;
use saflbench::protocol::{local_train, ClientState, TrainContext};
use saflbench::rng::{SeededRng, Stream};

const CONFIG: &str = r#"
[run]
mode = "sfl"
strategy = "fedsgd"
rounds = 1
active = 16
eta = 0.05

[model]
architecture = "mlp"
hidden_width = 32

[data]
classes = 10
dim = 16
per_class = 400
spread = 0.6

[partition]
scheme = "iid"
clients = 16

[client]
epochs = 2
batch_size = 32
eta = 0.05

[seeds]
data_seed = 5
run_seed = 17

[metrics]
target_accuracy = 0.5
"#;

fn round_fan_out(c: &mut Criterion) {
    let plan = RunConfig::parse(CONFIG).unwrap().build_plan().unwrap();
    let w0 = init_model(plan.model, plan.run_seed);
    let ctx = TrainContext {
        data: &plan.train,
        strategy: plan.strategy,
        clip_norm: plan.clip_norm,
        fedsgd_at_start: plan.fedsgd_at_start,
        weights_overhead: plan.weights_overhead,
    };
    let ids: Vec<usize> = (0..plan.num_clients()).collect();
    let work = |&client_id: &usize| {
        let mut client = ClientState::new(
            client_id,
            plan.shards[client_id].clone(),
            w0.clone(),
            plan.clients[client_id],
        );
        let mut rng = SeededRng::derive(plan.run_seed, Stream::Shuffle, client_id as u64, 1);
        local_train(&mut client, &ctx, &mut rng).unwrap().payload
    };

    let parallel = map_ordered(&ids, work);
    let serial = map_serial(&ids, work);
    assert_eq!(
        parallel.len(),
        serial.len(),
        "parallel and serial fan-out disagree"
    );
    for (p, s) in parallel.iter().zip(&serial) {
        assert_eq!(p.values, s.values, "parallel and serial payloads diverged");
    }

    let mut group = c.benchmark_group("round_fan_out");
    group.sample_size(20);
    group.bench_function("workers", |b| b.iter(|| map_ordered(&ids, work)));
    group.bench_function("serial", |b| b.iter(|| map_serial(&ids, work)));
    group.finish();
}

criterion_group!(benches, round_fan_out);
criterion_main!(benches);
