//! Round-synchronous protocol loop.
//!
//! Each round: select K clients, broadcast the current global model, run every
//! selected client's local training, wait for the slowest upload, aggregate,
//! evaluate. The round's simulated duration is the maximum over the active
//! clients of local training time plus network delay; staleness is zero by
//! construction because everyone trains from the freshly broadcast model.

use crate::error::Result;
use crate::exec::map_ordered;
use crate::metrics::{evaluate_global, transmission_bytes, MetricsLog, PayloadKind, RoundRecord};
use crate::model::init_model;
use crate::rng::{SeededRng, Stream};

use super::{
    accumulated_staleness, draw_epoch_duration, local_train, select_active, ClientState, Mode,
    RunPlan, ServerState, Update,
};

pub fn run_sfl(plan: &RunPlan) -> Result<MetricsLog> {
    let n = plan.num_clients();
    let mut server = ServerState::new(
        init_model(plan.model, plan.run_seed),
        plan.k,
        plan.server_eta,
        plan.strategy,
        Mode::Synchronous,
    );
    let mut select_rng = SeededRng::derive(plan.run_seed, Stream::Select, 0, 0);
    let ctx = plan.train_context();
    let bytes_down_per_round = n as u64
        * transmission_bytes(plan.model.parameter_count(), PayloadKind::Broadcast, plan.weights_overhead);
    let mut records = Vec::with_capacity(plan.rounds);
    let mut sim_time = 0.0f64;

    for t in 1..=plan.rounds {
        let selected = select_active(n, plan.k, &mut select_rng)?;
        let round_start = sim_time;
        let w_g = server.w_g.clone();

        // Fan the selected clients out to workers. Every randomized step pulls
        // from a sub-stream keyed by (client, round), and results come back in
        // selection (= ascending id) order, so parallelism cannot reorder
        // anything observable.
        let results = map_ordered(&selected, |&client_id| -> Result<Update> {
            let mut client = ClientState::new(
                client_id,
                plan.shards[client_id].clone(),
                w_g.clone(),
                plan.clients[client_id],
            );
            client.base_round = t - 1;
            let mut train_rng =
                SeededRng::derive(plan.run_seed, Stream::Shuffle, client_id as u64, t as u64);
            let mut update = local_train(&mut client, &ctx, &mut train_rng)?;
            let mut jitter_rng =
                SeededRng::derive(plan.run_seed, Stream::Jitter, client_id as u64, t as u64);
            let local_seconds: f64 = (0..client.local_epochs)
                .map(|_| draw_epoch_duration(&client.speed, &mut jitter_rng))
                .sum();
            update.arrival_time = round_start + local_seconds + client.speed.network_delay_seconds;
            Ok(update)
        });
        let updates = results.into_iter().collect::<Result<Vec<Update>>>()?;

        sim_time = updates
            .iter()
            .map(|u| u.arrival_time)
            .fold(round_start, f64::max);
        let tau_total = accumulated_staleness(&updates, t)?;
        let bytes_up = updates.iter().map(|u| u.upload_bytes).sum();
        let participants = updates.iter().map(|u| u.client_id).collect();
        server.apply(&updates)?;
        let (accuracy, loss) = evaluate_global(&server.w_g, &plan.test)?;
        records.push(RoundRecord {
            round: t,
            sim_time,
            accuracy,
            loss,
            tau_total,
            participants,
            bytes_up,
            bytes_down: bytes_down_per_round,
        });
    }

    Ok(MetricsLog {
        records,
        config_digest: plan.config_digest.clone(),
        total_params: plan.model.parameter_count(),
    })
}
