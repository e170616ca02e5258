//! Semi-asynchronous protocol loop.
//!
//! Clients train continuously: a client finishes a local round, ships its
//! update, and immediately begins the next round from whatever model it holds.
//! The server buffers arrivals and aggregates the K earliest as soon as the
//! buffer fills, then broadcasts the new global model; each client folds a
//! received model in only at its next local-round boundary, so an update's
//! staleness is the number of aggregations that happened since the round its
//! base model came from.

use crate::error::{Error, Result};
use crate::metrics::{evaluate_global, transmission_bytes, MetricsLog, PayloadKind, RoundRecord};
use crate::model::init_model;
use crate::rng::{SeededRng, Stream};

use super::{
    accumulated_staleness, draw_epoch_duration, local_train, ClientState, Event, EventQueue, Mode,
    RunPlan, ServerState,
};

/// Simulated seconds client `client` will spend on its current local round.
fn local_round_duration(plan: &RunPlan, client: &ClientState) -> f64 {
    let mut rng = SeededRng::derive(
        plan.run_seed,
        Stream::Jitter,
        client.client_id as u64,
        client.local_round,
    );
    (0..client.local_epochs)
        .map(|_| draw_epoch_duration(&client.speed, &mut rng))
        .sum()
}

pub fn run_safl(plan: &RunPlan) -> Result<MetricsLog> {
    let n = plan.num_clients();
    let w0 = init_model(plan.model, plan.run_seed);
    let mut server = ServerState::new(
        w0.clone(),
        plan.k,
        plan.server_eta,
        plan.strategy,
        Mode::SemiAsynchronous,
    );
    let ctx = plan.train_context();
    let broadcast_msg =
        transmission_bytes(plan.model.parameter_count(), PayloadKind::Broadcast, plan.weights_overhead);
    let mut clients: Vec<ClientState> = (0..n)
        .map(|i| ClientState::new(i, plan.shards[i].clone(), w0.clone(), plan.clients[i]))
        .collect();

    // Everyone starts round 1 on the initial model at time zero.
    let mut queue = EventQueue::new();
    for client in &clients {
        queue.push(
            local_round_duration(plan, client),
            Event::RoundEnds { client_id: client.client_id },
        );
    }

    let mut records = Vec::with_capacity(plan.rounds);
    while records.len() < plan.rounds {
        let entry = queue.pop().ok_or_else(|| {
            Error::Protocol("event queue drained before the aggregation budget".into())
        })?;
        let now = entry.time;
        match entry.event {
            // Training is materialized here, at the round's end; the client's
            // weights and base round have been fixed since the round started,
            // so the result is identical to computing it eagerly.
            Event::RoundEnds { client_id } => {
                let client = &mut clients[client_id];
                let mut train_rng = SeededRng::derive(
                    plan.run_seed,
                    Stream::Shuffle,
                    client_id as u64,
                    client.local_round,
                );
                let mut update = local_train(client, &ctx, &mut train_rng)?;
                update.arrival_time = now + client.speed.network_delay_seconds;
                queue.push(update.arrival_time, Event::UploadArrives { update });
                queue.push(now, Event::RoundStarts { client_id });
            }
            Event::UploadArrives { update } => {
                server.push_update(update);
                while server.ready() && records.len() < plan.rounds {
                    let consumed = server.consume_earliest();
                    let t = server.round + 1;
                    let tau_total = accumulated_staleness(&consumed, t)?;
                    let bytes_up = consumed.iter().map(|u| u.upload_bytes).sum();
                    let participants = consumed.iter().map(|u| u.client_id).collect();
                    server.apply(&consumed)?;
                    let (accuracy, loss) = evaluate_global(&server.w_g, &plan.test)?;
                    records.push(RoundRecord {
                        round: server.round,
                        sim_time: now,
                        accuracy,
                        loss,
                        tau_total,
                        participants,
                        bytes_up,
                        bytes_down: n as u64 * broadcast_msg,
                    });
                    for client in &clients {
                        queue.push(
                            now + client.speed.network_delay_seconds,
                            Event::BroadcastArrives {
                                client_id: client.client_id,
                                params: server.w_g.clone(),
                                round: server.round,
                            },
                        );
                    }
                }
            }
            Event::BroadcastArrives { client_id, params, round } => {
                clients[client_id].receive_broadcast(params, round);
            }
            Event::RoundStarts { client_id } => {
                let client = &mut clients[client_id];
                client.adopt_pending();
                client.local_round += 1;
                let duration = local_round_duration(plan, client);
                queue.push(now + duration, Event::RoundEnds { client_id });
            }
        }
    }

    Ok(MetricsLog {
        records,
        config_digest: plan.config_digest.clone(),
        total_params: plan.model.parameter_count(),
    })
}
