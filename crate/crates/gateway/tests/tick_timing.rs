//! Kept in its own test binary: the other gateway tests would share the CPU
//! with the loop being measured.

use std::time::Duration;

use bisync_gateway::client::Client;
use bisync_gateway::{ControlLoop, Gateway, GatewayConfig, LoopConfig, Role};
use bisync_harness::task::ReachTask;

async fn start(rate: f64) -> Gateway {
    let t = ReachTask::reach().unwrap();
    let ctl = ControlLoop::new(
        t.build_rig_with_dt(1.0 / rate).unwrap(),
        LoopConfig::new("reach", rate),
    )
    .unwrap();
    Gateway::start(GatewayConfig::default(), ctl).await.unwrap()
}

async fn connected(gw: &Gateway, ws: bool) -> Client {
    let mut c = if ws {
        Client::ws(gw.ws_addr.unwrap()).await.unwrap()
    } else {
        Client::tcp(gw.tcp_addr.unwrap()).await.unwrap()
    };
    c.hello(Role::Observer, None).await.unwrap();
    c
}

/// Mean tick duration over a 4 s run at 10 Hz with `clients` connected observers.
async fn mean_tick(clients: usize) -> Duration {
    let gw = start(10.0).await;
    let mut cs = Vec::new();
    for i in 0..clients {
        cs.push(connected(&gw, i % 2 == 1).await);
    }
    let drain: Vec<_> = cs
        .into_iter()
        .map(|mut c| tokio::spawn(async move { while let Ok(Some(_)) = c.recv().await {} }))
        .collect();
    tokio::time::sleep(Duration::from_millis(4000)).await;
    let stats = gw.stop();
    for d in drain {
        d.abort();
    }
    assert!(stats.ticks >= 39, "{stats:?}");
    stats.mean_tick
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn tick_duration_does_not_depend_on_client_count() {
    // Alternate the two settings so slow drift of the machine cancels out.
    let (mut one, mut many) = (Duration::ZERO, Duration::ZERO);
    for _ in 0..3 {
        one += mean_tick(1).await;
        many += mean_tick(16).await;
    }
    let rel = (many.as_secs_f64() - one.as_secs_f64()).abs() / one.as_secs_f64();
    assert!(rel < 0.10, "1 client {one:?}, 16 clients {many:?}");
}
