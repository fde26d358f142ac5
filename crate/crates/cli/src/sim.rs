use std::path::PathBuf;
use std::time::Duration;

use bisync_core::sync::CalibrationProfile;
use bisync_gateway::{ControlLoop, Gateway, GatewayConfig, LoopConfig};
use bisync_harness::task::ReachTask;
use clap::Args;

use crate::report::{float, CmdResult, Failure, Report};
use crate::TaskArg;

#[derive(Args, Debug)]
pub struct SimArgs {
    #[command(flatten)]
    pub task: TaskArg,
    /// Control loop rate.
    #[arg(long, env = "BISYNC_RATE_HZ", default_value_t = 10.0)]
    pub rate_hz: f64,
    /// TCP listen address (`:PORT` binds every interface); `off` disables it.
    #[arg(long, env = "BISYNC_LISTEN", default_value = "127.0.0.1:7447")]
    pub listen: String,
    /// WebSocket listen address; `off` disables it.
    #[arg(long, env = "BISYNC_WS_LISTEN", default_value = "127.0.0.1:7448")]
    pub ws_listen: String,
    /// Shared token policy and operator clients must send in `hello`.
    #[arg(long, env = "BISYNC_ROLE_TOKEN")]
    pub role_token: Option<String>,
    /// Directory for episodes the operator starts and ends.
    #[arg(long, env = "BISYNC_RECORD")]
    pub record: Option<PathBuf>,
    /// Leader calibration file (from `calibrate`); the task default otherwise.
    #[arg(long, env = "BISYNC_CALIBRATION")]
    pub calibration: Option<PathBuf>,
    /// Stop after this many seconds instead of waiting for Ctrl-C.
    #[arg(long, env = "BISYNC_DURATION")]
    pub duration: Option<f64>,
    /// Episode step cap.
    #[arg(long, env = "BISYNC_MAX_STEPS", default_value_t = 200)]
    pub max_steps: usize,
}

fn listen(addr: &str) -> Option<String> {
    (addr != "off").then(|| addr.to_string())
}

pub fn run(a: SimArgs) -> CmdResult {
    if !(a.rate_hz.is_finite() && a.rate_hz > 0.0) {
        return Err(Failure::new(
            "invalid",
            format!("--rate-hz must be positive, got {}", a.rate_hz),
        ));
    }
    if let Some(d) = a.duration {
        if !(d.is_finite() && d >= 0.0) {
            return Err(Failure::new(
                "invalid",
                format!("--duration must be non-negative, got {d}"),
            ));
        }
    }
    let task = ReachTask::builtin(&a.task.task)?;
    let dt = 1.0 / a.rate_hz;
    let rig = match &a.calibration {
        Some(p) => task.build_rig_calibrated(dt, CalibrationProfile::load(p)?)?,
        None => task.build_rig_with_dt(dt)?,
    };
    let mut cfg = LoopConfig::new(task.name.clone(), a.rate_hz);
    cfg.max_steps = a.max_steps;
    if let Some(dir) = &a.record {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::new("io", format!("{}: {e}", dir.display())))?;
        cfg.record_dir = Some(dir.clone());
    }
    let ctl = ControlLoop::new(rig, cfg)?;
    let gw_cfg = GatewayConfig {
        tcp: listen(&a.listen),
        ws: listen(&a.ws_listen),
        role_token: a.role_token.clone(),
        ..GatewayConfig::default()
    };
    let rt = tokio::runtime::Runtime::new()?;
    let stats = rt.block_on(async {
        let gw = Gateway::start(gw_cfg, ctl).await?;
        let addr = |a: Option<std::net::SocketAddr>| a.map_or("off".to_string(), |a| a.to_string());
        println!("READY tcp={} ws={}", addr(gw.tcp_addr), addr(gw.ws_addr));
        match a.duration {
            Some(d) => tokio::time::sleep(Duration::from_secs_f64(d)).await,
            None => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
        Ok::<_, std::io::Error>(gw.stop())
    })?;
    Ok(Report::new()
        .put("task", &task.name)
        .float("rate_hz", a.rate_hz)
        .put("ticks", stats.ticks)
        .put("stalls", stats.stalls)
        .put("skipped", stats.skipped)
        .put("errors", stats.errors)
        .put(
            "max_lateness_ms",
            float(stats.max_lateness.as_secs_f64() * 1e3),
        )
        .put("mean_tick_us", float(stats.mean_tick.as_secs_f64() * 1e6)))
}
