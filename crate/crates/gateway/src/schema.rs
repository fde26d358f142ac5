//! The wire schema shared by both transports.
//!
//! Every message is one JSON object with a `type` tag, a `seq` number and the
//! payload fields of that type flattened next to them.

use bisync_core::episode::Outcome;
use bisync_core::sync::{ControlMode, TransitionReason};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Policy,
    Operator,
    Observer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    /// Loop time, seconds since the loop started.
    pub t: f64,
    pub mode: ControlMode,
    pub leader_q: Vec<f64>,
    pub follower_q: Vec<f64>,
    pub follower_target: Vec<f64>,
    pub gripper: f64,
    pub task: String,
    pub episode_id: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeEventKind {
    Start,
    End,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Not JSON, not an object, or no usable `seq`.
    Malformed,
    UnknownType,
    /// Known type with missing or mistyped fields.
    BadPayload,
    HelloRequired,
    BadToken,
    /// The sender's role may not send this type.
    Role,
    /// Type only the server sends.
    ServerOnly,
    Dimension,
    HandoverRefused,
    Episode,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Body {
    Hello {
        role: Role,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        token: Option<String>,
    },
    State(State),
    LeaderCmd {
        q: Vec<f64>,
        #[serde(default)]
        gripper: f64,
    },
    Pedal {
        pressed: bool,
    },
    PolicyAction {
        q: Vec<f64>,
        #[serde(default)]
        gripper: f64,
    },
    ModeChanged {
        from: ControlMode,
        to: ControlMode,
        reason: TransitionReason,
    },
    EpisodeEvent {
        event: EpisodeEventKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        outcome: Option<Outcome>,
        /// Always set by the server; clients may omit it when asking to start.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
    },
    /// Reply to a client command: `applied` is false when it was accepted but
    /// had no effect in the current mode.
    Ack {
        ref_seq: u64,
        applied: bool,
    },
    Error {
        code: ErrorCode,
        detail: String,
    },
}

pub const TYPES: [&str; 9] = [
    "hello",
    "state",
    "leader_cmd",
    "pedal",
    "policy_action",
    "mode_changed",
    "episode_event",
    "ack",
    "error",
];

impl Body {
    pub fn type_name(&self) -> &'static str {
        match self {
            Body::Hello { .. } => "hello",
            Body::State(_) => "state",
            Body::LeaderCmd { .. } => "leader_cmd",
            Body::Pedal { .. } => "pedal",
            Body::PolicyAction { .. } => "policy_action",
            Body::ModeChanged { .. } => "mode_changed",
            Body::EpisodeEvent { .. } => "episode_event",
            Body::Ack { .. } => "ack",
            Body::Error { .. } => "error",
        }
    }

    /// State snapshots may be dropped for slow clients; nothing else may.
    pub fn droppable(&self) -> bool {
        matches!(self, Body::State(_))
    }

    pub fn error(code: ErrorCode, detail: impl Into<String>) -> Self {
        Body::Error {
            code,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub seq: u64,
    #[serde(flatten)]
    pub body: Body,
}

/// Why an inbound frame was refused. `seq` is the sender's number if it
/// could be read.
#[derive(Debug, Clone, PartialEq)]
pub struct WireError {
    pub code: ErrorCode,
    pub detail: String,
    pub seq: Option<u64>,
}

impl WireError {
    fn new(code: ErrorCode, detail: impl Into<String>, seq: Option<u64>) -> Self {
        Self {
            code,
            detail: detail.into(),
            seq,
        }
    }

    pub fn into_body(self) -> Body {
        let detail = match self.seq {
            Some(s) => format!("seq {s}: {}", self.detail),
            None => self.detail,
        };
        Body::error(self.code, detail)
    }
}

pub fn encode(msg: &WireMessage) -> String {
    serde_json::to_string(msg).expect("wire messages always serialize")
}

pub fn decode(bytes: &[u8]) -> Result<WireMessage, WireError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| WireError::new(ErrorCode::Malformed, format!("not UTF-8: {e}"), None))?;
    let value: Value = serde_json::from_str(text)
        .map_err(|e| WireError::new(ErrorCode::Malformed, format!("not JSON: {e}"), None))?;
    let obj = value
        .as_object()
        .ok_or_else(|| WireError::new(ErrorCode::Malformed, "expected a JSON object", None))?;
    let seq = obj
        .get("seq")
        .and_then(Value::as_u64)
        .ok_or_else(|| WireError::new(ErrorCode::Malformed, "missing or invalid `seq`", None))?;
    let ty = obj
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| WireError::new(ErrorCode::Malformed, "missing `type`", Some(seq)))?
        .to_string();
    if !TYPES.contains(&ty.as_str()) {
        return Err(WireError::new(
            ErrorCode::UnknownType,
            format!("unknown message type `{ty}`"),
            Some(seq),
        ));
    }
    serde_json::from_value(value)
        .map_err(|e| WireError::new(ErrorCode::BadPayload, format!("{ty}: {e}"), Some(seq)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_names_on_the_wire() {
        let msg = WireMessage {
            seq: 4,
            body: Body::ModeChanged {
                from: ControlMode::Autonomous,
                to: ControlMode::Intervention,
                reason: TransitionReason::PedalPressed,
            },
        };
        let v: Value = serde_json::from_str(&encode(&msg)).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"seq": 4, "type": "mode_changed", "from": "autonomous",
                               "to": "intervention", "reason": "pedal_pressed"})
        );
        let s = WireMessage {
            seq: 1,
            body: Body::State(State {
                t: 0.1,
                mode: ControlMode::Autonomous,
                leader_q: vec![0.5],
                follower_q: vec![0.5],
                follower_target: vec![0.5],
                gripper: 0.0,
                task: "reach1".into(),
                episode_id: None,
            }),
        };
        let v: Value = serde_json::from_str(&encode(&s)).unwrap();
        for key in [
            "seq",
            "type",
            "t",
            "mode",
            "leader_q",
            "follower_q",
            "follower_target",
            "gripper",
            "task",
            "episode_id",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn decode_classifies_failures() {
        let code = |s: &str| decode(s.as_bytes()).unwrap_err().code;
        assert_eq!(code("not json"), ErrorCode::Malformed);
        assert_eq!(code("[1,2]"), ErrorCode::Malformed);
        assert_eq!(
            code(r#"{"type":"pedal","pressed":true}"#),
            ErrorCode::Malformed
        );
        assert_eq!(
            code(r#"{"seq":1,"type":"teleport"}"#),
            ErrorCode::UnknownType
        );
        assert_eq!(code(r#"{"seq":1,"type":"pedal"}"#), ErrorCode::BadPayload);
        assert_eq!(
            code(r#"{"seq":1,"type":"pedal","pressed":"yes"}"#),
            ErrorCode::BadPayload
        );
        assert_eq!(
            decode(&[0xff, 0xfe]).unwrap_err().code,
            ErrorCode::Malformed
        );
        let ok = decode(br#"{"seq":7,"type":"leader_cmd","q":[0.1,0.2]}"#).unwrap();
        assert_eq!(
            ok.body,
            Body::LeaderCmd {
                q: vec![0.1, 0.2],
                gripper: 0.0
            }
        );
        let e = decode(br#"{"seq":9,"type":"nope"}"#).unwrap_err();
        assert_eq!(e.seq, Some(9));
    }
}
