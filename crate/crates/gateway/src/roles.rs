//! Which role may send what.

use bisync_core::episode::Outcome;
use bisync_core::JointVector;

use crate::schema::{Body, EpisodeEventKind, ErrorCode, Role};

/// A client command that passed the role check, ready for the control loop.
#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    PolicyAction(JointVector),
    LeaderCmd(JointVector),
    Pedal(bool),
    EpisodeStart,
    EpisodeEnd(Option<Outcome>),
}

/// Policies send actions; operators send leader commands, pedal and episode
/// events; observers only listen.
pub fn handle_message(role: Role, body: Body) -> Result<Request, (ErrorCode, String)> {
    let ty = body.type_name();
    let refuse = || {
        Err((
            ErrorCode::Role,
            format!("{ty} is not accepted from the {role:?} role").to_lowercase(),
        ))
    };
    let joints = |q: Vec<f64>, gripper: f64| {
        JointVector::new(q, gripper).map_err(|e| (ErrorCode::BadPayload, e.to_string()))
    };
    match body {
        Body::Hello { .. } => Err((ErrorCode::BadPayload, "role already declared".into())),
        Body::State(_) | Body::ModeChanged { .. } | Body::Ack { .. } | Body::Error { .. } => Err((
            ErrorCode::ServerOnly,
            format!("{ty} is sent by the server only"),
        )),
        Body::PolicyAction { q, gripper } => match role {
            Role::Policy => joints(q, gripper).map(Request::PolicyAction),
            _ => refuse(),
        },
        Body::LeaderCmd { q, gripper } => match role {
            Role::Operator => joints(q, gripper).map(Request::LeaderCmd),
            _ => refuse(),
        },
        Body::Pedal { pressed } => match role {
            Role::Operator => Ok(Request::Pedal(pressed)),
            _ => refuse(),
        },
        Body::EpisodeEvent { event, outcome, .. } => match (role, event) {
            (Role::Operator, EpisodeEventKind::Start) => Ok(Request::EpisodeStart),
            (Role::Operator, EpisodeEventKind::End) => Ok(Request::EpisodeEnd(outcome)),
            _ => refuse(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn role_table() {
        let action = Body::PolicyAction {
            q: vec![0.1],
            gripper: 0.0,
        };
        let lead = Body::LeaderCmd {
            q: vec![0.1],
            gripper: 0.0,
        };
        let pedal = Body::Pedal { pressed: true };
        let code = |r: Role, b: &Body| handle_message(r, b.clone()).err().map(|e| e.0);
        assert_eq!(code(Role::Policy, &action), None);
        assert_eq!(code(Role::Operator, &action), Some(ErrorCode::Role));
        assert_eq!(code(Role::Observer, &action), Some(ErrorCode::Role));
        assert_eq!(code(Role::Operator, &lead), None);
        assert_eq!(code(Role::Policy, &lead), Some(ErrorCode::Role));
        assert_eq!(code(Role::Operator, &pedal), None);
        assert_eq!(code(Role::Policy, &pedal), Some(ErrorCode::Role));
        assert_eq!(code(Role::Observer, &pedal), Some(ErrorCode::Role));
        assert_eq!(
            code(
                Role::Operator,
                &Body::Ack {
                    ref_seq: 1,
                    applied: true
                }
            ),
            Some(ErrorCode::ServerOnly)
        );
        let nan = Body::PolicyAction {
            q: vec![f64::NAN],
            gripper: 0.0,
        };
        assert_eq!(code(Role::Policy, &nan), Some(ErrorCode::BadPayload));
    }
}
