use bisync_core::sync::{ControlMode, TransitionReason};
use bisync_gateway::schema::{decode, encode, ErrorCode, State, TYPES};
use bisync_gateway::{Body, Role, WireMessage};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> + Clone {
    -10.0f64..10.0
}

fn body() -> impl Strategy<Value = Body> {
    let q = prop::collection::vec(finite(), 1..7);
    prop_oneof![
        (
            prop_oneof![
                Just(Role::Policy),
                Just(Role::Operator),
                Just(Role::Observer)
            ],
            prop::option::of("[a-z0-9]{0,12}")
        )
            .prop_map(|(role, token)| Body::Hello { role, token }),
        (q.clone(), finite()).prop_map(|(q, gripper)| Body::LeaderCmd { q, gripper }),
        (q.clone(), finite()).prop_map(|(q, gripper)| Body::PolicyAction { q, gripper }),
        any::<bool>().prop_map(|pressed| Body::Pedal { pressed }),
        (any::<u64>(), any::<bool>()).prop_map(|(ref_seq, applied)| Body::Ack { ref_seq, applied }),
        ".{0,40}".prop_map(|d| Body::error(ErrorCode::BadPayload, d)),
        (q.clone(), q, finite(), prop::option::of(any::<u64>())).prop_map(|(a, b, t, id)| {
            Body::State(State {
                t,
                mode: ControlMode::Paused,
                leader_q: a.clone(),
                follower_q: b,
                follower_target: a,
                gripper: 0.5,
                task: "reach".into(),
                episode_id: id,
            })
        }),
        Just(Body::ModeChanged {
            from: ControlMode::Intervention,
            to: ControlMode::Fault,
            reason: TransitionReason::Fault,
        }),
    ]
}

proptest! {
    #[test]
    fn encode_decode_round_trips(seq in any::<u64>(), body in body()) {
        let msg = WireMessage { seq, body };
        prop_assert_eq!(decode(encode(&msg).as_bytes()).unwrap(), msg);
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = decode(&bytes);
    }

    #[test]
    fn unknown_types_are_rejected(seq in any::<u64>(), ty in "[a-z_]{1,16}") {
        prop_assume!(!TYPES.contains(&ty.as_str()));
        let raw = format!(r#"{{"seq":{seq},"type":"{ty}"}}"#);
        let e = decode(raw.as_bytes()).unwrap_err();
        prop_assert_eq!(e.code, ErrorCode::UnknownType);
        prop_assert_eq!(e.seq, Some(seq));
    }
}
