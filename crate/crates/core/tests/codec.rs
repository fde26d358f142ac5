use bisync_core::servo_wire::{
    capture, crc16, decode_stream, encode_packet, parse_sync_read_reply, position_status,
    sync_read_positions, sync_write_positions, BusPacket, Diagnostic, RawTicks, StreamDecoder,
    HEADER,
};
use proptest::prelude::*;

fn crc_bitwise(bytes: &[u8]) -> u16 {
    let mut crc: u16 = 0;
    for &b in bytes {
        crc ^= (b as u16) << 8;
        for _ in 0..8 {
            crc = if crc & 0x8000 != 0 {
                (crc << 1) ^ 0x8005
            } else {
                crc << 1
            };
        }
    }
    crc
}

fn dense_params() -> impl Strategy<Value = Vec<u8>> {
    let unit = prop_oneof![
        3 => Just(vec![0xFF, 0xFF, 0xFD]),
        1 => Just(vec![0xFF]),
        1 => Just(vec![0xFD]),
        2 => any::<u8>().prop_map(|b| vec![b]),
    ];
    prop::collection::vec(unit, 0..40).prop_map(|v| v.concat())
}

fn packet() -> impl Strategy<Value = BusPacket> {
    (
        prop_oneof![0u8..=252, Just(0xFEu8)],
        any::<u8>(),
        dense_params(),
    )
        .prop_map(|(id, ins, params)| BusPacket::new(id, ins, params).unwrap())
}

#[test]
fn reference_frames_from_capture() {
    let frames = capture::parse(include_str!("data/bus.capture")).unwrap();
    assert_eq!(
        frames[0],
        encode_packet(&BusPacket::ping(1).unwrap()).unwrap()
    );
    assert_eq!(
        frames[1],
        encode_packet(&position_status(1, 2048).unwrap()).unwrap()
    );
    let all: Vec<u8> = frames.concat();
    let out = decode_stream(&all);
    assert!(out.diagnostics.is_empty());
    assert_eq!(out.packets.len(), 2);
    let ticks = parse_sync_read_reply(&[1], &out.packets[1..], 4096).unwrap();
    assert_eq!(ticks.ticks, vec![2048]);
    assert_eq!(capture::parse(&capture::format(&frames)).unwrap(), frames);
}

#[test]
fn crc_known_values() {
    assert_eq!(crc16(&[]), 0);
    assert_eq!(crc16(&[0x01]), crc_bitwise(&[0x01]));
    assert_eq!(
        crc16(&[0xFF, 0xFF, 0xFD, 0x00, 0x01, 0x03, 0x00, 0x01]),
        0x4E19
    );
}

#[test]
fn split_at_every_offset() {
    let pkt = BusPacket::new(
        7,
        0x03,
        vec![0x74, 0x00, 0xFF, 0xFF, 0xFD, 0x01, 0xFF, 0xFF, 0xFD],
    )
    .unwrap();
    let bytes = encode_packet(&pkt).unwrap();
    for cut in 0..=bytes.len() {
        let mut dec = StreamDecoder::new();
        let (first, d1) = dec.feed(&bytes[..cut]);
        if cut < bytes.len() {
            assert!(first.is_empty(), "cut {cut}");
            assert_eq!(dec.pending(), &bytes[..cut]);
        }
        let (second, d2) = dec.feed(&bytes[cut..]);
        assert!(d1.is_empty() && d2.is_empty());
        if cut == bytes.len() {
            assert_eq!(first, vec![pkt.clone()]);
            assert!(second.is_empty());
        } else {
            assert_eq!(second, vec![pkt.clone()]);
        }
        assert!(dec.pending().is_empty());
    }
}

#[test]
fn corrupted_crc_is_reported_and_skipped() {
    let good = encode_packet(&BusPacket::ping(3).unwrap()).unwrap();
    for i in [good.len() - 1, good.len() - 2] {
        let mut bad = good.clone();
        bad[i] ^= 0x40;
        let out = decode_stream(&bad);
        assert!(out.packets.is_empty());
        assert!(out.remainder.is_empty());
        assert!(matches!(
            out.diagnostics.as_slice(),
            [Diagnostic::CrcMismatch { id: 3, .. }]
        ));
        let mut both = bad.clone();
        both.extend_from_slice(&good);
        let out = decode_stream(&both);
        assert_eq!(out.packets, vec![BusPacket::ping(3).unwrap()]);
    }
}

#[test]
fn sync_write_seven_motors() {
    let ids = [1, 2, 3, 4, 5, 6, 7];
    let ticks = RawTicks::new(vec![0, 1, 2048, 4095, 100, 200, 300], 4096).unwrap();
    let pkt = sync_write_positions(&ids, &ticks).unwrap();
    assert_eq!(pkt.params.len(), 7 * 5 + 4);
    let back = decode_stream(&encode_packet(&pkt).unwrap());
    assert_eq!(back.packets, vec![pkt.clone()]);
    for (k, chunk) in pkt.params[4..].chunks(5).enumerate() {
        assert_eq!(chunk[0], ids[k]);
        assert_eq!(
            u32::from_le_bytes(chunk[1..5].try_into().unwrap()),
            ticks.ticks[k]
        );
    }
    assert!(sync_read_positions(&[]).is_err());
    assert!(sync_read_positions(&[1, 1]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn round_trip(p in packet()) {
        let bytes = encode_packet(&p).unwrap();
        prop_assert_eq!(&bytes[..4], &HEADER[..]);
        let out = decode_stream(&bytes);
        prop_assert!(out.diagnostics.is_empty());
        prop_assert!(out.remainder.is_empty());
        prop_assert_eq!(out.packets, vec![p]);
    }

    #[test]
    fn crc_matches_bitwise(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        prop_assert_eq!(crc16(&bytes), crc_bitwise(&bytes));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn garbage_prefix_never_hides_frame(garbage in prop::collection::vec(any::<u8>(), 0..48), p in packet()) {
        let mut bytes = garbage;
        bytes.extend(encode_packet(&p).unwrap());
        let out = decode_stream(&bytes);
        prop_assert!(out.packets.contains(&p));
        prop_assert_eq!(out.packets.last(), Some(&p));
    }

    #[test]
    fn chunked_feeding_matches_whole(ps in prop::collection::vec(packet(), 1..5), chunk in 1usize..17) {
        let bytes: Vec<u8> = ps.iter().flat_map(|p| encode_packet(p).unwrap()).collect();
        let mut dec = StreamDecoder::new();
        let mut got = Vec::new();
        for c in bytes.chunks(chunk) {
            let (pk, diag) = dec.feed(c);
            prop_assert!(diag.is_empty());
            got.extend(pk);
        }
        prop_assert_eq!(got, ps);
    }

    #[test]
    fn sync_read_reply_round_trip(ticks in prop::collection::vec(0u32..4096, 1..8)) {
        let ids: Vec<u8> = (1..=ticks.len() as u8).collect();
        let req = sync_read_positions(&ids).unwrap();
        prop_assert_eq!(&req.params[4..], &ids[..]);
        let stream: Vec<u8> = ids
            .iter()
            .zip(&ticks)
            .rev()
            .flat_map(|(&id, &t)| encode_packet(&position_status(id, t).unwrap()).unwrap())
            .collect();
        let packets = decode_stream(&stream).packets;
        prop_assert_eq!(parse_sync_read_reply(&ids, &packets, 4096).unwrap().ticks, ticks);
    }
}
