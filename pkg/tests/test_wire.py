"""Codec, checksum and cipher behaviour of the wire layer."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fuzztwin import wire
from fuzztwin.wire import (
    Direction,
    FieldOutOfRange,
    Frame,
    IntegrityError,
    MalformedFrame,
    Message,
    MsgType,
    SecurityContext,
    ServiceType,
    compute_checksum,
    crc16_ccitt_false,
    decode_message,
    encode_message,
    establishment_cause_effect,
)


def ref_crc16(data: bytes) -> int:
    """Independent table-driven CRC-16/CCITT-FALSE used as the oracle."""
    table = []
    for i in range(256):
        c = i << 8
        for _ in range(8):
            c = ((c << 1) ^ 0x1021) & 0xFFFF if c & 0x8000 else (c << 1) & 0xFFFF
        table.append(c)
    crc = 0xFFFF
    for b in data:
        crc = ((crc << 8) & 0xFFFF) ^ table[((crc >> 8) ^ b) & 0xFF]
    return crc


def direction_of(msg_type: MsgType) -> Direction:
    if wire.TYPE_CHANNEL[msg_type] in wire.UPLINK_CHANNELS:
        return Direction.UPLINK
    return Direction.DOWNLINK


def sample_message(msg_type: MsgType, rnti=0x4601, tid=1) -> Message:
    fields = {
        MsgType.RRC_SETUP_REQUEST: {"ue_id": 3, "establishment_cause": 0b0110, "spare": 1},
        MsgType.RRC_SETUP: {"srb_id": 1},
        MsgType.RRC_RECONFIGURATION: {"sr_config_index": 17},
    }.get(msg_type, {})
    return Message(msg_type=msg_type, rnti=rnti, transaction_id=tid, fields=fields)


# ---------------------------------------------------------------------------
# checksum
# ---------------------------------------------------------------------------


def test_crc_known_values():
    # classic check value for CRC-16/CCITT-FALSE, plus the init-only case
    assert crc16_ccitt_false(b"123456789") == 0x29B1
    assert crc16_ccitt_false(b"") == 0xFFFF


def test_checksum_of_empty_body_is_init_value():
    assert compute_checksum(b"", 0x0000) == 0xFFFF


@given(st.binary(max_size=64), st.integers(min_value=0, max_value=0xFFFF))
def test_checksum_matches_reference_oracle(body, rnti):
    assert compute_checksum(body, rnti) == ref_crc16(body) ^ rnti


def test_single_bit_flip_always_changes_checksum():
    body = bytes(range(16))
    base = compute_checksum(body, 0x4601)
    for byte_idx in range(len(body)):
        for bit in range(8):
            flipped = bytearray(body)
            flipped[byte_idx] ^= 1 << bit
            assert compute_checksum(bytes(flipped), 0x4601) != base


# ---------------------------------------------------------------------------
# codec round trips
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("msg_type", list(MsgType))
def test_round_trip_plaintext(msg_type):
    msg = sample_message(msg_type)
    ctx = SecurityContext(session_key=7)
    frame = encode_message(msg, ctx, direction_of(msg_type))
    assert decode_message(frame, ctx) == msg


@pytest.mark.parametrize("msg_type", sorted(wire.CIPHERED_TYPES))
def test_round_trip_with_activated_security(msg_type):
    msg = sample_message(msg_type)
    sender = SecurityContext(session_key=99, activated=True, ul_counter=4, dl_counter=2)
    receiver = SecurityContext(session_key=99, activated=True, ul_counter=4, dl_counter=2)
    frame = encode_message(msg, sender, direction_of(msg_type))
    assert decode_message(frame, receiver) == msg


def test_ciphered_body_differs_from_plaintext_encoding():
    msg = sample_message(MsgType.RRC_RECONFIGURATION)
    plain = encode_message(msg, SecurityContext(session_key=5), Direction.DOWNLINK)
    secured = encode_message(
        msg, SecurityContext(session_key=5, activated=True), Direction.DOWNLINK
    )
    assert plain.raw[5] != secured.raw[5]


def test_encoding_is_deterministic():
    msg = sample_message(MsgType.RRC_SETUP_REQUEST)
    ctx = SecurityContext(session_key=1)
    a = encode_message(msg, ctx, Direction.UPLINK)
    b = encode_message(msg, ctx, Direction.UPLINK)
    assert a.raw == b.raw


def test_setup_request_cause_decodes_to_mo_sig():
    msg = Message(
        MsgType.RRC_SETUP_REQUEST,
        rnti=0x4601,
        fields={"ue_id": 0b00, "establishment_cause": 0b0110, "spare": 0},
    )
    ctx = SecurityContext()
    decoded = decode_message(encode_message(msg, ctx, Direction.UPLINK), ctx)
    assert establishment_cause_effect(decoded.fields["establishment_cause"]) is ServiceType.MO_SIG


@given(
    ue_id=st.integers(0, 0xFF),
    cause=st.integers(0, 0x0F),
    spare=st.integers(0, 1),
    rnti=st.integers(0, 0xFFFF),
    tid=st.integers(0, 0xFF),
)
@settings(max_examples=60)
def test_round_trip_setup_request_field_space(ue_id, cause, spare, rnti, tid):
    msg = Message(
        MsgType.RRC_SETUP_REQUEST,
        rnti=rnti,
        transaction_id=tid,
        fields={"ue_id": ue_id, "establishment_cause": cause, "spare": spare},
    )
    ctx = SecurityContext()
    assert decode_message(encode_message(msg, ctx, Direction.UPLINK), ctx) == msg


def test_field_out_of_range_rejected():
    ctx = SecurityContext()
    with pytest.raises(FieldOutOfRange):
        encode_message(
            Message(MsgType.RRC_SETUP_REQUEST, rnti=1, fields={"establishment_cause": 16}),
            ctx,
            Direction.UPLINK,
        )
    with pytest.raises(FieldOutOfRange):
        encode_message(
            Message(MsgType.RRC_RECONFIGURATION, rnti=1, fields={"sr_config_index": 158}),
            ctx,
            Direction.DOWNLINK,
        )


# ---------------------------------------------------------------------------
# integrity
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("msg_type", list(MsgType))
def test_every_single_bit_flip_is_detected(msg_type):
    msg = sample_message(msg_type)
    ctx = SecurityContext()
    frame = encode_message(msg, ctx, direction_of(msg_type))
    for byte_idx in range(len(frame.raw)):
        for bit in range(8):
            mutated = bytearray(frame.raw)
            mutated[byte_idx] ^= 1 << bit
            with pytest.raises(IntegrityError):
                decode_message(
                    Frame(bytes(mutated), frame.direction), ctx, expected_rnti=msg.rnti
                )


def test_flip_with_recomputed_checksum_is_accepted():
    msg = sample_message(MsgType.RRC_SETUP_REQUEST)
    ctx = SecurityContext()
    frame = encode_message(msg, ctx, Direction.UPLINK)
    mutated = bytearray(frame.raw[:-2])
    mutated[6] ^= 0x02  # flips the low establishment-cause bit
    # recompute with the reference oracle, not the production routine
    fresh = ref_crc16(bytes(mutated)) ^ msg.rnti
    accepted = decode_message(
        Frame(bytes(mutated) + fresh.to_bytes(2, "big"), Direction.UPLINK), ctx
    )
    assert accepted.fields["establishment_cause"] == 0b0111


def test_frame_recorded_under_other_rnti_fails_receiver_check():
    msg = sample_message(MsgType.RRC_SETUP_REQUEST, rnti=0x1111)
    ctx = SecurityContext()
    frame = encode_message(msg, ctx, Direction.UPLINK)
    with pytest.raises(IntegrityError):
        decode_message(frame, ctx, expected_rnti=0x2222)


def test_malformed_frames():
    ctx = SecurityContext()
    with pytest.raises(MalformedFrame):
        decode_message(Frame(b"\x01\x01\x00", Direction.UPLINK), ctx)
    # unknown type code with a valid checksum
    raw = bytes([200, 1, 0x46, 0x01, 0])
    raw += compute_checksum(raw, 0x4601).to_bytes(2, "big")
    with pytest.raises(MalformedFrame):
        decode_message(Frame(raw, Direction.UPLINK), ctx)


# ---------------------------------------------------------------------------
# establishment cause table
# ---------------------------------------------------------------------------

CAUSE_TABLE = {
    0b0000: ServiceType.EMERGENCY,
    0b0001: ServiceType.NULLTYPE,
    0b0010: ServiceType.HIGH_PRIO_ACCESS,
    0b0011: ServiceType.NULLTYPE,
    0b0100: ServiceType.MT_ACCESS,
    0b0101: ServiceType.NULLTYPE,
    0b0110: ServiceType.MO_SIG,
    0b0111: ServiceType.NULLTYPE,
    0b1000: ServiceType.MO_DATA,
    0b1001: ServiceType.NULLTYPE,
    0b1010: ServiceType.DELAY_TOLERANT_ACCESS_V1020,
    0b1011: ServiceType.NULLTYPE,
    0b1100: ServiceType.MO_VOICE_CALL_V1280,
    0b1101: ServiceType.NULLTYPE,
    0b1110: ServiceType.SPARE1,
    0b1111: ServiceType.NULLTYPE,
}


@pytest.mark.parametrize("cause,expected", sorted(CAUSE_TABLE.items()))
def test_establishment_cause_table(cause, expected):
    assert establishment_cause_effect(cause) is expected


def test_cause_odd_constant_even_injective():
    odd = {establishment_cause_effect(c) for c in range(1, 16, 2)}
    assert odd == {ServiceType.NULLTYPE}
    even = [establishment_cause_effect(c) for c in range(0, 16, 2)]
    assert len(set(even)) == len(even)


# ---------------------------------------------------------------------------
# stream framing
# ---------------------------------------------------------------------------


def test_stream_decoder_reassembles_split_frames():
    ctx = SecurityContext()
    frames = [
        encode_message(sample_message(t), ctx, direction_of(t))
        for t in (MsgType.RRC_SETUP_REQUEST, MsgType.RRC_SETUP_COMPLETE)
    ]
    stream = b"".join(wire.frame_to_stream(f) for f in frames)
    decoder = wire.StreamDecoder(Direction.UPLINK)
    out = []
    # feed a byte at a time to exercise partial reads
    for i in range(len(stream)):
        out.extend(decoder.feed(stream[i : i + 1]))
    assert [f.raw for f in out] == [f.raw for f in frames]


def test_keystream_split_by_direction_and_counter():
    a = wire.keystream(1, Direction.UPLINK, 0, 8)
    assert a != wire.keystream(1, Direction.DOWNLINK, 0, 8)
    assert a != wire.keystream(1, Direction.UPLINK, 1, 8)
    assert a == wire.keystream(1, Direction.UPLINK, 0, 8)
