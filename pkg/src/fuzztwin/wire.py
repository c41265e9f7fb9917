"""Bit-exact wire codec for the simulated RRC-style handshake.

Stream framing: 2-byte big-endian length, then one PDU.

PDU layout:

    [0]     msg_type code
    [1]     channel code
    [2..3]  rnti, big-endian
    [4]     transaction_id
    [5..]   per-type field bytes (see _encode_fields)
    [-2:]   checksum = CRC-16/CCITT-FALSE(pdu[:-2]) XOR rnti

Field bytes are XOR-ciphered with a keystream once the security context is
activated; header and checksum stay plaintext. Only the post-security message
types (capability and reconfiguration exchange onward) are ever ciphered, so
the security-mode handshake itself remains readable by both sides.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field, replace


class WireError(Exception):
    pass


class FieldOutOfRange(WireError):
    """An identifier value exceeds its declared width."""


class IntegrityError(WireError):
    """Trailing checksum does not match the masked CRC of the frame."""


class MalformedFrame(WireError):
    """Frame too short, or unknown codes after decryption."""


class MsgType(enum.IntEnum):
    RRC_SETUP_REQUEST = 1
    RRC_SETUP = 2
    RRC_SETUP_COMPLETE = 3
    SECURITY_MODE_COMMAND = 4
    SECURITY_MODE_COMPLETE = 5
    UE_CAPABILITY_ENQUIRY = 6
    UE_CAPABILITY_INFORMATION = 7
    RRC_RECONFIGURATION = 8
    RRC_RECONFIGURATION_COMPLETE = 9
    UL_INFORMATION_TRANSFER = 10
    PAGING = 11
    RRC_REJECT = 12
    CONNECTION_COMPLETE = 13


class Channel(enum.IntEnum):
    CCCH_UL = 1
    CCCH_DL = 2
    DCCH_UL = 3
    DCCH_DL = 4
    PDCCH = 5
    PCCH = 6


class PhysicalChannel(enum.IntEnum):
    PUSCH = 1
    PDSCH = 2
    PDCCH = 3
    PCCH = 4


class Direction(str, enum.Enum):
    UPLINK = "uplink"
    DOWNLINK = "downlink"


class ServiceType(str, enum.Enum):
    EMERGENCY = "emergency"
    NULLTYPE = "nulltype"
    HIGH_PRIO_ACCESS = "high_prio_access"
    MT_ACCESS = "mt_access"
    MO_SIG = "mo_sig"
    MO_DATA = "mo_data"
    DELAY_TOLERANT_ACCESS_V1020 = "delay_tolerant_access_v1020"
    MO_VOICE_CALL_V1280 = "mo_voice_call_v1280"
    SPARE1 = "spare1"


# Each message type rides exactly one logical channel.
TYPE_CHANNEL: dict[MsgType, Channel] = {
    MsgType.RRC_SETUP_REQUEST: Channel.CCCH_UL,
    MsgType.RRC_SETUP: Channel.CCCH_DL,
    MsgType.RRC_SETUP_COMPLETE: Channel.DCCH_UL,
    MsgType.SECURITY_MODE_COMMAND: Channel.DCCH_DL,
    MsgType.SECURITY_MODE_COMPLETE: Channel.DCCH_UL,
    MsgType.UE_CAPABILITY_ENQUIRY: Channel.DCCH_DL,
    MsgType.UE_CAPABILITY_INFORMATION: Channel.DCCH_UL,
    MsgType.RRC_RECONFIGURATION: Channel.PDCCH,
    MsgType.RRC_RECONFIGURATION_COMPLETE: Channel.DCCH_UL,
    MsgType.UL_INFORMATION_TRANSFER: Channel.DCCH_UL,
    MsgType.PAGING: Channel.PCCH,
    MsgType.RRC_REJECT: Channel.CCCH_DL,
    MsgType.CONNECTION_COMPLETE: Channel.DCCH_DL,
}

CHANNEL_PHYSICAL: dict[Channel, PhysicalChannel] = {
    Channel.CCCH_UL: PhysicalChannel.PUSCH,
    Channel.DCCH_UL: PhysicalChannel.PUSCH,
    Channel.CCCH_DL: PhysicalChannel.PDSCH,
    Channel.DCCH_DL: PhysicalChannel.PDSCH,
    Channel.PDCCH: PhysicalChannel.PDCCH,
    Channel.PCCH: PhysicalChannel.PCCH,
}

UPLINK_CHANNELS = {Channel.CCCH_UL, Channel.DCCH_UL}

# Field bytes of these types are ciphered once security is activated; the
# security-mode exchange itself and everything before it stay in clear.
CIPHERED_TYPES = {
    MsgType.UE_CAPABILITY_ENQUIRY,
    MsgType.UE_CAPABILITY_INFORMATION,
    MsgType.RRC_RECONFIGURATION,
    MsgType.RRC_RECONFIGURATION_COMPLETE,
    MsgType.UL_INFORMATION_TRANSFER,
    MsgType.CONNECTION_COMPLETE,
}

HEADER_LEN = 5
CHECKSUM_LEN = 2
MIN_FRAME_LEN = HEADER_LEN + CHECKSUM_LEN

SR_CONFIG_INDEX_MAX = 157

# Byte offsets of identifier fields within the PDU, used by bit-level fuzzing
# to aim raw on-wire writes.
FIELD_OFFSETS: dict[MsgType, dict[str, int]] = {
    MsgType.RRC_SETUP_REQUEST: {"ue_id": 5, "establishment_cause": 6, "spare": 6},
    MsgType.RRC_SETUP: {"srb_id": 5},
    MsgType.RRC_RECONFIGURATION: {"sr_config_index": 5},
}


@dataclass
class SecurityContext:
    """Shared-secret cipher state for one side of a connection.

    ``activated`` flips exactly once, when the security-mode exchange
    completes; counters advance per ciphered message and per direction.
    """

    session_key: int = 0
    activated: bool = False
    ul_counter: int = 0
    dl_counter: int = 0

    def counter_for(self, direction: Direction) -> int:
        return self.ul_counter if direction is Direction.UPLINK else self.dl_counter

    def bump(self, direction: Direction) -> None:
        if direction is Direction.UPLINK:
            self.ul_counter += 1
        else:
            self.dl_counter += 1


@dataclass(frozen=True)
class Message:
    msg_type: MsgType
    rnti: int
    transaction_id: int = 0
    fields: dict = field(default_factory=dict)

    @property
    def channel(self) -> Channel:
        return TYPE_CHANNEL[self.msg_type]

    @property
    def physical_channel(self) -> PhysicalChannel:
        return CHANNEL_PHYSICAL[self.channel]

    def with_fields(self, **updates) -> "Message":
        merged = dict(self.fields)
        merged.update(updates)
        return replace(self, fields=merged)


@dataclass(frozen=True)
class Frame:
    raw: bytes
    direction: Direction
    timestamp: int = 0  # virtual nanoseconds since campaign start

    @property
    def rnti(self) -> int:
        return int.from_bytes(self.raw[2:4], "big")

    @property
    def msg_type_code(self) -> int:
        return self.raw[0]

    @property
    def channel_code(self) -> int:
        return self.raw[1]


def crc16_ccitt_false(data: bytes) -> int:
    """CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no xorout."""
    crc = 0xFFFF
    for byte in data:
        crc ^= byte << 8
        for _ in range(8):
            if crc & 0x8000:
                crc = ((crc << 1) ^ 0x1021) & 0xFFFF
            else:
                crc = (crc << 1) & 0xFFFF
    return crc


def compute_checksum(body: bytes, rnti: int) -> int:
    """Frame checksum: plain CRC-16/CCITT-FALSE masked with the connection RNTI."""
    return crc16_ccitt_false(body) ^ (rnti & 0xFFFF)


def keystream(session_key: int, direction: Direction, counter: int, length: int) -> bytes:
    """Deterministic XOR keystream block, split by (key, direction, counter)."""
    if length == 0:
        return b""
    tag = b"\x01" if direction is Direction.UPLINK else b"\x02"
    out = bytearray()
    block = 0
    while len(out) < length:
        digest = hashlib.blake2b(
            counter.to_bytes(8, "big") + block.to_bytes(4, "big"),
            key=session_key.to_bytes(8, "big") + tag,
            digest_size=32,
        ).digest()
        out += digest
        block += 1
    return bytes(out[:length])


def _xor(data: bytes, pad: bytes) -> bytes:
    return bytes(a ^ b for a, b in zip(data, pad))


def _check_range(name: str, value: int, upper: int) -> None:
    if not 0 <= value <= upper:
        raise FieldOutOfRange(f"{name}={value} outside [0, {upper}]")


def _encode_fields(msg: Message) -> bytes:
    f = msg.fields
    if msg.msg_type is MsgType.RRC_SETUP_REQUEST:
        ue_id = f.get("ue_id", 0)
        cause = f.get("establishment_cause", 0)
        spare = f.get("spare", 0)
        _check_range("ue_id", ue_id, 0xFF)
        _check_range("establishment_cause", cause, 0x0F)
        _check_range("spare", spare, 0x01)
        return bytes([ue_id, (cause << 1) | spare])
    if msg.msg_type is MsgType.RRC_SETUP:
        srb_id = f.get("srb_id", 0)
        _check_range("srb_id", srb_id, 0xFF)
        return bytes([srb_id])
    if msg.msg_type is MsgType.RRC_RECONFIGURATION:
        idx = f.get("sr_config_index", 0)
        _check_range("sr_config_index", idx, SR_CONFIG_INDEX_MAX)
        return bytes([idx])
    return b""


def _decode_fields(msg_type: MsgType, body: bytes) -> dict:
    if msg_type is MsgType.RRC_SETUP_REQUEST:
        if len(body) != 2:
            raise MalformedFrame("setup request body must be 2 bytes")
        return {
            "ue_id": body[0],
            "establishment_cause": (body[1] >> 1) & 0x0F,
            "spare": body[1] & 0x01,
        }
    if msg_type is MsgType.RRC_SETUP:
        if len(body) != 1:
            raise MalformedFrame("setup body must be 1 byte")
        return {"srb_id": body[0]}
    if msg_type is MsgType.RRC_RECONFIGURATION:
        if len(body) != 1:
            raise MalformedFrame("reconfiguration body must be 1 byte")
        # Values above SR_CONFIG_INDEX_MAX are accepted on decode: the UE
        # negotiates scheduling regardless, only encode is strict.
        return {"sr_config_index": body[0]}
    if body:
        raise MalformedFrame(f"{msg_type.name} carries no fields, got {len(body)} bytes")
    return {}


def _is_ciphered(msg_type: MsgType, ctx: SecurityContext) -> bool:
    return ctx.activated and msg_type in CIPHERED_TYPES


def encode_message(msg: Message, ctx: SecurityContext, direction: Direction) -> Frame:
    """Encode a message into a checksummed (and possibly ciphered) frame.

    Pure with respect to ``ctx``: the caller advances counters after the
    frame is actually sent.
    """
    _check_range("rnti", msg.rnti, 0xFFFF)
    _check_range("transaction_id", msg.transaction_id, 0xFF)
    body = _encode_fields(msg)
    if _is_ciphered(msg.msg_type, ctx):
        pad = keystream(ctx.session_key, direction, ctx.counter_for(direction), len(body))
        body = _xor(body, pad)
    header = bytes(
        [
            int(msg.msg_type),
            int(msg.channel),
            (msg.rnti >> 8) & 0xFF,
            msg.rnti & 0xFF,
            msg.transaction_id,
        ]
    )
    checksum = compute_checksum(header + body, msg.rnti)
    raw = header + body + checksum.to_bytes(2, "big")
    return Frame(raw=raw, direction=direction)


def peek_header(frame: Frame) -> tuple[int, int, int, int]:
    """(msg_type_code, channel_code, rnti, transaction_id) without decryption."""
    if len(frame.raw) < MIN_FRAME_LEN:
        raise MalformedFrame(f"frame of {len(frame.raw)} bytes, need >= {MIN_FRAME_LEN}")
    raw = frame.raw
    return raw[0], raw[1], int.from_bytes(raw[2:4], "big"), raw[4]


def verify_checksum(frame: Frame, expected_rnti: int | None = None) -> None:
    """Raise IntegrityError unless the trailing checksum matches.

    The mask RNTI defaults to the one claimed in the header; receivers pass
    their own so frames recorded under another RNTI fail verification.
    """
    if len(frame.raw) < MIN_FRAME_LEN:
        raise MalformedFrame(f"frame of {len(frame.raw)} bytes, need >= {MIN_FRAME_LEN}")
    rnti = expected_rnti if expected_rnti is not None else frame.rnti
    stated = int.from_bytes(frame.raw[-2:], "big")
    if compute_checksum(frame.raw[:-2], rnti) != stated:
        raise IntegrityError("checksum mismatch")


def decode_message(
    frame: Frame, ctx: SecurityContext, expected_rnti: int | None = None
) -> Message:
    """Verify integrity, decipher if needed, and parse the PDU.

    Raises IntegrityError before any decryption on checksum mismatch, and
    MalformedFrame for unknown codes or bad field lengths afterwards.
    """
    verify_checksum(frame, expected_rnti)
    raw = frame.raw
    type_code, channel_code, rnti, transaction_id = peek_header(frame)
    try:
        msg_type = MsgType(type_code)
    except ValueError:
        raise MalformedFrame(f"unknown msg_type code {type_code}") from None
    if channel_code != int(TYPE_CHANNEL[msg_type]):
        raise MalformedFrame(f"channel code {channel_code} invalid for {msg_type.name}")
    body = raw[HEADER_LEN:-CHECKSUM_LEN]
    if _is_ciphered(msg_type, ctx):
        pad = keystream(
            ctx.session_key, frame.direction, ctx.counter_for(frame.direction), len(body)
        )
        body = _xor(body, pad)
    fields = _decode_fields(msg_type, body)
    return Message(msg_type=msg_type, rnti=rnti, transaction_id=transaction_id, fields=fields)


def establishment_cause_effect(cause: int) -> ServiceType:
    """Service type selected by the 4-bit establishment cause.

    Even patterns each select a concrete service; every odd pattern collapses
    to nulltype.
    """
    _check_range("establishment_cause", cause, 0x0F)
    if cause & 0x01:
        return ServiceType.NULLTYPE
    return {
        0b0000: ServiceType.EMERGENCY,
        0b0010: ServiceType.HIGH_PRIO_ACCESS,
        0b0100: ServiceType.MT_ACCESS,
        0b0110: ServiceType.MO_SIG,
        0b1000: ServiceType.MO_DATA,
        0b1010: ServiceType.DELAY_TOLERANT_ACCESS_V1020,
        0b1100: ServiceType.MO_VOICE_CALL_V1280,
        0b1110: ServiceType.SPARE1,
    }[cause]


def frame_to_stream(frame: Frame) -> bytes:
    """Length-prefix a PDU for the stream socket."""
    return len(frame.raw).to_bytes(2, "big") + frame.raw


class StreamDecoder:
    """Incremental reader for length-prefixed PDUs from a byte stream."""

    def __init__(self, direction: Direction):
        self.direction = direction
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Frame]:
        self._buf += data
        frames = []
        while True:
            if len(self._buf) < 2:
                break
            length = int.from_bytes(self._buf[:2], "big")
            if len(self._buf) < 2 + length:
                break
            raw = bytes(self._buf[2 : 2 + length])
            del self._buf[: 2 + length]
            frames.append(Frame(raw=raw, direction=self.direction))
        return frames
