"""Simulated UE and gNB endpoints speaking the handshake over stream sockets.

The connection walks a fixed nine-message exchange (setup, security mode,
capability, reconfiguration), after which the gNB emits a ConnectionComplete
marker frame. Transition logic is pure: ``ue_step``/``gnb_step`` map
(state, event) to (state, outgoing messages) and the socket runners only do
codec and I/O around them.

Unexpected-but-legal messages model the fuzz surface: if the pair
(expected command, received command) is listed in the active
VulnerabilityProfile the endpoint fails the connection, otherwise the message
is ignored and the peer's retransmit timer recovers the handshake. Frames
that fail the integrity check always fail the connection.

Trace timestamps are virtual (a fixed tick per observed frame) so that runs
with the same seed are byte-identical; wall-clock time is used only for
liveness timeouts.
"""

from __future__ import annotations

import hashlib
import socket
import threading
import time
from dataclasses import dataclass, field, replace

from . import wire
from .relay import ForwardDecision, PortBindFailure, RelayConfig, run_relay
from .store import ActionRow, ConnectionTrace, FuzzActionRecord, StateRow
from .wire import (
    CHANNEL_PHYSICAL,
    Direction,
    Frame,
    IntegrityError,
    MalformedFrame,
    Message,
    MsgType,
    SecurityContext,
    ServiceType,
    TYPE_CHANNEL,
    establishment_cause_effect,
)

UE = "UE"
GNB = "GNB"

IDLE = "IDLE"
SETUP_SENT = "SETUP_SENT"
SETUP_RECEIVED = "SETUP_RECEIVED"
SETUP_COMPLETE = "SETUP_COMPLETE"
SECURITY_PENDING = "SECURITY_PENDING"
SECURED = "SECURED"
CAPABILITY_PENDING = "CAPABILITY_PENDING"
RECONFIG_PENDING = "RECONFIG_PENDING"
CONNECTED = "CONNECTED"
FAILED = "FAILED"

SUCCESS = "Success"
FAILED_OUTCOME = "Failed"

# The canonical exchange in wire order; ConnectionComplete is the completion
# marker the gNB emits once the nine-message handshake is done.
HANDSHAKE_SEQUENCE = (
    MsgType.RRC_SETUP_REQUEST,
    MsgType.RRC_SETUP,
    MsgType.RRC_SETUP_COMPLETE,
    MsgType.SECURITY_MODE_COMMAND,
    MsgType.SECURITY_MODE_COMPLETE,
    MsgType.UE_CAPABILITY_ENQUIRY,
    MsgType.UE_CAPABILITY_INFORMATION,
    MsgType.RRC_RECONFIGURATION,
    MsgType.RRC_RECONFIGURATION_COMPLETE,
    MsgType.CONNECTION_COMPLETE,
)


def state_id_for(msg_type: MsgType, rnti: int) -> str:
    """Synthesise the state id a frame of this type and RNTI would map to."""
    channel = TYPE_CHANNEL[msg_type]
    phys = CHANNEL_PHYSICAL[channel]
    prefix = bytes([int(msg_type), int(channel), (rnti >> 8) & 0xFF])
    return f"{phys.name}:{prefix.hex()}"


def derive_state_id(frame: Frame) -> str:
    """Opaque state id: physical channel plus the first three PDU bytes.

    Needs no decryption, so it works on frames the observer cannot read.
    """
    if len(frame.raw) < 3:
        raise MalformedFrame("need at least 3 PDU bytes for a state id")
    try:
        channel = wire.Channel(frame.raw[1])
        phys = CHANNEL_PHYSICAL[channel].name
    except ValueError:
        phys = "UNKNOWN"
    return f"{phys}:{frame.raw[:3].hex()}"


@dataclass(frozen=True)
class VulnerabilityProfile:
    """Configured twin flaws: command pairs that force a connection failure.

    A pair (a, a') fires when an endpoint expecting command a receives
    command a' instead.
    """

    pairs: frozenset = frozenset()
    clustering: str = "uniform"  # row_clustered | column_clustered | uniform

    @property
    def count(self) -> int:
        return len(self.pairs)

    @classmethod
    def empty(cls) -> "VulnerabilityProfile":
        return cls()

    @classmethod
    def from_type_pairs(cls, type_pairs, rnti: int) -> "VulnerabilityProfile":
        pairs = frozenset(
            (state_id_for(a, rnti), state_id_for(b, rnti)) for a, b in type_pairs
        )
        return cls(pairs=pairs)

    @classmethod
    def generate(cls, commands, count: int, clustering: str, seed: int) -> "VulnerabilityProfile":
        """Seed ``count`` vulnerable ordered pairs over a command alphabet.

        row_clustered packs the pairs into as few fragile source commands as
        possible, column_clustered into as few poison replacements, uniform
        scatters them over the whole ordered-pair space.
        """
        import random as _random

        rng = _random.Random(seed)
        commands = list(commands)
        n = len(commands)
        if count > n * (n - 1):
            raise ValueError("profile larger than the ordered-pair space")
        pairs: set[tuple[str, str]] = set()
        if clustering == "uniform":
            all_pairs = [(a, b) for a in commands for b in commands if a != b]
            pairs.update(rng.sample(all_pairs, count))
        elif clustering in ("row_clustered", "column_clustered"):
            anchors = rng.sample(commands, n)
            for anchor in anchors:
                others = [c for c in commands if c != anchor]
                rng.shuffle(others)
                for other in others:
                    pair = (anchor, other) if clustering == "row_clustered" else (other, anchor)
                    pairs.add(pair)
                    if len(pairs) == count:
                        break
                if len(pairs) == count:
                    break
        else:
            raise ValueError(f"unknown clustering {clustering!r}")
        return cls(pairs=frozenset(pairs), clustering=clustering)

    def forces_failure(self, expected_sid: str, got_sid: str) -> bool:
        return (expected_sid, got_sid) in self.pairs


@dataclass(frozen=True)
class TwinParams:
    """Baseline identifier values the endpoints put on the wire."""

    ue_id: int = 3
    establishment_cause: int = 0b0110  # mo_sig
    spare: int = 1
    srb_id: int = 1
    sr_config_index: int = 17


@dataclass
class TwinConfig:
    seed: int = 0
    rnti: int = 0x4601
    session_key: int | None = None
    timeout: float = 2.0  # wall-clock liveness bound per connection
    retransmit_interval: float = 0.25
    tick_ns: int = 10_000_000  # virtual time per observed frame
    host: str = "127.0.0.1"
    params: TwinParams = field(default_factory=TwinParams)

    def resolved_session_key(self) -> int:
        if self.session_key is not None:
            return self.session_key
        digest = hashlib.blake2b(self.seed.to_bytes(8, "big"), digest_size=8).digest()
        return int.from_bytes(digest, "big")


# ---------------------------------------------------------------------------
# pure transition machinery
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Start:
    pass


@dataclass(frozen=True)
class TimerExpired:
    pass


@dataclass(frozen=True)
class IncomingFrame:
    message: Message


@dataclass(frozen=True)
class EndpointState:
    role: str
    phase: str = IDLE
    rnti: int = 0x4601
    security: SecurityContext = field(default_factory=SecurityContext)
    service_type: ServiceType | None = None
    params: TwinParams = field(default_factory=TwinParams)
    next_tid: int = 0
    saw_connection_complete: bool = False
    failure_reason: str | None = None  # "integrity" | "reject" | "vulnerable_pair"


EXPECTED_INCOMING = {
    UE: {
        SETUP_SENT: MsgType.RRC_SETUP,
        SETUP_COMPLETE: MsgType.SECURITY_MODE_COMMAND,
        SECURED: MsgType.UE_CAPABILITY_ENQUIRY,
        RECONFIG_PENDING: MsgType.RRC_RECONFIGURATION,
        CONNECTED: MsgType.CONNECTION_COMPLETE,
    },
    GNB: {
        IDLE: MsgType.RRC_SETUP_REQUEST,
        SETUP_RECEIVED: MsgType.RRC_SETUP_COMPLETE,
        SECURITY_PENDING: MsgType.SECURITY_MODE_COMPLETE,
        CAPABILITY_PENDING: MsgType.UE_CAPABILITY_INFORMATION,
        RECONFIG_PENDING: MsgType.RRC_RECONFIGURATION_COMPLETE,
    },
}


def expected_incoming(state: EndpointState) -> MsgType | None:
    return EXPECTED_INCOMING[state.role].get(state.phase)


def _emit(state: EndpointState, phase: str, *msg_types_fields, activate=False):
    msgs = []
    tid = state.next_tid
    for msg_type, fields in msg_types_fields:
        msgs.append(
            Message(msg_type=msg_type, rnti=state.rnti, transaction_id=tid & 0xFF, fields=fields)
        )
        tid += 1
    security = state.security
    if activate:
        security = replace(security, activated=True)
    return replace(state, phase=phase, security=security, next_tid=tid), msgs


def _handle_unexpected(state: EndpointState, msg: Message, profile: VulnerabilityProfile):
    expected = expected_incoming(state)
    if expected is None:
        return state, []
    pair = (state_id_for(expected, state.rnti), state_id_for(msg.msg_type, msg.rnti))
    if profile.forces_failure(*pair):
        return replace(state, phase=FAILED, failure_reason="vulnerable_pair"), []
    return state, []  # legal but meaningless here: ignore, peer will retransmit


def ue_step(state: EndpointState, event, profile: VulnerabilityProfile):
    """Pure UE transition; returns (new state, messages to send)."""
    if state.phase == FAILED:
        return state, []
    if isinstance(event, Start):
        if state.phase != IDLE:
            return state, []
        p = state.params
        return _emit(
            state,
            SETUP_SENT,
            (
                MsgType.RRC_SETUP_REQUEST,
                {
                    "ue_id": p.ue_id,
                    "establishment_cause": p.establishment_cause,
                    "spare": p.spare,
                },
            ),
        )
    if isinstance(event, TimerExpired):
        return state, []  # the runner retransmits its cached frame
    if not isinstance(event, IncomingFrame):
        return state, []
    msg = event.message
    if msg.msg_type is not expected_incoming(state):
        return _handle_unexpected(state, msg, profile)

    if state.phase == SETUP_SENT:
        if msg.fields.get("srb_id") != 1:
            # srb_id 0 or 2: the UE rejects the offered bearer
            return replace(state, phase=FAILED, failure_reason="reject"), []
        return _emit(state, SETUP_COMPLETE, (MsgType.RRC_SETUP_COMPLETE, {}))
    if state.phase == SETUP_COMPLETE:
        return _emit(
            state, SECURED, (MsgType.SECURITY_MODE_COMPLETE, {}), activate=True
        )
    if state.phase == SECURED:
        return _emit(state, RECONFIG_PENDING, (MsgType.UE_CAPABILITY_INFORMATION, {}))
    if state.phase == RECONFIG_PENDING:
        # any sr_config_index is negotiable, never a failure cause
        return _emit(state, CONNECTED, (MsgType.RRC_RECONFIGURATION_COMPLETE, {}))
    if state.phase == CONNECTED:
        return replace(state, saw_connection_complete=True), []
    return state, []


def gnb_step(state: EndpointState, event, profile: VulnerabilityProfile):
    """Pure gNB transition; mirror of ue_step for the downlink side."""
    if state.phase == FAILED:
        return state, []
    if isinstance(event, (Start, TimerExpired)):
        return state, []
    if not isinstance(event, IncomingFrame):
        return state, []
    msg = event.message
    if msg.msg_type is not expected_incoming(state):
        return _handle_unexpected(state, msg, profile)

    if state.phase == IDLE:
        service = establishment_cause_effect(msg.fields.get("establishment_cause", 0))
        next_state, msgs = _emit(
            state, SETUP_RECEIVED, (MsgType.RRC_SETUP, {"srb_id": state.params.srb_id})
        )
        return replace(next_state, service_type=service), msgs
    if state.phase == SETUP_RECEIVED:
        return _emit(state, SECURITY_PENDING, (MsgType.SECURITY_MODE_COMMAND, {}))
    if state.phase == SECURITY_PENDING:
        return _emit(
            state,
            CAPABILITY_PENDING,
            (MsgType.UE_CAPABILITY_ENQUIRY, {}),
            activate=True,
        )
    if state.phase == CAPABILITY_PENDING:
        return _emit(
            state,
            RECONFIG_PENDING,
            (MsgType.RRC_RECONFIGURATION, {"sr_config_index": state.params.sr_config_index}),
        )
    if state.phase == RECONFIG_PENDING:
        return _emit(state, CONNECTED, (MsgType.CONNECTION_COMPLETE, {}))
    return state, []


def replay_handshake(config: TwinConfig, profile: VulnerabilityProfile | None = None):
    """Run the pure transition functions against each other, no sockets.

    Returns (ue_state, gnb_state, list of (direction, Message)).
    """
    profile = profile or VulnerabilityProfile.empty()
    ue = EndpointState(role=UE, rnti=config.rnti, params=config.params)
    gnb = EndpointState(role=GNB, rnti=config.rnti, params=config.params)
    log = []
    ue, pending = ue_step(ue, Start(), profile)
    queue = [(Direction.UPLINK, m) for m in pending]
    for _ in range(64):
        if not queue:
            break
        direction, msg = queue.pop(0)
        log.append((direction, msg))
        if direction is Direction.UPLINK:
            gnb, out = gnb_step(gnb, IncomingFrame(msg), profile)
            queue.extend((Direction.DOWNLINK, m) for m in out)
        else:
            ue, out = ue_step(ue, IncomingFrame(msg), profile)
            queue.extend((Direction.UPLINK, m) for m in out)
    return ue, gnb, log


# ---------------------------------------------------------------------------
# trace recording (virtual clock)
# ---------------------------------------------------------------------------


class TraceRecorder:
    """Thread-safe observer assigning deterministic virtual timestamps."""

    def __init__(self, tick_ns: int = 10_000_000):
        self.tick_ns = tick_ns
        self._lock = threading.Lock()
        self._events: list[tuple[str, int, Frame]] = []
        self.fuzz_time: int | None = None

    def observe(self, frame: Frame) -> Frame:
        with self._lock:
            ts = (len(self._events) + 1) * self.tick_ns
            stamped = Frame(raw=frame.raw, direction=frame.direction, timestamp=ts)
            self._events.append((derive_state_id(stamped), ts, stamped))
            return stamped

    def mark_fuzz(self) -> None:
        with self._lock:
            if self.fuzz_time is None:
                ts = len(self._events) * self.tick_ns
                self.fuzz_time = ts if ts else self.tick_ns

    def events(self):
        with self._lock:
            return list(self._events)

    def to_trace(self, outcome: str, fuzz_action: FuzzActionRecord | None = None) -> ConnectionTrace:
        events = self.events()
        last_ts = events[-1][1] if events else 0
        return ConnectionTrace(
            states=tuple((sid, ts) for sid, ts, _ in events),
            outcome=outcome,
            fuzz_action=fuzz_action,
            fuzz_time=self.fuzz_time if fuzz_action else None,
            outcome_time=last_ts + self.tick_ns,
        )

    def persist_rows(self, store, trace_id: str) -> None:
        """Write state and action rows for every observed frame."""
        for seq, (sid, ts, frame) in enumerate(self.events()):
            type_code, channel_code = frame.raw[0], frame.raw[1]
            try:
                channel = wire.Channel(channel_code)
                channel_name = channel.name
                phys_name = CHANNEL_PHYSICAL[channel].name
            except ValueError:
                channel_name, phys_name = "UNKNOWN", "UNKNOWN"
            try:
                desc = MsgType(type_code).name
            except ValueError:
                desc = f"type_{type_code}"
            store.record_state(
                StateRow(
                    state_id=sid,
                    channel=channel_name,
                    first_bytes=frame.raw[:3].hex(),
                    description=desc,
                )
            )
            store.record_action(
                ActionRow(
                    action_id=seq,
                    state_id=sid,
                    raw_bytes=frame.raw.hex(),
                    channel=channel_name,
                    physical_channel=phys_name,
                    message_time=ts,
                )
            )


# ---------------------------------------------------------------------------
# socket endpoints
# ---------------------------------------------------------------------------


def _recv_loop_socket(sock: socket.socket, poll: float):
    sock.settimeout(poll)
    try:
        return sock.recv(65536)
    except socket.timeout:
        return None
    except OSError:
        return b""


class EndpointRunner(threading.Thread):
    """Event loop for one endpoint: codec, retransmission, pure steps."""

    def __init__(
        self,
        role: str,
        config: TwinConfig,
        profile: VulnerabilityProfile,
        rx_sock: socket.socket,
        tx_sock: socket.socket,
        recorder: TraceRecorder,
        record_inbound: bool,
        stop_event: threading.Event,
        failure_event: threading.Event,
        message_hook=None,
    ):
        super().__init__(daemon=True, name=f"twin-{role.lower()}")
        self.role = role
        self.config = config
        self.profile = profile
        self.rx_sock = rx_sock
        self.tx_sock = tx_sock
        self.recorder = recorder
        self.record_inbound = record_inbound
        self.stop_event = stop_event
        self.failure_event = failure_event
        self.message_hook = message_hook
        self.state = EndpointState(
            role=role,
            rnti=config.rnti,
            params=config.params,
            security=SecurityContext(session_key=config.resolved_session_key()),
        )
        self.sent_connection_complete = False
        self._decoder = wire.StreamDecoder(
            Direction.UPLINK if role == GNB else Direction.DOWNLINK
        )
        self._last_sent: list[bytes] = []
        self._last_progress = time.monotonic()
        self._ctx = self.state.security  # runner-owned counters

    # -- helpers ---------------------------------------------------------

    def _direction_out(self) -> Direction:
        return Direction.UPLINK if self.role == UE else Direction.DOWNLINK

    def _send_messages(self, msgs) -> None:
        for msg in msgs:
            if self.message_hook is not None:
                hooked = self.message_hook(msg)
                if hooked is not None and hooked != msg:
                    self.recorder.mark_fuzz()
                    msg = hooked
            frame = wire.encode_message(msg, self._ctx, self._direction_out())
            if wire._is_ciphered(msg.msg_type, self._ctx):
                self._ctx.bump(self._direction_out())
            payload = wire.frame_to_stream(frame)
            try:
                self.tx_sock.sendall(payload)
            except OSError:
                return
            self._last_sent = [payload]
            if msg.msg_type is MsgType.CONNECTION_COMPLETE:
                self.sent_connection_complete = True

    def _retransmit(self) -> None:
        if self.state.phase in (CONNECTED, FAILED):
            return
        for payload in self._last_sent:
            try:
                self.tx_sock.sendall(payload)
            except OSError:
                return

    def _apply(self, event) -> None:
        step = ue_step if self.role == UE else gnb_step
        new_state, msgs = step(self.state, event, self.profile)
        # keep runner-owned counters: transition may have replaced the context
        if new_state.security is not self.state.security:
            fresh = new_state.security
            fresh.ul_counter = self._ctx.ul_counter
            fresh.dl_counter = self._ctx.dl_counter
            self._ctx = fresh
        self.state = new_state
        if msgs:
            self._send_messages(msgs)
            self._last_progress = time.monotonic()
        if self.state.phase == FAILED:
            self.failure_event.set()

    def _handle_frame(self, frame: Frame) -> None:
        if self.record_inbound:
            frame = self.recorder.observe(frame)
        try:
            wire.verify_checksum(frame, expected_rnti=self.state.rnti)
        except IntegrityError:
            # modified on the wire: treat as an attack
            self.state = replace(self.state, phase=FAILED, failure_reason="integrity")
            self.failure_event.set()
            return
        except MalformedFrame:
            return
        type_code, _, rnti, tid = wire.peek_header(frame)
        expected = expected_incoming(self.state)
        if expected is not None and type_code == int(expected):
            try:
                msg = wire.decode_message(frame, self._ctx, expected_rnti=self.state.rnti)
            except (IntegrityError, MalformedFrame):
                return
            if wire._is_ciphered(msg.msg_type, self._ctx):
                self._ctx.bump(frame.direction)
            self._apply(IncomingFrame(msg))
            return
        # unexpected command: header is enough to identify it, never decrypt
        try:
            msg_type = MsgType(type_code)
        except ValueError:
            return
        ghost = Message(msg_type=msg_type, rnti=rnti, transaction_id=tid, fields={})
        self._apply(IncomingFrame(ghost))

    def _finished(self) -> bool:
        if self.state.phase == FAILED:
            return True
        if self.role == GNB:
            return self.state.phase == CONNECTED and self.sent_connection_complete
        return self.state.phase == CONNECTED and self.state.saw_connection_complete

    # -- main loop -------------------------------------------------------

    def run(self) -> None:
        try:
            if self.role == UE:
                self._apply(Start())
            while not self.stop_event.is_set() and not self._finished():
                data = _recv_loop_socket(self.rx_sock, poll=0.005)
                if data == b"":
                    break  # peer closed
                if data:
                    for frame in self._decoder.feed(data):
                        self._handle_frame(frame)
                        if self._finished():
                            break
                    self._last_progress = time.monotonic()
                elif time.monotonic() - self._last_progress > self.config.retransmit_interval:
                    self._apply(TimerExpired())
                    self._retransmit()
                    self._last_progress = time.monotonic()
        finally:
            for sock in (self.rx_sock, self.tx_sock):
                try:
                    sock.close()
                except OSError:
                    pass


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------


def _listener(host: str, port: int) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((host, port))
    except OSError as exc:
        sock.close()
        raise PortBindFailure(f"cannot bind {host}:{port}: {exc}") from exc
    sock.listen(2)
    return sock


def _accept(listener: socket.socket, timeout: float) -> socket.socket:
    listener.settimeout(timeout)
    conn, _ = listener.accept()
    conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return conn


def _dial(host: str, port: int, timeout: float) -> socket.socket:
    deadline = time.monotonic() + timeout
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=0.5)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            return sock
        except OSError:
            if time.monotonic() > deadline:
                raise
            time.sleep(0.005)


class _RecorderSink:
    """Relay record sink that stamps frames into the shared recorder.

    The trace sequence reflects what was actually forwarded (the connection
    as the receiver experienced it); the relay event keeps the original
    bytes and the decision alongside.
    """

    def __init__(self, recorder: TraceRecorder):
        self.recorder = recorder
        self.events = []

    def __call__(self, event) -> None:
        if event.forwarded is not None:
            self.recorder.observe(Frame(raw=event.forwarded, direction=event.direction))
        if event.decision.kind != "pass":
            self.recorder.mark_fuzz()
        self.events.append(event)


@dataclass
class HandshakeResult:
    trace: ConnectionTrace
    ue_state: EndpointState
    gnb_state: EndpointState
    relay_events: list


def run_connection(
    config: TwinConfig,
    profile: VulnerabilityProfile | None = None,
    interceptor=None,
    *,
    store=None,
    fuzz_action: FuzzActionRecord | None = None,
    ue_hook=None,
    gnb_hook=None,
    relay_ports: RelayConfig | None = None,
) -> HandshakeResult:
    """Drive one UE/gNB connection attempt to completion or timeout.

    With ``interceptor=None`` the endpoints talk directly; otherwise a MITM
    relay is placed between them and every frame goes through the
    interceptor. ``ue_hook``/``gnb_hook`` rewrite outgoing messages before
    encoding, the white-box injection point for before-encryption fuzzing.
    Outcome is Success iff the gNB emits ConnectionComplete within the
    timeout.
    """
    profile = profile or VulnerabilityProfile.empty()
    recorder = TraceRecorder(tick_ns=config.tick_ns)
    stop_event = threading.Event()
    failure_event = threading.Event()
    use_relay = interceptor is not None
    host = config.host

    # relay_ports reproduces the deployment topology exactly: the endpoints
    # listen on the forward ports, the relay on the listen ports; port 0
    # (the default) picks ephemeral ports for hermetic runs
    gnb_listener = _listener(host, relay_ports.gnb_forward_port if relay_ports else 0)
    ue_listener = _listener(host, relay_ports.ue_forward_port if relay_ports else 0)
    gnb_port = gnb_listener.getsockname()[1]
    ue_port = ue_listener.getsockname()[1]

    threads = []
    sink = _RecorderSink(recorder)
    relay_thread = None
    relay_listeners = ()
    try:
        if use_relay:
            relay_ul_listener = _listener(host, relay_ports.ue_listen_port if relay_ports else 0)
            relay_dl_listener = _listener(host, relay_ports.gnb_listen_port if relay_ports else 0)
            relay_listeners = (relay_ul_listener, relay_dl_listener)
            relay_ul_port = relay_ul_listener.getsockname()[1]
            relay_dl_port = relay_dl_listener.getsockname()[1]

            relay_thread = threading.Thread(
                target=run_relay,
                kwargs=dict(
                    config=RelayConfig(
                        host=host,
                        ue_listen_port=relay_ul_port,
                        gnb_forward_port=gnb_port,
                        gnb_listen_port=relay_dl_port,
                        ue_forward_port=ue_port,
                        record_sink=sink,
                    ),
                    interceptor=interceptor,
                    listeners=relay_listeners,
                    stop_event=stop_event,
                ),
                daemon=True,
                name="twin-relay",
            )
            relay_thread.start()
            ue_tx_port, gnb_tx_port = relay_ul_port, relay_dl_port
        else:
            ue_tx_port, gnb_tx_port = gnb_port, ue_port

        # dials complete against the listen backlog, so dial both legs first
        # and accept afterwards: no ordering deadlock in either mode
        accept_timeout = max(config.timeout, 2.0)
        ue_tx = _dial(host, ue_tx_port, accept_timeout)
        gnb_tx = _dial(host, gnb_tx_port, accept_timeout)
        gnb_rx = _accept(gnb_listener, accept_timeout)
        ue_rx = _accept(ue_listener, accept_timeout)

        record_inbound = not use_relay
        gnb_runner = EndpointRunner(
            GNB, config, profile, gnb_rx, gnb_tx, recorder, record_inbound,
            stop_event, failure_event, message_hook=gnb_hook,
        )
        ue_runner = EndpointRunner(
            UE, config, profile, ue_rx, ue_tx, recorder, record_inbound,
            stop_event, failure_event, message_hook=ue_hook,
        )
        threads = [gnb_runner, ue_runner]
        gnb_runner.start()
        ue_runner.start()

        deadline = time.monotonic() + config.timeout
        while time.monotonic() < deadline:
            if all(not t.is_alive() for t in threads):
                break
            if failure_event.is_set():
                break
            time.sleep(0.002)

        stop_event.set()
        for t in threads:
            t.join(timeout=1.0)
        success = (
            gnb_runner.state.phase == CONNECTED and gnb_runner.sent_connection_complete
        )
        outcome = SUCCESS if success else FAILED_OUTCOME
    finally:
        stop_event.set()
        for sock in (gnb_listener, ue_listener, *relay_listeners):
            try:
                sock.close()
            except OSError:
                pass
        if relay_thread is not None:
            relay_thread.join(timeout=1.0)

    trace = recorder.to_trace(outcome, fuzz_action=fuzz_action)
    if store is not None:
        trace_id = store.record_trace(trace)
        recorder.persist_rows(store, trace_id)
        trace = replace(trace, trace_id=trace_id)
    return HandshakeResult(
        trace=trace,
        ue_state=ue_runner.state,
        gnb_state=gnb_runner.state,
        relay_events=sink.events,
    )


def run_handshake(
    config: TwinConfig,
    profile: VulnerabilityProfile | None = None,
    interceptor=None,
    **kwargs,
) -> ConnectionTrace:
    """run_connection, reduced to the recorded trace."""
    return run_connection(config, profile, interceptor, **kwargs).trace


def identity_interceptor(frame: Frame) -> ForwardDecision:
    return ForwardDecision.pass_()
