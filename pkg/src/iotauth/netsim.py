"""Deterministic channel simulator driving one authentication session.

The loop is single-threaded and owns the rng and the world's clock. Every
public-channel message passes through the adversary hooks and is logged as
a :class:`ChannelEvent`; registration traffic travels over the secure link
and never reaches the hooks.
"""

from __future__ import annotations

import copy
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .crypto import Bits, PufDevice, SimClock, Value256, random_biometric
from .ledger import Ledger
from .messages import REGISTRATION_TYPES, LedgerTx, Message, decode, encode
from .protocol import (
    SESSION_TIMEOUT_MS,
    TIMEOUT,
    Gateway,
    ProtocolConfig,
    ProtocolReject,
    SensorNode,
    UserDevice,
    Variant,
    register_sensor,
    register_user,
)

LATENCY_MS = 5
TIMEOUT_MS = SESSION_TIMEOUT_MS

UD, GW, SN, LEDGER, ADV = "UD", "GW", "SN", "LEDGER", "ADV"

SEND, DELIVER, TAMPER, DROP, INJECT = "send", "deliver", "tamper", "drop", "inject"


class DeterminismViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class ChannelEvent:
    seq: int
    kind: str
    src: str
    dst: str
    payload: bytes
    sim_time: int

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "kind": self.kind,
            "from": self.src,
            "to": self.dst,
            "payload": self.payload.hex(),
            "sim_time": self.sim_time,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelEvent":
        return cls(d["seq"], d["kind"], d["from"], d["to"], bytes.fromhex(d["payload"]), d["sim_time"])

    @property
    def message(self) -> Message:
        return decode(self.payload)


@dataclass(frozen=True)
class Outcome:
    status: str  # "complete" or "rejected"
    step: str = ""
    reason: str = ""
    detail: str = ""

    @property
    def complete(self) -> bool:
        return self.status == "complete"

    def to_dict(self) -> dict:
        return {"status": self.status, "step": self.step, "reason": self.reason, "detail": self.detail}

    def __str__(self) -> str:
        return "complete" if self.complete else f"rejected({self.step}, {self.reason})"


COMPLETE = Outcome("complete")


@dataclass
class Trace:
    rng_seed: int
    variant: Variant
    events: list[ChannelEvent] = field(default_factory=list)
    outcome: Outcome = COMPLETE
    start_ms: int = 0
    # how each adversary-injected message fared, in injection order
    injected: list[Outcome] = field(default_factory=list)

    def of_kind(self, kind: str) -> list[ChannelEvent]:
        return [e for e in self.events if e.kind == kind]

    def messages(self, kind: str = DELIVER) -> list[Message]:
        return [e.message for e in self.of_kind(kind)]

    def header(self) -> dict:
        return {
            "trace": 1,
            "rng_seed": self.rng_seed,
            "variant": self.variant.value,
            "start_ms": self.start_ms,
            "outcome": self.outcome.to_dict(),
            "injected": [o.to_dict() for o in self.injected],
        }

    def dumps(self) -> str:
        lines = [json.dumps(self.header(), sort_keys=True)]
        lines += [json.dumps(e.to_dict(), sort_keys=True) for e in self.events]
        return "\n".join(lines) + "\n"

    def save(self, path: Path | str) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "Trace":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        head, events = rows[0], rows[1:]
        return cls(
            rng_seed=head["rng_seed"],
            variant=Variant.parse(head["variant"]),
            events=[ChannelEvent.from_dict(e) for e in events],
            outcome=Outcome(**head["outcome"]),
            start_ms=head["start_ms"],
            injected=[Outcome(**o) for o in head.get("injected", [])],
        )

    @classmethod
    def load(cls, path: Path | str) -> "Trace":
        return cls.loads(Path(path).read_text())


def dump_traces(traces: list[Trace], path: Path | str) -> None:
    Path(path).write_text("".join(t.dumps() for t in traces))


def load_traces(path: Path | str) -> list[Trace]:
    """Read a file holding one or more traces back to back."""
    chunks: list[list[str]] = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        if "\"trace\"" in line and json.loads(line).get("trace"):
            chunks.append([])
        chunks[-1].append(line)
    return [Trace.loads("\n".join(c)) for c in chunks]


@dataclass
class AdversaryHooks:
    """Dolev-Yao interposition on the public channel.

    ``tamper`` returns the (possibly modified) message, or None to drop it.
    ``inject`` entries are delivered to their target before the session
    starts; the target's reply is routed back to the adversary.
    """

    observe: Optional[Callable[[ChannelEvent], None]] = None
    tamper: Optional[Callable[[Message], Optional[Message]]] = None
    inject: list[tuple[str, Message]] = field(default_factory=list)


@dataclass
class World:
    variant: Variant
    config: ProtocolConfig
    gw: Gateway
    ud: UserDevice
    sn: SensorNode
    biometric: Bits
    clock: SimClock
    ledger: Optional[Ledger] = None

    def snapshot(self) -> "World":
        return copy.deepcopy(self)


class Channel:
    """Records events and applies adversary hooks to public traffic."""

    def __init__(self, trace_events: list[ChannelEvent], clock: SimClock, adversary: Optional[AdversaryHooks] = None):
        self.events = trace_events
        self.clock = clock
        self.adversary = adversary

    def _log(self, kind: str, src: str, dst: str, msg: Message) -> ChannelEvent:
        event = ChannelEvent(len(self.events), kind, src, dst, encode(msg), self.clock.now())
        self.events.append(event)
        public = not isinstance(msg, REGISTRATION_TYPES)
        if public and self.adversary and self.adversary.observe:
            self.adversary.observe(event)
        return event

    def secure(self, src: str, dst: str, msg: Message) -> Message:
        """Secure-channel transfer: logged, never observed or modified."""
        self._log(SEND, src, dst, msg)
        self.clock.advance(LATENCY_MS)
        self._log(DELIVER, src, dst, msg)
        return msg

    def transmit(self, src: str, dst: str, msg: Message) -> Optional[Message]:
        """Public transfer; returns the delivered message or None if dropped."""
        self._log(SEND, src, dst, msg)
        self.clock.advance(LATENCY_MS)
        if self.adversary and self.adversary.tamper:
            out = self.adversary.tamper(msg)
            if out is None:
                self._log(DROP, src, dst, msg)
                return None
            if encode(out) != encode(msg):
                self._log(TAMPER, src, dst, out)
            msg = out
        self._log(DELIVER, src, dst, msg)
        return msg


def build_world(
    variant: Variant,
    seed: int = 0,
    config: Optional[ProtocolConfig] = None,
    *,
    k_equals_response: bool = False,
    setup_events: Optional[list[ChannelEvent]] = None,
    adversary: Optional[AdversaryHooks] = None,
) -> World:
    """Create and register one user device, one sensor node and the gateway.

    ``adversary`` is wired to the registration channel only so tests can
    confirm that secure-channel messages never reach its hooks.
    """
    config = config or ProtocolConfig()
    rng = random.Random(seed)
    clock = SimClock()
    ledger = Ledger() if variant.blockchain else None
    gw = Gateway(
        variant,
        config,
        ledger=ledger,
        contract_addr=Value256.random(rng) if variant.blockchain else None,
    )
    ud = UserDevice(variant, Value256.random(rng), Value256.random(rng), PufDevice(Value256.random(rng)), config)
    sn = SensorNode(variant, Value256.random(rng), PufDevice(Value256.random(rng)), config)
    biometric = random_biometric(config.fuzzy, rng)
    channel = Channel(setup_events if setup_events is not None else [], clock, adversary)
    register_user(gw, ud, biometric, config.n_add, rng, link=channel.secure, clock=clock, k_equals_response=k_equals_response)
    register_sensor(gw, sn, config.n_add, rng, link=channel.secure, clock=clock)
    ud.target_sn = sn.beta_sn
    return World(variant, config, gw, ud, sn, biometric, clock, ledger)


def _dispatch(world: World, target: str, msg: Message, rng: random.Random):
    if target == GW:
        handler = {
            "M1": world.gw.handle_m1,
            "M3": world.gw.handle_m3,
            "M5": world.gw.handle_m5,
        }.get(type(msg).__name__)
        if handler is None:
            raise ProtocolReject("protocol-order", "gw_dispatch", type(msg).__name__)
        return handler(msg, rng, world.clock)
    if target == UD:
        return world.ud.handle_m2(msg, rng, world.clock)
    if target == SN:
        return world.sn.handle_m4(msg, rng, world.clock)
    raise ValueError(f"cannot inject to {target}")


def _rejected(exc: ProtocolReject) -> Outcome:
    return Outcome("rejected", exc.step, exc.reason, exc.detail)


def run_session(
    world: World,
    rng: random.Random | int,
    adversary: Optional[AdversaryHooks] = None,
    biometric: Optional[Bits] = None,
) -> Trace:
    """Run login, M1..M5 and (blockchain variants) the ledger round.

    ``rng`` may be a seed; the trace records it so the session can be
    replayed. The world is updated in place.
    """
    seed = rng if isinstance(rng, int) else None
    if isinstance(rng, int):
        rng = random.Random(rng)
    clock = world.clock
    trace = Trace(rng_seed=seed if seed is not None else -1, variant=world.variant, start_ms=clock.now())
    ch = Channel(trace.events, clock, adversary)

    for target, msg in (adversary.inject if adversary else []):
        ch._log(INJECT, ADV, target, msg)
        clock.advance(LATENCY_MS)
        try:
            reply = _dispatch(world, target, msg, rng)
        except ProtocolReject as exc:
            trace.injected.append(_rejected(exc))
            continue
        trace.injected.append(COMPLETE)
        for r in reply if isinstance(reply, list) else [reply]:
            ch._log(SEND, target, ADV, r)

    def timeout(waiting: str) -> Trace:
        clock.advance(TIMEOUT_MS)
        trace.outcome = Outcome("rejected", waiting, TIMEOUT)
        return trace

    ud, gw, sn = world.ud, world.gw, world.sn
    ud.target_sn = sn.beta_sn
    try:
        ud.login(biometric if biometric is not None else world.biometric, ud.h_t)
        m1 = ch.transmit(UD, GW, ud.auth_init(rng, clock))
        if m1 is None:
            return timeout("ud_handle_m2")
        m2 = ch.transmit(GW, UD, gw.handle_m1(m1, rng, clock))
        if m2 is None:
            return timeout("ud_handle_m2")
        try:
            m3 = ud.handle_m2(m2, rng, clock)
        except ProtocolReject as exc:
            # the gateway keeps waiting for M3 until it gives up
            clock.advance(TIMEOUT_MS)
            trace.outcome = _rejected(exc)
            return trace
        m3 = ch.transmit(UD, GW, m3)
        if m3 is None:
            return timeout("gw_handle_m3")
        m4 = ch.transmit(GW, SN, gw.handle_m3(m3, rng, clock))
        if m4 is None:
            return timeout("gw_handle_m5")
        try:
            m5 = sn.handle_m4(m4, rng, clock)
        except ProtocolReject as exc:
            clock.advance(TIMEOUT_MS)
            trace.outcome = _rejected(exc)
            return trace
        m5 = ch.transmit(SN, GW, m5)
        if m5 is None:
            return timeout("gw_handle_m5")
        for tx in gw.handle_m5(m5, rng, clock):
            delivered = ch.transmit(GW, LEDGER, tx)
            if delivered is None:
                return timeout("gw_ledger")
            reply = ch.transmit(LEDGER, GW, _ledger_accept(world, delivered, rng))
            if reply is None:
                return timeout("gw_ledger")
            gw.handle_ledger_reply(reply, clock)
    except ProtocolReject as exc:
        trace.outcome = _rejected(exc)
        return trace
    trace.outcome = COMPLETE
    return trace


def _ledger_accept(world: World, msg: Message, rng: random.Random) -> Message:
    if world.ledger is None or not isinstance(msg, LedgerTx):
        raise ProtocolReject("protocol-order", "ledger")
    return world.ledger.accept(msg, world.clock, rng)


def replay_trace(
    trace: Trace,
    world: World,
    adversary: Optional[AdversaryHooks] = None,
    biometric: Optional[Bits] = None,
) -> Trace:
    """Re-run ``trace`` from the world snapshot it started from.

    The snapshot is copied, never mutated. Raises DeterminismViolation on the
    first event that differs from the recorded one.
    """
    if trace.rng_seed < 0:
        raise ValueError("trace was recorded without a replayable seed")
    if world.variant is not trace.variant:
        raise DeterminismViolation(f"variant mismatch: {world.variant.value} vs {trace.variant.value}")
    fresh = world.snapshot()
    if fresh.clock.now() != trace.start_ms:
        raise DeterminismViolation("world clock does not match trace start")
    again = run_session(fresh, trace.rng_seed, adversary, biometric)
    for old, new in zip(trace.events, again.events):
        if old != new:
            raise DeterminismViolation(f"divergence at event {old.seq}: {old.kind} vs {new.kind}")
    if len(trace.events) != len(again.events):
        raise DeterminismViolation(f"event count {len(trace.events)} vs {len(again.events)}")
    if trace.outcome != again.outcome or trace.injected != again.injected:
        raise DeterminismViolation(f"outcome {trace.outcome} vs {again.outcome}")
    return again
