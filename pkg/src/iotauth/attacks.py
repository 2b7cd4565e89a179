"""Scripted attacks A1-A4 and the expected attack/defense matrix.

Adversaries act only through :class:`AdversaryHooks` on public-channel
messages; they never read party state. The only privileged reads are the
verdict checks (e.g. comparing a recovered key with the gateway's copy).
"""

from __future__ import annotations

import dataclasses
import enum
import random
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

from .crypto import Value256, perturb_biometric
from .messages import M1, M2, M3, M4, Message, encode
from .netsim import ADV, DELIVER, GW, LATENCY_MS, SEND, AdversaryHooks, ChannelEvent, Trace, World, build_world, run_session
from .protocol import IDENTITY_TAMPER, LOGIN, UNKNOWN_IDENTITY, ProtocolConfig, ProtocolReject, Variant


class AttackId(enum.Enum):
    A1_BIOMETRIC = "a1-biometric"
    A2_PLAINTEXT_SK = "a2-plaintext-sk"
    A3_IDENTITY_MOD = "a3-identity-mod"
    A4_REPLAY = "a4-replay"

    @classmethod
    def parse(cls, text: str) -> "AttackId":
        key = text.strip().lower().replace("_", "-")
        for a in cls:
            if a.value == key or a.value.split("-", 1)[0] == key:
                return a
        raise ValueError(f"unknown attack {text!r}")


@dataclass
class AttackOutcome:
    attack_id: AttackId
    variant: Variant
    succeeded: bool
    evidence: dict[str, Any] = field(default_factory=dict)
    # session traces the attack produced, in order; not part of the report
    traces: list[Trace] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.succeeded and not self.evidence:
            raise ValueError("a successful attack must carry evidence")

    def to_dict(self) -> dict:
        return {
            "attack": self.attack_id.value,
            "variant": self.variant.value,
            "succeeded": self.succeeded,
            "evidence": self.evidence,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttackOutcome":
        return cls(AttackId(d["attack"]), Variant.parse(d["variant"]), d["succeeded"], d["evidence"])


def _seed(rng: random.Random) -> int:
    return rng.getrandbits(32)


# --------------------------------------------------------------------------
# A1: biometric noise against hashed-biometric login


def attack_biometric_noise(world: World, flips: int, trials: int, rng: random.Random) -> AttackOutcome:
    """Legitimate logins with a slightly noisy biometric reading.

    "Succeeds" when any login breaks, i.e. the login is unavailable to the
    rightful user.
    """
    failures = 0
    for _ in range(trials):
        reading = perturb_biometric(world.biometric, flips, rng)
        try:
            world.ud.login(reading, world.ud.h_t)
        except ProtocolReject as exc:
            assert exc.reason == LOGIN
            failures += 1
    world.ud.logged_in = False
    return AttackOutcome(
        AttackId.A1_BIOMETRIC,
        world.variant,
        failures > 0,
        {"flips": flips, "trials": trials, "login_failures": failures},
    )


# --------------------------------------------------------------------------
# A2: session key readable from M3


def attack_plaintext_sk(world: World, rng: random.Random) -> AttackOutcome:
    """Passive eavesdropper reads R_u* out of M3 and treats it as SK_u."""
    seen: list[M3] = []

    def observe(ev: ChannelEvent) -> None:
        if ev.kind == DELIVER and isinstance(ev.message, M3):
            seen.append(ev.message)

    trace = run_session(world, _seed(rng), AdversaryHooks(observe=observe))
    gw_key = world.gw.users[world.ud.id_u].sk
    evidence: dict[str, Any] = {"session": str(trace.outcome)}
    succeeded = False
    if seen:
        candidate = seen[0].r_u_star
        succeeded = candidate == gw_key
        if succeeded:
            evidence["recovered_key"] = candidate.hex()
    else:
        evidence["note"] = "no M3 observed"
    return AttackOutcome(AttackId.A2_PLAINTEXT_SK, world.variant, succeeded, evidence, [trace])


# --------------------------------------------------------------------------
# A3: modify the new temporary identity in transit


def attack_identity_modification(world: World, target: str, bit: int, rng: random.Random) -> AttackOutcome:
    """Flip one bit of beta_u_new in M2 (target="user") or beta_sn_new in M4
    (target="sensor"), then try a second, untouched session."""
    if target not in ("user", "sensor"):
        raise ValueError("target must be 'user' or 'sensor'")
    kind, name = (M2, "beta_u_new") if target == "user" else (M4, "beta_sn_new")

    def tamper(msg: Message) -> Message:
        if isinstance(msg, kind):
            return dataclasses.replace(msg, **{name: getattr(msg, name).flip_bit(bit)})
        return msg

    before = world.ud.beta_u if target == "user" else world.sn.beta_sn
    s1 = run_session(world, _seed(rng), AdversaryHooks(tamper=tamper))
    after = world.ud.beta_u if target == "user" else world.sn.beta_sn
    preserved = after == before
    s2 = run_session(world, _seed(rng))

    disrupted = not s2.outcome.complete and s2.outcome.reason == UNKNOWN_IDENTITY
    succeeded = s1.outcome.complete and disrupted
    evidence = {
        "target": target,
        "bit": bit,
        "session1": str(s1.outcome),
        "session2": str(s2.outcome),
        "tamper_rejected_in_session": s1.outcome.reason == IDENTITY_TAMPER,
        "identity_preserved": preserved,
        "session2_complete": s2.outcome.complete,
        "desync": disrupted,
    }
    return AttackOutcome(AttackId.A3_IDENTITY_MOD, world.variant, succeeded, evidence, [s1, s2])


# --------------------------------------------------------------------------
# A4: replay of M1

BASELINE_REPLAY_MODES = ("fresh-nonce",)
ENHANCED_REPLAY_MODES = ("stale-ts", "duplicate", "rewritten-ts")


def _replayed_m1(mode: str, m1: M1, beta: Value256, world: World, rng: random.Random) -> M1:
    # the adversary addresses the identity it saw issued in clear in M2
    forged = dataclasses.replace(m1, beta_u=beta)
    if mode == "fresh-nonce":
        return dataclasses.replace(forged, n1=Value256.random(rng))
    if mode == "stale-ts":
        world.clock.advance(world.config.delta_ms + LATENCY_MS)
        return forged
    if mode == "duplicate":
        return forged
    if mode == "rewritten-ts":
        return dataclasses.replace(forged, ts=world.clock.now() + LATENCY_MS)
    raise ValueError(f"unknown replay mode {mode!r}")


def attack_replay(world: World, rng: random.Random, modes: Optional[Iterable[str]] = None) -> AttackOutcome:
    """Capture an honest session, then inject a replayed M1 at the gateway.

    Each mode runs on its own copy of the post-session world. The attack
    succeeds if the gateway answers any replay with an M2.
    """
    if modes is None:
        modes = ENHANCED_REPLAY_MODES if world.variant.enhanced else BASELINE_REPLAY_MODES
    captured: dict[type, Message] = {}

    def observe(ev: ChannelEvent) -> None:
        if ev.kind == DELIVER:
            captured.setdefault(type(ev.message), ev.message)

    honest = run_session(world, _seed(rng), AdversaryHooks(observe=observe))
    if not honest.outcome.complete or M1 not in captured or M2 not in captured:
        return AttackOutcome(
            AttackId.A4_REPLAY, world.variant, False, {"precondition": f"honest session {honest.outcome}"}, [honest]
        )
    m1, m2 = captured[M1], captured[M2]

    results: dict[str, Any] = {}
    traces = [honest]
    accepted_any = False
    for mode in modes:
        w = world.snapshot()
        forged = _replayed_m1(mode, m1, m2.beta_u_new, w, rng)
        ud_key = w.ud.sk_u
        trace = run_session(w, _seed(rng), AdversaryHooks(inject=[(GW, forged)]))
        traces.append(trace)
        replies = [e for e in trace.of_kind(SEND) if e.src == GW and e.dst == ADV]
        accepted = any(isinstance(e.message, M2) for e in replies)
        injected = trace.injected[0]
        accepted_any |= accepted
        rec = w.gw.users[w.ud.id_u]
        results[mode] = {
            "accepted": accepted,
            "gw_reply": "M2" if accepted else str(injected),
            "rule": injected.detail,
            "gw_pending_identity_set": accepted and rec.beta_new is not None,
            "gw_key_overwritten": accepted and rec.sk != ud_key,
            "legit_next_session": str(trace.outcome),
            "forged_payload": encode(forged).hex(),
        }
    return AttackOutcome(AttackId.A4_REPLAY, world.variant, accepted_any, {"modes": results}, traces)


# --------------------------------------------------------------------------
# Matrix

EXPECTED: dict[AttackId, dict[Variant, bool]] = {
    AttackId.A1_BIOMETRIC: {
        Variant.P21_AW: True,
        Variant.P21_FIX: True,
        Variant.P21_ENH: False,
        Variant.P22: False,
        Variant.P22_ENH: False,
    },
    AttackId.A2_PLAINTEXT_SK: {
        Variant.P21_AW: True,
        Variant.P21_FIX: False,
        Variant.P21_ENH: False,
        Variant.P22: False,
        Variant.P22_ENH: False,
    },
    AttackId.A3_IDENTITY_MOD: {
        Variant.P21_AW: True,
        Variant.P21_FIX: True,
        Variant.P21_ENH: False,
        Variant.P22: True,
        Variant.P22_ENH: False,
    },
    AttackId.A4_REPLAY: {
        Variant.P21_AW: True,
        Variant.P21_FIX: True,
        Variant.P21_ENH: False,
        Variant.P22: True,
        Variant.P22_ENH: False,
    },
}


def run_attack(
    attack: AttackId,
    variant: Variant,
    seed: int,
    config: Optional[ProtocolConfig] = None,
    *,
    trials: int = 20,
    flips: int = 1,
) -> AttackOutcome:
    """Build a fresh world for ``seed`` and run one attack against it.

    Under P21_AW the world is provisioned with K_u = R_u (first CRP) for every
    attack except A1; otherwise no honest session completes there at all.
    """
    rng = random.Random(seed * 7919 + 17)
    world = build_world(
        variant,
        seed,
        config,
        k_equals_response=(variant is Variant.P21_AW and attack is not AttackId.A1_BIOMETRIC),
    )
    if attack is AttackId.A1_BIOMETRIC:
        return attack_biometric_noise(world, flips, trials, rng)
    if attack is AttackId.A2_PLAINTEXT_SK:
        return attack_plaintext_sk(world, rng)
    if attack is AttackId.A3_IDENTITY_MOD:
        target = "user" if seed % 2 == 0 else "sensor"
        return attack_identity_modification(world, target, (seed * 37) % 256, rng)
    return attack_replay(world, rng)
