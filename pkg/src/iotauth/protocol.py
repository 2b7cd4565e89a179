"""Party state machines (user device, gateway, sensor node) for the five variants.

Handlers take the incoming message plus the session rng and clock, mutate the
party in place and return the next outgoing message. Any rejection raises
:class:`ProtocolReject`; out-of-order messages are rejected before any state
is touched.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from .crypto import (
    Bits,
    FuzzyParams,
    PufDevice,
    SimClock,
    Value256,
    fe_gen,
    fe_rep,
    hash_bytes,
    hash_concat,
    pack_bits,
    puf_eval,
    u64,
)
from .ledger import Ledger, contract_register, make_transaction, tx_message
from .messages import (
    M1,
    M2,
    M3,
    M4,
    M5,
    LedgerReply,
    LedgerTx,
    Message,
    RegChallenge,
    RegIssue,
    RegReq,
    RegResponse,
)

SESSION_TIMEOUT_MS = 5000
DEFAULT_DELTA_MS = 2000


class Variant(enum.Enum):
    P21_AW = "p21-aw"
    P21_FIX = "p21-fix"
    P21_ENH = "p21-enh"
    P22 = "p22"
    P22_ENH = "p22-enh"

    @classmethod
    def parse(cls, text: str) -> "Variant":
        key = text.strip().lower().replace("_", "-")
        for v in cls:
            if v.value == key:
                return v
        raise ValueError(f"unknown variant {text!r}")

    @property
    def fuzzy_login(self) -> bool:
        return self not in (Variant.P21_AW, Variant.P21_FIX)

    @property
    def enhanced(self) -> bool:
        """Identity-update verification and timestamp freshness."""
        return self in (Variant.P21_ENH, Variant.P22_ENH)

    @property
    def blockchain(self) -> bool:
        return self in (Variant.P22, Variant.P22_ENH)

    @property
    def baseline(self) -> "Variant":
        return {Variant.P21_ENH: Variant.P21_FIX, Variant.P22_ENH: Variant.P22}.get(self, self)


# reject reasons
UNKNOWN_IDENTITY = "unknown-identity"
REPLAY = "replay"
GATEWAY_AUTH = "gateway-auth"
USER_AUTH = "user-auth"
SENSOR_AUTH = "sensor-auth"
IDENTITY_TAMPER = "identity-tamper"
PROTOCOL_ORDER = "protocol-order"
LEDGER = "ledger"
LOGIN = "login"
POOL_EXHAUSTED = "pool-exhausted"
TIMEOUT = "timeout"


class ProtocolReject(Exception):
    def __init__(self, reason: str, step: str, detail: str = "") -> None:
        super().__init__(f"{step}: {reason}" + (f" ({detail})" if detail else ""))
        self.reason = reason
        self.step = step
        self.detail = detail


class RegistrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProtocolConfig:
    delta_ms: int = DEFAULT_DELTA_MS
    fuzzy: FuzzyParams = field(default_factory=FuzzyParams)
    n_add: int = 4
    # debug switch: turns off identity-update verification in enhanced variants
    identity_check: bool = True


# --------------------------------------------------------------------------
# Freshness

FRESH = "fresh"


@dataclass
class SeenCache:
    nonces: set[Value256] = field(default_factory=set)
    stamped: dict[tuple[Value256, int], int] = field(default_factory=dict)


def check_freshness(
    cache: SeenCache,
    nonce: Value256,
    ts: Optional[int],
    clock: SimClock,
    variant: Variant,
    delta_ms: int = DEFAULT_DELTA_MS,
    tag_valid: Callable[[], bool] | None = None,
) -> str:
    """Return ``"fresh"`` or the name of the failed rule.

    Baseline variants only remember nonces, so any never-seen value passes.
    Enhanced variants require the timestamp inside the window, an unseen
    (nonce, ts) pair, and a valid binding tag where the message has one.
    The cache is updated only when the message is fresh.
    """
    if not variant.enhanced:
        if nonce in cache.nonces:
            return "duplicate"
        cache.nonces.add(nonce)
        return FRESH
    now = clock.now()
    if ts is None or abs(now - ts) > delta_ms:
        return "window"
    horizon = now - 2 * delta_ms
    for key in [k for k, seen in cache.stamped.items() if seen < horizon]:
        del cache.stamped[key]
    if (nonce, ts) in cache.stamped:
        return "duplicate"
    if tag_valid is not None and not tag_valid():
        return "binding-tag"
    cache.stamped[(nonce, ts)] = now
    return FRESH


def _require_fresh(status: str, step: str) -> None:
    if status != FRESH:
        raise ProtocolReject(REPLAY, step, status)


def _mask(c: Value256, r: Value256, ts: Optional[int], nonce: Value256) -> Value256:
    # enhanced variants bind the message timestamp and nonce into the key mask
    if ts is None:
        return hash_concat(c, r)
    return hash_concat(c, r, u64(ts), nonce)


def m1_tag(beta_u: Value256, k_u: Value256, ts: int, n1: Value256) -> Value256:
    return hash_concat(beta_u, k_u, u64(ts), n1)


# --------------------------------------------------------------------------
# Gateway records


@dataclass
class CrPool:
    pairs: list[tuple[Value256, Value256]]
    cursor: int = 0

    def current(self, step: str = "pool") -> tuple[Value256, Value256]:
        if self.cursor >= len(self.pairs):
            raise ProtocolReject(POOL_EXHAUSTED, step)
        return self.pairs[self.cursor]

    def consume(self) -> None:
        if self.cursor >= len(self.pairs):
            raise ProtocolReject(POOL_EXHAUSTED, "pool")
        self.cursor += 1

    @property
    def remaining(self) -> int:
        return len(self.pairs) - self.cursor


@dataclass
class GwRecord:
    """Gateway-side record of a registered user or sensor node."""

    real_id: Value256
    beta: Value256
    k: Value256
    pool: CrPool
    beta_new: Optional[Value256] = None
    sk: Optional[Value256] = None
    seen: SeenCache = field(default_factory=SeenCache)
    # h(S1 || ID_u), handed over at registration in the blockchain variants
    s1_commit: Optional[Value256] = None


@dataclass
class GwSession:
    user_id: Value256
    stage: str
    last_activity: int
    c_u: Value256
    r_u: Value256
    sk_u: Value256
    sensor_id: Optional[Value256] = None
    c_sn: Optional[Value256] = None
    r_sn: Optional[Value256] = None
    sk_sn: Optional[Value256] = None
    ledger_pending: int = 0


AWAIT_M3 = "await-m3"
AWAIT_M5 = "await-m5"
AWAIT_LEDGER = "await-ledger"


def _lookup(records: dict[Value256, GwRecord], beta: Value256) -> Optional[GwRecord]:
    for rec in records.values():
        if rec.beta == beta:
            return rec
    # a device may already hold the pending identity when the session that
    # issued it never reached the commit point
    for rec in records.values():
        if rec.beta_new is not None and rec.beta_new == beta:
            return rec
    return None


def _promote(rec: GwRecord, beta: Value256) -> None:
    if rec.beta != beta:
        rec.beta, rec.beta_new = beta, None


@dataclass
class Gateway:
    variant: Variant
    config: ProtocolConfig = field(default_factory=ProtocolConfig)
    users: dict[Value256, GwRecord] = field(default_factory=dict)
    sensors: dict[Value256, GwRecord] = field(default_factory=dict)
    session: Optional[GwSession] = None
    ledger: Optional[Ledger] = None
    contract_addr: Optional[Value256] = None

    def user_by_beta(self, beta: Value256) -> Optional[GwRecord]:
        return _lookup(self.users, beta)

    def sensor_by_beta(self, beta: Value256) -> Optional[GwRecord]:
        return _lookup(self.sensors, beta)

    def _expire(self, clock: SimClock) -> None:
        if self.session and clock.now() - self.session.last_activity >= SESSION_TIMEOUT_MS:
            self.session = None

    def _stage(self, msg: Message, kind: type, stage: Optional[str], step: str, clock: SimClock) -> GwSession:
        if not isinstance(msg, kind):
            raise ProtocolReject(PROTOCOL_ORDER, step, type(msg).__name__)
        self._expire(clock)
        if stage is None:
            if self.session is not None:
                raise ProtocolReject(PROTOCOL_ORDER, step, "session in progress")
            return None  # type: ignore[return-value]
        if self.session is None or self.session.stage != stage:
            raise ProtocolReject(PROTOCOL_ORDER, step, "no matching session")
        return self.session

    def handle_m1(self, m1: Message, rng: random.Random, clock: SimClock) -> M2:
        step = "gw_handle_m1"
        self._stage(m1, M1, None, step, clock)
        rec = self.user_by_beta(m1.beta_u)
        if rec is None:
            raise ProtocolReject(UNKNOWN_IDENTITY, step)
        v = self.variant
        if v.enhanced and (m1.ts is None or m1.v1 is None):
            raise ProtocolReject(REPLAY, step, "missing timestamp")

        def tag_ok() -> bool:
            return m1.v1 == m1_tag(m1.beta_u, rec.k, m1.ts, m1.n1)

        _require_fresh(
            check_freshness(rec.seen, m1.n1, m1.ts, clock, v, self.config.delta_ms, tag_ok if v.enhanced else None),
            step,
        )
        c_u, r_u = rec.pool.current(step)
        _promote(rec, m1.beta_u)

        k_u_star = hash_concat(rec.beta, rec.k)
        n2 = Value256.random(rng)
        sk_u = Value256.random(rng)
        ts = clock.now() if v.enhanced else None
        sk_u_star = sk_u ^ _mask(c_u, r_u, ts, n2)
        c_u_star = c_u ^ (r_u if v is Variant.P21_AW else rec.k)
        beta_u_new = hash_concat(rec.beta, rec.k)
        j = hash_concat(r_u, rec.k) if v.blockchain else None

        rec.sk = sk_u
        rec.beta_new = beta_u_new
        self.session = GwSession(rec.real_id, AWAIT_M3, clock.now(), c_u, r_u, sk_u)
        return M2(n2, k_u_star, c_u_star, sk_u_star, beta_u_new, j=j, ts=ts)

    def handle_m3(self, m3: Message, rng: random.Random, clock: SimClock) -> M4:
        step = "gw_handle_m3"
        s = self._stage(m3, M3, AWAIT_M3, step, clock)
        rec = self.users[s.user_id]
        v = self.variant
        _require_fresh(check_freshness(rec.seen, m3.n3, m3.ts, clock, v, self.config.delta_ms), step)
        # resolve the target sensor before authenticating the user so a stale
        # sensor identity is reported as such under every variant
        sn = self.sensor_by_beta(m3.beta_sn)
        if sn is None:
            raise ProtocolReject(UNKNOWN_IDENTITY, step, "sensor")
        if m3.r_u_star != s.r_u ^ rec.k ^ s.sk_u:
            raise ProtocolReject(USER_AUTH, step)
        c_sn, r_sn = sn.pool.current(step)
        rec.pool.consume()
        _promote(sn, m3.beta_sn)

        k_sn_star = hash_concat(sn.beta, sn.k)
        n4 = Value256.random(rng)
        sk_sn = s.sk_u if v.blockchain else Value256.random(rng)
        ts = clock.now() if v.enhanced else None
        c_sn_star = c_sn ^ sn.k
        sk_sn_star = sk_sn ^ _mask(c_sn, r_sn, ts, n4)
        beta_sn_new = hash_concat(sn.beta, sn.k)
        auth_sn = hash_concat(sn.k, r_sn) if v.blockchain else None

        sn.sk = sk_sn
        sn.beta_new = beta_sn_new
        s.sensor_id, s.c_sn, s.r_sn, s.sk_sn = sn.real_id, c_sn, r_sn, sk_sn
        s.stage, s.last_activity = AWAIT_M5, clock.now()
        return M4(n4, rec.beta, k_sn_star, c_sn_star, sk_sn_star, beta_sn_new, auth_sn=auth_sn, ts=ts)

    def handle_m5(self, m5: Message, rng: random.Random, clock: SimClock) -> list[LedgerTx]:
        """Finish the session; blockchain variants return the two ledger transactions."""
        step = "gw_handle_m5"
        s = self._stage(m5, M5, AWAIT_M5, step, clock)
        sn = self.sensors[s.sensor_id]
        user = self.users[s.user_id]
        _require_fresh(check_freshness(sn.seen, m5.n5, m5.ts, clock, self.variant, self.config.delta_ms), step)
        if m5.r_sn_star != s.r_sn ^ s.sk_sn ^ sn.k:
            raise ProtocolReject(SENSOR_AUTH, step)
        for rec in (user, sn):
            if rec.beta_new is not None:
                rec.beta, rec.beta_new = rec.beta_new, None
        sn.pool.consume()
        if not self.variant.blockchain:
            self.session = None
            return []
        g1 = bytes(user.s1_commit) + bytes(hash_bytes(s.r_u))
        g2 = bytes(hash_concat(sn.real_id, s.r_sn))
        txs = [tx_message(make_transaction(g, self.contract_addr, clock.now(), rng)) for g in (g1, g2)]
        s.stage, s.ledger_pending, s.last_activity = AWAIT_LEDGER, len(txs), clock.now()
        return txs

    def handle_ledger_reply(self, reply: Message, clock: SimClock) -> bool:
        """Returns True once every ledger transaction of the session is confirmed."""
        step = "gw_ledger"
        s = self._stage(reply, LedgerReply, AWAIT_LEDGER, step, clock)
        if not reply.ok:
            self.session = None
            raise ProtocolReject(LEDGER, step)
        s.ledger_pending -= 1
        if s.ledger_pending == 0:
            self.session = None
            return True
        return False


# --------------------------------------------------------------------------
# User device and sensor node


@dataclass
class UdSession:
    n1: Value256


@dataclass
class UserDevice:
    variant: Variant
    id_u: Value256
    h_t: Value256
    puf: PufDevice
    config: ProtocolConfig = field(default_factory=ProtocolConfig)
    beta_u: Optional[Value256] = None
    k_u: Optional[Value256] = None
    x: Optional[Value256] = None
    delta: Optional[Value256] = None
    s2: Optional[Bits] = None
    sk_u: Optional[Value256] = None
    # temporary identity of the sensor node to talk to (public information)
    target_sn: Optional[Value256] = None
    seen: SeenCache = field(default_factory=SeenCache)
    logged_in: bool = False
    session: Optional[UdSession] = None

    @property
    def registered(self) -> bool:
        return self.beta_u is not None

    def login(self, biometric: Bits, token: Value256) -> None:
        if not self.registered:
            raise ProtocolReject(LOGIN, "ud_login", "not registered")
        if self.variant.fuzzy_login:
            s1 = fe_rep(biometric, self.s2, self.config.fuzzy)
            ok = hash_concat(pack_bits(s1), token) == self.delta
        else:
            ok = hash_concat(pack_bits(biometric), token) == self.x
        self.logged_in = ok
        if not ok:
            raise ProtocolReject(LOGIN, "ud_login")

    def auth_init(self, rng: random.Random, clock: SimClock) -> M1:
        if not self.logged_in:
            raise ProtocolReject(LOGIN, "ud_auth_init", "login required")
        self.logged_in = False
        n1 = Value256.random(rng)
        self.session = UdSession(n1)
        if not self.variant.enhanced:
            return M1(self.beta_u, n1)
        ts = clock.now()
        return M1(self.beta_u, n1, ts=ts, v1=m1_tag(self.beta_u, self.k_u, ts, n1))

    def handle_m2(self, m2: Message, rng: random.Random, clock: SimClock) -> M3:
        step = "ud_handle_m2"
        if not isinstance(m2, M2) or self.session is None:
            raise ProtocolReject(PROTOCOL_ORDER, step)
        v = self.variant
        expected = hash_concat(self.beta_u, self.k_u)
        if m2.k_u_star != expected:
            raise ProtocolReject(GATEWAY_AUTH, step)
        _require_fresh(check_freshness(self.seen, m2.n2, m2.ts, clock, v, self.config.delta_ms), step)
        c_u = m2.c_u_star ^ self.k_u
        r_u = puf_eval(self.puf, c_u)
        if v.blockchain and m2.j != hash_concat(r_u, self.k_u):
            raise ProtocolReject(GATEWAY_AUTH, step, "J")
        sk_u = m2.sk_u_star ^ _mask(c_u, r_u, m2.ts, m2.n2)
        # h(beta_u || K_u) is the same value that authenticated K_u*
        if v.enhanced and self.config.identity_check and m2.beta_u_new != expected:
            raise ProtocolReject(IDENTITY_TAMPER, step)

        self.sk_u = sk_u
        self.beta_u = m2.beta_u_new
        self.session = None
        n3 = Value256.random(rng)
        ts = clock.now() if v.enhanced else None
        return M3(r_u ^ self.k_u ^ sk_u, n3, self.target_sn, ts=ts)


@dataclass
class SensorNode:
    variant: Variant
    id_sn: Value256
    puf: PufDevice
    config: ProtocolConfig = field(default_factory=ProtocolConfig)
    beta_sn: Optional[Value256] = None
    k_sn: Optional[Value256] = None
    sk_sn: Optional[Value256] = None
    seen: SeenCache = field(default_factory=SeenCache)

    @property
    def registered(self) -> bool:
        return self.beta_sn is not None

    def handle_m4(self, m4: Message, rng: random.Random, clock: SimClock) -> M5:
        step = "sn_handle_m4"
        if not isinstance(m4, M4) or not self.registered:
            raise ProtocolReject(PROTOCOL_ORDER, step)
        v = self.variant
        expected = hash_concat(self.beta_sn, self.k_sn)
        if m4.k_sn_star != expected:
            raise ProtocolReject(GATEWAY_AUTH, step)
        _require_fresh(check_freshness(self.seen, m4.n4, m4.ts, clock, v, self.config.delta_ms), step)
        c_sn = m4.c_sn_star ^ self.k_sn
        r_sn = puf_eval(self.puf, c_sn)
        if v.blockchain and m4.auth_sn != hash_concat(self.k_sn, r_sn):
            raise ProtocolReject(GATEWAY_AUTH, step, "auth_sn")
        sk_sn = m4.sk_sn_star ^ _mask(c_sn, r_sn, m4.ts, m4.n4)
        if v.enhanced and self.config.identity_check and m4.beta_sn_new != expected:
            raise ProtocolReject(IDENTITY_TAMPER, step)

        self.sk_sn = sk_sn
        self.beta_sn = m4.beta_sn_new
        n5 = Value256.random(rng)
        ts = clock.now() if v.enhanced else None
        return M5(n5, r_sn ^ sk_sn ^ self.k_sn, ts=ts)


# --------------------------------------------------------------------------
# Registration (secure channel)

Link = Callable[[str, str, Message], Message]


def _direct(src: str, dst: str, msg: Message) -> Message:
    return msg


def _fresh_beta(records: dict[Value256, GwRecord], rng: random.Random) -> Value256:
    taken = {r.beta for r in records.values()}
    while True:
        beta = Value256.random(rng)
        if beta not in taken:
            return beta


def _ledger_register(gw: Gateway, record: bytes, clock: Optional[SimClock], rng: random.Random) -> None:
    if gw.ledger is None or gw.contract_addr is None:
        raise RegistrationError("blockchain variant needs a ledger and contract address")
    if not contract_register(gw.ledger, record, gw.contract_addr, clock or SimClock(), rng):
        raise RegistrationError("ledger rejected the registration record")


def register_user(
    gw: Gateway,
    ud: UserDevice,
    biometric: Bits,
    n_add: int,
    rng: random.Random,
    *,
    link: Link = _direct,
    clock: Optional[SimClock] = None,
    k_equals_response: bool = False,
) -> GwRecord:
    """Enrol ``ud`` at ``gw``; ``link`` carries the secure-channel messages.

    ``k_equals_response`` provisions K_u := R_u for the first CRP, the only
    setting in which the as-written challenge masking decrypts correctly.
    """
    if ud.registered:
        raise RegistrationError("user device already registered")
    if ud.id_u in gw.users:
        raise RegistrationError("duplicate user identity")
    if n_add < 0:
        raise ValueError("n_add must be >= 0")

    req = link("UD", "GW", RegReq(ud.id_u))
    challenges = [Value256.random(rng) for _ in range(1 + n_add)]
    chal = link("GW", "UD", RegChallenge(challenges[0], tuple(challenges[1:])))
    resp = link(
        "UD", "GW", RegResponse(puf_eval(ud.puf, chal.c), tuple(puf_eval(ud.puf, c) for c in chal.c_add))
    )
    beta_u = _fresh_beta(gw.users, rng)
    k_u = resp.r if k_equals_response else Value256.random(rng)
    issue = link("GW", "UD", RegIssue(beta_u, k_u))

    pairs = list(zip(challenges, (resp.r,) + resp.r_add))
    rec = GwRecord(req.id, beta_u, k_u, CrPool(pairs))

    ud.beta_u, ud.k_u = issue.beta, issue.k
    if ud.variant.fuzzy_login:
        sketch = fe_gen(biometric, ud.config.fuzzy, rng)
        ud.delta = hash_concat(pack_bits(sketch.s1), ud.h_t)
        ud.s2 = sketch.s2
        if ud.variant.blockchain:
            rec.s1_commit = hash_concat(pack_bits(sketch.s1), ud.id_u)
    else:
        ud.x = hash_concat(pack_bits(biometric), ud.h_t)

    if gw.variant.blockchain:
        _ledger_register(gw, b"U" + bytes(beta_u), clock, rng)
    gw.users[rec.real_id] = rec
    return rec


def register_sensor(
    gw: Gateway,
    sn: SensorNode,
    n_add: int,
    rng: random.Random,
    *,
    link: Link = _direct,
    clock: Optional[SimClock] = None,
) -> GwRecord:
    """Gateway-initiated sensor enrolment."""
    if sn.registered:
        raise RegistrationError("sensor node already registered")
    if sn.id_sn in gw.sensors:
        raise RegistrationError("duplicate sensor identity")
    if n_add < 0:
        raise ValueError("n_add must be >= 0")

    challenges = [Value256.random(rng) for _ in range(1 + n_add)]
    chal = link("GW", "SN", RegChallenge(challenges[0], tuple(challenges[1:])))
    resp = link(
        "SN", "GW", RegResponse(puf_eval(sn.puf, chal.c), tuple(puf_eval(sn.puf, c) for c in chal.c_add))
    )
    k_sn = Value256.random(rng)
    beta_sn = _fresh_beta(gw.sensors, rng)
    issue = link("GW", "SN", RegIssue(beta_sn, k_sn))

    pairs = list(zip(challenges, (resp.r,) + resp.r_add))
    rec = GwRecord(sn.id_sn, beta_sn, k_sn, CrPool(pairs))
    sn.beta_sn, sn.k_sn = issue.beta, issue.k
    if gw.variant.blockchain:
        _ledger_register(gw, b"S" + bytes(beta_sn), clock, rng)
    gw.sensors[rec.real_id] = rec
    return rec
