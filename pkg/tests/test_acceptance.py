"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` to see the verdict lines.
"""

import dataclasses
import hashlib
import itertools
import random

from iotauth.attacks import AttackId, attack_identity_modification, attack_replay, run_attack
from iotauth.crypto import FuzzyParams, SimClock, Value256, fe_gen, fe_rep, perturb_per_block, xor_bits
from iotauth.ledger import Ledger, submit_tx, verify_chain
from iotauth.netsim import build_world, replay_trace, run_session
from iotauth.protocol import ProtocolReject, Variant
from iotauth.report import build_report, session_op_counts

from conftest import ALL_VARIANTS, WORKING_VARIANTS


def verdict(n, title, ok, measured):
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {title} -- {measured}")
    assert ok, measured


class ScriptedBits:
    def __init__(self, bits):
        self._bits = list(bits)

    def getrandbits(self, k):
        return self._bits.pop(0)


def gw_key(world):
    return world.gw.users[world.ud.id_u].sk


# ---------------------------------------------------------------------------


def test_c01_honest_completion():
    good = 0
    for variant in WORKING_VARIANTS:
        for seed in range(100):
            w = build_world(variant, seed)
            trace = run_session(w, seed)
            sensor_key = w.gw.sensors[w.sn.id_sn].sk
            ok = trace.outcome.complete and w.ud.sk_u == gw_key(w) and w.sn.sk_sn == sensor_key
            if variant.blockchain:
                ok = ok and w.ud.sk_u == w.sn.sk_sn
            good += ok
    verdict(1, "honest completion with equal keys", good == 400, f"{good}/400 sessions")


def test_c02_plaintext_key_recovery():
    aw = sum(run_attack(AttackId.A2_PLAINTEXT_SK, Variant.P21_AW, s).succeeded for s in range(100))
    fixed = {
        v.value: sum(run_attack(AttackId.A2_PLAINTEXT_SK, v, s).succeeded for s in range(100))
        for v in (Variant.P21_FIX, Variant.P21_ENH)
    }
    ok = aw == 100 and all(n == 0 for n in fixed.values())
    verdict(2, "M3 plaintext key recovery", ok, f"p21-aw {aw}/100, " + ", ".join(f"{k} {n}/100" for k, n in fixed.items()))


def test_c03_as_written_key_mismatch():
    mismatched = 0
    for seed in range(100):
        w = build_world(Variant.P21_AW, seed)
        rec = w.gw.users[w.ud.id_u]
        assert rec.k != rec.pool.pairs[0][1]
        run_session(w, seed)
        mismatched += w.ud.sk_u is not None and w.ud.sk_u != gw_key(w)
    verdict(3, "as-written UD key differs from GW key", mismatched == 100, f"{mismatched}/100 seeds")


def test_c04_identity_modification_sweep():
    counts = {}
    for variant in ALL_VARIANTS:
        base = build_world(variant, 11, k_equals_response=variant is Variant.P21_AW)
        hits = 0
        for target in ("user", "sensor"):
            for bit in range(256):
                out = attack_identity_modification(base.snapshot(), target, bit, random.Random(bit))
                ev = out.evidence
                if variant.enhanced:
                    hits += ev["tamper_rejected_in_session"] and ev["identity_preserved"] and ev["session2_complete"]
                else:
                    hits += out.succeeded and "unknown-identity" in ev["session2"]
        counts[variant.value] = hits
    ok = all(n == 512 for n in counts.values())
    verdict(4, "identity modification sweep", ok, ", ".join(f"{k} {n}/512" for k, n in counts.items()))


def test_c05_replay():
    baseline = {}
    for variant in (Variant.P21_AW, Variant.P21_FIX, Variant.P22):
        n = 0
        for seed in range(100):
            w = build_world(variant, seed, k_equals_response=variant is Variant.P21_AW)
            n += attack_replay(w, random.Random(seed), ["fresh-nonce"]).evidence["modes"]["fresh-nonce"]["accepted"]
        baseline[variant.value] = n
    enhanced = {}
    for variant in (Variant.P21_ENH, Variant.P22_ENH):
        n = 0
        for seed in range(100):
            modes = attack_replay(build_world(variant, seed), random.Random(seed)).evidence["modes"]
            assert len(modes) == 3
            n += sum(m["accepted"] for m in modes.values())
        enhanced[variant.value] = n
    ok = all(n == 100 for n in baseline.values()) and all(n == 0 for n in enhanced.values())
    measured = ", ".join(f"{k} {n}/100 accepted" for k, n in baseline.items())
    measured += ", " + ", ".join(f"{k} {n}/300 accepted" for k, n in enhanced.items())
    verdict(5, "M1 replay", ok, measured)


def test_c06_biometric_noise():
    failed = 0
    for variant in (Variant.P21_AW, Variant.P21_FIX):
        w = build_world(variant, 0)
        for pos in range(len(w.biometric)):
            noisy = list(w.biometric)
            noisy[pos] ^= 1
            try:
                w.ud.login(tuple(noisy), w.ud.h_t)
            except ProtocolReject:
                failed += 1
    positions = 2 * 160

    enh_ok = 0
    rng = random.Random(6)
    for variant in (Variant.P21_ENH, Variant.P22, Variant.P22_ENH):
        w = build_world(variant, 0)
        for _ in range(100):
            try:
                w.ud.login(perturb_per_block(w.biometric, w.config.fuzzy, 2, rng), w.ud.h_t)
                enh_ok += 1
            except ProtocolReject:
                pass

    # code offset: (b ^ e) ^ (c ^ b) = c ^ e, yet every biometric is still walked
    p = FuzzyParams(2, 5)
    bad_noise = [
        e for e in itertools.product((0, 1), repeat=10) if sum(e[:5]) >= 3 or sum(e[5:]) >= 3
    ]
    wrong = cases = 0
    for b in itertools.product((0, 1), repeat=10):
        for s1 in itertools.product((0, 1), repeat=2):
            s2 = fe_gen(b, p, ScriptedBits(s1)).s2
            for e in bad_noise:
                out = fe_rep(xor_bits(b, e), s2, p)
                cases += 1
                wrong += all(out[i] != s1[i] for i in range(2) if sum(e[i * 5 : i * 5 + 5]) >= 3)
    ok = failed == positions and enh_ok == 300 and wrong == cases
    verdict(
        6,
        "biometric noise tolerance",
        ok,
        f"baseline 1-bit failures {failed}/{positions}, enhanced <=t logins {enh_ok}/300, "
        f">=3-flip blocks misdecoded {wrong}/{cases}",
    )


def test_c07_fuzzy_oracle_equivalence():
    def oracle_encode(s1, r):
        return tuple(bit for bit in s1 for _ in range(r))

    def oracle_decode(word, r):
        # nearest codeword by Hamming distance
        best = min(
            itertools.product((0, 1), repeat=len(word) // r),
            key=lambda s: sum(x != y for x, y in zip(word, oracle_encode(s, r))),
        )
        return best

    p = FuzzyParams(2, 3)
    block_noise = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)]
    agree = total = 0
    for b in itertools.product((0, 1), repeat=6):
        for s1 in itertools.product((0, 1), repeat=2):
            sketch = fe_gen(b, p, ScriptedBits(s1))
            expect_s2 = tuple(x ^ y for x, y in zip(oracle_encode(s1, 3), b))
            for n0, n1 in itertools.product(block_noise, repeat=2):
                noisy = tuple(x ^ y for x, y in zip(b, n0 + n1))
                want = oracle_decode(tuple(x ^ y for x, y in zip(noisy, expect_s2)), 3)
                total += 1
                agree += sketch.s2 == expect_s2 and fe_rep(noisy, sketch.s2, p) == want == s1
    verdict(7, "fuzzy extractor matches brute-force oracle", agree == total, f"{agree}/{total} cases")


def test_c08_ledger_integrity():
    addr = Value256(hashlib.sha256(b"contract").digest())
    rng = random.Random(8)
    ledger, clock = Ledger(), SimClock()
    for _ in range(50):
        clock.advance(rng.randint(1, 20))
        submit_tx(ledger, rng.randbytes(rng.randint(1, 64)), addr, clock, rng)
    valid = bool(verify_chain(ledger))

    located = 0
    fields = ["input_data", "tx_nonce", "tx_hash", "parent_hash", "current_hash", "block_nonce"]
    for _ in range(100):
        corrupt = Ledger.__new__(Ledger)
        corrupt.__dict__.update(ledger.__dict__)
        corrupt.blocks = list(ledger.blocks)
        i = rng.randint(1, 50)
        block = corrupt.blocks[i]
        tx = block.txs[0]
        name = rng.choice(fields)
        if name in ("input_data", "tx_nonce", "tx_hash"):
            attr = {"input_data": "input_data", "tx_nonce": "nonce", "tx_hash": "tx_hash"}[name]
            raw = bytearray(getattr(tx, attr))
            raw[rng.randrange(len(raw))] ^= 1 << rng.randrange(8)
            value = bytes(raw) if attr == "input_data" else Value256(bytes(raw))
            block = dataclasses.replace(block, txs=(dataclasses.replace(tx, **{attr: value}),))
        else:
            attr = "nonce" if name == "block_nonce" else name
            raw = bytearray(getattr(block, attr))
            raw[rng.randrange(32)] ^= 1 << rng.randrange(8)
            block = dataclasses.replace(block, **{attr: Value256(bytes(raw))})
        corrupt.blocks[i] = block
        check = verify_chain(corrupt)
        located += (not check.valid) and check.index == i
    ok = valid and located == 100
    verdict(8, "ledger integrity", ok, f"valid after 50 submits={valid}, corruptions located {located}/100")


def test_c09_determinism():
    identical = 0
    for variant in ALL_VARIANTS:
        for seed in range(20):
            w = build_world(variant, seed)
            snap = w.snapshot()
            trace = run_session(w, seed)
            again = replay_trace(trace, snap)
            identical += again.dumps() == trace.dumps()
    verdict(9, "record/replay determinism", identical == 100, f"{identical}/100 traces bit-identical")


def test_c10_op_count_overhead():
    counts = {v: session_op_counts(v).as_dict() for v in ALL_VARIANTS}
    pairs = [(Variant.P21_ENH, Variant.P21_FIX), (Variant.P22_ENH, Variant.P22)]
    deltas = {e: {k: counts[e][k] - counts[b][k] for k in ("hash", "xor", "puf")} for e, b in pairs}
    report = build_report(seeds=1)
    recorded = all(report["op_counts"][v.value] == counts[v] for v in ALL_VARIANTS)
    ok = recorded and all(d["hash"] <= 3 and d["puf"] == 0 for d in deltas.values())
    measured = "; ".join(
        f"{e.value} vs {b.value}: hash {deltas[e]['hash']:+d}, puf {deltas[e]['puf']:+d}" for e, b in pairs
    )
    verdict(10, "enhanced op-count overhead", ok, f"{measured}; recorded in report={recorded}")
