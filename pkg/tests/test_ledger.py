import dataclasses
import random

from hypothesis import given, settings
from hypothesis import strategies as st

from iotauth.crypto import SimClock, Value256
from iotauth.ledger import (
    Ledger,
    block_digest,
    contract_register,
    submit_tx,
    tx_digest,
    verify_chain,
)
from iotauth.netsim import build_world
from iotauth.protocol import Variant

from conftest import oracle_h

ADDR = Value256(b"\xc0" * 32)


def corrupt_input(ledger, index):
    block = ledger.blocks[index]
    tx = block.txs[0]
    data = bytearray(tx.input_data)
    data[0] ^= 0x01
    ledger.blocks[index] = dataclasses.replace(block, txs=(dataclasses.replace(tx, input_data=bytes(data)),))


def test_first_submit_links_to_genesis():
    ledger, clock, rng = Ledger(), SimClock(), random.Random(0)
    tx_hash, ok = submit_tx(ledger, b"g1", ADDR, clock, rng)
    assert ok and len(ledger) == 2
    assert ledger.blocks[1].index == 1
    assert ledger.blocks[1].parent_hash == ledger.blocks[0].current_hash
    assert ledger.blocks[1].txs[0].tx_hash == tx_hash


def test_hashes_match_independent_recomputation():
    ledger, clock, rng = Ledger(), SimClock(7), random.Random(0)
    submit_tx(ledger, b"payload", ADDR, clock, rng)
    block = ledger.blocks[1]
    tx = block.txs[0]
    u64 = lambda n: n.to_bytes(8, "big")  # noqa: E731
    assert tx.tx_hash == oracle_h(u64(0), u64(7), b"payload", tx.nonce, ADDR)
    assert block.current_hash == oracle_h(u64(1), block.parent_hash, u64(7), block.nonce, tx.tx_hash)
    assert tx.tx_hash == tx_digest(0, 7, b"payload", tx.nonce, ADDR)
    assert block.current_hash == block_digest(1, block.parent_hash, 7, block.nonce, [tx.tx_hash])


def test_genesis_parent_is_zero_and_valid():
    ledger = Ledger()
    assert ledger.blocks[0].parent_hash == Value256.zero()
    assert verify_chain(ledger)


def test_verify_after_ten_submits():
    ledger, clock, rng = Ledger(), SimClock(), random.Random(1)
    for i in range(10):
        clock.advance(3)
        submit_tx(ledger, bytes([i]) * 5, ADDR, clock, rng)
    assert verify_chain(ledger).valid


def test_armed_fault_rejects_without_append():
    ledger, clock, rng = Ledger(), SimClock(), random.Random(1)
    ledger.arm_fault()
    _, ok = submit_tx(ledger, b"x", ADDR, clock, rng)
    assert not ok and len(ledger) == 1
    _, ok = submit_tx(ledger, b"x", ADDR, clock, rng)
    assert ok and len(ledger) == 2


def test_corruption_reports_block_index():
    ledger, clock, rng = Ledger(), SimClock(), random.Random(2)
    for i in range(4):
        submit_tx(ledger, b"data-%d" % i, ADDR, clock, rng)
    corrupt_input(ledger, 2)
    check = verify_chain(ledger)
    assert not check and check.index == 2


def test_registration_under_p22_adds_two_blocks():
    world = build_world(Variant.P22, 0)
    assert len(world.ledger) == 3
    assert all(b.txs[0].input_data.startswith(b"REG:") for b in world.ledger.blocks[1:])


def test_duplicate_registration_record_is_appended():
    ledger, clock, rng = Ledger(), SimClock(), random.Random(3)
    assert contract_register(ledger, b"same", ADDR, clock, rng)
    assert contract_register(ledger, b"same", ADDR, clock, rng)
    assert len(ledger) == 3


def test_registration_fault_surfaces(monkeypatch):
    import pytest

    from iotauth import protocol

    original = protocol.contract_register

    def failing(ledger, *a, **kw):
        ledger.arm_fault()
        return original(ledger, *a, **kw)

    monkeypatch.setattr(protocol, "contract_register", failing)
    with pytest.raises(protocol.RegistrationError):
        build_world(Variant.P22, 0)


def test_dump_load_roundtrip(tmp_path):
    ledger, clock, rng = Ledger(), SimClock(), random.Random(4)
    for i in range(3):
        submit_tx(ledger, b"r%d" % i, ADDR, clock, rng)
    path = tmp_path / "ledger.jsonl"
    ledger.dump(path)
    again = Ledger.load(path)
    assert again.blocks == ledger.blocks
    assert len(path.read_text().splitlines()) == 4


@settings(max_examples=30, deadline=None)
@given(st.lists(st.binary(max_size=64), max_size=50), st.integers(0, 2**32))
def test_chain_integrity_and_append_only(payloads, seed):
    ledger, clock, rng = Ledger(), SimClock(), random.Random(seed)
    for data in payloads:
        prefix = [b.current_hash for b in ledger.blocks]
        prefix_blocks = list(ledger.blocks)
        clock.advance(1)
        submit_tx(ledger, data, ADDR, clock, rng)
        assert [b.current_hash for b in ledger.blocks[: len(prefix)]] == prefix
        assert ledger.blocks[: len(prefix_blocks)] == prefix_blocks
    assert verify_chain(ledger).valid
