"""In-process append-only hash-chained ledger standing in for the blockchain.

One transaction per block, fee fixed at zero, nonces drawn from the injected
rng. There is no consensus and no peers; the "smart contract" accepts every
transaction unless a fault has been armed.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .crypto import SimClock, Value256, hash_concat, u64
from .messages import LedgerReply, LedgerTx

TX_FEE = 0
REGISTRATION_PREFIX = b"REG:"


class LedgerError(RuntimeError):
    pass


@dataclass(frozen=True)
class LedgerTransaction:
    tx_hash: Value256
    fee: int
    ts: int
    input_data: bytes
    nonce: Value256
    contract_addr: Value256


@dataclass(frozen=True)
class Block:
    index: int
    parent_hash: Value256
    current_hash: Value256
    ts: int
    nonce: Value256
    txs: tuple[LedgerTransaction, ...] = ()


def tx_digest(fee: int, ts: int, input_data: bytes, nonce: Value256, contract_addr: Value256) -> Value256:
    return hash_concat(u64(fee), u64(ts), input_data, nonce, contract_addr)


def block_digest(index: int, parent: Value256, ts: int, nonce: Value256, tx_hashes: Iterable[bytes]) -> Value256:
    return hash_concat(u64(index), parent, u64(ts), nonce, b"".join(tx_hashes))


def make_transaction(
    input_data: bytes, contract_addr: Value256, ts: int, rng: random.Random
) -> LedgerTransaction:
    nonce = Value256.random(rng)
    return LedgerTransaction(
        tx_hash=tx_digest(TX_FEE, ts, input_data, nonce, contract_addr),
        fee=TX_FEE,
        ts=ts,
        input_data=bytes(input_data),
        nonce=nonce,
        contract_addr=contract_addr,
    )


def tx_message(tx: LedgerTransaction) -> LedgerTx:
    return LedgerTx(g=tx.input_data, tx_hash=tx.tx_hash, contract_addr=tx.contract_addr, ts=tx.ts, nonce=tx.nonce)


def _genesis() -> Block:
    zero = Value256.zero()
    return Block(0, zero, block_digest(0, zero, 0, zero, ()), 0, zero)


@dataclass(frozen=True)
class ChainCheck:
    valid: bool
    index: Optional[int] = None

    def __bool__(self) -> bool:
        return self.valid


@dataclass
class Ledger:
    blocks: list[Block] = field(default_factory=lambda: [_genesis()])
    fail_armed: int = 0

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def head(self) -> Block:
        return self.blocks[-1]

    def arm_fault(self, count: int = 1) -> None:
        """Make the next ``count`` submissions fail without appending."""
        self.fail_armed += count

    def append(self, tx: LedgerTransaction, clock: SimClock, rng: random.Random) -> bool:
        if self.fail_armed:
            self.fail_armed -= 1
            return False
        if tx.tx_hash != tx_digest(tx.fee, tx.ts, tx.input_data, tx.nonce, tx.contract_addr):
            return False
        index = len(self.blocks)
        parent = self.head.current_hash
        ts = clock.now()
        nonce = Value256.random(rng)
        current = block_digest(index, parent, ts, nonce, [tx.tx_hash])
        self.blocks.append(Block(index, parent, current, ts, nonce, (tx,)))
        return True

    def accept(self, msg: LedgerTx, clock: SimClock, rng: random.Random) -> LedgerReply:
        """Contract entry point for a transaction arriving over the channel."""
        tx = LedgerTransaction(msg.tx_hash, TX_FEE, msg.ts, msg.g, msg.nonce, msg.contract_addr)
        return LedgerReply(ok=self.append(tx, clock, rng))

    def dump(self, path: Path | str) -> None:
        Path(path).write_text("".join(json.dumps(block_to_dict(b), sort_keys=True) + "\n" for b in self.blocks))

    @classmethod
    def load(cls, path: Path | str) -> "Ledger":
        lines = Path(path).read_text().splitlines()
        return cls(blocks=[block_from_dict(json.loads(line)) for line in lines if line.strip()])


def submit_tx(
    ledger: Ledger, input_data: bytes, contract_addr: Value256, clock: SimClock, rng: random.Random
) -> tuple[Value256, bool]:
    tx = make_transaction(input_data, contract_addr, clock.now(), rng)
    return tx.tx_hash, ledger.append(tx, clock, rng)


def contract_register(
    ledger: Ledger, record: bytes, contract_addr: Value256, clock: SimClock, rng: random.Random
) -> bool:
    _, ok = submit_tx(ledger, REGISTRATION_PREFIX + record, contract_addr, clock, rng)
    return ok


def verify_chain(ledger: Ledger) -> ChainCheck:
    blocks = ledger.blocks
    if not blocks or blocks[0] != _genesis():
        return ChainCheck(False, 0)
    for i, block in enumerate(blocks[1:], start=1):
        if block.index != i or block.parent_hash != blocks[i - 1].current_hash:
            return ChainCheck(False, i)
        for tx in block.txs:
            if tx.tx_hash != tx_digest(tx.fee, tx.ts, tx.input_data, tx.nonce, tx.contract_addr):
                return ChainCheck(False, i)
        if block.current_hash != block_digest(i, block.parent_hash, block.ts, block.nonce, [t.tx_hash for t in block.txs]):
            return ChainCheck(False, i)
    return ChainCheck(True)


def block_to_dict(block: Block) -> dict:
    return {
        "index": block.index,
        "parent_hash": block.parent_hash.hex(),
        "current_hash": block.current_hash.hex(),
        "ts": block.ts,
        "nonce": block.nonce.hex(),
        "txs": [
            {
                "tx_hash": tx.tx_hash.hex(),
                "fee": tx.fee,
                "ts": tx.ts,
                "input_data": tx.input_data.hex(),
                "nonce": tx.nonce.hex(),
                "contract_addr": tx.contract_addr.hex(),
            }
            for tx in block.txs
        ],
    }


def block_from_dict(d: dict) -> Block:
    txs = tuple(
        LedgerTransaction(
            Value256.fromhex(t["tx_hash"]),
            t["fee"],
            t["ts"],
            bytes.fromhex(t["input_data"]),
            Value256.fromhex(t["nonce"]),
            Value256.fromhex(t["contract_addr"]),
        )
        for t in d["txs"]
    )
    return Block(
        d["index"],
        Value256.fromhex(d["parent_hash"]),
        Value256.fromhex(d["current_hash"]),
        d["ts"],
        Value256.fromhex(d["nonce"]),
        txs,
    )
