"""Command-line entry point.

Exit codes: 0 expected outcome, 1 bad configuration, 2 unexpected outcome.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

from .attacks import EXPECTED, AttackId, run_attack
from .crypto import FuzzyParams
from .netsim import build_world, dump_traces, run_session
from .protocol import ProtocolConfig, Variant

EXIT_OK, EXIT_CONFIG, EXIT_UNEXPECTED = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    variant: Variant = Variant.P21_FIX
    attack: Optional[AttackId] = None
    seed: int = 0
    fuzzy: FuzzyParams = field(default_factory=FuzzyParams)
    delta_ms: int = 2000
    pool_size: int = 5
    out_path: Optional[Path] = None
    trials: int = 20
    seeds: int = 20
    identity_check: bool = True

    def protocol(self) -> ProtocolConfig:
        return ProtocolConfig(
            delta_ms=self.delta_ms,
            fuzzy=self.fuzzy,
            n_add=self.pool_size - 1,
            identity_check=self.identity_check,
        )


# config-file key -> argparse dest
_KEYS = {
    "variant": "variant",
    "attack": "attack",
    "seed": "seed",
    "out": "out",
    "delta-ms": "delta_ms",
    "pool-size": "pool_size",
    "fuzzy-k": "fuzzy_k",
    "fuzzy-r": "fuzzy_r",
    "trials": "trials",
    "seeds": "seeds",
}


def read_config_file(path: Path) -> dict[str, str]:
    """``key=value`` lines; ``#`` starts a comment; keys match the long flags."""
    values: dict[str, str] = {}
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().lower().replace("_", "-")
        if not sep or key not in _KEYS:
            raise ConfigError(f"{path}:{n}: unrecognised line {raw!r}")
        values[_KEYS[key]] = value.strip()
    return values


def _int(name: str, value, minimum: Optional[int] = None) -> int:
    try:
        n = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be an integer, got {value!r}") from None
    if minimum is not None and n < minimum:
        raise ConfigError(f"{name} must be >= {minimum}")
    return n


def resolve_config(args: argparse.Namespace) -> ScenarioConfig:
    merged: dict[str, object] = {}
    if args.config:
        merged.update(read_config_file(Path(args.config)))
    for key in _KEYS.values():
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value

    cfg = ScenarioConfig()
    try:
        if "variant" in merged:
            cfg.variant = Variant.parse(str(merged["variant"]))
        if merged.get("attack") not in (None, "", "none"):
            cfg.attack = AttackId.parse(str(merged["attack"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if "seed" in merged:
        cfg.seed = _int("seed", merged["seed"])
    if "delta_ms" in merged:
        cfg.delta_ms = _int("delta-ms", merged["delta_ms"], 0)
    if "pool_size" in merged:
        cfg.pool_size = _int("pool-size", merged["pool_size"], 1)
    if "trials" in merged:
        cfg.trials = _int("trials", merged["trials"], 1)
    if "seeds" in merged:
        cfg.seeds = _int("seeds", merged["seeds"], 1)
    k = _int("fuzzy-k", merged.get("fuzzy_k", cfg.fuzzy.k), 1)
    r = _int("fuzzy-r", merged.get("fuzzy_r", cfg.fuzzy.r), 3)
    try:
        cfg.fuzzy = FuzzyParams(k, r)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if merged.get("out"):
        cfg.out_path = Path(str(merged["out"]))
    cfg.identity_check = not getattr(args, "debug_no_identity_check", False)
    return cfg


def cmd_run(cfg: ScenarioConfig) -> int:
    out = cfg.out_path or Path("trace.jsonl")
    if cfg.attack is None:
        world = build_world(cfg.variant, cfg.seed, cfg.protocol())
        trace = run_session(world, cfg.seed)
        traces = [trace]
        # the as-written variant cannot complete an honest session
        expected = cfg.variant is not Variant.P21_AW
        ok = trace.outcome.complete == expected
        summary = {"variant": cfg.variant.value, "seed": cfg.seed, "outcome": trace.outcome.to_dict()}
    else:
        result = run_attack(cfg.attack, cfg.variant, cfg.seed, cfg.protocol(), trials=cfg.trials)
        traces = result.traces
        ok = result.succeeded == EXPECTED[cfg.attack][cfg.variant]
        summary = {"seed": cfg.seed, **result.to_dict()}
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_traces(traces, out)
    summary["trace_file"] = str(out)
    summary["as_expected"] = ok
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK if ok else EXIT_UNEXPECTED


def cmd_matrix(cfg: ScenarioConfig) -> int:
    from .report import build_report, write_report

    out = cfg.out_path or Path("report.json")
    report = build_report(cfg.seeds, cfg.protocol(), trials=cfg.trials)
    paths = write_report(report, out)
    width = max(len(a) for a in report["attacks"])
    print(" " * width + "  " + "  ".join(f"{v:>8}" for v in report["variants"]))
    for a in report["attacks"]:
        cells = []
        for v in report["variants"]:
            c = report["matrix"][a][v]
            cells.append(f"{c['successes']:>3}/{c['runs']:<3}" + (" " if c["succeeded"] == c["expected"] else "!"))
        print(f"{a:<{width}}  " + "  ".join(f"{x:>8}" for x in cells))
    for v, d in report["op_count_delta"].items():
        print(f"op-count delta {v} vs {d['baseline']}: hash {d['hash']:+d}, xor {d['xor']:+d}, puf {d['puf']:+d}")
    for line in report["mismatches"]:
        print(f"MISMATCH {line}", file=sys.stderr)
    print("wrote " + ", ".join(str(p) for p in paths.values()))
    return EXIT_OK if report["matches_expected"] else EXIT_UNEXPECTED


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # bad flags are configuration errors
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="iotauth", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="key=value file; flags override it")
        p.add_argument("--variant", help=", ".join(v.value for v in Variant))
        p.add_argument("--seed")
        p.add_argument("--out")
        p.add_argument("--delta-ms", dest="delta_ms")
        p.add_argument("--pool-size", dest="pool_size")
        p.add_argument("--fuzzy-k", dest="fuzzy_k")
        p.add_argument("--fuzzy-r", dest="fuzzy_r")
        p.add_argument("--trials", help="noisy logins per A1 run")

    run = sub.add_parser("run", help="run one session or one attack, write its trace")
    common(run)
    run.add_argument("--attack", help=", ".join(a.value for a in AttackId))

    matrix = sub.add_parser("matrix", help="run every attack against every variant, write the report")
    common(matrix)
    matrix.add_argument("--seeds", help="seeds per matrix cell (default 20)")
    matrix.add_argument(
        "--debug-no-identity-check",
        action="store_true",
        help="disable identity-update verification in the enhanced variants",
    )
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"iotauth: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "run":
        return cmd_run(cfg)
    return cmd_matrix(cfg)


if __name__ == "__main__":
    raise SystemExit(main())
