"""Command-line front end: ``gtms <subcommand> [--config FILE] [--seed S] [--out DIR]``.

Config files are JSON objects whose keys mirror the dataclasses below;
unknown keys and ill-typed values are rejected before any work starts.
"""

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
import typing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import errors
from .amplitude import amplitude
from .model import (NetworkShape, ParamLayout, TiedWeights, add_rbm_couplings,
                    weights_to_json)
from .mps import (AKLT_MATRICES, AKLT_PREFACTOR, OptimizerConfig, aklt_weights,
                  block_param_count, block_tensor, hidden_units_for, random_mps_tensor,
                  train_tensor)
from .oracle import (MAX_STATE_SITES, basis_configs, ed_cache_name, ed_cache_record,
                     exact_renyi2, full_state_vector, variational_energy)
from .sampling import ChainConfig, Move, renyi2_swap
from .vmc import SrConfig, XxzModel, run_vmc, write_trace_csv

MAX_EXACT_ENTROPY_SITES = 14


# strict config parsing ---------------------------------------------------------


def _type_ok(value, tp) -> bool:
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        return any(_type_ok(value, t) for t in typing.get_args(tp))
    if tp is type(None):
        return value is None
    if tp is bool:
        return isinstance(value, bool)
    if tp is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if tp is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if tp is str:
        return isinstance(value, str)
    if origin is list:
        (item,) = typing.get_args(tp)
        return isinstance(value, list) and all(_type_ok(v, item) for v in value)
    if dataclasses.is_dataclass(tp):
        return isinstance(value, dict)
    raise TypeError(f"unsupported config type {tp!r}")


def parse_config(cls, raw: dict, path: str):
    """Build dataclass ``cls`` from ``raw``; errors name the offending key path."""
    if not isinstance(raw, dict):
        raise errors.ConfigError(f"{path}: expected an object")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise errors.ConfigError(f"{path}.{unknown[0]}: unknown key")
    values = {}
    for name, value in raw.items():
        tp = hints[name]
        if not _type_ok(value, tp):
            raise errors.ConfigError(f"{path}.{name}: expected {_type_name(tp)}, got {value!r}")
        if dataclasses.is_dataclass(tp):
            value = parse_config(tp, value, f"{path}.{name}")
        elif tp is float:
            value = float(value)
        values[name] = value
    try:
        return cls(**values)
    except errors.ConfigError as exc:
        raise errors.ConfigError(f"{path}.{exc}") from None


def _type_name(tp) -> str:
    if typing.get_origin(tp) is typing.Union:
        return " or ".join(_type_name(t) for t in typing.get_args(tp))
    if tp is type(None):
        return "null"
    if typing.get_origin(tp) is list:
        return f"list of {_type_name(typing.get_args(tp)[0])}"
    return "object" if dataclasses.is_dataclass(tp) else tp.__name__


def _require(cond: bool, key: str, message: str) -> None:
    if not cond:
        raise errors.ConfigError(f"{key}: {message}")


@dataclass(frozen=True)
class AkltCheckConfig:
    tolerance: float = 1e-10
    perturb_w1: float = 0.0
    n_sites: int = 6
    seed: typing.Optional[int] = None
    output_dir: typing.Optional[str] = None

    def __post_init__(self):
        _require(self.tolerance > 0, "tolerance", "must be positive")
        _require(2 <= self.n_sites <= 8, "n_sites", "must lie in [2, 8]")


@dataclass(frozen=True)
class OptimizerSection:
    kind: str = "adam"
    learning_rate: typing.Optional[float] = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        _require(self.kind in ("sgd", "adagrad", "adam"), "kind", "must be sgd, adagrad or adam")
        _require(self.learning_rate is None or self.learning_rate > 0, "learning_rate",
                 "must be positive")

    def build(self) -> OptimizerConfig:
        return OptimizerConfig(self.kind, self.learning_rate, self.beta1, self.beta2, self.eps)


@dataclass(frozen=True)
class LearnMpsConfig:
    chi: int = 4
    m: typing.Optional[int] = None
    local_dim: int = 2
    n_seeds: int = 10
    max_iterations: int = 50_000
    tolerance: float = 0.0
    grad_tolerance: float = 1e-10
    init_width: float = 0.2
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    seed: typing.Optional[int] = None
    output_dir: typing.Optional[str] = None

    def __post_init__(self):
        _require(self.chi >= 2 and self.chi & (self.chi - 1) == 0, "chi",
                 "must be a power of two >= 2")
        _require(self.m is None or self.m >= 1, "m", "must be >= 1")
        _require(self.local_dim in (2, 3), "local_dim", "must be 2 or 3")
        _require(self.n_seeds >= 1, "n_seeds", "must be >= 1")
        _require(self.max_iterations >= 0, "max_iterations", "must be >= 0")

    @property
    def n(self) -> int:
        return int(math.log2(self.chi))

    @property
    def hidden(self) -> int:
        return self.m if self.m is not None else hidden_units_for(self.n, self.local_dim)


@dataclass(frozen=True)
class ChainSection:
    n_samples: int = 4000
    burn_in: int = 1000
    thinning: int = 1
    n_chains: int = 16
    move: str = "single_flip"

    def __post_init__(self):
        _require(self.n_samples >= 32, "n_samples", "must be >= 32 (jackknife blocks)")
        _require(self.burn_in >= 0, "burn_in", "must be >= 0")
        _require(self.thinning >= 1, "thinning", "must be >= 1")
        _require(self.n_chains >= 1, "n_chains", "must be >= 1")
        _require(self.move in ("single_flip", "pair_exchange"), "move",
                 "must be single_flip or pair_exchange")

    def build(self, seed: int) -> ChainConfig:
        return ChainConfig(self.n_samples, self.burn_in, self.thinning, Move(self.move), seed,
                           self.n_chains)


@dataclass(frozen=True)
class EntropyScanConfig:
    n_sites: int = 14
    n: int = 1
    m: int = 2
    realizations: int = 10
    mps_only: bool = False
    real_width: float = 0.2
    imag_width: float = 8 * math.pi
    ells: typing.Optional[typing.List[int]] = None
    exact: bool = False
    chain: ChainSection = field(default_factory=ChainSection)
    seed: typing.Optional[int] = None
    output_dir: typing.Optional[str] = None

    def __post_init__(self):
        _require(self.n_sites >= 2, "n_sites", "must be >= 2")
        _require(self.n >= 1 and self.m >= 1, "n", "n and m must be >= 1")
        _require(self.realizations >= 1, "realizations", "must be >= 1")
        _require(self.real_width >= 0 and self.imag_width >= 0, "real_width",
                 "widths must be non-negative")
        if self.ells is not None:
            _require(all(1 <= e <= self.n_sites - 1 for e in self.ells), "ells",
                     f"entries must lie in [1, {self.n_sites - 1}]")

    def subsystems(self) -> list:
        return list(self.ells) if self.ells is not None else list(range(1, self.n_sites))


@dataclass(frozen=True)
class VmcConfig:
    n_sites: int = 12
    J: float = 1.0
    Delta: float = 1.0
    n: int = 2
    m: int = 4
    tied: bool = True
    rbm_range: typing.Optional[int] = None
    mps_only: bool = False
    iterations: int = 2000
    samples_per_iter: int = 2000
    n_chains: int = 100
    burn_in: int = 200
    sweeps_between: int = 1
    thinning: int = 1
    learning_rate: float = 0.02
    lambda0: float = 100.0
    lambda_decay: float = 0.9
    lambda_min: float = 1e-4
    lambda_abs: float = 1e-6
    init_width: float = 0.2
    checkpoint_every: int = 100
    exact_check: bool = True
    seed: typing.Optional[int] = None
    output_dir: typing.Optional[str] = None

    def __post_init__(self):
        _require(self.n_sites >= 2 and self.n_sites % 2 == 0, "n_sites", "must be even and >= 2")
        _require(self.n >= 1 and self.m >= 1, "n", "n and m must be >= 1")
        _require(self.rbm_range is None or 0 <= self.rbm_range < self.n_sites, "rbm_range",
                 f"must lie in [0, {self.n_sites - 1}]")
        _require(not (self.mps_only and self.rbm_range not in (None, 0)), "mps_only",
                 "conflicts with rbm_range > 0")
        _require(self.checkpoint_every >= 0, "checkpoint_every", "must be >= 0")

    @property
    def coupling_range(self) -> typing.Optional[int]:
        return 0 if self.mps_only else self.rbm_range

    def sr_config(self, seed: int) -> SrConfig:
        return SrConfig(self.learning_rate, self.iterations, self.samples_per_iter, self.n_chains,
                        self.burn_in, self.sweeps_between, self.thinning, self.lambda0,
                        self.lambda_decay, self.lambda_min, self.lambda_abs, self.init_width,
                        self.checkpoint_every, seed)


@dataclass(frozen=True)
class EdConfig:
    n_sites: int = 12
    J: float = 1.0
    Delta: float = 1.0
    magnetization: typing.Optional[int] = 0
    seed: typing.Optional[int] = None
    output_dir: typing.Optional[str] = None

    def __post_init__(self):
        _require(2 <= self.n_sites <= MAX_STATE_SITES, "n_sites",
                 f"exact diagonalization is limited to 2..{MAX_STATE_SITES} sites")


CONFIGS = {
    "aklt-check": AkltCheckConfig,
    "learn-mps": LearnMpsConfig,
    "entropy-scan": EntropyScanConfig,
    "vmc": VmcConfig,
    "ed": EdConfig,
}


# helpers -------------------------------------------------------------------------


def stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *keys]))


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# subcommands ------------------------------------------------------------------


def cmd_aklt_check(cfg: AkltCheckConfig, seed: int, out: Path, threads: int) -> tuple[dict, int]:
    block = aklt_weights()
    block = block.replace(w=block.w + np.array([cfg.perturb_w1, 0.0]))
    deviation = max(
        float(np.max(np.abs(AKLT_PREFACTOR * block_tensor(block, s) - AKLT_MATRICES[s])))
        for s in (1, 0, -1)
    )
    N = cfg.n_sites
    shape = NetworkShape(N, 1, 2, None, 3)
    w_dist = np.zeros((N, 2), complex)
    w_dist[0] = block.w
    tied = TiedWeights(block.c, block.b, block.a, w_dist, block.w_tilde, block.w_hat, 0)
    worst = 0.0
    for sigma in basis_configs(N, 3):
        net = amplitude(tied, shape, sigma).value() * AKLT_PREFACTOR**N
        M = np.eye(2)
        for s in sigma:
            M = M @ AKLT_MATRICES[int(s)]
        ref = np.trace(M)
        worst = max(worst, abs(net - ref) / max(abs(ref), 1.0))
    ok = deviation <= cfg.tolerance and worst <= cfg.tolerance
    report = {"max_matrix_deviation": deviation, "chain_sites": N,
              "max_chain_deviation": worst, "tolerance": cfg.tolerance, "passed": ok}
    return report, 0 if ok else 1


def _learn_one(args):
    cfg, seed, k = args
    target = random_mps_tensor(cfg.chi, cfg.local_dim, stream(seed, k, 0))
    block, report = train_tensor(target, cfg.n, cfg.hidden, cfg.optimizer.build(),
                                 stream(seed, k, 1), cfg.max_iterations, cfg.tolerance,
                                 cfg.grad_tolerance, cfg.init_width)
    return k, block, report


def cmd_learn_mps(cfg: LearnMpsConfig, seed: int, out: Path, threads: int) -> tuple[dict, int]:
    out.mkdir(parents=True, exist_ok=True)
    results = _map(_learn_one, [(cfg, seed, k) for k in range(cfg.n_seeds)], threads)
    rows = []
    for k, block, report in results:
        report.write_csv(out / f"trajectory_seed{k}.csv")
        _write_json(out / f"weights_seed{k}.json", {"format": "gtms-block", "version": 1,
                                                    "weights": block.to_dict()})
        rows.append((k, report.final_d_rel, report.n_params, report.n_elements,
                     report.param_ratio))
    _write_csv(out / "summary.csv", ("seed", "final_d_rel", "N_w", "N_el", "N_w/N_el"), rows)
    finals = [r[1] for r in rows]
    report = {"chi": cfg.chi, "n": cfg.n, "m": cfg.hidden,
              "N_w": block_param_count(cfg.n, cfg.hidden),
              "N_el": cfg.local_dim * cfg.chi**2, "mean_final_d_rel": float(np.mean(finals)),
              "final_d_rel": finals}
    return report, 0


def _scan_one(args):
    cfg, seed, k = args
    shape = NetworkShape(cfg.n_sites, cfg.n, cfg.m)
    rng = stream(seed, k)
    weights = TiedWeights.random(shape, rng, rbm_range=0, real_width=cfg.real_width,
                                 imag_width=cfg.imag_width)
    if not cfg.mps_only:
        weights = add_rbm_couplings(weights, rng, None, cfg.real_width, cfg.imag_width)
    rows = []
    if cfg.exact:
        state = full_state_vector(weights, shape)
        for ell in cfg.subsystems():
            rows.append((k, ell, exact_renyi2(state, ell), 0.0, 0))
    else:
        for ell in cfg.subsystems():
            est = renyi2_swap(weights, shape, ell, cfg.chain.build(int(rng.integers(2**63))))
            rows.append((k, ell, est.s2, est.std_error, est.n_pairs))
    return rows


def cmd_entropy_scan(cfg: EntropyScanConfig, seed: int, out: Path, threads: int) -> tuple[dict, int]:
    if cfg.exact and cfg.n_sites > MAX_EXACT_ENTROPY_SITES:
        raise errors.TooLarge(f"exact entropy scan refuses n_sites = {cfg.n_sites} "
                              f"> {MAX_EXACT_ENTROPY_SITES}")
    out.mkdir(parents=True, exist_ok=True)
    chunks = _map(_scan_one, [(cfg, seed, k) for k in range(cfg.realizations)], threads)
    rows = [r for chunk in chunks for r in chunk]
    _write_csv(out / "entropy_scan.csv", ("realization", "ell", "s2", "std_error", "n_pairs"), rows)
    bound = 2 * cfg.n * math.log(2)
    report = {"n_sites": cfg.n_sites, "mps_only": cfg.mps_only, "exact": cfg.exact,
              "mps_bound": bound, "max_s2": max(r[2] for r in rows),
              "rows": len(rows)}
    return report, 0


def cmd_vmc(cfg: VmcConfig, seed: int, out: Path, threads: int) -> tuple[dict, int]:
    out.mkdir(parents=True, exist_ok=True)
    shape = NetworkShape(cfg.n_sites, cfg.n, cfg.m)
    model = XxzModel(cfg.n_sites, cfg.J, cfg.Delta)
    result = run_vmc(shape, cfg.tied, model, cfg.sr_config(seed), rbm_range=cfg.coupling_range,
                     checkpoint_dir=out / "checkpoints" if cfg.checkpoint_every else None)
    write_trace_csv(result.trace, out / "trace.csv")
    layout = ParamLayout(shape, cfg.tied, cfg.coupling_range if cfg.tied else None)
    best = layout.to_gtms(result.best_weights)
    _write_json(out / "best_weights.json", weights_to_json(shape, best))
    _write_json(out / "final_weights.json",
                weights_to_json(shape, layout.to_gtms(result.final_weights)))
    report = {"n_sites": cfg.n_sites, "n_parameters": layout.n_complex,
              "iterations": len(result.trace),
              "last_energy_estimate": result.trace[-1]["energy_re"]}
    if cfg.exact_check and cfg.n_sites <= MAX_STATE_SITES:
        record = ed_cache_record(model, 0, seed)
        _write_json(out / ed_cache_name(model, 0), record)
        energy = variational_energy(best, shape, model, 0)
        report.update(ed_energy=record["energy"], best_exact_energy=energy,
                      relative_error=(energy - record["energy"]) / abs(record["energy"]))
    _write_json(out / "summary.json", report)
    return report, 0


def cmd_ed(cfg: EdConfig, seed: int, out: Path, threads: int) -> tuple[dict, int]:
    out.mkdir(parents=True, exist_ok=True)
    model = XxzModel(cfg.n_sites, cfg.J, cfg.Delta)
    record = ed_cache_record(model, cfg.magnetization, seed)
    path = out / ed_cache_name(model, cfg.magnetization)
    _write_json(path, record)
    return dict(record, path=str(path)), 0


COMMANDS = {
    "aklt-check": cmd_aklt_check,
    "learn-mps": cmd_learn_mps,
    "entropy-scan": cmd_entropy_scan,
    "vmc": cmd_vmc,
    "ed": cmd_ed,
}


# entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS,
                        help="JSON config file for the subcommand")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="master seed (unsigned 64-bit)")
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="maximum number of worker processes")
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS,
                        help="print the report as JSON")
    parser = argparse.ArgumentParser(prog="gtms", parents=[common],
                                     description="Transfer-matrix network state experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "entropy-scan":
            p.add_argument("--exact", action="store_true", default=argparse.SUPPRESS,
                           help="use the exact state-vector path (n_sites <= 14)")
    return parser


def load_config(command: str, path: typing.Optional[Path], overrides: dict):
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise errors.ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise errors.ConfigError("config: expected a JSON object")
    raw = dict(raw, **overrides)
    return parse_config(CONFIGS[command], raw, "config")


def main(argv=None) -> int:
    args = vars(build_parser().parse_args(argv))
    command = args["command"]
    overrides = {"exact": True} if args.get("exact") else {}
    try:
        cfg = load_config(command, args.get("config"), overrides)
        seed = args.get("seed", cfg.seed if cfg.seed is not None else 0)
        if not 0 <= seed < 2**64:
            raise errors.ConfigError("--seed: must be an unsigned 64-bit integer")
        threads = args.get("threads", 1)
        if threads < 1:
            raise errors.ConfigError("--threads: must be >= 1")
        out = args.get("out", Path(cfg.output_dir) if cfg.output_dir else Path("results"))
        out = Path(out) / command
        _limit_threads(threads)
        report, code = COMMANDS[command](cfg, seed, out, threads)
    except errors.GtmsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.get("json"):
        print(json.dumps(report, indent=2, sort_keys=True, default=str))
    else:
        for key in sorted(report):
            print(f"{key}: {report[key]}")
    return code


def _limit_threads(threads: int) -> None:
    # the compiled kernels are serial; this caps BLAS pools in worker processes
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(threads))


if __name__ == "__main__":
    sys.exit(main())
