"""
Monte Carlo size and power experiments for the QLM tests.

An :class:`ExperimentSpec` describes one table: for every design, sample
size and true ``rho`` it simulates ``replications`` panels, removes time
effects, fits the model under the null (``rho`` equal to the cell value for
size tables, ``h0_rho`` for power tables) and records whether the QLM test
rejects at the nominal level.

Each replication draws from its own counter-based stream keyed by the
master seed, the table id, the cell and the replication index, so results do
not depend on the number of worker processes or their scheduling.
"""
from __future__ import annotations

import configparser
import hashlib
import io
import json
import logging
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .dgp import DESIGNS, DgpConfig, _is_path, demean_time_effects, generate
from .estimation import FitError, FitOptions
from .inference import qlm1_test, qlm_test
from .likelihood import InadmissibleParameterError

__all__ = [
    "ExperimentSpec",
    "TableCell",
    "RunResult",
    "run",
    "emit_table",
    "read_spec",
    "write_spec",
    "TABLE_PRESETS",
    "preset",
    "cell_seed",
]

log = logging.getLogger(__name__)

SIZE_RHOS = (0.2, 0.5, 0.8, 0.9, 0.95, 0.98, 0.99)
POWER_RHOS = (0.5, 0.6, 0.7, 0.9, 0.95, 0.99)


@dataclass(frozen=True)
class ExperimentSpec:
    """One Monte Carlo table.

    ``N`` is a tuple of sample sizes; the paper layout has one column per
    (design, N) pair.
    """

    kind: str = "size"
    model: str = "re"
    T: int = 4
    N: tuple = (100, 250)
    sigma_mu_sq: float = 1.0
    designs: tuple = DESIGNS
    rho_values: tuple = SIZE_RHOS
    replications: int = 2500
    level: float = 0.05
    master_seed: int = 20240101
    h0_rho: float = 0.8
    centered: bool = False
    remove_time_effects: bool = True
    table_id: str = "custom"

    def __post_init__(self):
        if self.kind not in ("size", "power"):
            raise ValueError(f"kind must be 'size' or 'power', got {self.kind!r}")
        if self.model not in ("re", "fe"):
            raise ValueError(f"model must be 're' or 'fe', got {self.model!r}")
        N = tuple(int(n) for n in np.atleast_1d(self.N))
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "designs", tuple(self.designs))
        object.__setattr__(self, "rho_values", tuple(float(r) for r in self.rho_values))
        for d in self.designs:
            if d not in DESIGNS:
                raise ValueError(f"unknown design {d!r}")
        if self.replications < 0:
            raise ValueError("replications must be nonnegative")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if self.T < 3 or any(n < 2 for n in N):
            raise ValueError("need T >= 3 and N >= 2")
        if self.sigma_mu_sq != 1 and self.model == "fe":
            raise ValueError("the FE statistic does not depend on sigma_mu_sq; use RE")

    def null_value(self, rho: float) -> float:
        return rho if self.kind == "size" else self.h0_rho

    def cells(self):
        """(design, N, rho) triples in a fixed order."""
        return [(d, n, r) for d in self.designs for n in self.N for r in self.rho_values]


@dataclass
class TableCell:
    design: str
    rho: float
    N: int
    T: int
    rejection_rate: float
    mc_se: float
    rejections: int = 0
    replications: int = 0
    failures: int = 0
    flagged: bool = False

    @classmethod
    def from_counts(cls, design, rho, N, T, rejections, completed, failures):
        rate = rejections / completed if completed else float("nan")
        se = float(np.sqrt(rate * (1 - rate) / completed)) if completed else float("nan")
        total = completed + failures
        flagged = total > 0 and failures > 0.01 * total
        return cls(design, rho, N, T, rate, se, rejections, completed, failures, flagged)


@dataclass
class RunResult:
    spec: ExperimentSpec
    cells: list
    manifest: dict = field(default_factory=dict)

    def cell(self, design, N, rho) -> TableCell:
        for c in self.cells:
            if c.design == design and c.N == N and np.isclose(c.rho, rho):
                return c
        raise KeyError((design, N, rho))


def cell_seed(master_seed: int, table_id: str, design: str, N: int, rho: float) -> int:
    """64-bit stream key for one cell, derived by hashing its identity."""
    key = f"{int(master_seed)}|{table_id}|{design}|{int(N)}|{float(rho)!r}"
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little")


def _one_replication(spec: ExperimentSpec, design: str, N: int, rho: float, rep: int):
    """Returns 1/0 for rejection, or None when the fit failed twice."""
    cfg = DgpConfig(N=N, T=spec.T, rho=rho, sigma_mu_sq=spec.sigma_mu_sq, init_design=design,
                    seed=cell_seed(spec.master_seed, spec.table_id, design, N, rho),
                    replication=rep)
    data = generate(cfg)
    if spec.remove_time_effects:
        data = demean_time_effects(data)
    a = spec.null_value(rho)
    attempts = (None, FitOptions(var_floor=1e-8))
    for opts in attempts:
        try:
            if a == 1.0:
                res = qlm1_test(data, spec.model, a=1.0, centered=spec.centered, options=opts)
            else:
                res = qlm_test(data, spec.model, a=a, centered=spec.centered, options=opts)
            if not np.isfinite(res.statistic):
                continue
            return int(res.p_value < spec.level)
        except (FitError, InadmissibleParameterError, np.linalg.LinAlgError, ValueError) as exc:
            log.debug("replication %d of %s/%d/%g failed: %s", rep, design, N, rho, exc)
    return None


def _run_chunk(args):
    spec, design, N, rho, reps = args
    rej = done = fail = 0
    for rep in reps:
        out = _one_replication(spec, design, N, rho, rep)
        if out is None:
            fail += 1
        else:
            done += 1
            rej += out
    return (design, N, rho), rej, done, fail


def run(spec: ExperimentSpec, jobs: int = 1, chunk: int = 250) -> RunResult:
    """Run every cell of ``spec``; ``jobs > 1`` spreads replication chunks
    over worker processes without changing the result."""
    t0 = time.perf_counter()
    tasks = []
    for design, N, rho in spec.cells():
        for start in range(0, spec.replications, chunk):
            tasks.append((spec, design, N, rho, range(start, min(start + chunk, spec.replications))))
    counts = {c: [0, 0, 0] for c in spec.cells()}
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_chunk, tasks))
    else:
        results = [_run_chunk(t) for t in tasks]
    for key, rej, done, fail in results:
        c = counts[key]
        c[0] += rej
        c[1] += done
        c[2] += fail
    cells = [TableCell.from_counts(d, r, n, spec.T, *counts[(d, n, r)])
             for d, n, r in spec.cells()]
    for c in cells:
        if c.flagged:
            log.warning("cell %s N=%d rho=%g: %d failed replications", c.design, c.N, c.rho,
                        c.failures)
    manifest = dict(
        table_id=spec.table_id,
        master_seed=spec.master_seed,
        spec=asdict(spec),
        statistic="qlm_c" if spec.centered else "qlm",
        versions=dict(panelqlm=__version__, numpy=np.__version__,
                      scipy=__import__("scipy").__version__, python=platform.python_version()),
        jobs=jobs,
        seconds=round(time.perf_counter() - t0, 3),
        failures={f"{c.design}|{c.N}|{c.rho}": c.failures for c in cells if c.failures},
        flagged_cells=sum(c.flagged for c in cells),
    )
    return RunResult(spec, cells, manifest)


# ---------------------------------------------------------------------------
# output

def emit_table(cells, layout: str = "paper", digits: int = 4) -> str:
    """CSV text. ``paper``: rows are rho, columns are (design, N) pairs,
    grouped by design; ``long``: one row per cell."""
    cells = list(cells.cells if isinstance(cells, RunResult) else cells)
    buf = io.StringIO()
    fmt = f"%.{digits}f"
    if layout == "long":
        buf.write("design,N,T,rho,rejection_rate,mc_se,rejections,replications,failures\n")
        for c in cells:
            buf.write(f"{c.design},{c.N},{c.T},{c.rho:g},{fmt % c.rejection_rate},"
                      f"{fmt % c.mc_se},{c.rejections},{c.replications},{c.failures}\n")
        return buf.getvalue()
    if layout != "paper":
        raise ValueError(f"unknown layout {layout!r}")
    rhos = sorted({c.rho for c in cells})
    cols = list(dict.fromkeys((c.N, c.design) for c in
                              sorted(cells, key=lambda c: (_design_rank(c.design), c.N))))
    lookup = {(c.N, c.design, c.rho): c for c in cells}
    buf.write("rho," + ",".join(f"{d} N={n}" for n, d in cols) + "\n")
    for r in rhos:
        vals = []
        for n, d in cols:
            c = lookup.get((n, d, r))
            if c is None:
                raise ValueError(f"missing cell design={d} N={n} rho={r}")
            vals.append(fmt % c.rejection_rate)
        buf.write(f"{r:g}," + ",".join(vals) + "\n")
    return buf.getvalue()


def _design_rank(design):
    return DESIGNS.index(design) if design in DESIGNS else len(DESIGNS)


# ---------------------------------------------------------------------------
# config files

_LIST_FIELDS = {"N": int, "designs": str, "rho_values": float}
_SCALAR_FIELDS = {"kind": str, "model": str, "T": int, "sigma_mu_sq": float,
                  "replications": int, "level": float, "master_seed": int, "h0_rho": float,
                  "table_id": str}
_BOOL_FIELDS = ("centered", "remove_time_effects")


def read_spec(source) -> ExperimentSpec:
    """Parse an ``[experiment]`` section; keys are the ExperimentSpec
    fields, lists are comma separated. A ``preset`` key (e.g. ``table1``)
    supplies defaults for the remaining keys."""
    cp = configparser.ConfigParser()
    text = Path(source).read_text() if _is_path(source) else str(source)
    cp.read_string(text)
    if "experiment" not in cp:
        raise ValueError("config needs an [experiment] section")
    sec = cp["experiment"]
    known = set(_LIST_FIELDS) | set(_SCALAR_FIELDS) | set(_BOOL_FIELDS) | {"preset"}
    unknown = set(sec) - {k.lower() for k in known}
    if unknown:
        raise ValueError(f"unknown keys in [experiment]: {sorted(unknown)}")
    kw = {}
    lower = {k.lower(): k for k in known}
    for key, raw in sec.items():
        name = lower[key]
        if name == "preset":
            continue
        if name in _LIST_FIELDS:
            kw[name] = tuple(_LIST_FIELDS[name](v.strip()) for v in raw.split(",") if v.strip())
        elif name in _BOOL_FIELDS:
            kw[name] = sec.getboolean(key)
        else:
            kw[name] = _SCALAR_FIELDS[name](raw.strip())
    base = preset(sec["preset"]) if "preset" in sec else ExperimentSpec()
    return replace(base, **kw)


def write_spec(spec: ExperimentSpec) -> str:
    cp = configparser.ConfigParser()
    d = asdict(spec)
    cp["experiment"] = {k: (",".join(str(x) for x in v) if isinstance(v, tuple) else str(v))
                        for k, v in d.items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def write_manifest(result: RunResult, path) -> None:
    Path(path).write_text(json.dumps(result.manifest, indent=2, default=str) + "\n")


# ---------------------------------------------------------------------------
# presets for the twelve tables

def _table(kind, model, T, sigma_mu_sq, tid):
    rhos = SIZE_RHOS if kind == "size" else POWER_RHOS
    return ExperimentSpec(kind=kind, model=model, T=T, sigma_mu_sq=sigma_mu_sq,
                          rho_values=rhos, table_id=tid)


TABLE_PRESETS = {
    "table1": _table("size", "re", 4, 1.0, "table1"),
    "table2": _table("size", "fe", 4, 1.0, "table2"),
    "table3": _table("size", "re", 9, 1.0, "table3"),
    "table4": _table("size", "fe", 9, 1.0, "table4"),
    "table5": _table("power", "re", 4, 1.0, "table5"),
    "table6": _table("power", "fe", 4, 1.0, "table6"),
    "table7": _table("power", "re", 9, 1.0, "table7"),
    "table8": _table("power", "fe", 9, 1.0, "table8"),
    "table9": _table("size", "re", 4, 25.0, "table9"),
    "table10": _table("size", "re", 9, 25.0, "table10"),
    "table11": _table("power", "re", 4, 25.0, "table11"),
    "table12": _table("power", "re", 9, 25.0, "table12"),
}


def preset(name: str) -> ExperimentSpec:
    key = name.lower().replace(" ", "")
    if key not in TABLE_PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(TABLE_PRESETS)}")
    return TABLE_PRESETS[key]


if __name__ == "__main__":  # pragma: no cover
    logging.basicConfig(level=logging.INFO)
    res = run(preset(sys.argv[1]), jobs=int(sys.argv[2]) if len(sys.argv) > 2 else 1)
    print(emit_table(res))
