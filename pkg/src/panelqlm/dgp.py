"""
Synthetic panels from the AR(1) model with individual effects,

    y_{i,t} = rho y_{i,t-1} + (1 - rho) mu_i + eps_{i,t},

with ``mu_i ~ N(0, sigma_mu_sq)`` and three designs for the initial
deviation ``v_{i,1} = y_{i,1} - mu_i``:

* ``S_Normal``: ``v ~ N(0, 1/(1-rho^2))`` with normal errors;
* ``S_ChiSq``: ``v`` and the errors are standardized chi-square(1) draws,
  ``v`` scaled to the stationary variance;
* ``NS_Normal``: ``v = 0`` with normal errors.

Streams are keyed by ``(seed, replication)`` through ``SeedSequence`` and a
counter-based Philox generator, so a replication's draws do not depend on
the order in which replications are run.
"""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

__all__ = [
    "DESIGNS",
    "DgpConfig",
    "PanelData",
    "rng_for",
    "generate",
    "demean_time_effects",
    "write_csv",
    "read_csv",
]

DESIGNS = ("S_Normal", "S_ChiSq", "NS_Normal")
_ERRORS = {"S_Normal": "normal", "S_ChiSq": "chisq1_standardized", "NS_Normal": "normal"}


@dataclass(frozen=True)
class DgpConfig:
    """Simulation design.

    ``noise_scale`` multiplies the idiosyncratic errors; 0 gives the
    deterministic recursion (used to build noiseless test panels).
    ``init_scale`` likewise multiplies ``v_{i,1}``.
    """

    N: int
    T: int
    rho: float
    sigma_mu_sq: float = 1.0
    init_design: str = "S_Normal"
    error_dist: str | None = None
    remove_time_effects: bool = False
    seed: int = 0
    replication: int = 0
    noise_scale: float = 1.0
    init_scale: float = 1.0

    def __post_init__(self):
        if self.init_design not in DESIGNS:
            raise ValueError(f"unknown design {self.init_design!r}; choose from {DESIGNS}")
        if self.error_dist is None:
            object.__setattr__(self, "error_dist", _ERRORS[self.init_design])
        if self.error_dist not in ("normal", "chisq1_standardized"):
            raise ValueError(f"unknown error distribution {self.error_dist!r}")
        if (self.init_design == "S_ChiSq") != (self.error_dist == "chisq1_standardized"):
            raise ValueError("S_ChiSq pairs chi-square errors with chi-square initial values")
        if int(self.N) != self.N or self.N < 2:
            raise ValueError(f"N must be an integer >= 2, got {self.N!r}")
        if int(self.T) != self.T or self.T < 3:
            raise ValueError(f"T must be an integer >= 3, got {self.T!r}")
        if not -1.0 < self.rho <= 1.0:
            raise ValueError(f"rho must lie in (-1, 1], got {self.rho!r}")
        if self.sigma_mu_sq < 0:
            raise ValueError("sigma_mu_sq must be nonnegative")
        if self.stationary and abs(self.rho) >= 1.0 and self.init_scale != 0:
            raise ValueError("stationary initial conditions need |rho| < 1")

    @property
    def stationary(self) -> bool:
        return self.init_design.startswith("S_")


@dataclass(frozen=True)
class PanelData:
    """An N x T panel; ``meta`` is the generating config or a source tag."""

    y: np.ndarray
    meta: object = None

    def __post_init__(self):
        y = np.array(self.y, dtype=float)
        if y.ndim != 2 or y.shape[1] < 3:
            raise ValueError(f"panel must be N x T with T >= 3, got shape {y.shape}")
        if not np.all(np.isfinite(y)):
            raise ValueError("panel contains non-finite entries")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    @property
    def N(self) -> int:
        return self.y.shape[0]

    @property
    def T(self) -> int:
        return self.y.shape[1]


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    """Independent counter-based stream for ``(seed, *keys)``."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), *[int(k) for k in keys]])
    return np.random.Generator(np.random.Philox(ss))


def _std_chisq(rng: np.random.Generator, size) -> np.ndarray:
    z = rng.standard_normal(size)
    return (z * z - 1.0) / np.sqrt(2.0)


def generate(config: DgpConfig) -> PanelData:
    """Draw one panel."""
    c = config
    rng = rng_for(c.seed, c.replication)
    N, T, rho = int(c.N), int(c.T), float(c.rho)
    mu = np.sqrt(c.sigma_mu_sq) * rng.standard_normal(N)
    if c.init_design == "NS_Normal":
        v1 = np.zeros(N)
    elif c.init_design == "S_Normal":
        v1 = rng.standard_normal(N) / np.sqrt(1.0 - rho * rho) if c.init_scale else np.zeros(N)
    else:
        v1 = _std_chisq(rng, N) / np.sqrt(1.0 - rho * rho) if c.init_scale else np.zeros(N)
    v1 = c.init_scale * v1
    if c.error_dist == "normal":
        eps = rng.standard_normal((N, T - 1))
    else:
        eps = _std_chisq(rng, (N, T - 1))
    eps = c.noise_scale * eps
    y = np.empty((N, T))
    y[:, 0] = mu + v1
    eta = (1.0 - rho) * mu
    for t in range(1, T):
        y[:, t] = rho * y[:, t - 1] + eta + eps[:, t - 1]
    panel = PanelData(y, c)
    return demean_time_effects(panel) if c.remove_time_effects else panel


def demean_time_effects(data: PanelData) -> PanelData:
    """Subtract cross-sectional means period by period."""
    y = data.y if isinstance(data, PanelData) else np.asarray(data, dtype=float)
    if y.shape[0] < 2:
        raise ValueError("need at least two individuals to remove time effects")
    out = y - y.mean(axis=0)
    # a second pass removes the rounding residue so repeated calls are stable
    out = out - out.mean(axis=0)
    return PanelData(out, getattr(data, "meta", None))


# ---------------------------------------------------------------------------
# CSV interchange

def write_csv(data: PanelData, path=None, wide: bool = False) -> str:
    """Serialize as long ``id,t,y`` (default) or as an N x T matrix.

    Returns the text; also writes it when ``path`` is given.
    """
    y = data.y if isinstance(data, PanelData) else np.asarray(data)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if wide:
        for row in y:
            w.writerow(["%.17g" % v for v in row])
    else:
        w.writerow(["id", "t", "y"])
        N, T = y.shape
        for i in range(N):
            for t in range(T):
                w.writerow([i + 1, t + 1, "%.17g" % y[i, t]])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_csv(source, wide: bool = False) -> PanelData:
    """Read a panel written by :func:`write_csv` (path or text)."""
    text = Path(source).read_text() if _is_path(source) else str(source)
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if not rows:
        raise ValueError("empty panel file")
    try:
        if wide:
            y = np.array([[float(v) for v in r] for r in rows])
            if len({len(r) for r in rows}) != 1:
                raise ValueError("rows have different lengths")
            return PanelData(y, f"csv:{source if _is_path(source) else '<text>'}")
        header = [h.strip().lower() for h in rows[0]]
        if header != ["id", "t", "y"]:
            raise ValueError(f"long format needs header id,t,y; got {rows[0]}")
        recs = [(r[0].strip(), int(r[1]), float(r[2])) for r in rows[1:]]
    except (IndexError, TypeError) as exc:
        raise ValueError(f"malformed panel CSV: {exc}") from exc
    ids = list(dict.fromkeys(r[0] for r in recs))
    times = sorted({r[1] for r in recs})
    pos_i = {k: j for j, k in enumerate(ids)}
    pos_t = {k: j for j, k in enumerate(times)}
    y = np.full((len(ids), len(times)), np.nan)
    for i, t, v in recs:
        y[pos_i[i], pos_t[t]] = v
    if np.isnan(y).any():
        raise ValueError("unbalanced panel: some (id, t) pairs are missing")
    return PanelData(y, f"csv:{source if _is_path(source) else '<text>'}")


def _is_path(source) -> bool:
    if isinstance(source, Path):
        return True
    if not isinstance(source, str) or "\n" in source:
        return False
    try:
        return Path(source).is_file()
    except OSError:          # e.g. a name too long to be a path
        return False


def config_dict(config: DgpConfig) -> dict:
    return asdict(config)


def with_replication(config: DgpConfig, replication: int) -> DgpConfig:
    return replace(config, replication=int(replication))
