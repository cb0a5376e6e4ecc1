"""Replicated simulations: bias, dispersion, coverage and factor-count tables.

Every replication is keyed by ``(seed, replication)``, so results do not
depend on how replications are spread over worker processes.  Replications
in which an estimator fails (an exception or a non-converged search) are
counted and left out of that estimator's moments.
"""

from __future__ import annotations

import dataclasses
import io
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from qpcpanel.baselines import estimate_ls, estimate_pc_bai
from qpcpanel.errors import QPCError
from qpcpanel.factor_count import eigenvalue_ratio
from qpcpanel.inference import confidence_intervals
from qpcpanel.qpc import EstimateOptions, estimate_bn, estimate_qpc
from qpcpanel.simulate import DgpConfig, generate

__all__ = ["McConfig", "McReport", "run_monte_carlo"]

ESTIMATORS = ("ls", "pc", "bn", "qpc")
DEFAULT_R = {"ls": 0, "pc": 2, "bn": 2, "qpc": 3}
_DGP_KEYS = ("alpha0", "beta0", "het_range", "burn_in", "error_mode", "sigma2", "R_star")


@dataclass(frozen=True)
class McConfig:
    """Experiment grid and estimator settings.

    ``R`` maps estimator names to the factor count each uses (QPC counts the
    initial-condition factor).  ``eigr`` adds the factor-count selection
    computed from the QPC fit.
    """

    grid: tuple[tuple[int, int], ...] = ((30, 6), (60, 6), (150, 6), (300, 6))
    replications: int = 500
    estimators: tuple[str, ...] = ESTIMATORS
    R: dict = field(default_factory=lambda: dict(DEFAULT_R))
    level: float = 0.95
    seed: int = 0
    dgp: DgpConfig = field(default_factory=DgpConfig)
    eigr: bool = True
    covariance: str = "plugin-kronecker"
    multistart: int = 8

    def __post_init__(self):
        grid = tuple((int(n), int(T)) for n, T in self.grid)
        if not grid:
            raise ValueError("grid must not be empty")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown or not self.estimators:
            raise ValueError(f"estimators must be a non-empty subset of {ESTIMATORS}")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        R = dict(DEFAULT_R)
        R.update(self.R or {})
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "R", R)

    @classmethod
    def from_mapping(cls, doc: dict) -> "McConfig":
        """Build from a flat key-value mapping (e.g. a parsed YAML file).

        Keys: ``grid`` (list of [n, T]), ``replications``, ``estimators``,
        ``R_qpc``, ``R_bn``, ``R_pc``, ``level``, ``seed``, ``eigr``,
        ``covariance``, ``multistart`` and the simulation keys ``alpha0``,
        ``beta0``, ``het_range``, ``burn_in``, ``error_mode``, ``sigma2``,
        ``R_star``.  ``out``, ``format`` and ``workers`` are accepted and
        ignored here (the command line consumes them).
        """
        doc = dict(doc or {})
        for key in ("out", "format", "workers"):
            doc.pop(key, None)
        dgp_kw = {k: doc.pop(k) for k in _DGP_KEYS if k in doc}
        for k in ("beta0", "het_range"):
            if k in dgp_kw:
                dgp_kw[k] = tuple(dgp_kw[k])
        R = {e: doc.pop(f"R_{e}") for e in ("qpc", "bn", "pc") if f"R_{e}" in doc}
        kw = {}
        for k in ("grid", "replications", "estimators", "level", "seed", "eigr", "covariance", "multistart"):
            if k in doc:
                kw[k] = doc.pop(k)
        if doc:
            raise ValueError(f"unknown configuration keys: {sorted(doc)}")
        if "grid" in kw:
            kw["grid"] = tuple(tuple(g) for g in kw["grid"])
        if "estimators" in kw:
            kw["estimators"] = tuple(kw["estimators"])
        return cls(R=R, dgp=DgpConfig(**dgp_kw), **kw)


@dataclass
class CellDraws:
    """Per-replication outcomes of one estimator in one grid cell (NaN rows = failures)."""

    theta: np.ndarray
    covered: np.ndarray
    se: np.ndarray
    failures: int


@dataclass
class McReport:
    """Aggregated tables plus the per-replication draws behind them."""

    config: McConfig
    rows: list[dict]
    factor_freq: dict[tuple[int, int], dict[int, float]]
    draws: dict[tuple[str, int, int], CellDraws]
    R_hat: dict[tuple[int, int], np.ndarray]

    def row(self, estimator: str, n: int, T: int, coef: str) -> dict:
        for r in self.rows:
            if (r["estimator"], r["n"], r["T"], r["coef"]) == (estimator, n, T, coef):
                return r
        raise KeyError((estimator, n, T, coef))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("estimator,n,T,coef,bias,sd,coverage\n")
        for r in self.rows:
            vals = [_fmt(r[k]) for k in ("bias", "sd", "coverage")]
            buf.write(f"{r['estimator']},{r['n']},{r['T']},{r['coef']},{','.join(vals)}\n")
        return buf.getvalue()

    def factors_csv(self) -> str:
        T_max = max(T for _, T in self.config.grid)
        buf = io.StringIO()
        buf.write("n,T," + ",".join(f"R{r}" for r in range(1, T_max)) + "\n")
        for (n, T), freq in self.factor_freq.items():
            vals = [_fmt(freq.get(r, math.nan)) if r < T else "" for r in range(1, T_max)]
            buf.write(f"{n},{T}," + ",".join(vals) + "\n")
        return buf.getvalue()

    def to_markdown(self) -> str:
        lines = ["| estimator | n | T | coef | bias | sd | coverage | failures |", "|---|---|---|---|---|---|---|---|"]
        for r in self.rows:
            lines.append(
                f"| {r['estimator']} | {r['n']} | {r['T']} | {r['coef']} | "
                f"{_fmt(r['bias'], 3)} | {_fmt(r['sd'], 3)} | {_fmt(r['coverage'], 2)} | {r['failures']} |"
            )
        if self.factor_freq:
            T_max = max(T for _, T in self.config.grid)
            lines += ["", "Selected number of factors (% of replications)", ""]
            lines.append("| n | T | " + " | ".join(str(r) for r in range(1, T_max)) + " |")
            lines.append("|---|---|" + "---|" * (T_max - 1))
            for (n, T), freq in self.factor_freq.items():
                vals = [_fmt(freq.get(r, math.nan), 2) if r < T else "" for r in range(1, T_max)]
                lines.append(f"| {n} | {T} | " + " | ".join(vals) + " |")
        return "\n".join(lines) + "\n"


def _fmt(x: float, digits: int | None = None) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "NA"
    return f"{x:.{digits}f}" if digits is not None else f"{x:.10g}"


def _coef_names(K: int) -> list[str]:
    return ["alpha"] + [f"beta{k}" for k in range(1, K + 1)]


def _fit(name: str, data, cfg: McConfig):
    if name == "ls":
        return estimate_ls(data)
    if name == "pc":
        return estimate_pc_bai(data, EstimateOptions(R=cfg.R["pc"], covariance=None))
    opts = EstimateOptions(R=cfg.R[name], covariance=cfg.covariance, multistart=cfg.multistart)
    return estimate_qpc(data, opts) if name == "qpc" else estimate_bn(data, opts)


def _replicate(task):
    cfg, n, T, rep = task
    dgp = dataclasses.replace(cfg.dgp, n=n, T=T, seed=cfg.seed)
    data, truth = generate(dgp, rep)
    theta0 = truth.theta0.vector
    out = {}
    for name in cfg.estimators:
        try:
            res = _fit(name, data, cfg)
        except (QPCError, ValueError, ArithmeticError, np.linalg.LinAlgError) as e:
            out[name] = ("error", repr(e))
            continue
        if not res.converged:
            out[name] = ("nonconverged", None)
            continue
        theta = res.theta_hat.vector
        covered = se = np.full(theta.size, np.nan)
        if res.cov is not None:
            ci = confidence_intervals(res, level=cfg.level)
            covered = ((ci[:, 0] <= theta0) & (theta0 <= ci[:, 1])).astype(float)
            se = res.se
        out[name] = ("ok", (theta, covered, se))
        if name == "qpc" and cfg.eigr:
            out["R_hat"] = eigenvalue_ratio(res.extra["panel"], res.theta_hat).R_hat
    return (n, T, rep), out


def run_monte_carlo(cfg: McConfig, workers: int = 1, progress=None) -> McReport:
    """Run every grid cell and aggregate.

    ``progress`` may be a callable receiving ``(done, total)``.
    """
    tasks = [(cfg, n, T, r) for n, T in cfg.grid for r in range(cfg.replications)]
    results = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunk = max(1, len(tasks) // (workers * 8))
            for i, (key, out) in enumerate(pool.map(_replicate, tasks, chunksize=chunk), 1):
                results[key] = out
                if progress:
                    progress(i, len(tasks))
    else:
        for i, task in enumerate(tasks, 1):
            key, out = _replicate(task)
            results[key] = out
            if progress:
                progress(i, len(tasks))
    return _aggregate(cfg, results)


def _aggregate(cfg: McConfig, results: dict) -> McReport:
    p = cfg.dgp.K + 1
    names = _coef_names(cfg.dgp.K)
    theta0 = np.r_[cfg.dgp.alpha0, cfg.dgp.beta0]
    rows, draws, factor_freq, R_hat = [], {}, {}, {}
    for n, T in cfg.grid:
        reps = [results[(n, T, r)] for r in range(cfg.replications)]
        for name in cfg.estimators:
            theta = np.full((len(reps), p), np.nan)
            covered = np.full((len(reps), p), np.nan)
            se = np.full((len(reps), p), np.nan)
            failures = 0
            for i, out in enumerate(reps):
                status, payload = out[name]
                if status != "ok":
                    failures += 1
                    continue
                theta[i], covered[i], se[i] = payload
            draws[(name, n, T)] = CellDraws(theta, covered, se, failures)
            ok = ~np.isnan(theta[:, 0])
            for j, coef in enumerate(names):
                if ok.sum() == 0:
                    bias = sd = cov = math.nan
                else:
                    t = theta[ok, j]
                    bias = float(np.mean(t) - theta0[j])
                    sd = float(np.std(t, ddof=1)) if t.size > 1 else 0.0
                    c = covered[ok, j]
                    cov = float(100.0 * np.mean(c)) if not np.isnan(c).any() else math.nan
                rows.append(
                    {"estimator": name, "n": n, "T": T, "coef": coef, "bias": bias,
                     "sd": sd, "coverage": cov, "failures": failures, "reps": len(reps)}
                )
        if "qpc" in cfg.estimators and cfg.eigr:
            rh = np.array([out.get("R_hat", -1) for out in reps])
            R_hat[(n, T)] = rh
            valid = rh[rh > 0]
            if valid.size:
                factor_freq[(n, T)] = {r: float(100.0 * np.mean(valid == r)) for r in range(1, T)}
    return McReport(cfg, rows, factor_freq, draws, R_hat)


def write_report(report: McReport, out: str | Path | None, fmt: str = "csv") -> None:
    """Write the report (``stdout`` when ``out`` is None).

    With CSV output the factor-count table goes to ``<stem>_factors.csv``.
    Failure counts are always echoed to standard error.
    """
    text = report.to_csv() if fmt == "csv" else report.to_markdown()
    if out is None:
        sys.stdout.write(text)
    else:
        out = Path(out)
        out.write_text(text)
        if fmt == "csv" and report.factor_freq:
            out.with_name(out.stem + "_factors.csv").write_text(report.factors_csv())
    seen = set()
    for r in report.rows:
        key = (r["estimator"], r["n"], r["T"])
        if r["failures"] and key not in seen:
            seen.add(key)
            print(
                f"{r['estimator']} n={r['n']} T={r['T']}: {r['failures']} of {r['reps']} "
                "replications failed and were excluded",
                file=sys.stderr,
            )
