"""Monte Carlo experiment engine: trials, grid sweeps, analytic surfaces, I/O.

Per-trial randomness derives from a stable mix of (master seed, hash of the
cell coordinates, trial index), so results are reproducible bit-for-bit and
adding or reordering grid cells never perturbs existing cells.  The scaled
per-tap MSE reported everywhere is sigma_g2 = M * E{||g_hat - g||^2} / P.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np

from . import analytic, estimators, model, sos
from .errors import ConfigError, SingularSystemError

__all__ = [
    "ExperimentConfig",
    "Cell",
    "TrialResult",
    "SweepRecord",
    "CellFailure",
    "load_config",
    "grid_cells",
    "run_trial",
    "run_sweep",
    "predict",
    "emit",
    "render",
    "load_records",
]

log = logging.getLogger(__name__)

CSV_COLUMNS = [
    "beta",
    "sigma_n2",
    "P",
    "alpha",
    "estimator",
    "trials",
    "sigma_g2_emp",
    "sigma_g2_se",
    "sigma_g2_ana",
    "eta_emp",
    "eta_ana",
]
_CSV_COMMENT = (
    "# sigma_g2 columns are the coherence-scaled per-tap MSE"
    " M * E{||g_hat - g||^2} / P; eta = (sigma_n2/sigma_g2 - alpha)/(1 - alpha)"
)
_ESTIMATORS = ("training", "mm", "subspace")
_ANALYTIC_SALT = 0x616E616C79746963  # fixed salt for prediction channel draws


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of a sweep: system constants, grid, and run options."""

    gain: int = 64  # spreading gain N
    symbols: int = 400  # coherence block M
    beta: tuple[float, ...] = (0.25,)
    sigma_n2: tuple[float, ...] = (0.5,)
    taps: tuple[int, ...] = (3,)
    alpha: tuple[float, ...] = (0.2,)
    trials: int = 100
    seed: int = 0
    estimator: str = "all"  # training | mm | subspace | all
    sos_mode: str = "identity"
    synthesis: str = "isi-free"
    omega: float | None = None  # fixed subspace weight; None uses omega_mode
    omega_mode: str = "oracle"  # oracle | plugin
    draws: int = 200  # channel draws for analytic surfaces
    keep_sos_errors: bool = False
    workers: int = 1
    out: str | None = None
    fmt: str = "csv"

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.draws < 1:
            raise ConfigError("draws must be >= 1")
        for name in ("beta", "sigma_n2", "alpha"):
            vals = getattr(self, name)
            if not vals or any(v <= 0 for v in vals):
                raise ConfigError(f"grid values for {name} must be positive")
        if not self.taps or any(int(p) < 1 for p in self.taps):
            raise ConfigError("grid values for P must be positive integers")
        if self.estimator not in (*_ESTIMATORS, "all"):
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if self.omega is not None and not 0 <= self.omega <= 1:
            raise ConfigError("omega must lie in [0, 1]")
        if self.omega_mode not in ("oracle", "plugin"):
            raise ConfigError(f"unknown omega_mode {self.omega_mode!r}")
        if self.fmt not in ("csv", "json"):
            raise ConfigError(f"unknown output format {self.fmt!r}")

    @property
    def estimator_list(self) -> tuple[str, ...]:
        return _ESTIMATORS if self.estimator == "all" else (self.estimator,)


@dataclass(frozen=True)
class Cell:
    """One grid point with its rounded integer system parameters."""

    beta: float
    sigma_n2: float
    taps: int
    alpha: float
    users: int
    train_symbols: int
    gain: int
    symbols: int

    @property
    def params(self) -> model.SystemParams:
        return model.SystemParams(
            users=self.users,
            gain=self.gain,
            taps=self.taps,
            symbols=self.symbols,
            train_symbols=self.train_symbols,
            noise_var=self.sigma_n2,
        )

    def key(self) -> str:
        return f"beta={self.beta!r},sigma_n2={self.sigma_n2!r},P={self.taps},alpha={self.alpha!r}"


@dataclass
class TrialResult:
    """Squared channel errors (per user, per estimator) from one trial."""

    errors: dict[str, np.ndarray]  # estimator -> (K,) float
    sos_errors: np.ndarray | None  # (K, P^2) complex, kept on request
    diagnostics: dict[str, list]


@dataclass
class SweepRecord:
    """One (cell, estimator) row of a sweep or prediction.

    For analytic-only records (trials == 0) the empirical fields are None
    and ``sigma_g2_se`` carries the standard error of the channel-draw
    average behind ``sigma_g2_ana``.
    """

    beta: float
    sigma_n2: float
    taps: int
    alpha: float
    estimator: str
    trials: int
    sigma_g2_emp: float | None
    sigma_g2_se: float | None
    sigma_g2_ana: float | None
    eta_emp: float | None
    eta_ana: float | None


@dataclass
class CellFailure:
    """A grid cell whose evaluation raised; the sweep keeps going."""

    cell: Cell
    error: str


# ---------------------------------------------------------------------------
# configuration file handling
# ---------------------------------------------------------------------------

_GRID_KEYS = {"beta": "beta", "sigma_n2": "sigma_n2", "p": "taps", "alpha": "alpha"}
_SCALAR_KEYS = {
    "n": ("gain", int),
    "m": ("symbols", int),
    "trials": ("trials", int),
    "seed": ("seed", int),
    "draws": ("draws", int),
    "workers": ("workers", int),
    "estimator": ("estimator", str),
    "sos_mode": ("sos_mode", str),
    "synthesis": ("synthesis", str),
    "omega": ("omega", float),
    "omega_mode": ("omega_mode", str),
    "out": ("out", str),
    "format": ("fmt", str),
}


def load_config(path: str | Path, **overrides) -> ExperimentConfig:
    """Read a flat ``key = value`` config file; keyword overrides win.

    Grid keys (beta, sigma_n2, P, alpha) accept comma-separated value lists;
    blank lines and ``#`` comments are ignored.
    """
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip().lower(), val.strip()
        if key in _GRID_KEYS:
            tokens = [t for t in val.replace(",", " ").split() if t]
            cast = int if key == "p" else float
            values[_GRID_KEYS[key]] = tuple(cast(t) for t in tokens)
        elif key in _SCALAR_KEYS:
            name, cast = _SCALAR_KEYS[key]
            values[name] = cast(val)
        else:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


def grid_cells(config: ExperimentConfig) -> list[Cell]:
    """Cartesian product of the grid in (beta, sigma_n2, P, alpha) order.

    K = round(beta N) and M_t = round(alpha M); any rounding that moves the
    realized load or training fraction is logged.
    """
    cells = []
    for beta, sn2, taps, alpha in product(
        config.beta, config.sigma_n2, config.taps, config.alpha
    ):
        users = max(1, round(beta * config.gain))
        train = round(alpha * config.symbols)
        if abs(users / config.gain - beta) > 1e-12:
            log.info("cell %s: K rounded to %d (beta -> %.6g)", beta, users, users / config.gain)
        if abs(train / config.symbols - alpha) > 1e-12:
            log.info("cell %s: M_t rounded to %d (alpha -> %.6g)", alpha, train, train / config.symbols)
        cells.append(
            Cell(
                beta=beta,
                sigma_n2=sn2,
                taps=int(taps),
                alpha=alpha,
                users=users,
                train_symbols=train,
                gain=config.gain,
                symbols=config.symbols,
            )
        )
    return cells


# ---------------------------------------------------------------------------
# trials
# ---------------------------------------------------------------------------


def _cell_hash(cell: Cell) -> int:
    digest = hashlib.blake2b(cell.key().encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def _trial_rng(seed: int, cell: Cell, trial_index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence((seed, _cell_hash(cell), trial_index))
    )


def run_trial(config: ExperimentConfig, cell: Cell, trial_index: int) -> TrialResult:
    """One Monte Carlo repetition: fresh channel, codes, symbols and noise."""
    params = cell.params
    rng = _trial_rng(config.seed, cell, trial_index)
    channel = model.sample_channel(params, rng)
    codes = model.sample_codes(params, rng)
    frame = model.sample_symbols(params, rng)
    received = model.synthesize_received(
        params, channel, codes, frame, rng, mode=config.synthesis
    )

    which = config.estimator_list
    train = estimators.training_estimate(received, codes, frame, params)
    errors: dict[str, np.ndarray] = {}
    diagnostics: dict[str, list] = {}
    sos_errors = None

    if "training" in which:
        errors["training"] = np.sum(np.abs(train.gains - channel.gains) ** 2, axis=1)

    if "mm" in which or "subspace" in which:
        if params.train_symbols >= params.symbols:
            raise ConfigError("semi-blind estimators need at least one information symbol")
        info = range(params.train_symbols, params.symbols)
        need_gram = config.sos_mode not in ("identity", "identity-t")
        system = sos.build_normal_equations(
            codes, received, info, params.noise_var, include_gram=need_gram
        )
        d_hat = sos.hermitianize(sos.estimate_sos(system, config.sos_mode)).values
        if config.keep_sos_errors:
            sos_errors = d_hat - channel.sos

        if "mm" in which:
            w = estimators.weight_w(
                params.train_frac, params.noise_var, analytic.average_sos_variance(params)
            )
            fits = [
                estimators.mm_semiblind(train.gains[k], d_hat[k], w)
                for k in range(params.users)
            ]
            errors["mm"] = np.array(
                [np.sum(np.abs(f.gains - channel.gains[k]) ** 2) for k, f in enumerate(fits)]
            )
            diagnostics["mm"] = [f.diagnostics for f in fits]

        if "subspace" in which:
            source = "given" if config.omega is not None else config.omega_mode
            fits = []
            for k in range(params.users):
                omega = _subspace_omega(config, params, channel.gains[k], train.gains[k])
                fit = estimators.subspace_semiblind(train.gains[k], d_hat[k], omega)
                fit.diagnostics.weight_source = source
                fits.append(fit)
            errors["subspace"] = np.array(
                [np.sum(np.abs(f.gains - channel.gains[k]) ** 2) for k, f in enumerate(fits)]
            )
            diagnostics["subspace"] = [f.diagnostics for f in fits]

    return TrialResult(errors=errors, sos_errors=sos_errors, diagnostics=diagnostics)


def _subspace_omega(config, params, g_true, g_bar) -> float:
    if config.omega is not None:
        return config.omega
    ref = g_true if config.omega_mode == "oracle" else g_bar
    return analytic.optimal_omega(ref, params)


# ---------------------------------------------------------------------------
# analytic surfaces
# ---------------------------------------------------------------------------


def _analytic_draws(config: ExperimentConfig, taps: int) -> np.ndarray:
    """Channel draws for prediction, shared by all cells of the same order.

    Sharing the draws across cells is a common-random-numbers device: grid
    trends in beta, sigma_n2 and alpha are then monotone in the formulas
    rather than jittered by independent sampling.
    """
    rng = np.random.default_rng(
        np.random.SeedSequence((config.seed, _ANALYTIC_SALT, taps))
    )
    scale = math.sqrt(1.0 / (2 * taps))
    return scale * (
        rng.standard_normal((config.draws, taps))
        + 1j * rng.standard_normal((config.draws, taps))
    )


def _analytic_cell(
    config: ExperimentConfig, cell: Cell, estimator: str
) -> tuple[float, float, float]:
    """Channel-averaged (sigma_g2_ana, its standard error, eta_ana)."""
    params = cell.params
    alpha, s2 = params.train_frac, params.noise_var
    if estimator == "training":
        return s2 / alpha, 0.0, 0.0

    sg2_draws, eta_draws, singular = [], [], 0
    for g in _analytic_draws(config, cell.taps):
        try:
            if estimator == "mm":
                _, sg2 = analytic.mm_error_covariance(g, params)
            else:
                omega = (
                    config.omega
                    if config.omega is not None
                    else analytic.optimal_omega(g, params)
                )
                sg2 = analytic.predict_subspace_mse(g, params, omega)
        except SingularSystemError:
            singular += 1
            continue
        sg2_draws.append(sg2)
        eta_draws.append(analytic.efficiency(sg2, s2, alpha))
    if singular:
        log.warning("cell %s: %d singular-Hessian draws skipped", cell.key(), singular)
    if not sg2_draws:
        raise SingularSystemError(f"all analytic draws failed for cell {cell.key()}")
    sg2 = np.asarray(sg2_draws)
    se = float(sg2.std(ddof=1) / math.sqrt(sg2.size)) if sg2.size > 1 else 0.0
    return float(sg2.mean()), se, float(np.mean(eta_draws))


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def _run_cell(config: ExperimentConfig, cell: Cell) -> list[SweepRecord]:
    params = cell.params
    per_trial = {name: [] for name in config.estimator_list}
    for t in range(config.trials):
        result = run_trial(config, cell, t)
        for name in config.estimator_list:
            per_trial[name].append(result.errors[name].mean())

    records = []
    for name in config.estimator_list:
        scaled = params.symbols * np.asarray(per_trial[name]) / params.taps
        emp = float(scaled.mean())
        se = (
            float(scaled.std(ddof=1) / math.sqrt(scaled.size)) if scaled.size > 1 else None
        )
        ana, _ana_se, eta_ana = _analytic_cell(config, cell, name)
        records.append(
            SweepRecord(
                beta=cell.beta,
                sigma_n2=cell.sigma_n2,
                taps=cell.taps,
                alpha=cell.alpha,
                estimator=name,
                trials=config.trials,
                sigma_g2_emp=emp,
                sigma_g2_se=se,
                sigma_g2_ana=ana,
                eta_emp=analytic.efficiency(emp, params.noise_var, params.train_frac),
                eta_ana=eta_ana,
            )
        )
    return records


def run_sweep(
    config: ExperimentConfig,
) -> tuple[list[SweepRecord], list[CellFailure]]:
    """Simulate every grid cell; failed cells are recorded, not fatal."""
    cells = grid_cells(config)
    records: list[SweepRecord] = []
    failures: list[CellFailure] = []
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(_run_cell, config, cell) for cell in cells]
            for cell, fut in zip(cells, futures):
                try:
                    records.extend(fut.result())
                except Exception as exc:
                    log.error("cell %s failed: %s", cell.key(), exc)
                    failures.append(CellFailure(cell=cell, error=str(exc)))
    else:
        for cell in cells:
            try:
                records.extend(_run_cell(config, cell))
            except Exception as exc:
                log.error("cell %s failed: %s", cell.key(), exc)
                failures.append(CellFailure(cell=cell, error=str(exc)))
    return records, failures


def predict(
    config: ExperimentConfig,
) -> tuple[list[SweepRecord], list[CellFailure]]:
    """Analytic-only surfaces over the grid; no simulation."""
    records: list[SweepRecord] = []
    failures: list[CellFailure] = []
    for cell in grid_cells(config):
        try:
            for name in config.estimator_list:
                ana, ana_se, eta_ana = _analytic_cell(config, cell, name)
                records.append(
                    SweepRecord(
                        beta=cell.beta,
                        sigma_n2=cell.sigma_n2,
                        taps=cell.taps,
                        alpha=cell.alpha,
                        estimator=name,
                        trials=0,
                        sigma_g2_emp=None,
                        sigma_g2_se=ana_se if name != "training" else None,
                        sigma_g2_ana=ana,
                        eta_emp=None,
                        eta_ana=eta_ana,
                    )
                )
        except Exception as exc:
            log.error("cell %s failed: %s", cell.key(), exc)
            failures.append(CellFailure(cell=cell, error=str(exc)))
    return records, failures


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{value:.17g}"


def render(records: list[SweepRecord], fmt: str = "csv") -> str:
    """Serialize records as CSV text (exact column set) or a JSON array."""
    rows = [
        {
            "beta": r.beta,
            "sigma_n2": r.sigma_n2,
            "P": r.taps,
            "alpha": r.alpha,
            "estimator": r.estimator,
            "trials": r.trials,
            "sigma_g2_emp": r.sigma_g2_emp,
            "sigma_g2_se": r.sigma_g2_se,
            "sigma_g2_ana": r.sigma_g2_ana,
            "eta_emp": r.eta_emp,
            "eta_ana": r.eta_ana,
        }
        for r in records
    ]
    if fmt == "csv":
        out = io.StringIO()
        out.write(_CSV_COMMENT + "\n")
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
        return out.getvalue()
    if fmt == "json":
        return json.dumps(rows, indent=1) + "\n"
    raise ConfigError(f"unknown output format {fmt!r}")


def emit(records: list[SweepRecord], path: str | Path, fmt: str = "csv") -> None:
    """Write records as CSV (exact column set) or the mirroring JSON array."""
    Path(path).write_text(render(records, fmt))


def load_records(path: str | Path, fmt: str | None = None) -> list[SweepRecord]:
    """Parse a file produced by :func:`emit` back into records."""
    path = Path(path)
    if fmt is None:
        fmt = "json" if path.suffix == ".json" else "csv"
    rows: list[dict] = []
    if fmt == "csv":
        with path.open() as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
        for row in csv.DictReader(lines):
            rows.append(row)
    else:
        rows = json.loads(path.read_text())

    def opt_float(v):
        if v is None or v == "":
            return None
        return float(v)

    return [
        SweepRecord(
            beta=float(r["beta"]),
            sigma_n2=float(r["sigma_n2"]),
            taps=int(r["P"]),
            alpha=float(r["alpha"]),
            estimator=r["estimator"],
            trials=int(r["trials"]),
            sigma_g2_emp=opt_float(r["sigma_g2_emp"]),
            sigma_g2_se=opt_float(r["sigma_g2_se"]),
            sigma_g2_ana=opt_float(r["sigma_g2_ana"]),
            eta_emp=opt_float(r["eta_emp"]),
            eta_ana=opt_float(r["eta_ana"]),
        )
        for r in rows
    ]
