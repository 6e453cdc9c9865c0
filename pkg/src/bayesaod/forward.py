"""Forward models mapping (AOD, mixing vector) to simulated channel radiances.

Two interchangeable backends are provided:

* :class:`SurrogateModel`, an analytic exponential-saturation form
  ``L_c = S_c exp(-tau k_c) + A_c (1 - exp(-tau k_c))`` with
  ``k_c = sum_m theta_m E_cm`` and ``A_c = sum_m theta_m P_cm``.
* :class:`TableModel`, a lookup table of pure-component radiances on a tau
  grid, interpolated linearly in tau and mixed linearly in theta.

Both evaluate through the same compiled kernels the sampler uses.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .exceptions import ConfigurationError, DomainError, FormatError

__all__ = [
    "SurrogateParams",
    "RadianceTable",
    "ForwardModel",
    "SurrogateModel",
    "TableModel",
    "default_surrogate_params",
    "eval_surrogate",
    "eval_table",
    "build_table_from_surrogate",
    "read_table",
    "write_table",
    "check_simplex",
]

SIMPLEX_TOL = 1e-8
COMPONENT_LABELS = ("nonabs_nosulfate", "nonabs_sulfate", "absorbing", "dust")

# MISR camera view zenith angles (Df ... An ... Da) and band centres
VIEW_ZENITH_DEG = (70.5, 60.0, 45.6, 26.1, 0.0, 26.1, 45.6, 60.0, 70.5)
BAND_NM = (446.0, 558.0, 672.0, 866.0)


def check_simplex(theta, tol=SIMPLEX_TOL):
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < -tol) or np.any(np.abs(theta.sum(axis=-1) - 1.0) > tol):
        raise DomainError("mixing vector is not on the probability simplex")
    return theta


@dataclass(frozen=True)
class SurrogateParams:
    """Channel x component coefficients of the analytic surrogate."""

    extinction: np.ndarray
    path_radiance: np.ndarray
    surface: np.ndarray

    def __post_init__(self):
        E = np.array(self.extinction, dtype=float)
        P = np.array(self.path_radiance, dtype=float)
        S = np.array(self.surface, dtype=float).ravel()
        if E.ndim != 2 or E.shape != P.shape or S.shape != (E.shape[0],):
            raise ConfigurationError(
                f"surrogate shapes disagree: E{E.shape}, P{P.shape}, S{S.shape}"
            )
        if not (np.all(np.isfinite(E)) and np.all(np.isfinite(P)) and np.all(np.isfinite(S))):
            raise ConfigurationError("surrogate coefficients must be finite")
        if np.any(E <= 0) or np.any(P <= 0) or np.any(S < 0):
            raise ConfigurationError("need E > 0, P > 0 and S >= 0")
        for name, arr in (("extinction", E), ("path_radiance", P), ("surface", S)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_channels(self) -> int:
        return self.extinction.shape[0]

    @property
    def n_components(self) -> int:
        return self.extinction.shape[1]


def _henyey_greenstein(cos_scat, g):
    return (1.0 - g * g) / (1.0 + g * g - 2.0 * g * cos_scat) ** 1.5


def default_surrogate_params(sun_zenith_deg: float = 35.0) -> SurrogateParams:
    """A 36-channel, 4-component surrogate with MISR-like geometry.

    Channels are ordered camera-major (9 view angles x 4 bands).  The four
    components differ in spectral slope, single-scattering albedo and phase
    asymmetry so that the mixing vector is identifiable from the radiances.
    """
    angstrom = np.array([1.8, 1.4, 1.6, 0.2])
    ssa = np.array([0.98, 0.96, 0.80, 0.90])
    asym = np.array([0.60, 0.65, 0.55, 0.75])
    mu0 = np.cos(np.radians(sun_zenith_deg))
    E, P, S = [], [], []
    for i, vza in enumerate(VIEW_ZENITH_DEG):
        muv = np.cos(np.radians(vza))
        # forward-looking cameras see smaller scattering angles
        azimuth = 0.0 if i < 4 else np.pi
        cos_scat = -mu0 * muv + np.sqrt(1 - mu0**2) * np.sqrt(1 - muv**2) * np.cos(azimuth)
        airmass = 0.5 * (1.0 / mu0 + 1.0 / muv)
        for band in BAND_NM:
            spectral = (band / 558.0) ** (-angstrom)
            E.append(airmass * spectral)
            phase = _henyey_greenstein(cos_scat, asym)
            P.append(ssa * (0.04 + 0.02 * phase) * spectral ** 0.5)
            surf = {446.0: 0.03, 558.0: 0.05, 672.0: 0.06, 866.0: 0.14}[band]
            S.append(surf * (1.0 + 0.1 * (1.0 / muv - 1.0)))
    return SurrogateParams(np.array(E), np.array(P), np.array(S))


@dataclass(frozen=True)
class RadianceTable:
    """Pure-component radiances on a tau grid, shape ``(nodes, M, C)``."""

    tau_nodes: np.ndarray
    values: np.ndarray
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        nodes = np.array(self.tau_nodes, dtype=float).ravel()
        values = np.array(self.values, dtype=float)
        if nodes.size < 2:
            raise ConfigurationError("a radiance table needs at least 2 tau nodes")
        if np.any(np.diff(nodes) <= 0):
            raise ConfigurationError("tau nodes must be strictly increasing and duplicate-free")
        if values.ndim != 3 or values.shape[0] != nodes.size:
            raise ConfigurationError(
                f"table values must have shape (nodes, M, C), got {values.shape}"
            )
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise ConfigurationError("table values must be finite and positive")
        labels = tuple(self.labels) or tuple(f"comp{m + 1}" for m in range(values.shape[1]))
        if len(labels) != values.shape[1] or any((not s) or any(ch.isspace() for ch in s) for s in labels):
            raise ConfigurationError("need one whitespace-free label per component")
        nodes.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "tau_nodes", nodes)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)

    @property
    def n_channels(self) -> int:
        return self.values.shape[2]

    @property
    def n_components(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, RadianceTable):
            return NotImplemented
        return (np.array_equal(self.tau_nodes, other.tau_nodes)
                and np.array_equal(self.values, other.values) and self.labels == other.labels)

    __hash__ = None


class ForwardModel:
    """Deterministic map ``(tau, theta) -> C radiances`` on a bounded tau support.

    Calling the model on arrays ``tau`` of shape ``(N,)`` and ``theta`` of
    shape ``(N, M)`` returns an ``(N, C)`` array.
    """

    n_channels: int
    n_components: int
    support: tuple[float, float]

    def kernel_args(self) -> tuple:
        raise NotImplementedError

    def _check(self, tau, theta):
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        theta = np.asarray(theta, dtype=float).reshape(tau.shape[0], -1)
        if theta.shape[1] != self.n_components:
            raise DomainError(f"theta has {theta.shape[1]} components, expected {self.n_components}")
        lo, hi = self.support
        if np.any(~np.isfinite(tau)) or np.any(tau < lo) or np.any(tau > hi):
            raise DomainError(f"tau outside the forward-model support [{lo}, {hi}]")
        check_simplex(theta)
        return np.ascontiguousarray(tau), np.ascontiguousarray(theta)

    def __call__(self, tau, theta, check=True) -> np.ndarray:
        if check:
            tau, theta = self._check(tau, theta)
        out = np.empty((tau.shape[0], self.n_channels))
        _kernels.fm_batch(*self._kernel_call_args(tau, theta, out))
        return out

    def evaluate(self, tau: float, theta) -> np.ndarray:
        """Radiances for a single pixel."""
        return self(np.array([tau], dtype=float), np.asarray(theta, dtype=float)[None, :])[0]

    def _kernel_call_args(self, tau, theta, out):
        kind, E, P, S, nodes, table = self.kernel_args()
        return kind, tau, theta, E, P, S, nodes, table, out


_EMPTY2 = np.zeros((1, 1))
_EMPTY1 = np.zeros(1)
_EMPTY3 = np.ones((2, 1, 1))


class SurrogateModel(ForwardModel):
    """Analytic exponential-saturation surrogate."""

    def __init__(self, params: SurrogateParams | None = None, support=(0.0, 3.0)):
        self.params = params if params is not None else default_surrogate_params()
        lo, hi = float(support[0]), float(support[1])
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ConfigurationError(f"invalid tau support {support}")
        self.support = (lo, hi)
        self.n_channels = self.params.n_channels
        self.n_components = self.params.n_components

    def kernel_args(self):
        p = self.params
        return (_kernels.SURROGATE, p.extinction, p.path_radiance, p.surface,
                _EMPTY1, _EMPTY3)

    def __repr__(self):
        return f"SurrogateModel(C={self.n_channels}, M={self.n_components}, support={self.support})"


class TableModel(ForwardModel):
    """Lookup-table backend; no extrapolation outside the tau grid."""

    def __init__(self, table: RadianceTable):
        self.table = table
        self.support = (float(table.tau_nodes[0]), float(table.tau_nodes[-1]))
        self.n_channels = table.n_channels
        self.n_components = table.n_components

    def kernel_args(self):
        return (_kernels.TABLE, _EMPTY2, _EMPTY2, _EMPTY1,
                self.table.tau_nodes, self.table.values)

    def __repr__(self):
        return (f"TableModel(C={self.n_channels}, M={self.n_components}, "
                f"nodes={self.table.tau_nodes.size})")


def eval_surrogate(params: SurrogateParams, tau: float, theta, support=(0.0, 3.0)) -> np.ndarray:
    return SurrogateModel(params, support).evaluate(tau, theta)


def eval_table(table: RadianceTable, tau: float, theta) -> np.ndarray:
    return TableModel(table).evaluate(tau, theta)


def build_table_from_surrogate(params: SurrogateParams, tau_nodes, labels=()) -> RadianceTable:
    """Tabulate the surrogate at one-hot mixing vectors on ``tau_nodes``."""
    nodes = np.asarray(tau_nodes, dtype=float).ravel()
    if nodes.size < 2 or np.any(np.diff(nodes) <= 0):
        raise ConfigurationError("tau nodes must be >= 2, strictly increasing and duplicate-free")
    model = SurrogateModel(params)
    M = params.n_components
    values = np.empty((nodes.size, M, params.n_channels))
    eye = np.eye(M)
    for m in range(M):
        values[:, m, :] = model(nodes, np.repeat(eye[m][None, :], nodes.size, axis=0), check=False)
    return RadianceTable(nodes, values, tuple(labels))


# -- table file format -------------------------------------------------------
#
#   # bayesaod radiance table
#   version 1
#   channels <C>
#   components <M>
#   nodes <K>
#   tau_nodes <K floats>
#   labels <M labels>
#   order node,component,channel
#   values
#   <K*M*C lines, one float each, node-major then component then channel>
#   checksum sha256 <hex digest of every byte above this line>
#
# Floats are written with Python's shortest round-trip repr.

_TABLE_MAGIC = "# bayesaod radiance table"


def _table_text(table: RadianceTable) -> str:
    lines = [
        _TABLE_MAGIC,
        "version 1",
        f"channels {table.n_channels}",
        f"components {table.n_components}",
        f"nodes {table.tau_nodes.size}",
        "tau_nodes " + " ".join(repr(float(x)) for x in table.tau_nodes),
        "labels " + " ".join(table.labels),
        "order node,component,channel",
        "values",
    ]
    lines.extend(repr(float(x)) for x in table.values.ravel())
    return "\n".join(lines) + "\n"


def write_table(table: RadianceTable, path) -> None:
    body = _table_text(table)
    digest = hashlib.sha256(body.encode("ascii")).hexdigest()
    Path(path).write_text(body + f"checksum sha256 {digest}\n", encoding="ascii")


def read_table(path) -> RadianceTable:
    text = Path(path).read_text(encoding="ascii")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != _TABLE_MAGIC:
        raise FormatError("not a radiance table file", line=1, path=path)

    def expect(i, key):
        if i >= len(lines):
            raise FormatError(f"missing '{key}' line", line=i + 1, path=path)
        parts = lines[i].split(" ", 1)
        if parts[0] != key:
            raise FormatError(f"expected '{key}', found {lines[i]!r}", line=i + 1, path=path)
        return parts[1] if len(parts) > 1 else ""

    try:
        if expect(1, "version") != "1":
            raise FormatError("unsupported table version", line=2, path=path)
        C = int(expect(2, "channels"))
        M = int(expect(3, "components"))
        K = int(expect(4, "nodes"))
        nodes = [float(x) for x in expect(5, "tau_nodes").split()]
        labels = tuple(expect(6, "labels").split())
    except ValueError as exc:
        raise FormatError(f"bad header value: {exc}", path=path) from None
    if len(nodes) != K:
        raise FormatError(f"tau_nodes lists {len(nodes)} values, header says {K}", line=6, path=path)
    if expect(7, "order") != "node,component,channel":
        raise FormatError("unsupported value order", line=8, path=path)
    if lines[8] != "values":
        raise FormatError("expected 'values'", line=9, path=path)
    n = K * M * C
    start = 9
    if len(lines) != start + n + 1:
        raise FormatError(f"expected {n} values and a checksum line", line=len(lines), path=path)
    vals = np.empty(n)
    for i in range(n):
        try:
            vals[i] = float(lines[start + i])
        except ValueError:
            raise FormatError(f"bad value {lines[start + i]!r}", line=start + i + 1, path=path) from None
    check = lines[start + n].split()
    body = "\n".join(lines[:start + n]) + "\n"
    digest = hashlib.sha256(body.encode("ascii")).hexdigest()
    if check[:2] != ["checksum", "sha256"] or len(check) != 3 or check[2] != digest:
        raise FormatError("checksum mismatch", line=start + n + 1, path=path)
    try:
        return RadianceTable(np.array(nodes), vals.reshape(K, M, C), labels)
    except ConfigurationError as exc:
        raise FormatError(str(exc), path=path) from None
