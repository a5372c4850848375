"""Block-Hankel matrices built from input/output logs.

Row order of every stacked matrix is ``[H_y,init; H_y,pred; H_u,init; H_u,pred]``,
i.e. a column is ``[vec(y_window); vec(u_window)]`` with samples time-ascending
and each sample's channels contiguous. All downstream modules rely on this.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from rdeepc.errors import InsufficientData, InvalidInput
from rdeepc.numkit import DEFAULT_RANK_TOL, numerical_rank


def _as_samples(s, name="s") -> np.ndarray:
    """Coerce a signal to shape (T, n)."""
    s = np.asarray(s, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    if s.ndim != 2:
        raise InvalidInput(f"{name} must be a sequence of vectors")
    if not np.all(np.isfinite(s)):
        raise InvalidInput(f"{name} contains non-finite samples")
    return s


@dataclass(frozen=True)
class SignalLog:
    """Input/output record of ``T`` steps; ``u`` is (T, n_u), ``y`` is (T, n_y)."""

    u: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        u = _as_samples(self.u, "u")
        y = _as_samples(self.y, "y")
        if u.shape[0] != y.shape[0]:
            raise InvalidInput(f"u and y lengths differ ({u.shape[0]} != {y.shape[0]})")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)

    @property
    def T(self) -> int:
        return self.u.shape[0]

    @property
    def n_u(self) -> int:
        return self.u.shape[1]

    @property
    def n_y(self) -> int:
        return self.y.shape[1]

    def to_csv(self, path) -> None:
        header = ["t"] + [f"u_{i}" for i in range(self.n_u)] + [f"y_{i}" for i in range(self.n_y)]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for t in range(self.T):
                w.writerow([t] + [repr(float(v)) for v in self.u[t]] + [repr(float(v)) for v in self.y[t]])

    @classmethod
    def from_csv(cls, path) -> "SignalLog":
        path = Path(path)
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise InvalidInput(f"{path}: empty file")
        header = rows[0]
        if not header or header[0] != "t":
            raise InvalidInput(f"{path}: first column must be 't'")
        u_cols = [i for i, h in enumerate(header) if h.startswith("u_")]
        y_cols = [i for i, h in enumerate(header) if h.startswith("y_")]
        if not u_cols or not y_cols:
            raise InvalidInput(f"{path}: need u_* and y_* columns")
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(header))
        return cls(u=data[:, u_cols], y=data[:, y_cols])


def build_hankel(s, L: int) -> np.ndarray:
    """Depth-``L`` block-Hankel matrix; column ``j`` stacks ``s_j, ..., s_{j+L-1}``."""
    s = _as_samples(s)
    T, n = s.shape
    if L < 1:
        raise InvalidInput("L must be positive")
    if T < L:
        raise InsufficientData(f"need T >= L, got T={T}, L={L}")
    cols = T - L + 1
    # windows[j] is the (L, n) block starting at j; flatten time-major
    windows = np.lib.stride_tricks.sliding_window_view(s, (L, n))[:, 0]
    return np.ascontiguousarray(windows.reshape(cols, L * n).T)


def window_vector(y_window, u_window) -> np.ndarray:
    """Canonical column ``[vec(y_window); vec(u_window)]`` of an L-step I/O window."""
    y_window = _as_samples(y_window, "y_window")
    u_window = _as_samples(u_window, "u_window")
    if y_window.shape[0] != u_window.shape[0]:
        raise InvalidInput("window lengths differ")
    return np.concatenate([y_window.reshape(-1), u_window.reshape(-1)])


@dataclass(frozen=True)
class HankelStack:
    """Stacked I/O Hankel matrix with its init/pred partition.

    Treated as an immutable value: operations return new stacks.
    """

    H: np.ndarray
    n_init: int
    n_pred: int
    n_u: int
    n_y: int

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        if H.ndim != 2 or H.shape[0] != self.row_H:
            raise InvalidInput(f"H must have {self.row_H} rows, got shape {H.shape}")
        object.__setattr__(self, "H", H)

    @property
    def L(self) -> int:
        return self.n_init + self.n_pred

    @property
    def row_H(self) -> int:
        return self.L * (self.n_u + self.n_y)

    @property
    def col_H(self) -> int:
        return self.H.shape[1]

    @property
    def rows(self) -> dict:
        """Row slices of each block in the canonical order."""
        return block_rows(self.n_init, self.n_pred, self.n_u, self.n_y)

    def block(self, name: str) -> np.ndarray:
        return self.H[self.rows[name]]

    @property
    def H_y_init(self):
        return self.block("y_init")

    @property
    def H_y_pred(self):
        return self.block("y_pred")

    @property
    def H_u(self):
        return self.block("u")

    def regressor(self) -> np.ndarray:
        """``[H_y,init; H_u]``, the matrix pseudo-inverted by the predictors."""
        r = self.rows
        return np.vstack([self.H[r["y_init"]], self.H[r["u"]]])


def block_rows(n_init: int, n_pred: int, n_u: int, n_y: int) -> dict:
    yi, yp = n_y * n_init, n_y * n_pred
    ui, up = n_u * n_init, n_u * n_pred
    return {
        "y_init": slice(0, yi),
        "y_pred": slice(yi, yi + yp),
        "u_init": slice(yi + yp, yi + yp + ui),
        "u_pred": slice(yi + yp + ui, yi + yp + ui + up),
        "y": slice(0, yi + yp),
        "u": slice(yi + yp, yi + yp + ui + up),
    }


def empty_stack(n_init: int, n_pred: int, n_u: int, n_y: int) -> HankelStack:
    L = n_init + n_pred
    return HankelStack(np.zeros((L * (n_u + n_y), 0)), n_init, n_pred, n_u, n_y)


def stack_and_partition(log: SignalLog, n_init: int, n_pred: int) -> HankelStack:
    """Build the stacked Hankel matrix ``[H_y; H_u]`` of depth ``n_init + n_pred``."""
    if n_init < 1 or n_pred < 1:
        raise InvalidInput("n_init and n_pred must be positive")
    L = n_init + n_pred
    if log.T < L:
        raise InsufficientData(f"need T >= {L}, got {log.T}")
    H = np.vstack([build_hankel(log.y, L), build_hankel(log.u, L)])
    return HankelStack(H, n_init, n_pred, log.n_u, log.n_y)


def append_column(stack: HankelStack, window) -> HankelStack:
    """Return a new stack with one extra column.

    ``window`` is either a canonical column vector or a ``(y_window, u_window)`` pair.
    """
    if isinstance(window, tuple):
        window = window_vector(*window)
    a = np.asarray(window, dtype=float).reshape(-1)
    if a.shape != (stack.row_H,):
        raise InvalidInput(f"window must have {stack.row_H} entries, got {a.size}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput("window contains non-finite entries")
    return HankelStack(np.column_stack([stack.H, a]), stack.n_init, stack.n_pred, stack.n_u, stack.n_y)


def check_persistent_excitation(u, order: int, rank_tol: float = DEFAULT_RANK_TOL):
    """Whether ``u`` is persistently exciting of ``order``.

    Returns ``(is_pe, min_singular_value)`` of the depth-``order`` input Hankel matrix.
    """
    Hu = build_hankel(u, order)
    s = np.linalg.svd(Hu, compute_uv=False)
    full = Hu.shape[0] <= Hu.shape[1] and numerical_rank(s, rank_tol) == Hu.shape[0]
    smin = float(s[Hu.shape[0] - 1]) if Hu.shape[0] <= s.size else 0.0
    return bool(full), smin


def fundamental_lemma_residual(stack: HankelStack, trajectory) -> float:
    """Relative least-squares residual of a canonical trajectory against ``colspan(H)``.

    ``||H g* - w|| / max(1, ||w||)``; near zero means ``w`` lies in the column span.
    """
    if isinstance(trajectory, tuple):
        trajectory = window_vector(*trajectory)
    w = np.asarray(trajectory, dtype=float).reshape(-1)
    if w.shape != (stack.row_H,):
        raise InvalidInput(f"trajectory must have {stack.row_H} entries")
    g, *_ = np.linalg.lstsq(stack.H, w, rcond=None)
    return float(np.linalg.norm(stack.H @ g - w) / max(1.0, np.linalg.norm(w)))
