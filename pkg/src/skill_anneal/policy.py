"""Factorized linear-softmax policy over (action, compression factor).

    pi(a, c | x) = softmax(x @ W_a)[a] * softmax(x @ W_c)[c]

Both heads read the same context features ``x``. Log-probabilities,
gradients and the categorical KL are all closed form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_GRID = (1.0, 1.5, 2.0, 3.0)
CHECKPOINT_VERSION = 1


class PolicyError(ValueError):
    pass


class ShapeMismatch(PolicyError):
    pass


class NonFiniteLogits(PolicyError):
    pass


class OutOfSupport(PolicyError):
    pass


class CheckpointInvalid(PolicyError):
    pass


def check_grid(grid) -> tuple[float, ...]:
    grid = tuple(float(g) for g in grid)
    if not grid or any(g < 1.0 for g in grid):
        raise PolicyError(f"compression grid entries must be >= 1: {grid}")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise PolicyError(f"compression grid must be strictly increasing: {grid}")
    if 1.0 not in grid:
        raise PolicyError("compression grid must contain 1.0")
    return grid


@dataclass
class PolicyParams:
    W_a: np.ndarray  # (feature_dim, n_actions)
    W_c: np.ndarray  # (feature_dim, len(grid))
    grid: tuple[float, ...] = DEFAULT_GRID

    def __post_init__(self):
        self.W_a = np.asarray(self.W_a, dtype=float)
        self.W_c = np.asarray(self.W_c, dtype=float)
        self.grid = tuple(float(g) for g in self.grid)
        if self.W_a.ndim != 2 or self.W_c.ndim != 2 or self.W_a.shape[0] != self.W_c.shape[0]:
            raise ShapeMismatch(f"head shapes {self.W_a.shape} and {self.W_c.shape} disagree")
        if self.W_c.shape[1] != len(self.grid):
            raise ShapeMismatch(f"compression head has {self.W_c.shape[1]} columns for a grid of {len(self.grid)}")

    @classmethod
    def zeros(cls, dim: int, n_actions: int, grid=DEFAULT_GRID) -> "PolicyParams":
        grid = check_grid(grid)
        return cls(np.zeros((dim, n_actions)), np.zeros((dim, len(grid))), grid)

    @property
    def dim(self) -> int:
        return self.W_a.shape[0]

    @property
    def n_actions(self) -> int:
        return self.W_a.shape[1]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W_a.ravel(), self.W_c.ravel()])

    def with_flat(self, vec: np.ndarray) -> "PolicyParams":
        n = self.W_a.size
        return PolicyParams(vec[:n].reshape(self.W_a.shape), vec[n:].reshape(self.W_c.shape), self.grid)

    def zeros_like(self) -> "PolicyParams":
        return PolicyParams(np.zeros_like(self.W_a), np.zeros_like(self.W_c), self.grid)

    def same_shape(self, other: "PolicyParams") -> bool:
        return self.W_a.shape == other.W_a.shape and self.W_c.shape == other.W_c.shape

    def __eq__(self, other):
        if not isinstance(other, PolicyParams):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.same_shape(other)
            and np.array_equal(self.W_a, other.W_a)
            and np.array_equal(self.W_c, other.W_c)
        )


@dataclass(frozen=True)
class Decision:
    action: int
    factor_index: int
    factor: float
    logp: float
    logp_action: float
    logp_factor: float


def _check_features(params: PolicyParams, x: np.ndarray) -> None:
    if x.shape[-1] != params.dim:
        raise ShapeMismatch(f"features have dim {x.shape[-1]}, params expect {params.dim}")


def log_softmax(logits: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(logits)):
        raise NonFiniteLogits("logits contain inf or nan")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def head_log_probs(params: PolicyParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-head log-probabilities; ``x`` may be one vector or a (n, dim) batch."""
    _check_features(params, x)
    with np.errstate(invalid="ignore", over="ignore"):  # log_softmax rejects non-finite logits
        la, lc = x @ params.W_a, x @ params.W_c
    return log_softmax(la), log_softmax(lc)


def _draw(logp: np.ndarray, u: float) -> int:
    cdf = np.cumsum(np.exp(logp))
    return min(int(np.searchsorted(cdf, u * cdf[-1], side="right")), len(cdf) - 1)


def sample_decision(params: PolicyParams, features: np.ndarray, rng: np.random.Generator) -> Decision:
    lp_a, lp_c = head_log_probs(params, features)
    a = _draw(lp_a, rng.random())
    k = _draw(lp_c, rng.random())
    return Decision(a, k, params.grid[k], float(lp_a[a] + lp_c[k]), float(lp_a[a]), float(lp_c[k]))


def greedy_decision(params: PolicyParams, features: np.ndarray) -> Decision:
    """Argmax of both heads; ties go to the lowest index."""
    lp_a, lp_c = head_log_probs(params, features)
    a, k = int(np.argmax(lp_a)), int(np.argmax(lp_c))
    return Decision(a, k, params.grid[k], float(lp_a[a] + lp_c[k]), float(lp_a[a]), float(lp_c[k]))


def logprob_and_grad(params: PolicyParams, features: np.ndarray, action: int, factor_index: int):
    """Return ``(log pi(a, c | x), d log pi / d params)``."""
    if not 0 <= action < params.n_actions:
        raise OutOfSupport(f"action index {action} outside [0, {params.n_actions})")
    if not 0 <= factor_index < len(params.grid):
        raise OutOfSupport(f"factor index {factor_index} outside the grid")
    lp_a, lp_c = head_log_probs(params, features)
    da = -np.exp(lp_a)
    da[action] += 1.0
    dc = -np.exp(lp_c)
    dc[factor_index] += 1.0
    grad = PolicyParams(np.outer(features, da), np.outer(features, dc), params.grid)
    return float(lp_a[action] + lp_c[factor_index]), grad


def factor_index(params: PolicyParams, factor: float) -> int:
    for i, g in enumerate(params.grid):
        if g == float(factor):
            return i
    raise OutOfSupport(f"factor {factor} not on grid {params.grid}")


def _categorical_kl(lp: np.ndarray, lq: np.ndarray) -> np.ndarray:
    return np.sum(np.exp(lp) * (lp - lq), axis=-1)


def exact_kl(p: PolicyParams, q: PolicyParams, features: np.ndarray):
    """KL(p || q) summed over both heads at ``features`` (vector or batch)."""
    if not p.same_shape(q):
        raise ShapeMismatch("policies have different shapes")
    pa, pc = head_log_probs(p, features)
    qa, qc = head_log_probs(q, features)
    kl = np.maximum(_categorical_kl(pa, qa) + _categorical_kl(pc, qc), 0.0)
    return float(kl) if np.ndim(kl) == 0 else kl


def snapshot(params: PolicyParams) -> PolicyParams:
    return PolicyParams(params.W_a.copy(), params.W_c.copy(), params.grid)


def save_checkpoint(params: PolicyParams, path: str | Path, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(
            fh,
            version=np.array(CHECKPOINT_VERSION),
            W_a=params.W_a,
            W_c=params.W_c,
            grid=np.array(params.grid),
            meta=np.array(json.dumps(meta or {}, sort_keys=True)),
        )
    return path


def load_checkpoint(path: str | Path) -> tuple[PolicyParams, dict]:
    try:
        with np.load(path, allow_pickle=False) as data:
            version = int(data["version"])
            if version != CHECKPOINT_VERSION:
                raise CheckpointInvalid(f"unsupported checkpoint version {version}")
            params = PolicyParams(data["W_a"], data["W_c"], tuple(data["grid"].tolist()))
            meta = json.loads(str(data["meta"]))
    except (OSError, KeyError, ValueError) as exc:
        if isinstance(exc, CheckpointInvalid):
            raise
        raise CheckpointInvalid(f"cannot read checkpoint {path}: {exc}") from exc
    if not (np.all(np.isfinite(params.W_a)) and np.all(np.isfinite(params.W_c))):
        raise CheckpointInvalid("checkpoint holds non-finite weights")
    return params, meta
