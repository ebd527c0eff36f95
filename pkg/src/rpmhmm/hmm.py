"""Discrete-observation hidden Markov model.

Likelihoods use the scaled forward recursion: each step's forward vector is
normalised and the normalisers are accumulated in log space, so sequence
length never causes underflow.  Training is multi-sequence Baum-Welch where
the M-step maximises the expected complete-data log-likelihood subject to a
probability floor, which keeps EM monotone while guaranteeing that no
transition or emission collapses to zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .alphabet import ALPHABET
from .errors import AlphabetMismatchError, InvalidInputError, ModelFormatError

STOCHASTIC_ATOL = 1e-9
DOCUMENT_ATOL = 1e-6
MODEL_FORMAT = "rpmhmm-model"
MODEL_FORMAT_VERSION = 1


def _frozen(values, ndim, name):
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != ndim:
        raise InvalidInputError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


class HmmModel:
    """Immutable HMM parameters ``(transition, emission, initial)``.

    ``transition[i, j]`` is P(next state j | state i), ``emission[i, k]`` is
    P(symbol k | state i) and ``initial[i]`` is P(first state i).
    """

    __slots__ = ("transition", "emission", "initial")

    def __init__(self, transition, emission, initial):
        A = _frozen(transition, 2, "transition")
        B = _frozen(emission, 2, "emission")
        pi = _frozen(initial, 1, "initial")
        n = pi.shape[0]
        if n == 0 or A.shape != (n, n) or B.shape[0] != n or B.shape[1] == 0:
            raise InvalidInputError(
                f"inconsistent shapes: transition {A.shape}, emission {B.shape}, initial {pi.shape}"
            )
        for name, arr in (("transition", A), ("emission", B), ("initial", pi)):
            if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
                raise InvalidInputError(f"{name} entries must lie in [0, 1]")
        if np.abs(A.sum(axis=1) - 1.0).max() > STOCHASTIC_ATOL:
            raise InvalidInputError("transition rows must sum to 1")
        if np.abs(B.sum(axis=1) - 1.0).max() > STOCHASTIC_ATOL:
            raise InvalidInputError("emission rows must sum to 1")
        if abs(pi.sum() - 1.0) > STOCHASTIC_ATOL:
            raise InvalidInputError("initial distribution must sum to 1")
        object.__setattr__(self, "transition", A)
        object.__setattr__(self, "emission", B)
        object.__setattr__(self, "initial", pi)

    def __setattr__(self, name, value):
        raise AttributeError("HmmModel is immutable")

    @property
    def n_states(self) -> int:
        return self.initial.shape[0]

    @property
    def n_symbols(self) -> int:
        return self.emission.shape[1]

    def __eq__(self, other):
        if not isinstance(other, HmmModel):
            return NotImplemented
        return (
            np.array_equal(self.transition, other.transition)
            and np.array_equal(self.emission, other.emission)
            and np.array_equal(self.initial, other.initial)
        )

    __hash__ = None

    def __repr__(self):
        return f"HmmModel(n_states={self.n_states}, n_symbols={self.n_symbols})"


@dataclass(frozen=True)
class TrainConfig:
    max_iterations: int = 200
    convergence_tol: float = 1e-4
    rng_seed: int = 0
    smoothing_floor: float = 1e-6

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be positive")
        if not self.convergence_tol > 0:
            raise InvalidInputError("convergence_tol must be > 0")
        if self.smoothing_floor < 0:
            raise InvalidInputError("smoothing_floor must be non-negative")


@dataclass
class TrainResult:
    model: HmmModel
    loglik_trace: list[float]
    converged: bool
    n_iterations: int = field(default=0)


def _as_array(seq, n_symbols: int) -> np.ndarray:
    arr = np.asarray(seq)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidInputError("observation sequence must be a non-empty 1-D sequence")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise InvalidInputError("observation symbols must be integer codes")
        arr = arr.astype(np.int64)
    if arr.min() < 0 or arr.max() >= n_symbols:
        bad = int(arr[(arr < 0) | (arr >= n_symbols)][0])
        raise AlphabetMismatchError(f"symbol code {bad} outside [0, {n_symbols})")
    return arr.astype(np.int64, copy=False)


def _forward_scaled(A, B, pi, obs):
    """Scaled forward pass over a batch ``obs`` of shape (K, T).

    Returns normalised forward variables (K, T, N) and the per-step scale
    factors (K, T); ``log(scale).sum(axis=1)`` is log P(O | model).
    """
    K, T = obs.shape
    N = pi.shape[0]
    em = B.T[obs]  # (K, T, N)
    alpha = np.empty((K, T, N))
    scale = np.empty((K, T))
    a = pi[None, :] * em[:, 0]
    for t in range(T):
        if t > 0:
            a = (alpha[:, t - 1] @ A) * em[:, t]
        c = a.sum(axis=1)
        scale[:, t] = c
        safe = np.where(c > 0, c, 1.0)
        alpha[:, t] = a / safe[:, None]
    return alpha, scale, em


def _backward_scaled(A, em, scale):
    K, T, N = em.shape
    beta = np.empty((K, T, N))
    beta[:, T - 1] = 1.0
    for t in range(T - 2, -1, -1):
        beta[:, t] = ((em[:, t + 1] * beta[:, t + 1]) @ A.T) / scale[:, t + 1][:, None]
    return beta


def sequence_log_likelihoods(model: HmmModel, batch) -> np.ndarray:
    """Natural-log likelihood of each row of an equal-length (K, T) batch."""
    obs = np.asarray(batch)
    if obs.ndim != 2 or obs.shape[1] == 0:
        raise InvalidInputError("batch must be a non-empty (K, T) array")
    if obs.shape[0] == 0:
        return np.empty(0)
    if obs.min() < 0 or obs.max() >= model.n_symbols:
        raise AlphabetMismatchError(f"batch contains symbol codes outside [0, {model.n_symbols})")
    _, scale, _ = _forward_scaled(model.transition, model.emission, model.initial, obs.astype(np.int64))
    with np.errstate(divide="ignore"):
        return np.log(scale).sum(axis=1)


def forward_log_likelihood(model: HmmModel, seq: Sequence[int]) -> float:
    """Return ``log P(seq | model)`` (natural log; ``-inf`` for impossible sequences)."""
    obs = _as_array(seq, model.n_symbols)
    return float(sequence_log_likelihoods(model, obs[None, :])[0])


def floored_normalize(counts: np.ndarray, floor: float) -> np.ndarray:
    """Row-wise argmax of ``sum_k c_k log p_k`` subject to ``p_k >= floor``.

    Entries whose proportional share would fall under the floor are pinned to
    it; the remaining mass is shared in proportion to the counts.  Rows with
    no counts at all become uniform.
    """
    counts = np.atleast_2d(np.asarray(counts, dtype=np.float64))
    K = counts.shape[1]
    if floor * K >= 1.0:
        raise InvalidInputError(f"floor {floor} too large for rows of length {K}")
    out = np.empty_like(counts)
    for r, c in enumerate(counts):
        total = c.sum()
        if total <= 0:
            out[r] = 1.0 / K
            continue
        if floor == 0:
            out[r] = c / total
            continue
        pinned = np.zeros(K, dtype=bool)
        while True:
            free_mass = 1.0 - floor * pinned.sum()
            free_counts = c[~pinned].sum()
            p = np.where(pinned, floor, free_mass * c / free_counts)
            newly = (~pinned) & (p < floor)
            if not newly.any():
                break
            pinned |= newly
        out[r] = p
    return out


def random_model(n_states: int, n_symbols: int, rng: np.random.Generator, floor: float = 0.0) -> HmmModel:
    """Draw a model by normalising uniform randoms (then projecting onto the floor)."""
    pi = floored_normalize(rng.random(n_states), floor)[0]
    A = floored_normalize(rng.random((n_states, n_states)), floor)
    B = floored_normalize(rng.random((n_states, n_symbols)), floor)
    return HmmModel(A, B, pi)


def _group_sequences(sequences, n_symbols):
    """Collapse the training set into unique sequences with multiplicities, grouped by length."""
    by_len: dict[int, list[np.ndarray]] = {}
    for seq in sequences:
        arr = _as_array(seq, n_symbols)
        by_len.setdefault(arr.shape[0], []).append(arr)
    groups = []
    for T in sorted(by_len):
        stacked = np.stack(by_len[T])
        uniq, counts = np.unique(stacked, axis=0, return_counts=True)
        groups.append((uniq, counts.astype(np.float64)))
    return groups


def _e_step(model, groups):
    A, B, pi = model.transition, model.emission, model.initial
    N, M = B.shape
    pi_acc = np.zeros(N)
    A_acc = np.zeros((N, N))
    B_acc = np.zeros((N, M))
    total = 0.0
    for obs, w in groups:
        alpha, scale, em = _forward_scaled(A, B, pi, obs)
        with np.errstate(divide="ignore"):
            ll = np.log(scale).sum(axis=1)
        total += float(w @ ll)
        beta = _backward_scaled(A, em, scale)
        gamma = alpha * beta
        gamma /= gamma.sum(axis=2, keepdims=True)
        wg = gamma * w[:, None, None]
        pi_acc += wg[:, 0].sum(axis=0)
        onehot = np.eye(M)[obs]  # (K, T, M)
        B_acc += np.einsum("ktn,ktm->nm", wg, onehot)
        if obs.shape[1] > 1:
            left = alpha[:, :-1] * w[:, None, None]
            right = em[:, 1:] * beta[:, 1:] / scale[:, 1:, None]
            A_acc += np.einsum("kti,ktj->ij", left, right) * A
    return total, pi_acc, A_acc, B_acc


def train_baum_welch(
    sequences,
    n_states: int,
    alphabet_size: int,
    config: TrainConfig | None = None,
    callback: Callable[[int, HmmModel, float], None] | None = None,
) -> TrainResult:
    """Fit an HMM to ``sequences`` with Baum-Welch.

    Expected counts are accumulated over every sequence before the
    (floor-constrained) normalisation.  ``loglik_trace[i]`` is the total
    training log-likelihood of the parameters entering iteration ``i``; the
    last entry always belongs to the returned model.  ``callback`` is invoked
    as ``callback(iteration, model, loglik)`` for every parameter set visited.
    """
    config = config or TrainConfig()
    if n_states < 1:
        raise InvalidInputError("n_states must be positive")
    if alphabet_size < 1:
        raise InvalidInputError("alphabet_size must be positive")
    sequences = list(sequences)
    if not sequences:
        raise InvalidInputError("training set is empty")
    floor = config.smoothing_floor
    if floor * max(n_states, alphabet_size) >= 1.0:
        raise InvalidInputError("smoothing_floor must be below 1/max(n_states, alphabet_size)")

    groups = _group_sequences(sequences, alphabet_size)
    rng = np.random.default_rng(config.rng_seed)
    model = random_model(n_states, alphabet_size, rng, floor)

    trace: list[float] = []
    converged = False
    iteration = 0
    for iteration in range(config.max_iterations):
        ll, pi_acc, A_acc, B_acc = _e_step(model, groups)
        trace.append(ll)
        if callback is not None:
            callback(iteration, model, ll)
        if len(trace) > 1 and trace[-1] - trace[-2] < config.convergence_tol:
            converged = True
            break
        model = HmmModel(
            floored_normalize(A_acc, floor),
            floored_normalize(B_acc, floor),
            floored_normalize(pi_acc, floor)[0],
        )
    else:
        ll = _e_step(model, groups)[0]
        trace.append(ll)
        iteration += 1
        if callback is not None:
            callback(iteration, model, ll)
    return TrainResult(model=model, loglik_trace=trace, converged=converged, n_iterations=iteration)


# -- text document --------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _fmt_row(row) -> str:
    return "[" + ", ".join(_fmt(v) for v in row) + "]"


def serialize_model(model: HmmModel, alphabet_tag: str = ALPHABET.tag) -> str:
    lines = [
        "{",
        f'  "format": "{MODEL_FORMAT}",',
        f'  "version": {MODEL_FORMAT_VERSION},',
        f"  \"alphabet_tag\": {json.dumps(alphabet_tag)},",
        f'  "n_states": {model.n_states},',
        f'  "n_symbols": {model.n_symbols},',
        f'  "pi": {_fmt_row(model.initial)},',
        '  "A": [',
        ",\n".join("    " + _fmt_row(r) for r in model.transition),
        "  ],",
        '  "B": [',
        ",\n".join("    " + _fmt_row(r) for r in model.emission),
        "  ]",
        "}",
    ]
    return "\n".join(lines) + "\n"


def _renormalize_within(arr: np.ndarray, name: str) -> np.ndarray:
    sums = arr.sum(axis=-1, keepdims=True)
    dev = np.abs(sums - 1.0).max()
    if dev > DOCUMENT_ATOL:
        raise ModelFormatError(f"{name} rows deviate from 1 by {dev:.3g}")
    if dev > STOCHASTIC_ATOL:
        arr = arr / sums
    return arr


def deserialize_model(text: str, alphabet_tag: str | None = ALPHABET.tag) -> HmmModel:
    """Parse a model document; ``alphabet_tag=None`` skips the compatibility check."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model document is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be a JSON object")
    required = {"format", "version", "alphabet_tag", "n_states", "n_symbols", "pi", "A", "B"}
    missing = required - doc.keys()
    if missing:
        raise ModelFormatError(f"model document missing fields: {', '.join(sorted(missing))}")
    if doc["format"] != MODEL_FORMAT or doc["version"] != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format {doc['format']!r} v{doc['version']!r}")
    if alphabet_tag is not None and doc["alphabet_tag"] != alphabet_tag:
        raise AlphabetMismatchError(
            f"model alphabet {doc['alphabet_tag']!r} does not match runtime alphabet {alphabet_tag!r}"
        )
    n, m = doc["n_states"], doc["n_symbols"]
    if not (isinstance(n, int) and isinstance(m, int) and n > 0 and m > 0):
        raise ModelFormatError("n_states and n_symbols must be positive integers")
    try:
        pi = np.array(doc["pi"], dtype=np.float64)
        A = np.array(doc["A"], dtype=np.float64)
        B = np.array(doc["B"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed matrix: {exc}") from None
    if pi.shape != (n,) or A.shape != (n, n) or B.shape != (n, m):
        raise ModelFormatError(
            f"matrix shapes pi{pi.shape} A{A.shape} B{B.shape} do not match n_states={n}, n_symbols={m}"
        )
    for name, arr in (("pi", pi), ("A", A), ("B", B)):
        if not np.all(np.isfinite(arr)):
            raise ModelFormatError(f"{name} contains non-finite values")
        if arr.min() < 0 or arr.max() > 1:
            raise ModelFormatError(f"{name} contains probabilities outside [0, 1]")
    pi = _renormalize_within(pi, "pi")
    A = _renormalize_within(A, "A")
    B = _renormalize_within(B, "B")
    try:
        return HmmModel(A, B, pi)
    except InvalidInputError as exc:
        raise ModelFormatError(str(exc)) from None
