"""Illumination-strategy problem: reconstructed profiles, cost, primitive and exhaustive solutions."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .layers import nearest_layer
from .optics import OtfBank
from .perception import CsfModel, csf_weight

MAX_BRUTE_FORCE_BITS = 20


class DegenerateStrategyError(ValueError):
    """All bits off with zero DC noise: nothing reaches the eye."""


@dataclass(frozen=True, eq=False)
class IlluminationStrategy:
    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 1 or b.size == 0:
            raise ValueError("strategy must be a non-empty 1-D bit vector")
        if not np.all((b == 0) | (b == 1)):
            raise ValueError("strategy entries must be 0 or 1")
        b = b.astype(np.uint8)
        b.flags.writeable = False
        object.__setattr__(self, "bits", b)

    @classmethod
    def from_bitstring(cls, text: str) -> "IlluminationStrategy":
        return cls(np.array([int(ch) for ch in text.strip()], dtype=np.uint8))

    @property
    def n(self) -> int:
        return int(self.bits.size)

    @property
    def lit_subframes(self) -> int:
        return int(self.bits.sum())

    def illumination_time(self, dc_noise: float = 0.0) -> float:
        """A = sum(b_j + c); equals the lit-subframe count when c = 0."""
        return float(self.bits.sum() + dc_noise * self.bits.size)

    @property
    def bitstring(self) -> str:
        return "".join(str(int(b)) for b in self.bits)

    def __eq__(self, other):
        return isinstance(other, IlluminationStrategy) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash(self.bitstring)

    def __repr__(self):
        return f"IlluminationStrategy({self.bitstring!r})"


@dataclass(frozen=True)
class CostBreakdown:
    total: float
    fidelity: float
    penalty: float


@dataclass(frozen=True, eq=False)
class StrategyProblem:
    """One instance of the CSF-weighted, brightness-bounded least-squares problem.

    ``gamma=None`` derives the penalty weight from ``gamma_mode``: ``"hard"``
    uses twice an upper bound of the fidelity term, so one missing subframe
    always costs more than any achievable fidelity gain; ``"primitive"`` uses
    the fidelity term of the primitive strategy.
    """

    bank: OtfBank
    target_depth: float
    dc_noise: float = 0.0
    a_low: int = 0
    gamma: Optional[float] = None
    gamma_mode: str = "hard"
    csf: CsfModel = CsfModel()
    distance_mode: str = "complex"

    def __post_init__(self):
        layers = self.bank.layer_depths
        if not (layers[0] <= self.target_depth <= layers[-1]):
            raise ValueError(
                f"target depth {self.target_depth} D outside layer range [{layers[0]}, {layers[-1]}] D"
            )
        if self.dc_noise < 0:
            raise ValueError("dc_noise must be non-negative")
        if self.a_low < 0 or int(self.a_low) != self.a_low:
            raise ValueError("a_low must be a non-negative integer subframe count")
        object.__setattr__(self, "a_low", int(self.a_low))
        if self.gamma is not None and self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.gamma_mode not in ("hard", "primitive"):
            raise ValueError(f"unknown gamma_mode {self.gamma_mode!r}")
        if self.distance_mode not in ("complex", "magnitude"):
            raise ValueError(f"unknown distance_mode {self.distance_mode!r}")
        weights = csf_weight(self.bank.frequencies, self.csf)
        target = self.bank.target(self.target_depth)
        weights.flags.writeable = False
        target.flags.writeable = False
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "_quad", None)
        if self.gamma is None:
            object.__setattr__(self, "gamma", self._default_gamma())

    @property
    def n(self) -> int:
        return self.bank.shape[1]

    @property
    def m(self) -> int:
        return self.bank.shape[0]

    @property
    def layer_depths(self) -> np.ndarray:
        return self.bank.layer_depths

    @property
    def accommodation_depths(self) -> np.ndarray:
        return self.bank.accommodation_depths

    def fidelity_upper_bound(self) -> float:
        # |P| <= 1 for any convex combination of OTFs
        return float(np.sum(self.weights * (np.abs(self.target) + 1.0) ** 2))

    def _default_gamma(self) -> float:
        if self.gamma_mode == "hard":
            return 2.0 * self.fidelity_upper_bound()
        return fidelity(primitive_strategy(self), self)

    def quadratic_form(self):
        """(const, g, Q) with fidelity(w) = const - 2 g.w + w.Q.w for weights w = (b + c) / A."""
        if self._quad is None:
            H = self.bank.values
            V = self.weights
            const = float(np.sum(V * np.abs(self.target) ** 2))
            g = np.einsum("f,if,ijf->j", V, np.conj(self.target), H).real
            Q = np.einsum("f,ijf,ikf->jk", V, H, np.conj(H)).real
            Q = 0.5 * (Q + Q.T)
            object.__setattr__(self, "_quad", (const, g, Q))
        return self._quad


@dataclass(frozen=True)
class ProblemTemplate:
    """Everything but the target depth; ``at(z_d)`` yields a StrategyProblem."""

    bank: OtfBank
    dc_noise: float = 0.0
    a_low: int = 0
    gamma: Optional[float] = None
    gamma_mode: str = "hard"
    csf: CsfModel = CsfModel()
    distance_mode: str = "complex"

    def at(self, target_depth: float) -> StrategyProblem:
        return StrategyProblem(self.bank, float(target_depth), self.dc_noise, self.a_low, self.gamma,
                               self.gamma_mode, self.csf, self.distance_mode)


def a_low_from_fraction(fraction: float, n: int) -> int:
    """Round a brightness fraction of ``n`` subframes to an integer bound, minimum 1."""
    if fraction <= 0:
        return 0
    return max(1, int(math.floor(fraction * n + 0.5)))


def _weights(bits: np.ndarray, dc_noise: float) -> np.ndarray:
    b = np.asarray(bits, dtype=float)
    total = b.sum(axis=-1, keepdims=True) + dc_noise * b.shape[-1]
    if np.any(total <= 0):
        raise DegenerateStrategyError("illumination time A = 0: all bits off with zero DC noise")
    return (b + dc_noise) / total


def reconstructed_profile(strategy: IlluminationStrategy, problem: StrategyProblem, i: Optional[int] = None) -> np.ndarray:
    """P(f; z_i^s) = (1/A) sum_j (b_j + c) H(f; z_i^s, z_j^t); all planes when ``i`` is None."""
    w = _weights(strategy.bits, problem.dc_noise)
    H = problem.bank.values if i is None else problem.bank.values[i]
    P = np.tensordot(H, w, axes=([-2], [0]))
    if problem.bank.frequencies[0] == 0.0:
        # every H is exactly 1 at DC, so P(0) = sum(w) = 1; pin it against summation rounding
        P[..., 0] = 1.0
    return P


def fidelity(strategy: IlluminationStrategy, problem: StrategyProblem) -> float:
    P = reconstructed_profile(strategy, problem)
    T = problem.target
    if problem.distance_mode == "magnitude":
        diff = np.abs(T) - np.abs(P)
    else:
        diff = T - P
    return float(np.sum(problem.weights * (diff.real**2 + diff.imag**2)))


def cost(strategy: IlluminationStrategy, problem: StrategyProblem) -> CostBreakdown:
    """Fidelity summed over accommodation planes plus gamma * max(A_low - lit, 0)."""
    if strategy.n != problem.n:
        raise ValueError(f"strategy has {strategy.n} bits, problem has {problem.n} layers")
    fid = fidelity(strategy, problem)
    shortfall = max(problem.a_low - strategy.lit_subframes, 0)
    pen = problem.gamma * shortfall
    return CostBreakdown(fid + pen, fid, pen)


def batch_cost(bits: np.ndarray, problem: StrategyProblem) -> np.ndarray:
    """Total cost for a (k, n) population of bitstrings."""
    bits = np.asarray(bits)
    w = _weights(bits, problem.dc_noise)
    if problem.distance_mode == "complex":
        const, g, Q = problem.quadratic_form()
        fid = const - 2.0 * (w @ g) + np.einsum("kj,kj->k", w @ Q, w)
        fid = np.maximum(fid, 0.0)
    else:
        P = np.einsum("kj,ijf->kif", w, problem.bank.values)
        diff = np.abs(problem.target)[None] - np.abs(P)
        fid = np.einsum("f,kif->k", problem.weights, diff**2)
    shortfall = np.maximum(problem.a_low - bits.sum(axis=1).astype(np.int64), 0)
    return fid + problem.gamma * shortfall


def primitive_strategy(problem) -> IlluminationStrategy:
    """Single lit subframe at the layer nearest the target depth (A = 1)."""
    idx, _ = nearest_layer(problem.target_depth, problem.layer_depths)
    bits = np.zeros(len(problem.layer_depths), dtype=np.uint8)
    bits[int(idx)] = 1
    return IlluminationStrategy(bits)


def _pick_best(candidates: np.ndarray, problem: StrategyProblem, rel_tol: float = 1e-12):
    """Exact re-scoring with ties broken by fewer lit subframes, then lexicographic order."""
    scored = []
    for row in candidates:
        s = IlluminationStrategy(row)
        scored.append((cost(s, problem), s))
    best_total = min(c.total for c, _ in scored)
    tol = rel_tol * max(1.0, abs(best_total))
    tied = [(c, s) for c, s in scored if c.total <= best_total + tol]
    tied.sort(key=lambda cs: (cs[1].lit_subframes, tuple(cs[1].bits.tolist())))
    return tied[0][1], tied[0][0]


def brute_force_optimum(problem: StrategyProblem, chunk: int = 1 << 15):
    """Global minimizer over all non-zero bitstrings (n <= 20)."""
    n = problem.n
    if n > MAX_BRUTE_FORCE_BITS:
        raise ValueError(f"exhaustive search refused for n = {n} > {MAX_BRUTE_FORCE_BITS} layers")
    shifts = np.arange(n, dtype=np.int64)
    total = (1 << n) - 1
    best = math.inf
    keep = []
    for start in range(1, total + 1, chunk):
        codes = np.arange(start, min(start + chunk, total + 1), dtype=np.int64)
        bits = ((codes[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
        costs = batch_cost(bits, problem)
        lo = float(costs.min())
        margin = 1e-9 * max(1.0, abs(min(lo, best)))
        if lo < best:
            best = lo
            keep = [k for k in keep if k[0] <= best + margin]
        sel = np.nonzero(costs <= best + margin)[0]
        keep.extend((float(costs[k]), bits[k]) for k in sel)
    cands = np.array([b for c, b in keep if c <= best + 1e-9 * max(1.0, abs(best))])
    return _pick_best(cands, problem)


@dataclass(frozen=True, eq=False)
class StrategyTable:
    """Optimal strategy per quantized target depth (one row per layer)."""

    target_depths: np.ndarray
    bits: np.ndarray
    costs: np.ndarray
    fidelities: np.ndarray
    penalties: np.ndarray
    layer_depths: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("target_depths", "costs", "fidelities", "penalties", "layer_depths"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        bits = np.array(self.bits, dtype=np.uint8)
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)
        if bits.shape != (len(self.target_depths), len(self.layer_depths)):
            raise ValueError("table bits must have shape (targets, layers)")

    def __len__(self):
        return len(self.target_depths)

    def entry(self, k: int) -> IlluminationStrategy:
        return IlluminationStrategy(self.bits[k])

    @property
    def illumination_times(self) -> np.ndarray:
        return self.bits.sum(axis=1).astype(int)

    def hamming_steps(self) -> np.ndarray:
        """Hamming distance between strategies of adjacent target depths."""
        return np.count_nonzero(self.bits[1:] != self.bits[:-1], axis=1)

    @property
    def table_id(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.layer_depths).tobytes())
        h.update(np.ascontiguousarray(self.target_depths).tobytes())
        h.update(np.ascontiguousarray(self.bits).tobytes())
        return h.hexdigest()[:16]


def build_strategy_table(template: ProblemTemplate, params=None, method: str = "ga", workers: int = 1,
                         target_depths=None) -> StrategyTable:
    """Solve one problem per layer depth and collect the results.

    ``method`` is ``"ga"`` (seeded per entry from ``params.rng_seed``) or
    ``"brute"`` for small layer counts.
    """
    from .ga import GaParams, optimize_ga

    params = GaParams() if params is None else params
    layers = template.bank.layer_depths
    targets = layers if target_depths is None else np.asarray(target_depths, dtype=float)
    idx, _ = nearest_layer(targets, layers)
    quantized = layers[idx]

    def solve(k):
        problem = template.at(quantized[k])
        if method == "brute":
            s, c = brute_force_optimum(problem)
        elif method == "ga":
            seed = int(np.random.SeedSequence([params.rng_seed, k]).generate_state(1)[0])
            res = optimize_ga(problem, replace(params, rng_seed=seed))
            s, c = res.strategy, res.cost
        else:
            raise ValueError(f"unknown method {method!r}")
        return s, c

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(solve, range(len(quantized))))
    else:
        results = [solve(k) for k in range(len(quantized))]

    meta = {
        "dc_noise": template.dc_noise,
        "a_low": template.a_low,
        "gamma_mode": template.gamma_mode,
        "gamma": template.gamma,
        "method": method,
        "rng_seed": params.rng_seed,
        "population_size": params.population_size,
        "max_generations": params.max_generations,
    }
    return StrategyTable(
        target_depths=quantized,
        bits=np.stack([s.bits for s, _ in results]),
        costs=[c.total for _, c in results],
        fidelities=[c.fidelity for _, c in results],
        penalties=[c.penalty for _, c in results],
        layer_depths=layers,
        metadata=meta,
    )
