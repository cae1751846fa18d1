"""Per-layer low-rank factorization: rank search, model assembly, dynamic
rank re-adjustment, and factor retraining.

Dense layers factorize directly; conv kernels are first reshaped to
(out_ch) x (in_ch*kh*kw) so the same matrix machinery applies. A factorized
layer at rank r stores r*(m+n) parameters against the original m*n, which
is what the overall compression fraction is computed from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import SvdResult, svd, truncate
from .model import Layer, Model, factorized_conv2d, factorized_dense
from .training import TrainConfig, TrainOutcome, evaluate, train

__all__ = [
    "RankPlan",
    "RankPlanEntry",
    "assemble_factorized",
    "build_rank_plan",
    "dynamic_rank_adjust",
    "factorize_layer",
    "layer_rank_search",
    "plan_report",
    "retrain_factorized",
]

_FACTORIZABLE = ("dense", "conv2d")

# Exhaustive scan is cheap and exact up to this matrix dimension; binary
# search with verification takes over above it.
_BRUTE_FORCE_DIM = 8


@dataclass
class RankPlanEntry:
    layer_index: int
    rank: int
    rows: int   # m: output dim of the reshaped weight matrix
    cols: int   # n: input dim

    @property
    def dense_params(self) -> int:
        return self.rows * self.cols

    @property
    def factor_params(self) -> int:
        return self.rank * (self.rows + self.cols)


@dataclass
class RankPlan:
    per_layer: list[RankPlanEntry]
    overall_compression: float
    rank_stats: tuple[int, int, float]   # (min, max, mean) of chosen ranks

    def copy(self) -> "RankPlan":
        return RankPlan(
            per_layer=[RankPlanEntry(e.layer_index, e.rank, e.rows, e.cols)
                       for e in self.per_layer],
            overall_compression=self.overall_compression,
            rank_stats=self.rank_stats,
        )


def _layer_matrix(layer: Layer) -> np.ndarray:
    if layer.kind == "dense":
        return layer.weights
    if layer.kind == "conv2d":
        return layer.weights.reshape(layer.weights.shape[0], -1)
    raise ValueError(f"layer kind {layer.kind!r} has no unfactorized weight matrix")


def factorize_layer(w: np.ndarray, r: int, dec: SvdResult | None = None):
    """Rank-r factor pair of a weight matrix; pass a precomputed SVD to skip
    the decomposition (rank searches reuse one SVD across all probes)."""
    if dec is None:
        dec = svd(w)
    return truncate(dec, r)


def _replace_with_factor(model: Model, layer_idx: int, rank: int,
                         dec: SvdResult) -> Model:
    out = model.copy()
    layer = out.layers[layer_idx]
    factor = truncate(dec, rank)
    if layer.kind == "dense":
        out.layers[layer_idx] = factorized_dense(factor, bias=layer.bias,
                                                 activation=layer.activation)
    else:
        geom = layer.weights.shape[1:]
        out.layers[layer_idx] = factorized_conv2d(factor, geom, bias=layer.bias,
                                                  activation=layer.activation)
    return out


def build_rank_plan(model: Model, ranks: dict[int, int]) -> RankPlan:
    """Plan holding the chosen rank per layer plus the exact compression:
    1 - (factorized params + untouched params) / original params, counting
    weight tensors only."""
    entries = []
    params_before = params_after = 0
    for idx, layer in enumerate(model.layers):
        dense_count = layer.dense_weight_count()
        params_before += dense_count
        if idx in ranks:
            mat = _layer_matrix(layer)
            m, n = mat.shape
            r = ranks[idx]
            if not 1 <= r <= min(m, n):
                raise ValueError(f"layer {idx}: rank {r} outside [1, {min(m, n)}]")
            entries.append(RankPlanEntry(idx, r, m, n))
            params_after += r * (m + n)
        else:
            params_after += layer.weight_count()
    if not entries:
        return RankPlan([], 0.0, (0, 0, 0.0))
    chosen = [e.rank for e in entries]
    return RankPlan(
        per_layer=entries,
        overall_compression=1.0 - params_after / params_before,
        rank_stats=(min(chosen), max(chosen), sum(chosen) / len(chosen)),
    )


def assemble_factorized(model: Model, plan: RankPlan,
                        svd_cache: dict[int, SvdResult] | None = None) -> Model:
    """Replace every planned layer with its rank-r factor pair."""
    out = model.copy()
    for entry in plan.per_layer:
        layer = model.layers[entry.layer_index]
        if layer.kind not in _FACTORIZABLE:
            raise ValueError(
                f"plan references layer {entry.layer_index} of kind {layer.kind!r}, "
                "which has no dense weight tensor to factorize"
            )
        dec = None if svd_cache is None else svd_cache.get(entry.layer_index)
        if dec is None:
            dec = svd(_layer_matrix(layer))
            if svd_cache is not None:
                svd_cache[entry.layer_index] = dec
        out = _replace_with_factor(out, entry.layer_index, entry.rank, dec)
    return out


def layer_rank_search(model: Model, layer_idx: int, eval_x, eval_y,
                      threshold: float = 0.01, evaluator=None,
                      dec: SvdResult | None = None) -> int:
    """Smallest rank for one layer keeping accuracy within `threshold` of the
    baseline, probing with every other layer left dense.

    Binary search exploits the (usual) monotone accuracy-in-rank profile;
    the candidate is re-verified by direct evaluation and bumped upward if a
    non-monotone profile fooled the search. Matrices no wider than 8 in
    their short dimension are scanned exhaustively, which is exact even for
    non-monotone profiles.
    """
    if evaluator is None:
        evaluator = lambda m: evaluate(m, eval_x, eval_y)
    layer = model.layers[layer_idx]
    mat = _layer_matrix(layer)
    if dec is None:
        dec = svd(mat)
    max_r = len(dec.sigma)
    baseline = evaluator(model)
    floor = baseline - threshold

    def ok(r: int) -> bool:
        return evaluator(_replace_with_factor(model, layer_idx, r, dec)) >= floor

    if max_r <= _BRUTE_FORCE_DIM:
        for r in range(1, max_r + 1):
            if ok(r):
                return r
        return max_r

    lo, hi = 1, max_r
    while lo < hi:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid + 1
    while lo < max_r and not ok(lo):
        lo += 1
    return lo


def dynamic_rank_adjust(model: Model, plan: RankPlan, eval_x, eval_y,
                        threshold: float = 0.01, max_iters: int = 10,
                        evaluator=None,
                        svd_cache: dict[int, SvdResult] | None = None
                        ) -> tuple[RankPlan, bool]:
    """Raise ranks until the assembled model is back within `threshold` of
    the unfactorized baseline or max_iters runs out.

    Each round targets the layer with the smallest rank relative to its
    matrix dimension (ties to the lowest layer index) and raises its rank by
    25% (ceil, capped at min(m, n)). Ranks never decrease. Returns the final
    plan and whether the accuracy floor was met.
    """
    if evaluator is None:
        evaluator = lambda m: evaluate(m, eval_x, eval_y)
    if svd_cache is None:
        svd_cache = {}
    baseline = evaluator(model)
    floor = baseline - threshold
    ranks = {e.layer_index: e.rank for e in plan.per_layer}
    dims = {e.layer_index: (e.rows, e.cols) for e in plan.per_layer}

    def meets_floor() -> bool:
        assembled = assemble_factorized(model, build_rank_plan(model, ranks),
                                        svd_cache=svd_cache)
        return evaluator(assembled) >= floor

    met = meets_floor()
    for _ in range(max_iters):
        if met:
            break
        growable = [i for i, r in ranks.items() if r < min(dims[i])]
        if not growable:
            break
        target = min(growable, key=lambda i: (ranks[i] / min(dims[i]), i))
        ranks[target] = min(math.ceil(ranks[target] * 1.25), min(dims[target]))
        met = meets_floor()
    return build_rank_plan(model, ranks), met


def retrain_factorized(model: Model, dataset, cfg: TrainConfig,
                       meter=None) -> TrainOutcome:
    """Train an assembled model; gradients flow to u_fold and v_t directly
    and the parameter count never changes."""
    if not any(l.factor is not None for l in model.layers):
        raise ValueError("model contains no factorized layers")
    return train(model, dataset, cfg, meter=meter)


def plan_report(plan: RankPlan) -> str:
    """Human-readable rank plan: one line per layer plus totals."""
    lines = [f"{'layer':>5}  {'dims':>12}  {'rank':>5}  {'params':>10}  {'factored':>10}"]
    for e in plan.per_layer:
        lines.append(
            f"{e.layer_index:>5}  {e.rows:>5}x{e.cols:<6}  {e.rank:>5}  "
            f"{e.dense_params:>10}  {e.factor_params:>10}"
        )
    mn, mx, mean = plan.rank_stats
    lines.append(f"ranks: min {mn}, max {mx}, mean {mean:.2f}")
    lines.append(f"overall compression: {plan.overall_compression:.4f}")
    return "\n".join(lines)
