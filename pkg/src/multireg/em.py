"""Expectation-Maximization over a mixture of rigid motions.

Each hypothesis is an isotropic Gaussian on the registration residual
``b_i - R_j a_i - t_j`` with its own noise scale; a uniform background
component absorbs outliers. With the distance term enabled a hypothesis only
claims points within ``tau`` of its (responsibility-weighted) centroid in the
source cloud, so spatially separate objects with identical motion stay apart.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateInput, NoValidCluster
from .estimate import Hypothesis, MultiModelEstimate
from .geometry import OUTLIER, CorrespondenceSet, cluster_ids
from .horn import fit_pose

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class EmParams:
    """EM settings.

    tau : gate radius (m) around each hypothesis centroid.
    m_min : smallest cluster that survives pruning.
    t_iters : maximum number of E/M rounds.
    use_distance_term : ``False`` gives the vanilla variant without gating.
    sigma_floor : lower bound on each noise scale (m).
    outlier_density : density of the uniform background component (1/m^3).
    outlier_weight : initial mixing weight of the background component.
    gate_floor : factor applied to gated-out components instead of zero.
    shared_sigma : pool one noise scale over all hypotheses instead of one each.
    prune_redundant : also drop hypotheses whose points another hypothesis
        explains almost as well (see :func:`redundant_hypotheses`).
    redundancy_penalty : log-likelihood (nats) a hypothesis must be worth to
        survive; ``None`` uses half the per-hypothesis parameter count times
        ``log n``.
    final_refit : refit each returned hypothesis on its argmax members with
        unit weights, so poses match the returned labeling.
    """

    tau: float = 1.5
    m_min: int = 4
    t_iters: int = 10
    use_distance_term: bool = True
    sigma_floor: float = 1e-4
    outlier_density: float = 0.01
    outlier_weight: float = 0.1
    gate_floor: float = 1e-12
    shared_sigma: bool = False
    prune_redundant: bool = True
    redundancy_penalty: float | None = None
    final_refit: bool = True

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.m_min < 3:
            raise ValueError("m_min must be at least 3")
        if self.t_iters < 1:
            raise ValueError("t_iters must be at least 1")
        if not self.sigma_floor > 0:
            raise ValueError("sigma_floor must be positive")
        if not self.outlier_density > 0:
            raise ValueError("outlier_density must be positive")
        if not 0 <= self.outlier_weight < 1:
            raise ValueError("outlier_weight must lie in [0, 1)")
        if not 0 < self.gate_floor <= 1:
            raise ValueError("gate_floor must lie in (0, 1]")


def _sq_residuals(corrs, pose):
    diff = corrs.b - corrs.a @ pose.rotation.T - pose.translation
    return np.einsum("ij,ij->i", diff, diff)


def log_gates(corrs: CorrespondenceSet, hypotheses, params: EmParams) -> np.ndarray:
    """``log gate_j(a_i)`` as an ``(n, K)`` array: 0 inside ``tau``, ``log(gate_floor)`` outside."""
    n, k = len(corrs), len(hypotheses)
    out = np.zeros((n, k))
    if not params.use_distance_term:
        return out
    log_floor = np.log(params.gate_floor)
    tau2 = params.tau * params.tau
    for j, h in enumerate(hypotheses):
        d = corrs.a - h.centroid
        out[:, j] = np.where(np.einsum("ij,ij->i", d, d) <= tau2, 0.0, log_floor)
    return out


def _log_joint(corrs, hypotheses, outlier_weight, params, gates):
    """Unnormalised log responsibilities, ``(n, K+1)``."""
    n, k = len(corrs), len(hypotheses)
    lj = np.empty((n, k + 1))
    with np.errstate(divide="ignore"):
        for j, h in enumerate(hypotheses):
            var = h.sigma * h.sigma
            lj[:, j] = (
                np.log(h.weight)
                - 1.5 * (_LOG_2PI + np.log(var))
                - _sq_residuals(corrs, h.pose) / (2.0 * var)
            )
        lj[:, k] = np.log(outlier_weight) + np.log(params.outlier_density)
    lj[:, :k] += gates
    return lj


def _implied_outlier_weight(hypotheses):
    return max(0.0, 1.0 - sum(h.weight for h in hypotheses))


def e_step(corrs: CorrespondenceSet, hypotheses, params: EmParams, outlier_weight=None, gates=None):
    """Posterior membership of every correspondence, shape ``(n, K+1)``.

    The last column is the background component. If ``outlier_weight`` is
    omitted it is whatever mass the hypotheses leave over. Rows whose every
    entry underflows are assigned wholly to the background.
    """
    if outlier_weight is None:
        outlier_weight = _implied_outlier_weight(hypotheses)
    if gates is None:
        gates = log_gates(corrs, hypotheses, params)
    lj = _log_joint(corrs, hypotheses, outlier_weight, params, gates)
    norm = logsumexp(lj, axis=1, keepdims=True)
    dead = ~np.isfinite(norm[:, 0])
    norm[dead] = 0.0
    with np.errstate(invalid="ignore"):
        resp = np.exp(lj - norm)
    resp[dead] = 0.0
    resp[dead, -1] = 1.0
    return resp


def log_likelihood(corrs, hypotheses, params, outlier_weight=None, gates=None) -> float:
    """Mixture log-likelihood of the data; pass ``gates`` to hold them fixed."""
    if outlier_weight is None:
        outlier_weight = _implied_outlier_weight(hypotheses)
    if gates is None:
        gates = log_gates(corrs, hypotheses, params)
    lj = _log_joint(corrs, hypotheses, outlier_weight, params, gates)
    return float(logsumexp(lj, axis=1).sum())


def _fit_component(corrs, w, params):
    total = w.sum()
    try:
        pose = fit_pose(corrs.a, corrs.b, w)
    except DegenerateInput:
        return None
    var = (w * _sq_residuals(corrs, pose)).sum() / (3.0 * total)
    sigma = max(params.sigma_floor, float(np.sqrt(var)))
    centroid = (w[:, None] * corrs.a).sum(axis=0) / total
    return Hypothesis(pose, sigma, float(total / len(corrs)), centroid)


def _m_step_raw(corrs, resp, params):
    out = []
    for j in range(resp.shape[1] - 1):
        w = resp[:, j]
        if w.sum() < params.m_min:
            out.append(None)
        else:
            out.append(_fit_component(corrs, w, params))
    if params.shared_sigma:
        num = den = 0.0
        for j, h in enumerate(out):
            if h is not None:
                w = resp[:, j]
                num += (w * _sq_residuals(corrs, h.pose)).sum()
                den += 3.0 * w.sum()
        if den > 0:
            sigma = max(params.sigma_floor, float(np.sqrt(num / den)))
            out = [None if h is None else Hypothesis(h.pose, sigma, h.weight, h.centroid) for h in out]
    return out


def m_step(corrs: CorrespondenceSet, resp: np.ndarray, params: EmParams) -> list[Hypothesis]:
    """Weighted refit of every hypothesis from the responsibilities.

    Columns whose total responsibility is below ``m_min``, or whose weighted
    members are collinear, are dropped. Noise scales use the refitted poses.
    """
    return [h for h in _m_step_raw(corrs, resp, params) if h is not None]


def _log_component(corrs, h, params):
    """``log pi + log N(residual; 0, sigma^2 I) + log gate`` for one hypothesis."""
    var = h.sigma * h.sigma
    out = np.log(h.weight) - 1.5 * (_LOG_2PI + np.log(var)) - _sq_residuals(corrs, h.pose) / (2.0 * var)
    if params.use_distance_term:
        d = corrs.a - h.centroid
        out = out + np.where(np.einsum("ij,ij->i", d, d) <= params.tau * params.tau, 0.0,
                             np.log(params.gate_floor))
    return out


def redundant_hypotheses(corrs, hypotheses, resp, log_norm, params, penalty, eligible=None) -> list[int]:
    """Indices of hypotheses whose removal costs less than ``penalty`` nats.

    Hypothesis ``j`` is merged into the hypothesis ``k`` holding most of the
    rest of ``j``'s argmax members: ``k`` is refitted on ``r_j + r_k`` and
    point ``i``'s likelihood changes by the factor
    ``1 - r_ij - r_ik + p'_ik / p_i``, with ``p_i`` the current mixture
    density (``exp(log_norm)``) and ``p'_ik`` the refitted component's joint
    density. Only ``eligible`` hypotheses (default: all) are removed or used
    as heirs; responsibilities are renormalised over them and the background.
    Candidates are visited lightest first and an heir is never removed in the
    same pass.
    """
    k_all = resp.shape[1] - 1
    eligible = np.ones(k_all, dtype=bool) if eligible is None else np.asarray(eligible, dtype=bool)
    if eligible.sum() < 2:
        return []
    cols = np.append(eligible, True)
    resp = np.where(cols, resp, 0.0)
    total = resp.sum(axis=1, keepdims=True)
    resp = np.divide(resp, total, out=np.zeros_like(resp), where=total > 0)
    with np.errstate(divide="ignore"):
        log_norm = log_norm + np.log(total[:, 0])
    hyp = resp[:, :k_all]
    lab = np.argmax(resp, axis=1)
    weights = np.array([h.weight for h in hypotheses])
    dropped, heirs = [], set()
    for j in sorted(np.flatnonzero(eligible), key=lambda j: (weights[j], j)):
        if j in heirs:
            continue
        share = hyp[lab == j].sum(axis=0)
        share[~eligible] = -1.0
        share[j] = -1.0
        share[dropped] = -1.0
        k = int(np.argmax(share))
        if share[k] <= 0:
            continue
        w = hyp[:, j] + hyp[:, k]
        merged = _fit_component(corrs, w, params)
        if merged is None:
            continue
        merged = Hypothesis(merged.pose, merged.sigma, float(weights[j] + weights[k]), merged.centroid)
        with np.errstate(over="ignore", invalid="ignore"):
            gain = np.exp(_log_component(corrs, merged, params) - log_norm)
            factor = np.clip(1.0 - hyp[:, j] - hyp[:, k], 0.0, None) + np.nan_to_num(gain)
        with np.errstate(divide="ignore"):
            cost = -float(np.log(factor).sum())
        if cost < penalty:
            dropped.append(int(j))
            heirs.add(k)
    return sorted(dropped)


def _default_penalty(n, params):
    # 6 pose parameters, the mixing weight and (unless pooled) a noise scale
    dof = 7 if params.shared_sigma else 8
    return 0.5 * dof * np.log(max(n, 2))


def _one_hot(labels, ids):
    n, k = len(labels), len(ids)
    resp = np.zeros((n, k + 1))
    col = np.full(n, k)
    pos = np.searchsorted(ids, labels)
    member = labels != OUTLIER
    col[member] = pos[member]
    resp[np.arange(n), col] = 1.0
    return resp


def _renormalise(hypotheses, outlier_weight):
    total = sum(h.weight for h in hypotheses) + outlier_weight
    if total <= 0:
        return hypotheses, outlier_weight
    return (
        [Hypothesis(h.pose, h.sigma, h.weight / total, h.centroid) for h in hypotheses],
        outlier_weight / total,
    )


def _argmax_labels(resp):
    k = resp.shape[1] - 1
    lab = np.argmax(resp, axis=1)
    return np.where(lab == k, OUTLIER, lab)


def solve_em(corrs: CorrespondenceSet, init, params: EmParams = EmParams(), seed: int = 0) -> MultiModelEstimate:
    """Segment correspondences into rigid motions starting from ``init``.

    Every initial cluster of at least ``m_min`` points seeds one hypothesis.
    E and M steps then alternate for at most ``params.t_iters`` rounds,
    stopping early once the hard assignment stops changing. After each round
    hypotheses that win fewer than ``m_min`` points are removed; their points
    are redistributed by the following E-step. With ``prune_redundant`` a
    hypothesis is also removed when another one explains its points nearly as
    well, which is what lets duplicated fragments of one object collapse.

    The procedure is deterministic; ``seed`` is accepted for interface parity
    with the randomised baselines and does not affect the result.

    With ``final_refit`` the returned poses and noise scales are refitted on
    the hard members; the labels are those of the last E-step.

    ``trace`` on the returned estimate holds one dict per round with the
    log-likelihood before and after the M-step, both evaluated with the gates
    of that round's E-step.
    """
    del seed
    init = np.asarray(init, dtype=np.int64).reshape(-1)
    n = len(corrs)
    if n == 0:
        raise ValueError("empty correspondence set")
    if len(init) != n:
        raise ValueError(f"init labeling has {len(init)} entries for {n} correspondences")

    ids = cluster_ids(init)
    resp0 = _one_hot(init, ids)
    hyps = m_step(corrs, resp0, params)
    if not hyps:
        raise NoValidCluster("no initial cluster admits a pose fit")
    mass = sum(h.weight for h in hyps)
    hyps = [
        Hypothesis(h.pose, h.sigma, (1.0 - params.outlier_weight) * h.weight / mass, h.centroid)
        for h in hyps
    ]
    pi_out = params.outlier_weight
    penalty = params.redundancy_penalty
    if penalty is None:
        penalty = _default_penalty(n, params)
    # stable identities so label changes can be compared across pruning
    keys = list(range(len(hyps)))

    trace = []
    prev = None
    rounds = 0
    for _ in range(params.t_iters):
        gates = log_gates(corrs, hyps, params)
        resp = e_step(corrs, hyps, params, pi_out, gates)
        labels = _argmax_labels(resp)
        keyed = np.asarray(keys + [OUTLIER])[labels]
        if prev is not None and np.array_equal(keyed, prev):
            break
        prev = keyed
        rounds += 1

        ll_before = log_likelihood(corrs, hyps, params, pi_out, gates)
        raw = _m_step_raw(corrs, resp, params)
        new_pi_out = float(resp[:, -1].sum() / n)
        # dropped columns keep their old parameters for the likelihood check
        full = [
            r if r is not None else Hypothesis(h.pose, h.sigma, float(resp[:, j].sum() / n), h.centroid)
            for j, (r, h) in enumerate(zip(raw, hyps))
        ]
        ll_after = log_likelihood(corrs, full, params, new_pi_out, gates)
        trace.append({"ll_before": ll_before, "ll_after": ll_after, "clusters": len(hyps)})

        counts = np.bincount(labels[labels != OUTLIER], minlength=len(hyps))
        alive = np.array([r is not None for r in raw]) & (counts >= params.m_min)
        if params.prune_redundant:
            log_norm = logsumexp(_log_joint(corrs, hyps, pi_out, params, gates), axis=1)
            alive[redundant_hypotheses(corrs, hyps, resp, log_norm, params, penalty, alive)] = False
        keep = np.flatnonzero(alive).tolist()
        hyps, pi_out = _renormalise([raw[j] for j in keep], new_pi_out)
        keys = [keys[j] for j in keep]
        if not hyps:
            break

    # final assignment; prune until every hypothesis owns m_min points
    while True:
        if not hyps:
            labels = np.full(n, OUTLIER, dtype=np.int64)
            break
        resp = e_step(corrs, hyps, params, pi_out)
        labels = _argmax_labels(resp)
        counts = np.bincount(labels[labels != OUTLIER], minlength=len(hyps))
        small = counts < params.m_min
        if not small.any():
            break
        hyps, pi_out = _renormalise([h for h, s in zip(hyps, small) if not s], pi_out)

    if params.final_refit and hyps:
        raw = _m_step_raw(corrs, _one_hot(labels, np.arange(len(hyps))), params)
        hyps = [r if r is not None else h for r, h in zip(raw, hyps)]
        hyps, _ = _renormalise(hyps, float(np.mean(labels == OUTLIER)))

    return MultiModelEstimate(hyps, labels.astype(np.int64), rounds, trace)
