"""Mini-batch SGD training loop with per-positive negative sampling."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from noisyrec.corpus import InteractionTable, SplitDataset
from noisyrec.model import InitSpec, NoiseParams, PreferenceParams, init_params
from noisyrec.objective import (
    RegSpec,
    log_sigmoid,
    sigmoid,
    surrogate_coefficients_vec,
)


class Optimizer(str, enum.Enum):
    BPR = "BPR"
    WBPR = "WBPR"
    BPO = "BPO"
    NBPO_O = "NBPO_O"
    NBPO_S = "NBPO_S"
    NBPO_SS = "NBPO_SS"


PAIRWISE = (Optimizer.BPR, Optimizer.WBPR)
NOISE_AWARE = (Optimizer.NBPO_O, Optimizer.NBPO_S, Optimizer.NBPO_SS)


@dataclass
class TrainConfig:
    optimizer: Optimizer = Optimizer.NBPO_SS
    eta: float = 0.01
    lambda_theta: float = 0.0
    lambda_phi: float = 0.0
    rho: int = 1
    batch_size: int = 1000
    K: int = 10
    L: int = 0  # ignored for BPR/WBPR/BPO
    max_epochs: int = 200
    seed: int = 0
    balance_positives: bool = False
    patience: Optional[int] = None
    init_scale: float = 0.01

    def __post_init__(self):
        self.optimizer = Optimizer(self.optimizer)
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.rho < 1 or self.batch_size < 1:
            raise ValueError("rho and batch_size must be >= 1")

    @property
    def reg(self) -> RegSpec:
        return RegSpec(self.lambda_theta, self.lambda_phi)

    @property
    def effective_L(self) -> int:
        return self.L if self.optimizer in NOISE_AWARE else 0


@dataclass
class Batch:
    """Positives plus rho freshly sampled negatives per positive (grouped)."""

    pos_u: np.ndarray
    pos_i: np.ndarray
    neg_u: np.ndarray  # pos_u repeated rho times
    neg_j: np.ndarray

    @property
    def rho(self) -> int:
        return len(self.neg_u) // max(len(self.pos_u), 1)


@dataclass
class EpochRecord:
    epoch: int
    objective: float
    report: "MetricReport"  # noqa: F821 - evaluation.MetricReport


@dataclass
class TrainHistory:
    config: TrainConfig
    epochs: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_theta: Optional[PreferenceParams] = None
    best_phi: Optional[NoiseParams] = None

    def best_f1_at_2(self) -> float:
        if self.best_epoch < 0:
            return 0.0
        return self.epochs[self.best_epoch].report.f1[2]

    def to_csv_lines(self, ks=(2, 5, 10, 20)) -> List[str]:
        header = (
            "epoch,objective,"
            + ",".join(f"f1@{k}" for k in ks)
            + ","
            + ",".join(f"ndcg@{k}" for k in ks)
        )
        lines = [header]
        for rec in self.epochs:
            vals = [str(rec.epoch), f"{rec.objective:.10g}"]
            vals += [f"{rec.report.f1[k]:.10g}" for k in ks]
            vals += [f"{rec.report.ndcg[k]:.10g}" for k in ks]
            lines.append(",".join(vals))
        return lines


# ---------------------------------------------------------------------------
# negative sampling


def _check_samplable(train: InteractionTable, u: int):
    if len(train.per_user[u]) >= train.N:
        raise ValueError(f"user {u} has no unvoted items to sample")


def sample_negatives(train: InteractionTable, u: int, rho: int, rng) -> list:
    """rho independent uniform draws from user u's unvoted items."""
    _check_samplable(train, u)
    voted = set(train.per_user[u])
    out = []
    while len(out) < rho:
        j = int(rng.integers(0, train.N))
        if j not in voted:
            out.append(j)
    return out


def sample_negatives_wbpr(train: InteractionTable, u: int, rho: int, popularity, rng) -> list:
    """rho draws with probability proportional to item popularity among unvoted items."""
    _check_samplable(train, u)
    p = np.asarray(popularity, dtype=float).copy()
    p[train.per_user[u]] = 0.0
    total = p.sum()
    if total <= 0:
        # all unvoted items have zero popularity: fall back to uniform
        voted = set(train.per_user[u])
        candidates = np.array([j for j in range(train.N) if j not in voted])
        return rng.choice(candidates, size=rho, replace=True).tolist()
    return rng.choice(train.N, size=rho, replace=True, p=p / total).tolist()


class _BatchSampler:
    """Vectorized negative sampling against an encoded train-positive set."""

    def __init__(self, train: InteractionTable, popularity=None):
        self.train = train
        self.N = train.N
        codes = np.fromiter(
            (u * train.N + i for u, i in train.positives), dtype=np.int64, count=len(train.positives)
        )
        self.codes = np.sort(codes)
        if popularity is not None:
            p = np.asarray(popularity, dtype=float)
            self.pop = p / p.sum()
        else:
            self.pop = None

    def _is_positive(self, users, items):
        q = users.astype(np.int64) * self.N + items
        idx = np.searchsorted(self.codes, q)
        idx = np.minimum(idx, len(self.codes) - 1)
        return self.codes[idx] == q

    def _draw(self, count, rng):
        if self.pop is None:
            return rng.integers(0, self.N, size=count)
        return rng.choice(self.N, size=count, replace=True, p=self.pop)

    def sample(self, users: np.ndarray, rho: int, rng) -> np.ndarray:
        for u in np.unique(users):
            _check_samplable(self.train, int(u))
        neg_u = np.repeat(users, rho)
        neg_j = self._draw(len(neg_u), rng)
        bad = self._is_positive(neg_u, neg_j)
        while bad.any():
            neg_j[bad] = self._draw(int(bad.sum()), rng)
            bad[bad] = self._is_positive(neg_u[bad], neg_j[bad])
        return neg_j


# ---------------------------------------------------------------------------
# per-variant gradient coefficients (scalar multipliers of the embedding rows)


def _point_coefficients(optimizer: Optimizer, r_pos, g_pos, r_neg, g_neg):
    """(c_theta_pos, c_phi_pos, c_theta_neg, c_phi_neg) for point-wise variants."""
    if optimizer == Optimizer.BPO:
        return sigmoid(-r_pos), None, -sigmoid(r_neg), None
    if optimizer == Optimizer.NBPO_O:
        ct_pos = sigmoid(-r_pos)
        cp_pos = -sigmoid(g_pos)
        mix = sigmoid(-r_neg) + sigmoid(g_neg) * sigmoid(r_neg)
        ct_neg = -sigmoid(r_neg) * sigmoid(-r_neg) * sigmoid(-g_neg) / mix
        cp_neg = sigmoid(g_neg) * sigmoid(-g_neg) * sigmoid(r_neg) / mix
        return ct_pos, cp_pos, ct_neg, cp_neg
    if optimizer == Optimizer.NBPO_S:
        ct_pos = sigmoid(-g_pos) * sigmoid(r_pos) * sigmoid(-r_pos)
        cp_pos = -sigmoid(g_pos) * sigmoid(-g_pos) * sigmoid(r_pos)
        ct_neg = -sigmoid(r_neg) * sigmoid(-r_neg) * sigmoid(-g_neg)
        cp_neg = sigmoid(g_neg) * sigmoid(-g_neg) * sigmoid(r_neg)
        return ct_pos, cp_pos, ct_neg, cp_neg
    if optimizer == Optimizer.NBPO_SS:
        ct_pos, cp_pos = surrogate_coefficients_vec(np.ones_like(r_pos), r_pos, g_pos)
        ct_neg, cp_neg = surrogate_coefficients_vec(np.zeros_like(r_neg), r_neg, g_neg)
        return ct_pos, cp_pos, ct_neg, cp_neg
    raise ValueError(f"{optimizer} is not a point-wise optimizer")


def _dots(A, rows_a, B, rows_b):
    return np.einsum("ij,ij->i", A[rows_a], B[rows_b])


def _apply_sparse(mat, rows, grad_rows, eta, lam, touched):
    """mat[rows] += eta * grad (scattered); touched rows decay by eta * lam.

    `touched` must be sorted unique; rows outside it stay bit-identical.
    """
    acc = np.zeros((len(touched), mat.shape[1]))
    for r, g in zip(rows, grad_rows):
        np.add.at(acc, np.searchsorted(touched, r), g)
    if lam > 0:
        acc -= lam * mat[touched]
    mat[touched] += eta * acc


def point_step(theta: PreferenceParams, phi: Optional[NoiseParams], batch: Batch, config: TrainConfig):
    """One SGD ascent step for BPO / NBPO variants; mutates theta (and phi) in place."""
    U, V = theta.U, theta.V
    has_phi = phi is not None and phi.L > 0
    r_pos = _dots(U, batch.pos_u, V, batch.pos_i)
    r_neg = _dots(U, batch.neg_u, V, batch.neg_j)
    if has_phi:
        g_pos = _dots(phi.P, batch.pos_u, phi.Q, batch.pos_i)
        g_neg = _dots(phi.P, batch.neg_u, phi.Q, batch.neg_j)
    else:
        g_pos = np.zeros_like(r_pos)
        g_neg = np.zeros_like(r_neg)

    ct_pos, cp_pos, ct_neg, cp_neg = _point_coefficients(
        config.optimizer, r_pos, g_pos, r_neg, g_neg
    )
    if config.balance_positives:
        ct_pos = ct_pos * config.rho
        if cp_pos is not None:
            cp_pos = cp_pos * config.rho

    touched_u = np.unique(np.concatenate([batch.pos_u, batch.neg_u]))
    touched_i = np.unique(np.concatenate([batch.pos_i, batch.neg_j]))

    # gradients read pre-step rows; V update uses pre-step U and vice versa
    dU_pos = ct_pos[:, None] * V[batch.pos_i]
    dU_neg = ct_neg[:, None] * V[batch.neg_j]
    dV_pos = ct_pos[:, None] * U[batch.pos_u]
    dV_neg = ct_neg[:, None] * U[batch.neg_u]
    if has_phi and cp_pos is not None:
        dP_pos = cp_pos[:, None] * phi.Q[batch.pos_i]
        dP_neg = cp_neg[:, None] * phi.Q[batch.neg_j]
        dQ_pos = cp_pos[:, None] * phi.P[batch.pos_u]
        dQ_neg = cp_neg[:, None] * phi.P[batch.neg_u]

    _apply_sparse(U, (batch.pos_u, batch.neg_u), (dU_pos, dU_neg), config.eta, config.lambda_theta, touched_u)
    _apply_sparse(V, (batch.pos_i, batch.neg_j), (dV_pos, dV_neg), config.eta, config.lambda_theta, touched_i)
    if has_phi and cp_pos is not None:
        _apply_sparse(phi.P, (batch.pos_u, batch.neg_u), (dP_pos, dP_neg), config.eta, config.lambda_phi, touched_u)
        _apply_sparse(phi.Q, (batch.pos_i, batch.neg_j), (dQ_pos, dQ_neg), config.eta, config.lambda_phi, touched_i)
    return theta, phi


def pairwise_step(theta: PreferenceParams, batch: Batch, config: TrainConfig):
    """One BPR-style step: ascend ln sigma(r_ui - r_uj) per (positive, negative) pair."""
    U, V = theta.U, theta.V
    rho = batch.rho
    pu = np.repeat(batch.pos_u, rho)
    pi = np.repeat(batch.pos_i, rho)
    x = _dots(U, pu, V, pi) - _dots(U, batch.neg_u, V, batch.neg_j)
    c = sigmoid(-x)

    touched_u = np.unique(pu)
    touched_i = np.unique(np.concatenate([pi, batch.neg_j]))

    dU = c[:, None] * (V[pi] - V[batch.neg_j])
    dVi = c[:, None] * U[pu]
    dVj = -c[:, None] * U[pu]

    _apply_sparse(U, (pu,), (dU,), config.eta, config.lambda_theta, touched_u)
    _apply_sparse(V, (pi, batch.neg_j), (dVi, dVj), config.eta, config.lambda_theta, touched_i)
    return theta


# spec-facing step aliases ---------------------------------------------------


def bpr_step(theta, batch, config):
    return pairwise_step(theta, batch, config)


def bpo_step(theta, batch, config):
    return point_step(theta, None, batch, config)[0]


def nbpo_step_ss(theta, phi, batch, config):
    return point_step(theta, phi, batch, config)


def nbpo_step_o(theta, phi, batch, config):
    return point_step(theta, phi, batch, config)


def nbpo_step_s(theta, phi, batch, config):
    return point_step(theta, phi, batch, config)


# ---------------------------------------------------------------------------
# dense gradients of the full objectives (finite-difference reference targets)


def dense_gradient(optimizer: Optimizer, terms, theta: PreferenceParams, phi: NoiseParams, reg: RegSpec):
    """Exact dense gradient (dU, dV, dP, dQ) of the variant's objective over `terms`.

    Includes the full-matrix regularizer gradient, so the result matches
    central finite differences of the corresponding objective function.
    For NBPO_SS this is the surrogate direction, not a true gradient.
    """
    labels = np.array([t.label for t in terms])
    users = np.array([t.u for t in terms])
    items = np.array([t.i for t in terms])
    r = np.array([t.score for t in terms], dtype=float)
    g = np.array([t.noise_logit for t in terms], dtype=float)

    pos = labels == 1
    ct = np.empty_like(r)
    cp = np.empty_like(r)
    ct_pos, cp_pos, ct_neg, cp_neg = _point_coefficients(optimizer, r[pos], g[pos], r[~pos], g[~pos])
    ct[pos], ct[~pos] = ct_pos, ct_neg
    if cp_pos is not None:
        cp[pos], cp[~pos] = cp_pos, cp_neg
    else:
        cp[:] = 0.0

    dU = np.zeros_like(theta.U)
    dV = np.zeros_like(theta.V)
    np.add.at(dU, users, ct[:, None] * theta.V[items])
    np.add.at(dV, items, ct[:, None] * theta.U[users])
    dU -= reg.lambda_theta * theta.U
    dV -= reg.lambda_theta * theta.V

    dP = np.zeros_like(phi.P)
    dQ = np.zeros_like(phi.Q)
    if phi.L > 0 and optimizer != Optimizer.BPO:
        np.add.at(dP, users, cp[:, None] * phi.Q[items])
        np.add.at(dQ, items, cp[:, None] * phi.P[users])
    if optimizer != Optimizer.BPO:
        dP -= reg.lambda_phi * phi.P
        dQ -= reg.lambda_phi * phi.Q
    return dU, dV, dP, dQ


# ---------------------------------------------------------------------------
# training loop


def _batch_objective(optimizer: Optimizer, r_pos, g_pos, r_neg, g_neg) -> float:
    """Unregularized objective value of the sampled terms (monitoring only)."""
    if optimizer in PAIRWISE:
        rho = len(r_neg) // max(len(r_pos), 1)
        return float(np.sum(log_sigmoid(np.repeat(r_pos, rho) - r_neg)))
    if optimizer == Optimizer.BPO:
        return float(np.sum(log_sigmoid(r_pos)) + np.sum(log_sigmoid(-r_neg)))
    if optimizer == Optimizer.NBPO_O:
        pos = np.sum(log_sigmoid(-g_pos) + log_sigmoid(r_pos))
        neg = np.sum(np.log(sigmoid(-r_neg) + sigmoid(g_neg) * sigmoid(r_neg)))
        return float(pos + neg)
    # surrogate variants: raw probabilities
    pos = np.sum(sigmoid(-g_pos) * sigmoid(r_pos))
    neg = np.sum(sigmoid(-r_neg) + sigmoid(g_neg) * sigmoid(r_neg))
    return float(pos + neg)


def train(
    dataset: SplitDataset,
    config: TrainConfig,
    evaluator: Optional[Callable] = None,
    eval_ks=(2, 5, 10, 20),
    exclude_train: bool = True,
) -> TrainHistory:
    """Run SGD for max_epochs, evaluating on validation after each epoch.

    Each epoch shuffles the train positives, cuts them into batches, attaches
    rho fresh negatives per positive, and applies the configured step. The
    best snapshot is selected by validation F1@2.
    """
    from noisyrec.evaluation import evaluate, mf_scorer

    train_table = dataset.train
    if len(train_table) == 0:
        raise ValueError("empty train set")

    theta, phi = init_params(
        train_table.M, train_table.N, config.K, config.effective_L,
        InitSpec(seed=config.seed, scale=config.init_scale),
    )
    rng = np.random.default_rng(config.seed + 1_000_003)

    popularity = train_table.item_degrees().astype(float) if config.optimizer == Optimizer.WBPR else None
    sampler = _BatchSampler(train_table, popularity)

    if evaluator is None:
        def evaluator(th):
            return evaluate(
                mf_scorer(th), dataset.validation, train_table,
                ks=eval_ks, exclude_train=exclude_train,
            )

    positives = np.array(train_table.sorted_pairs(), dtype=np.int64)
    history = TrainHistory(config=config)
    best_f1 = -1.0
    stale = 0

    for epoch in range(config.max_epochs):
        perm = rng.permutation(len(positives))
        shuffled = positives[perm]
        objective = 0.0
        for start in range(0, len(shuffled), config.batch_size):
            chunk = shuffled[start : start + config.batch_size]
            pos_u = chunk[:, 0]
            pos_i = chunk[:, 1]
            neg_j = sampler.sample(pos_u, config.rho, rng)
            batch = Batch(pos_u, pos_i, np.repeat(pos_u, config.rho), neg_j)

            r_pos = _dots(theta.U, batch.pos_u, theta.V, batch.pos_i)
            r_neg = _dots(theta.U, batch.neg_u, theta.V, batch.neg_j)
            if phi.L > 0:
                g_pos = _dots(phi.P, batch.pos_u, phi.Q, batch.pos_i)
                g_neg = _dots(phi.P, batch.neg_u, phi.Q, batch.neg_j)
            else:
                g_pos = np.zeros_like(r_pos)
                g_neg = np.zeros_like(r_neg)
            objective += _batch_objective(config.optimizer, r_pos, g_pos, r_neg, g_neg)

            if config.optimizer in PAIRWISE:
                pairwise_step(theta, batch, config)
            else:
                point_step(theta, phi, batch, config)

        report = evaluator(theta)
        history.epochs.append(EpochRecord(epoch=epoch, objective=objective, report=report))
        if report.f1[2] > best_f1:
            best_f1 = report.f1[2]
            history.best_epoch = epoch
            history.best_theta = theta.copy()
            history.best_phi = phi.copy()
            stale = 0
        else:
            stale += 1
            if config.patience is not None and stale > config.patience:
                break
    return history
