"""Federated-learning harness: local training, ideal vs over-the-air aggregation, baselines
and the error-driven convergence bound.

Seeds: trial ``k`` of a scenario with seed ``s`` draws its data split from
``SeedSequence([s, k])``; round ``t`` uses ``noise_seed(s, k, t)`` for the
channel and ``[s, k, t, m]`` for device ``m``'s mini-batches. All schemes in
a trial see the same data, mini-batches and channel noise.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import optimizer
from .airphy import aggregate_over_the_air, normalize_gradients
from .geometry import Trajectory, gain_matrix, hovering, static_gain_matrix, write_trajectory_csv
from .mse import estimate_correlation, mse, optimal_zeta, psd_repair, weighted_stds
from .scenario import Scenario, barycenter

log = logging.getLogger(__name__)

SCHEMES = ("error-free", "static-ps", "circular", "optimized")


# ----------------------------------------------------------------- models


class LeastSquares:
    """Sample loss 0.5 (x^T w - y)^2 + 0.5 reg |w|^2."""

    def __init__(self, n_features: int, reg: float):
        self.dim = n_features
        self.reg = reg

    def loss_grad(self, w, X, y):
        r = X @ w - y
        loss = 0.5 * np.mean(r * r) + 0.5 * self.reg * w @ w
        return loss, X.T @ r / X.shape[0] + self.reg * w

    def hessian(self, X):
        return X.T @ X / X.shape[0] + self.reg * np.eye(self.dim)

    def predict(self, w, X):
        return X @ w


class SoftmaxRegression:
    """Multinomial logistic regression with a bias row; parameters flattened row-major."""

    def __init__(self, n_features: int, n_classes: int, reg: float):
        self.n_features = n_features
        self.n_classes = n_classes
        self.dim = (n_features + 1) * n_classes
        self.reg = reg

    def _logits(self, w, X):
        W = w.reshape(self.n_features + 1, self.n_classes)
        return X @ W[:-1] + W[-1]

    def loss_grad(self, w, X, y):
        logits = self._logits(w, X)
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        n = X.shape[0]
        loss = -np.mean(np.log(p[np.arange(n), y] + 1e-300)) + 0.5 * self.reg * w @ w
        p[np.arange(n), y] -= 1.0
        p /= n
        grad = np.vstack([X.T @ p, p.sum(axis=0)]).ravel()
        return loss, grad + self.reg * w

    def predict(self, w, X):
        return np.argmax(self._logits(w, X), axis=1)


class TinyMLP:
    """One tanh hidden layer followed by a softmax output."""

    def __init__(self, n_features: int, hidden: int, n_classes: int, reg: float):
        self.shapes = [(n_features, hidden), (hidden,), (hidden, n_classes), (n_classes,)]
        self.sizes = [int(np.prod(s)) for s in self.shapes]
        self.dim = sum(self.sizes)
        self.reg = reg

    def unpack(self, w):
        out, k = [], 0
        for shape, size in zip(self.shapes, self.sizes):
            out.append(w[k : k + size].reshape(shape))
            k += size
        return out

    def init(self, rng):
        W1, b1, W2, b2 = (np.zeros(s) for s in self.shapes)
        W1 = rng.normal(0.0, 1.0 / math.sqrt(self.shapes[0][0]), self.shapes[0])
        W2 = rng.normal(0.0, 1.0 / math.sqrt(self.shapes[2][0]), self.shapes[2])
        return np.concatenate([a.ravel() for a in (W1, b1, W2, b2)])

    def loss_grad(self, w, X, y):
        W1, b1, W2, b2 = self.unpack(w)
        h = np.tanh(X @ W1 + b1)
        logits = h @ W2 + b2
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        n = X.shape[0]
        loss = -np.mean(np.log(p[np.arange(n), y] + 1e-300)) + 0.5 * self.reg * w @ w
        p[np.arange(n), y] -= 1.0
        p /= n
        gW2 = h.T @ p
        gb2 = p.sum(axis=0)
        dh = (p @ W2.T) * (1.0 - h * h)
        gW1 = X.T @ dh
        gb1 = dh.sum(axis=0)
        grad = np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])
        return loss, grad + self.reg * w

    def predict(self, w, X):
        W1, b1, W2, b2 = self.unpack(w)
        return np.argmax(np.tanh(X @ W1 + b1) @ W2 + b2, axis=1)


# ------------------------------------------------------------------ data


def load_dataset(name: str, rng: np.random.Generator, n_samples: int = 2000, n_features: int = 20):
    """(X_train, y_train, X_test, y_test, n_classes); ``y`` is real for regression."""
    if name == "digits":
        from sklearn.datasets import load_digits

        X, y = load_digits(return_X_y=True)
        X = X / 16.0
        n_classes = 10
    elif name == "gaussian-mixture":
        n_classes = 10
        means = rng.normal(0.0, 1.0, (n_classes, n_features))
        y = rng.integers(0, n_classes, n_samples)
        X = means[y] + rng.normal(0.0, 1.5, (n_samples, n_features))
    elif name == "regression":
        n_classes = 0
        scales = np.linspace(0.5, 2.0, n_features)
        X = rng.normal(size=(n_samples, n_features)) * scales
        w_true = rng.normal(size=n_features)
        y = X @ w_true + 0.5 * rng.normal(size=n_samples)
    else:
        raise ValueError(f"unknown dataset {name!r}")
    order = rng.permutation(len(y))
    n_test = len(y) // 5
    test, train = order[:n_test], order[n_test:]
    return X[train], y[train], X[test], y[test], n_classes


def partition_iid(n_samples: int, n_devices: int, rng) -> list[np.ndarray]:
    return [np.sort(part) for part in np.array_split(rng.permutation(n_samples), n_devices)]


def partition_label_skew(labels, n_devices: int, classes_per_device: int, rng) -> list[np.ndarray]:
    """Each device picks ``classes_per_device`` classes and takes an equal quota from each."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if not 1 <= classes_per_device <= classes.size:
        raise ValueError(f"classes_per_device must be in [1, {classes.size}]")
    quota = max(1, len(labels) // (classes_per_device * n_devices))
    pools = {c: list(rng.permutation(np.flatnonzero(labels == c))) for c in classes}
    cursor = {c: 0 for c in classes}
    parts = []
    for _ in range(n_devices):
        picked = rng.choice(classes, size=classes_per_device, replace=False)
        idx = []
        for c in np.sort(picked):
            pool = pools[c]
            for _ in range(quota):
                if cursor[c] == len(pool):  # class exhausted: reuse in a fresh order
                    pools[c] = pool = list(rng.permutation(pool))
                    cursor[c] = 0
                idx.append(pool[cursor[c]])
                cursor[c] += 1
        parts.append(np.sort(np.array(idx)))
    return parts


# ------------------------------------------------------------------ tasks


@dataclass
class LearningConfig:
    task: str = "logistic"
    dataset: str = "digits"
    partition: str = "iid"
    classes_per_device: int = 5
    lr: float = 0.05
    momentum: float = 0.5
    local_steps: int = 5
    batch_size: int | None = 16
    rounds: int = 100
    reg: float = 1e-4
    mode: str = "local-sgd"
    hidden: int = 16
    n_samples: int = 2000
    n_features: int = 20

    @classmethod
    def from_dict(cls, raw: dict | None) -> "LearningConfig":
        raw = dict(raw or {})
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"learning: unknown keys {sorted(unknown)}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def validate(self):
        if self.task not in ("quadratic", "logistic", "mlp"):
            raise ValueError(f"learning.task: unknown task {self.task!r}")
        if self.partition not in ("iid", "label-skew"):
            raise ValueError(f"learning.partition: unknown partition {self.partition!r}")
        if self.mode not in ("gradient", "local-sgd"):
            raise ValueError(f"learning.mode: unknown mode {self.mode!r}")
        if not self.lr > 0:
            raise ValueError("learning.lr: must be positive")
        if self.rounds < 1:
            raise ValueError("learning.rounds: must be >= 1")
        if self.local_steps < 1:
            raise ValueError("learning.local_steps: must be >= 1")


@dataclass
class LearningTask:
    model: object
    parts: list[tuple[np.ndarray, np.ndarray]]
    test: tuple[np.ndarray, np.ndarray]
    config: LearningConfig
    w0: np.ndarray

    @property
    def dim(self) -> int:
        return self.model.dim

    @property
    def weights(self) -> np.ndarray:
        sizes = np.array([len(y) for _, y in self.parts], dtype=float)
        return sizes / sizes.sum()

    def global_loss(self, w) -> float:
        return float(sum(b * self.model.loss_grad(w, X, y)[0] for b, (X, y) in zip(self.weights, self.parts)))

    def global_gradient(self, w) -> np.ndarray:
        return sum(b * self.model.loss_grad(w, X, y)[1] for b, (X, y) in zip(self.weights, self.parts))

    def accuracy(self, w) -> float:
        X, y = self.test
        if isinstance(self.model, LeastSquares):
            return math.nan
        return float(np.mean(self.model.predict(w, X) == y))

    def curvature(self) -> tuple[float, float]:
        """(mu, omega): extreme Hessian eigenvalues of the global loss (quadratic task only)."""
        if not isinstance(self.model, LeastSquares):
            raise ValueError("curvature constants are only exact for the quadratic task")
        H = sum(b * self.model.hessian(X) for b, (X, _) in zip(self.weights, self.parts))
        lam = np.linalg.eigvalsh(H)
        return float(lam[0]), float(lam[-1])

    def optimum(self) -> tuple[np.ndarray, float]:
        """Minimizer and minimum of the global loss (quadratic task only)."""
        if not isinstance(self.model, LeastSquares):
            raise ValueError("closed-form optimum only for the quadratic task")
        H = sum(b * self.model.hessian(X) for b, (X, _) in zip(self.weights, self.parts))
        rhs = sum(b * X.T @ y / len(y) for b, (X, y) in zip(self.weights, self.parts))
        w_star = np.linalg.solve(H, rhs)
        return w_star, self.global_loss(w_star)


def build_task(config: LearningConfig, n_devices: int, seed_seq: np.random.SeedSequence) -> LearningTask:
    data_ss, init_ss = seed_seq.spawn(2)
    rng = np.random.default_rng(data_ss)
    dataset = "regression" if config.task == "quadratic" else config.dataset
    Xtr, ytr, Xte, yte, n_classes = load_dataset(dataset, rng, config.n_samples, config.n_features)
    if config.task == "quadratic":
        model = LeastSquares(Xtr.shape[1], config.reg)
    elif config.task == "logistic":
        model = SoftmaxRegression(Xtr.shape[1], n_classes, config.reg)
    else:
        model = TinyMLP(Xtr.shape[1], config.hidden, n_classes, config.reg)
    if model.dim % 2:
        raise ValueError(f"model dimension {model.dim} is odd; adjust the feature count or hidden width")
    if config.partition == "iid" or config.task == "quadratic":
        parts = partition_iid(len(ytr), n_devices, rng)
    else:
        parts = partition_label_skew(ytr, n_devices, config.classes_per_device, rng)
    if any(len(p) == 0 for p in parts):
        raise ValueError("a device received no samples")
    w0 = model.init(np.random.default_rng(init_ss)) if isinstance(model, TinyMLP) else np.zeros(model.dim)
    return LearningTask(model, [(Xtr[p], ytr[p]) for p in parts], (Xte, yte), config, w0)


def compute_local_updates(task: LearningTask, w, round_seed: Sequence[int]) -> np.ndarray:
    """D x M matrix of transmitted local gradients.

    ``gradient`` mode sends the full local gradient. ``local-sgd`` mode runs
    ``local_steps`` mini-batch SGD steps (with momentum) and sends
    ``(w - w_local) / lr``.
    """
    cfg = task.config
    cols = []
    for m, (X, y) in enumerate(task.parts):
        if len(y) == 0:
            raise ValueError(f"device {m} has an empty dataset")
        if cfg.mode == "gradient":
            cols.append(task.model.loss_grad(w, X, y)[1])
            continue
        rng = np.random.default_rng([*round_seed, m])
        local = np.array(w, dtype=float)
        velocity = np.zeros_like(local)
        for _ in range(cfg.local_steps):
            if cfg.batch_size is None or cfg.batch_size >= len(y):
                idx = slice(None)
            else:
                idx = rng.choice(len(y), size=cfg.batch_size, replace=False)
            g = task.model.loss_grad(local, X[idx], y[idx])[1]
            velocity = cfg.momentum * velocity + g
            local = local - cfg.lr * velocity
        cols.append((w - local) / cfg.lr)
    return np.stack(cols, axis=1)


# ---------------------------------------------------------------- schemes


@dataclass
class RoundLog:
    trial: int
    round: int
    scheme: str
    accuracy: float
    train_loss: float
    error_sq_norm: float
    analytic_mse: float
    optimizer_iters: int


@dataclass
class SchemeState:
    name: str
    gain: np.ndarray | None = None
    trajectory: Trajectory | None = None
    stale_rho: np.ndarray | None = None
    optimizer_iters: int = 0


def batch_statistics(G, weights):
    batch = normalize_gradients(G, allow_constant=True)
    return psd_repair(estimate_correlation(batch)), weighted_stds(batch, weights)


def init_scheme(name: str, scenario: Scenario, rho, ups) -> SchemeState:
    """Trajectory and gains for one scheme, tuned on the given gradient statistics."""
    if name == "error-free":
        return SchemeState(name)
    if name == "static-ps":
        pos = barycenter(scenario.devices, scenario.weights)
        return SchemeState(name, static_gain_matrix(pos, scenario), hovering(pos, scenario.n_slots))
    if name == "circular":
        best = optimizer.tune_circular(scenario, rho, ups)
        return SchemeState(name, gain_matrix(best.trajectory, scenario), best.trajectory)
    if name == "optimized":
        init = optimizer.circle_through_start(scenario, rho, ups)
        res = optimizer.optimize_alternating(scenario, rho, ups, init.trajectory)
        return SchemeState(name, res.gain, res.trajectory, optimizer_iters=res.iterations)
    raise ValueError(f"unknown scheme {name!r}; choose from {SCHEMES}")


def initial_statistics(scenario: Scenario, config: LearningConfig | dict | None = None, trial: int = 0):
    """(rho, ups, task) from the round-0 local updates of ``trial``."""
    if not isinstance(config, LearningConfig):
        config = LearningConfig.from_dict(config if config is not None else scenario.learning)
    task = build_task(config, scenario.n_devices, np.random.SeedSequence([scenario.seed, trial]))
    G0 = compute_local_updates(task, task.w0, (scenario.seed, trial, 0))
    rho, ups = batch_statistics(G0, task.weights)
    return rho, ups, task


def noise_seed(scenario_seed: int, trial: int, round_index: int) -> int:
    return int(np.random.SeedSequence([scenario_seed, trial, round_index]).generate_state(1)[0])


def run_round(task: LearningTask, w, state: SchemeState, scenario: Scenario, trial: int, round_index: int):
    """One global round; returns the updated model and its RoundLog."""
    round_seed = (scenario.seed, trial, round_index)
    G = compute_local_updates(task, w, round_seed)
    weights = task.weights
    iters = 0
    if state.name == "error-free":
        g_hat = G @ weights
        err_sq, analytic = 0.0, 0.0
    else:
        rho, ups = batch_statistics(G, weights)
        rho_used = state.stale_rho if (scenario.stale_rho and state.stale_rho is not None) else rho
        state.stale_rho = rho
        if state.name == "optimized" and scenario.reoptimize == "per-round" and round_index > 0:
            res = optimizer.optimize_alternating(scenario, rho_used, ups, state.trajectory)
            state.gain, state.trajectory = res.gain, res.trajectory
            iters = res.iterations
        elif round_index == 0:
            iters = state.optimizer_iters
        zeta = optimal_zeta(state.gain, rho_used, ups, scenario.noise_power)
        g_hat, e = aggregate_over_the_air(
            G, state.gain, zeta, weights, scenario.noise_power, noise_seed(scenario.seed, trial, round_index),
            allow_constant=True,
        )
        err_sq = float(e @ e)
        analytic = mse(ups, rho, state.gain, zeta, scenario.noise_power, G.shape[0])
    w_next = w - task.config.lr * g_hat
    log_row = RoundLog(
        trial, round_index, state.name, task.accuracy(w_next), task.global_loss(w_next), err_sq, analytic, iters
    )
    return w_next, log_row


@dataclass
class ExperimentReport:
    logs: list[RoundLog]
    schemes: list[str]
    trials: int
    rounds: int
    trajectories: dict = field(default_factory=dict)

    def table(self, metric: str = "accuracy") -> dict[str, np.ndarray]:
        """scheme -> (trials, rounds) array of ``metric``."""
        out = {s: np.full((self.trials, self.rounds), np.nan) for s in self.schemes}
        for row in self.logs:
            out[row.scheme][row.trial, row.round] = getattr(row, metric)
        return out

    def final_mean(self, metric: str = "accuracy") -> dict[str, float]:
        return {s: float(v[:, -1].mean()) for s, v in self.table(metric).items()}


LOG_FIELDS = ["trial", "round", "scheme", "accuracy", "train_loss", "error_sq_norm", "analytic_mse", "optimizer_iters"]


def _fmt(value):
    return repr(float(value)) if isinstance(value, float) else str(value)


def write_round_logs(rows: Sequence[RoundLog], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_FIELDS)
        for row in rows:
            d = asdict(row)
            writer.writerow([_fmt(d[k]) for k in LOG_FIELDS])


def write_summary(report: ExperimentReport, path) -> None:
    acc = report.table("accuracy")
    err = report.table("error_sq_norm")
    ana = report.table("analytic_mse")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scheme", "round", "accuracy_mean", "accuracy_std", "error_sq_norm_mean", "analytic_mse_mean"])
        for s in report.schemes:
            for t in range(report.rounds):
                writer.writerow(
                    [s, t]
                    + [_fmt(float(x)) for x in (acc[s][:, t].mean(), acc[s][:, t].std(), err[s][:, t].mean(), ana[s][:, t].mean())]
                )


def run_experiment(
    scenario: Scenario,
    config: LearningConfig | dict | None = None,
    schemes: Sequence[str] = SCHEMES,
    trials: int = 1,
    rounds: int | None = None,
    out_dir: str | Path | None = None,
) -> ExperimentReport:
    """T rounds per scheme per trial; optionally writes per-trial RoundLog CSVs,
    a summary CSV and the scheme trajectories under ``out_dir``."""
    if not isinstance(config, LearningConfig):
        config = LearningConfig.from_dict(config if config is not None else scenario.learning)
    rounds = config.rounds if rounds is None else int(rounds)
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    unknown = [s for s in schemes if s not in SCHEMES]
    if unknown:
        raise ValueError(f"unknown schemes {unknown}; choose from {SCHEMES}")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    logs: list[RoundLog] = []
    trajectories = {}
    for trial in range(trials):
        rho0, ups0, task = initial_statistics(scenario, config, trial)
        sc = scenario.replace(weights=task.weights)
        trial_logs = []
        for name in schemes:
            state = init_scheme(name, sc, rho0, ups0)
            if state.trajectory is not None:
                trajectories[(name, trial)] = state.trajectory
            w = task.w0.copy()
            for t in range(rounds):
                w, row = run_round(task, w, state, sc, trial, t)
                trial_logs.append(row)
            log.info("trial %d %s final accuracy %.4f", trial, name, trial_logs[-1].accuracy)
        logs.extend(trial_logs)
        if out is not None:
            write_round_logs(trial_logs, out / f"rounds_trial{trial:02d}.csv")
            for (name, k), traj in trajectories.items():
                if k == trial:
                    write_trajectory_csv(traj, out / f"trajectory_{name}_trial{trial:02d}.csv")
    report = ExperimentReport(logs, list(schemes), trials, rounds, trajectories)
    if out is not None:
        write_summary(report, out / "summary.csv")
    return report


def convergence_bound(mu: float, omega: float, error_sq_norms, initial_gap: float) -> np.ndarray:
    """Per-round upper bound on F(w^{T+1}) - F* for gradient descent with step 1/omega:
    sum_t (1 - mu/omega)^(T-t) |e_t|^2 + initial_gap (1 - mu/omega)^(T+1)."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    if omega < mu:
        raise ValueError("omega must be >= mu")
    e = np.asarray(error_sq_norms, dtype=float)
    q = 1.0 - mu / omega
    out = np.empty(e.size)
    acc = 0.0
    for T in range(e.size):
        acc = q * acc + e[T] if T else e[0]
        out[T] = acc + initial_gap * q ** (T + 1)
    return out
