"""Backward-in-time training of feedback controls: the SL, L and H schemes.

At each time step ``n = N-1 .. 0`` a control network ``a_n`` minimises the
empirical dynamic-programming residual

    mean_X  G^{a_n(X)}(X)  v  V_{n+1}(F^{a_n(X)}(X))

by Adam.  The schemes differ in how ``V_{n+1}`` is represented:

* ``SL`` regresses a value network ``V_n`` after every step;
* ``L`` keeps only the controls and evaluates ``V_{n+1}`` by rolling the
  trajectory through ``a_{n+1} .. a_{N-1}``;
* ``H`` minimises against a projected value network ``V^tmp_{n+1}`` but
  defines ``V_n`` by rollout, and ``V^tmp_n`` regresses that rollout.

Brute-force dynamic programming over a finite control grid, by enumeration
or on an interpolation grid, provides reference values for small instances.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .dynamics import coarse_step, get_tableau, trajectory_cost_J, vee
from .nn import AdamState, FeedforwardNet, OutputMap, adam_step, init_net
from .problems.base import ProblemSpec

SCHEMES = ("SL", "L", "H")
LOSS_COLUMNS = ("step", "n", "iter", "loss")


class TrainingError(RuntimeError):
    """Training produced a non-finite value."""


@dataclass
class SchemeConfig:
    scheme: str = "L"
    N: int = 5
    p: int = 5
    tableau: str = "heun"
    M: int = 1000
    sg_iters: int = 1000
    layers: int = 3
    neurons: int = 40
    value_layers: int | None = None
    value_neurons: int | None = None
    value_M: int | None = None
    value_iters: int | None = None
    activation: str = "relu"
    lr: float = 1e-3
    warm_start: bool = True
    seed: int = 0

    def __post_init__(self):
        self.scheme = str(self.scheme).upper()
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        for name in ("N", "p", "M", "layers", "neurons"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.sg_iters < 0:
            raise ValueError("sg_iters must be >= 0")
        get_tableau(self.tableau)

    @property
    def value_arch(self) -> tuple[int, int]:
        return (self.value_layers or self.layers, self.value_neurons or self.neurons)

    @property
    def value_batch(self) -> int:
        return self.value_M or self.M

    @property
    def value_steps(self) -> int:
        return self.sg_iters if self.value_iters is None else self.value_iters


@dataclass
class TrainedPolicy:
    """Control networks ``a_0 .. a_{N-1}`` plus the scheme's value networks.

    ``value_nets`` holds ``V_n`` for SL and ``V^tmp_n`` (``n >= 1``) for H;
    it is empty for L.  ``V_N`` is always the closed-form ``g v phi``.
    On disk the control of step ``k`` is ``<scheme>_n<k>.net``.
    """

    scheme: str
    problem: str
    d: int
    N: int
    p: int
    tableau: str
    control_nets: list[FeedforwardNet]
    value_nets: dict[int, FeedforwardNet] = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def meta(self) -> dict:
        return {"scheme": self.scheme, "problem": self.problem, "d": self.d, "N": self.N,
                "p": self.p, "tableau": self.tableau,
                "value_steps": sorted(self.value_nets), "diagnostics": self.diagnostics}

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        for n, net in enumerate(self.control_nets):
            net.save(os.path.join(directory, f"{self.scheme}_n{n}.net"))
        for n, net in self.value_nets.items():
            net.save(os.path.join(directory, f"{self.scheme}_value_n{n}.net"))
        tmp = os.path.join(directory, "policy.json.tmp")
        with open(tmp, "w") as fh:
            json.dump(self.meta(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, os.path.join(directory, "policy.json"))

    @classmethod
    def load(cls, directory) -> "TrainedPolicy":
        with open(os.path.join(directory, "policy.json")) as fh:
            meta = json.load(fh)
        tag = meta["scheme"]
        controls = [FeedforwardNet.load(os.path.join(directory, f"{tag}_n{n}.net"))
                    for n in range(meta["N"])]
        values = {int(n): FeedforwardNet.load(os.path.join(directory, f"{tag}_value_n{n}.net"))
                  for n in meta["value_steps"]}
        return cls(meta["scheme"], meta["problem"], int(meta["d"]), int(meta["N"]),
                   int(meta["p"]), meta["tableau"], controls, values, meta.get("diagnostics", {}))


# ------------------------------------------------------------------ losses


def dpp_loss(problem: ProblemSpec, n: int, X, control, value_next: Callable | None,
             N: int, p: int, tableau="heun"):
    """Mean over the batch of ``G^a(X) v V_{n+1}(F^a(X))``.

    ``control`` maps a batch of states to controls and is evaluated once, at
    the foot of the step.  ``value_next=None`` stands for ``V_N = g v phi``.
    """
    if not 0 <= n < N:
        raise ValueError("need 0 <= n < N")
    tab = get_tableau(tableau)
    a = control(X)
    Y, G = coarse_step(tab, problem.f, problem.g, X, a, p, problem.T / N)
    nxt = problem.terminal(Y) if value_next is None else value_next(Y)
    return ad.mean(vee(G, nxt))


def _rollout_evaluator(problem, nets, n, N, p, tab):
    """``x -> J_n(x, (a_n .. a_{N-1}))`` through the given control networks."""
    controls = [net.forward for net in nets]
    return lambda x: trajectory_cost_J(problem, x, controls, n, N, p, tab)


def _step_rng(seed: int, n: int, phase: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(n), int(phase)]))


class _LossLog:
    def __init__(self):
        self.rows: list[tuple] = []

    def add(self, n, it, loss):
        self.rows.append((len(self.rows), n, it, float(loss)))

    def write(self, path) -> None:
        tmp = f"{path}.tmp"
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOSS_COLUMNS)
            for step, n, it, loss in self.rows:
                w.writerow((step, n, it, repr(loss)))
        os.replace(tmp, path)


def _sgd(net: FeedforwardNet, objective: Callable, sample: Callable, iters: int,
         lr: float, log: Callable, n: int, what: str) -> FeedforwardNet:
    """Run ``iters`` Adam steps on ``objective(net_fn, X)`` with fresh batches."""
    state = AdamState(lr=lr)
    weights = [w.copy() for w in net.weights]
    for it in range(iters):
        X = sample()
        tape = ad.Tape()
        ws = [tape.variable(w) for w in weights]
        try:
            loss = objective(lambda x: net.forward(x, ws), X)
        except ad.NonFiniteError as exc:
            raise TrainingError(f"{what} at n={n}, iteration {it}: {exc}") from exc
        if isinstance(loss, ad.Var):
            grads = tape.gradient(loss, ws)
        else:
            grads = [np.zeros_like(w) for w in weights]
        lv = float(ad.value_of(loss))
        if not np.isfinite(lv) or not all(np.all(np.isfinite(g)) for g in grads):
            raise TrainingError(f"{what} at n={n}, iteration {it}: non-finite loss or gradient")
        log(n, it, lv)
        weights = adam_step(weights, grads, state)
    out = net.copy()
    out.weights = weights
    return out


def _new_net(problem, cfg, n, out_dim, output_map, arch, phase):
    layers, neurons = arch
    seed = int(_step_rng(cfg.seed, n, phase).integers(2 ** 63))
    dims = (problem.d,) + (neurons,) * layers + (out_dim,)
    return init_net(dims, cfg.activation, seed=seed, output_map=output_map)


def _initial(prev: FeedforwardNet | None, problem, cfg, n, out_dim, omap, arch, phase):
    if cfg.warm_start and prev is not None:
        return prev.copy()
    return _new_net(problem, cfg, n, out_dim, omap, arch, phase)


def _fit_control(problem, cfg, n, net, value_next, log):
    rng = _step_rng(cfg.seed, n, 1)
    return _sgd(
        net,
        lambda ctrl, X: dpp_loss(problem, n, X, ctrl, value_next, cfg.N, cfg.p, cfg.tableau),
        lambda: problem.sample(rng, cfg.M),
        cfg.sg_iters, cfg.lr, log, n, "control minimisation",
    )


def _fit_value(problem, cfg, n, net, target: Callable, log):
    rng = _step_rng(cfg.seed, n, 2)

    def objective(vfn, X):
        r = ad.sub(vfn(X)[:, 0], target(X))
        return ad.mean(ad.mul(r, r))

    return _sgd(net, objective, lambda: problem.sample(rng, cfg.value_batch),
                cfg.value_steps, cfg.lr, log, n, "value regression")


def _tail_mean(rows, n, frac=0.1):
    vals = [r[3] for r in rows if r[1] == n]
    if not vals:
        return None
    k = max(1, int(len(vals) * frac))
    return float(np.mean(vals[-k:]))


def train(problem: ProblemSpec, cfg: SchemeConfig, loss_csv=None, value_loss_csv=None) -> TrainedPolicy:
    """Train the scheme named in ``cfg`` and return the policy."""
    tab = get_tableau(cfg.tableau)
    N, p = cfg.N, cfg.p
    controls: list[FeedforwardNet | None] = [None] * N
    values: dict[int, FeedforwardNet] = {}
    clog, vlog = _LossLog(), _LossLog()
    ctrl_net = val_net = None
    vshape = cfg.value_arch
    for n in range(N - 1, -1, -1):
        ctrl_net = _initial(ctrl_net, problem, cfg, n, problem.control_dim,
                            problem.control_map, (cfg.layers, cfg.neurons), 0)
        if n == N - 1:
            value_next = None
        elif cfg.scheme == "L":
            value_next = _rollout_evaluator(problem, controls[n + 1:], n + 1, N, p, tab)
        else:
            vn = values[n + 1]
            value_next = lambda x, vn=vn: vn.forward(x)[:, 0]
        ctrl_net = _fit_control(problem, cfg, n, ctrl_net, value_next, clog.add)
        controls[n] = ctrl_net

        if cfg.scheme == "SL":
            a_n = ctrl_net

            def target(X, a_n=a_n, value_next=value_next):
                return ad.value_of(dpp_batch(problem, n, X, a_n.forward, value_next, N, p, tab))
        elif cfg.scheme == "H" and n >= 1:
            target = _rollout_evaluator(problem, controls[n:], n, N, p, tab)
        else:
            continue
        val_net = _initial(val_net, problem, cfg, n, 1, OutputMap.identity(), vshape, 3)
        values[n] = _fit_value(problem, cfg, n, val_net, target, vlog.add)
        val_net = values[n]

    if loss_csv is not None:
        clog.write(loss_csv)
    if value_loss_csv is not None and vlog.rows:
        vlog.write(value_loss_csv)
    diag = {
        "control_loss_tail": {str(n): _tail_mean(clog.rows, n) for n in range(N)},
        "value_loss_tail": {str(n): _tail_mean(vlog.rows, n) for n in sorted(values)},
    }
    return TrainedPolicy(cfg.scheme, problem.name, problem.d, N, p, tab.name,
                         list(controls), values, diag)


def dpp_batch(problem, n, X, control, value_next, N, p, tableau="heun"):
    """Per-sample DPP right-hand side ``G^a(X) v V_{n+1}(F^a(X))`` (no mean)."""
    tab = get_tableau(tableau)
    a = control(X)
    Y, G = coarse_step(tab, problem.f, problem.g, X, a, p, problem.T / N)
    return vee(G, problem.terminal(Y) if value_next is None else value_next(Y))


def _check_scheme(cfg, name):
    if cfg.scheme != name:
        raise ValueError(f"config.scheme is {cfg.scheme!r}, expected {name!r}")


def train_SL(problem: ProblemSpec, cfg: SchemeConfig, **kw) -> TrainedPolicy:
    _check_scheme(cfg, "SL")
    return train(problem, cfg, **kw)


def train_L(problem: ProblemSpec, cfg: SchemeConfig, **kw) -> TrainedPolicy:
    _check_scheme(cfg, "L")
    return train(problem, cfg, **kw)


def train_H(problem: ProblemSpec, cfg: SchemeConfig, **kw) -> TrainedPolicy:
    _check_scheme(cfg, "H")
    return train(problem, cfg, **kw)


def evaluate_policy(policy: TrainedPolicy, problem: ProblemSpec, n: int, X,
                    chunk: int = 20_000) -> np.ndarray:
    """``V_n(x)`` as the scheme defines it: a stored net for SL, else a rollout."""
    if not 0 <= n <= policy.N:
        raise ValueError("need 0 <= n <= N")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != problem.d:
        raise ValueError(f"points have dimension {X.shape[1]}, problem has {problem.d}")
    out = np.empty(len(X))
    for s in range(0, len(X), chunk):
        x = X[s:s + chunk]
        if n == policy.N:
            out[s:s + chunk] = problem.terminal(x)
        elif policy.scheme == "SL":
            out[s:s + chunk] = policy.value_nets[n].forward(x)[:, 0]
        else:
            out[s:s + chunk] = trajectory_cost_J(
                problem, x, [c.forward for c in policy.control_nets[n:]], n, policy.N,
                policy.p, policy.tableau)
    return out


def policy_control(policy: TrainedPolicy, n: int, X) -> np.ndarray:
    if not 0 <= n < policy.N:
        raise ValueError("need 0 <= n < N")
    return np.asarray(policy.control_nets[n].forward(np.atleast_2d(X)))


# ------------------------------------------------------- brute-force DP


def brute_force_dp(problem: ProblemSpec, X, N: int, p: int, control_grid, n: int = 0,
                   tableau="heun", max_rollouts: int = 10 ** 6,
                   max_states: int = 2 ** 21) -> np.ndarray:
    """``min`` of ``J_n(x, .)`` over every sequence of grid controls, by enumeration.

    ``control_grid`` is an array ``(K, control_dim)`` of controls in ``A``.
    Raises when one point would need more than ``max_rollouts`` sequences.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    U = np.asarray(control_grid, dtype=np.float64)
    if U.ndim == 1:
        U = U[:, None]
    if not 0 <= n <= N:
        raise ValueError("need 0 <= n <= N")
    K, L = len(U), N - n
    if K ** L > max_rollouts:
        raise ValueError(f"{K}^{L} control sequences per point exceed max_rollouts={max_rollouts}")
    tab = get_tableau(tableau)
    dt = problem.T / N
    per_chunk = max(1, max_states // (K ** L))
    out = np.empty(len(X))
    for s in range(0, len(X), per_chunk):
        S = X[s:s + per_chunk]
        acc = None
        for _ in range(L):
            reps = len(S)
            S = np.repeat(S, K, axis=0)
            A = np.tile(U, (reps, 1))
            if acc is not None:
                acc = np.repeat(acc, K)
            S, G = coarse_step(tab, problem.f, problem.g, S, A, p, dt)
            acc = vee(acc, G)
        J = vee(acc, problem.terminal(S))
        out[s:s + per_chunk] = np.asarray(J).reshape(-1, K ** L).min(axis=1)
    return out


@dataclass
class GridValue:
    """Values on a tensor grid with multilinear interpolation (linear extrapolation outside)."""

    axes: tuple[np.ndarray, ...]
    values: np.ndarray

    def __call__(self, X) -> np.ndarray:
        from scipy.interpolate import RegularGridInterpolator

        interp = RegularGridInterpolator(self.axes, self.values, bounds_error=False,
                                         fill_value=None)
        return interp(np.atleast_2d(X))

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


def grid_dp(problem: ProblemSpec, N: int, p: int, control_grid, resolution: int = 201,
            n: int = 0, tableau="heun", box=None) -> GridValue:
    """DP recursion ``V_k = min_a G^a v V_{k+1} o F^a`` on a grid, ``k = N-1 .. n``.

    Off-grid values of ``V_{k+1}`` are interpolated.  Only low dimensions are
    practical; ``d > 3`` is refused.
    """
    if problem.d > 3:
        raise ValueError("grid DP is limited to d <= 3")
    U = np.asarray(control_grid, dtype=np.float64)
    if U.ndim == 1:
        U = U[:, None]
    lo, hi = problem.sampling_box if box is None else box
    axes = tuple(np.linspace(lo[i], hi[i], resolution) for i in range(problem.d))
    gv = GridValue(axes, np.zeros((resolution,) * problem.d))
    P = gv.points()
    shape = (resolution,) * problem.d
    tab = get_tableau(tableau)
    dt = problem.T / N
    gv.values = np.asarray(problem.terminal(P)).reshape(shape)
    for _ in range(N - 1, n - 1, -1):
        best = np.full(len(P), np.inf)
        for u in U:
            A = np.broadcast_to(u, (len(P), len(u)))
            Y, G = coarse_step(tab, problem.f, problem.g, P, A, p, dt)
            best = np.minimum(best, vee(G, gv(Y)))
        gv = GridValue(axes, best.reshape(shape))
    return gv


def config_dict(cfg: SchemeConfig) -> dict:
    return asdict(cfg)
