"""Standard global-optimisation test functions, experiment traces and regret aggregation."""

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import OutOfBounds

LOG_REGRET_FLOOR = 1e-12


def branin(x):
    x1, x2 = x[0], x[1]
    b = 5.1 / (4.0 * np.pi**2)
    c = 5.0 / np.pi
    t = 1.0 / (8.0 * np.pi)
    return (x2 - b * x1**2 + c * x1 - 6.0) ** 2 + 10.0 * (1.0 - t) * np.cos(x1) + 10.0


def ackley(x, a=20.0, b=0.2, c=2.0 * np.pi):
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    s1 = np.sqrt(np.sum(x**2) / d)
    s2 = np.sum(np.cos(c * x)) / d
    return -a * np.exp(-b * s1) - np.exp(s2) + a + np.e


_HARTMANN_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_HARTMANN3_A = np.array([[3.0, 10, 30], [0.1, 10, 35], [3.0, 10, 30], [0.1, 10, 35]])
_HARTMANN3_P = 1e-4 * np.array(
    [[3689, 1170, 2673], [4699, 4387, 7470], [1091, 8732, 5547], [381, 5743, 8828]]
)
_HARTMANN6_A = np.array(
    [
        [10.0, 3, 17, 3.5, 1.7, 8],
        [0.05, 10, 17, 0.1, 8, 14],
        [3.0, 3.5, 1.7, 10, 17, 8],
        [17.0, 8, 0.05, 10, 0.1, 14],
    ]
)
_HARTMANN6_P = 1e-4 * np.array(
    [
        [1312, 1696, 5569, 124, 8283, 5886],
        [2329, 4135, 8307, 3736, 1004, 9991],
        [2348, 1451, 3522, 2883, 3047, 6650],
        [4047, 8828, 8732, 5743, 1091, 381],
    ]
)


def hartmann3(x):
    x = np.asarray(x, dtype=float)
    return float(-_HARTMANN_ALPHA @ np.exp(-np.sum(_HARTMANN3_A * (x - _HARTMANN3_P) ** 2, axis=1)))


def hartmann6(x):
    x = np.asarray(x, dtype=float)
    return float(-_HARTMANN_ALPHA @ np.exp(-np.sum(_HARTMANN6_A * (x - _HARTMANN6_P) ** 2, axis=1)))


@dataclass(frozen=True, eq=False)
class TestFunction:
    __test__ = False  # not a pytest class

    name: str
    bounds: np.ndarray
    func: Callable
    f_true_min: float
    minimizers: tuple

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]

    def __call__(self, x) -> float:
        return evaluate(self, x)


def evaluate(fn: TestFunction, x, tol=1e-9) -> float:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != fn.dim:
        raise OutOfBounds(f"{fn.name} takes {fn.dim}-d points, got {x.shape[0]}")
    slack = tol * (fn.bounds[:, 1] - fn.bounds[:, 0])
    if np.any(x < fn.bounds[:, 0] - slack) or np.any(x > fn.bounds[:, 1] + slack):
        raise OutOfBounds(f"{x} lies outside the {fn.name} box")
    return float(fn.func(x))


FUNCTIONS = {
    "branin2": TestFunction(
        "branin2",
        np.array([[-5.0, 10.0], [0.0, 15.0]]),
        branin,
        5.0 / (4.0 * np.pi),
        ((-np.pi, 12.275), (np.pi, 2.275), (9.42478, 2.475)),
    ),
    "hartmann3": TestFunction(
        "hartmann3",
        np.array([[0.0, 1.0]] * 3),
        hartmann3,
        -3.862779787332663,
        ((0.11458887133078371, 0.5556488955562107, 0.852546983879289),),
    ),
    "ackley5": TestFunction(
        "ackley5",
        np.array([[-32.768, 32.768]] * 5),
        ackley,
        0.0,
        ((0.0,) * 5,),
    ),
    "hartmann6": TestFunction(
        "hartmann6",
        np.array([[0.0, 1.0]] * 6),
        hartmann6,
        -3.3223680114155147,
        (
            (
                0.2016895106414348,
                0.15001069461424155,
                0.4768739765861194,
                0.2753324285232711,
                0.31165161724300744,
                0.6573005330010271,
            ),
        ),
    ),
}


def get_function(name: str) -> TestFunction:
    try:
        return FUNCTIONS[name.lower()]
    except KeyError:
        raise KeyError(f"unknown test function {name!r}; choose from {sorted(FUNCTIONS)}") from None


@dataclass
class IterationRecord:
    iteration: int
    batch: np.ndarray
    values: np.ndarray
    best_so_far: float
    regret: float
    elapsed_ms: float
    pending: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))


@dataclass
class ExperimentTrace:
    policy: str
    function: str
    q: int
    seed: int
    initial_best: float
    initial_regret: float
    records: list = field(default_factory=list)

    @property
    def best_values(self) -> np.ndarray:
        return np.array([r.best_so_far for r in self.records])

    @property
    def regrets(self) -> np.ndarray:
        return np.array([r.regret for r in self.records])

    def log10_regrets(self) -> np.ndarray:
        return np.log10(self.regrets + LOG_REGRET_FLOOR)

    def iterations_to_reach(self, log10_target: float) -> int:
        """First iteration whose log10 regret is at or below the target (0 = initial design).

        Returns ``len(records) + 1`` when the target is never reached.
        """
        if math.log10(self.initial_regret + LOG_REGRET_FLOOR) <= log10_target:
            return 0
        for rec in self.records:
            if math.log10(rec.regret + LOG_REGRET_FLOOR) <= log10_target:
                return rec.iteration
        return len(self.records) + 1


def regret(best: float, f_true_min: float) -> float:
    return max(best - f_true_min, 0.0)


@dataclass
class AggregateTable:
    iterations: np.ndarray
    mean_log10_regret: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    reps: int
    traces: list = field(default_factory=list, repr=False)


def aggregate(traces) -> AggregateTable:
    """Per-iteration mean log10 regret with a normal-approximation 95% interval.

    Sums use ``math.fsum`` so the table does not depend on rep order.
    """
    if not traces:
        raise ValueError("no traces to aggregate")
    iters = len(traces[0].records)
    reps = len(traces)
    logs = np.array([t.log10_regrets() for t in traces])
    mean = np.array([math.fsum(logs[:, i]) / reps for i in range(iters)])
    if reps > 1:
        var = np.array([math.fsum((logs[:, i] - mean[i]) ** 2) / (reps - 1) for i in range(iters)])
        half = 1.96 * np.sqrt(var / reps)
    else:
        half = np.zeros(iters)
    return AggregateTable(np.arange(1, iters + 1), mean, mean - half, mean + half, reps, list(traces))


def _run_one(args):
    from .policy import run_outer_loop

    fn, policy, q, iterations, cfg, seed, fit_restarts = args
    return run_outer_loop(fn, policy, q, iterations, cfg, seed, fit_restarts=fit_restarts)


def run_replicated(fn, policy, q, iterations, reps, base_seed, cfg, workers=1, fit_restarts=2) -> AggregateTable:
    """Repeat the outer loop with seeds ``base_seed + rep`` and aggregate log regret."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    jobs = [(fn, policy, q, iterations, cfg, base_seed + rep, fit_restarts) for rep in range(reps)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(_run_one, jobs))
    else:
        traces = [_run_one(j) for j in jobs]
    return aggregate(traces)
