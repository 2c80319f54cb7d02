"""Finite-difference gradient checks for every differentiable op.

Each op is checked on several seeded random configurations. Non-scalar
outputs are reduced to a scalar by a fixed random projection, and the
analytic gradient of every input is compared with central differences.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import layers, pit
from .layers import BiLSTMParams, LinearParams, LSTMParams
from .tensor import Tape, Tensor, add, concat, matmul, mul, reshape, sigmoid, sum_all, take, tanh

STEP = 1e-4
TOLERANCE = 1e-4
CONFIGS_PER_OP = 5


@dataclass
class Case:
    """Inputs to perturb and a function of them that returns a Tensor."""

    inputs: List[np.ndarray]
    fn: Callable[[List[Tensor]], Tensor]


@dataclass(frozen=True)
class CheckResult:
    op: str
    config: int
    max_rel_error: float
    passed: bool


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)``, zero when both vanish."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def _scalar(out: Tensor, proj: Optional[np.ndarray]) -> Tensor:
    return out if proj is None else sum_all(mul(out, Tensor(proj)))


def check_case(case: Case, rng: np.random.Generator, step: float = STEP,
               corrupt: float = 0.0) -> float:
    """Largest relative error across the case's inputs.

    ``corrupt`` scales the analytic gradient by ``1 + corrupt`` as a negative
    control.
    """
    probe = case.fn([Tensor(x) for x in case.inputs])
    proj = None if probe.data.ndim == 0 else rng.standard_normal(probe.shape)

    def value(arrays):
        return float(_scalar(case.fn([Tensor(a) for a in arrays]), proj).data)

    leaves = [Tensor(x.copy(), requires_grad=True) for x in case.inputs]
    with Tape() as tape:
        loss = _scalar(case.fn(leaves), proj)
    tape.backward(loss)
    worst = 0.0
    arrays = [x.copy() for x in case.inputs]
    for k, leaf in enumerate(leaves):
        analytic = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad * (1.0 + corrupt)
        numeric = np.zeros_like(arrays[k])
        flat = arrays[k].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = value(arrays)
            flat[i] = orig - step
            down = value(arrays)
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2 * step)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


# --- case builders -------------------------------------------------------------

def _lin(rng, d_in, d_out):
    return [rng.standard_normal((d_in, d_out)) * 0.5, rng.standard_normal(d_out) * 0.1]


def _lstm(rng, d_in, h):
    return [rng.standard_normal((d_in, 4 * h)) * 0.4, rng.standard_normal((h, 4 * h)) * 0.4,
            rng.standard_normal(4 * h) * 0.1]


def _lstm_params(ts):
    return LSTMParams(ts[0], ts[1], ts[2])


def _mask(rng, B, T):
    lengths = rng.integers(max(2, T // 2), T + 1, size=B)
    lengths[0] = T
    return (np.arange(T)[None, :] < lengths[:, None]).astype(np.float64)


def case_add(rng):
    shape = tuple(rng.integers(1, 4, size=2))
    return Case([rng.standard_normal(shape), rng.standard_normal(shape[1:])],
                lambda t: add(t[0], t[1]))


def case_mul(rng):
    shape = tuple(rng.integers(1, 4, size=2))
    return Case([rng.standard_normal(shape), rng.standard_normal(shape)],
                lambda t: mul(t[0], t[1]))


def case_matmul(rng):
    n, k, m = rng.integers(1, 4, size=3)
    return Case([rng.standard_normal((2, n, k)), rng.standard_normal((k, m))],
                lambda t: matmul(t[0], t[1]))


def case_sigmoid(rng):
    return Case([rng.standard_normal((3, 4)) * 2], lambda t: sigmoid(t[0]))


def case_tanh(rng):
    return Case([rng.standard_normal((3, 4)) * 2], lambda t: tanh(t[0]))


def case_concat_take(rng):
    a, b = rng.integers(1, 4, size=2)
    return Case([rng.standard_normal((2, a)), rng.standard_normal((2, b))],
                lambda t: take(concat([t[0], t[1]], axis=-1), 1, int(a + b), axis=-1))


def case_reshape(rng):
    return Case([rng.standard_normal((2, 3, 2))], lambda t: reshape(t[0], (3, 4)))


def case_linear(rng):
    d_in, d_out = rng.integers(1, 5, size=2)
    x = rng.standard_normal((2, 3, d_in))
    return Case([x] + _lin(rng, d_in, d_out),
                lambda t: layers.linear(t[0], LinearParams(t[1], t[2])))


def case_lstm_step(rng):
    d, h = rng.integers(1, 4, size=2)
    B = 2
    ins = [rng.standard_normal((B, d)), rng.standard_normal((B, h)) * 0.5,
           rng.standard_normal((B, h)) * 0.5] + _lstm(rng, d, h)

    def fn(t):
        hn, cn = layers.lstm_step(t[0], (t[1], t[2]), _lstm_params(t[3:]))
        return concat([hn, cn], axis=-1)
    return Case(ins, fn)


def case_lstm_sequence(rng):
    d, h = rng.integers(1, 4, size=2)
    B, T = 2, int(rng.integers(2, 5))
    mask = _mask(rng, B, T)
    reverse = bool(rng.integers(2))
    ins = [rng.standard_normal((B, T, d))] + _lstm(rng, d, h)
    return Case(ins, lambda t: layers.lstm_sequence(t[0], _lstm_params(t[1:]), mask, reverse))


def case_bidi(rng):
    d, h = rng.integers(1, 3, size=2)
    B, T = 2, int(rng.integers(2, 4))
    mask = _mask(rng, B, T)
    ins = [rng.standard_normal((B, T, d))] + _lstm(rng, d, h) + _lstm(rng, d, h)
    return Case(ins, lambda t: layers.bidi_layer(
        t[0], BiLSTMParams(_lstm_params(t[1:4]), _lstm_params(t[4:7])), mask))


def case_softmax_ce(rng):
    B, T, L = 2, int(rng.integers(2, 5)), int(rng.integers(2, 6))
    labels = rng.integers(0, L, size=(B, T))
    mask = _mask(rng, B, T)
    reduction = ("mean", "sum")[int(rng.integers(2))]
    return Case([rng.standard_normal((B, T, L))],
                lambda t: layers.softmax_ce(t[0], labels, mask, reduction))


def case_mse(rng):
    B, T, D = 2, int(rng.integers(2, 5)), int(rng.integers(1, 4))
    mask = _mask(rng, B, T)
    return Case([rng.standard_normal((B, T, D)), rng.standard_normal((B, T, D))],
                lambda t: layers.mse(t[0], t[1], mask))


def case_cmvn(rng):
    B, T, D = 2, int(rng.integers(3, 6)), int(rng.integers(1, 4))
    mask = _mask(rng, B, T)
    return Case([rng.standard_normal((B, T, D)) * 2 + 1], lambda t: layers.cmvn_op(t[0], mask))


def case_pit_mse(rng):
    S = int(rng.integers(2, 4))
    T, D = int(rng.integers(2, 5)), int(rng.integers(1, 4))
    targets = rng.standard_normal((S, T, D))
    return Case([rng.standard_normal((T, D)) for _ in range(S)],
                lambda t: pit.pit_mse(t, targets).loss)


def case_fixed_mse(rng):
    S = int(rng.integers(2, 4))
    T, D = int(rng.integers(2, 5)), int(rng.integers(1, 4))
    targets = rng.standard_normal((S, T, D))
    return Case([rng.standard_normal((T, D)) for _ in range(S)],
                lambda t: pit.fixed_mse(t, targets))


def case_pit_ce(rng):
    S = int(rng.integers(2, 4))
    T, L = int(rng.integers(2, 5)), int(rng.integers(2, 6))
    labels = rng.integers(0, L, size=(S, T))
    return Case([rng.standard_normal((T, L)) for _ in range(S)],
                lambda t: pit.pit_ce(t, labels).loss)


def case_batch_pit(rng):
    B, S = 2, int(rng.integers(2, 4))
    T, D = int(rng.integers(2, 4)), int(rng.integers(1, 3))
    targets = rng.standard_normal((B, S, T, D))
    w = _mask(rng, B, T)[:, None, :].repeat(S, axis=1)
    return Case([rng.standard_normal((B, T, D)) for _ in range(S)],
                lambda t: pit.batch_pit(pit.pairwise_mse(t, targets, w), pit.MSE)[0])


def case_joint(rng):
    S = 2
    T, D, L = int(rng.integers(2, 4)), int(rng.integers(1, 3)), int(rng.integers(2, 4))
    targets = rng.standard_normal((S, T, D))
    labels = rng.integers(0, L, size=(S, T))
    ins = [rng.standard_normal((T, D)) for _ in range(S)] + \
          [rng.standard_normal((T, L)) for _ in range(S)]

    def fn(t):
        j1, j2 = pit.joint_objectives(t[:S], targets, t[S:], labels, consistent=True)
        return add(j1.loss, j2.loss)
    return Case(ins, fn)


CASES: Dict[str, Callable[[np.random.Generator], Case]] = {
    "add": case_add, "mul": case_mul, "matmul": case_matmul, "sigmoid": case_sigmoid,
    "tanh": case_tanh, "concat/take": case_concat_take, "reshape": case_reshape,
    "linear": case_linear, "lstm_step": case_lstm_step, "lstm_sequence": case_lstm_sequence,
    "bidi_layer": case_bidi, "softmax_ce": case_softmax_ce, "mse": case_mse, "cmvn": case_cmvn,
    "fixed_mse": case_fixed_mse, "pit_mse": case_pit_mse, "pit_ce": case_pit_ce,
    "batch_pit": case_batch_pit, "joint": case_joint,
}


def run_suite(seed: int = 0, configs: int = CONFIGS_PER_OP, ops: Optional[Sequence[str]] = None,
              tolerance: float = TOLERANCE, corrupt: Optional[Dict[str, float]] = None
              ) -> List[CheckResult]:
    """Check every op (or ``ops``) on ``configs`` seeded configurations.

    ``corrupt`` maps op names to a relative gradient perturbation, the test
    hook for confirming that failures are reported.
    """
    corrupt = corrupt or {}
    names = list(CASES) if ops is None else list(ops)
    results = []
    for k, name in enumerate(names):
        if name not in CASES:
            raise KeyError(f"no gradient check for {name!r}")
        for c in range(configs):
            rng = np.random.default_rng([seed, k, c])
            err = check_case(CASES[name](rng), rng, corrupt=corrupt.get(name, 0.0))
            results.append(CheckResult(name, c, err, err < tolerance))
    return results


def summarize(results: Sequence[CheckResult]) -> List[Tuple[str, int, float, bool]]:
    """One row per op: (op, configs, max relative error, all passed)."""
    rows: Dict[str, List[CheckResult]] = {}
    for r in results:
        rows.setdefault(r.op, []).append(r)
    return [(op, len(rs), max(r.max_rel_error for r in rs), all(r.passed for r in rs))
            for op, rs in rows.items()]


def format_table(results: Sequence[CheckResult]) -> str:
    lines = [f"{'op':<16}{'configs':>8}{'max_rel_err':>14}  status"]
    for op, n, err, ok in summarize(results):
        lines.append(f"{op:<16}{n:>8}{err:>14.3e}  {'PASS' if ok else 'FAIL'}")
    return "\n".join(lines)
