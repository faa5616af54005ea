"""Numerical self-checks: kernel derivatives, loss identities, gradient checks.

Each check returns :class:`CheckResult`; ``gradcheck`` on the command line
runs :func:`run_battery` and prints one line per result.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Iterator, Optional

import numpy as np

from croloss.data import Batch, SampleSet
from croloss.evaluation import finite_diff_check
from croloss.kernels import Kernel, KernelKind
from croloss.losses import (LossFamily, LossSpec, bpr, compute_loss, croloss_forward,
                            croloss_lambda_forward, lambda_weights, softmax_ce, triplet)
from croloss.model import TwoTowerModel
from croloss.ranking import GapBatch
from croloss.trainer import batch_loss
from croloss.weighting import make_weighting

H = 1e-5
GRAD_TOL = 1e-4
# gradients below GRAD_FLOOR * max(1, |f|) are compared absolutely; float64
# round-off in a central difference is about 2e-11 * |f| at this step size
GRAD_FLOOR = 1e-5

# smallest catalog whose support holds every sampled rank these checks produce
# (scores in [-10, 10], 20 negatives, sample scale <= 4); clamped ranks have a
# flat loss and no finite-difference gradient
SUPPORT_FOR = {"sigmoid": 100, "unit_step": 100, "hinge": 3000, "softplus": 3000,
               "exponential": 10 ** 11}


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


class _CorruptKernel(Kernel):
    """Test hook: a kernel whose derivative is off by a factor of 2."""

    def deriv(self, x):
        return 2.0 * super().deriv(x)

    def value_and_deriv(self, x):
        return self.value(x), self.deriv(x)


def make_kernel(name: str, margin: float = 5.0, corrupt: Optional[str] = None) -> Kernel:
    k = Kernel.parse(name, margin)
    if corrupt is not None and k.kind is KernelKind(corrupt):
        return _CorruptKernel(k.kind, k.margin)
    return k


def _timed(name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    t0 = time.perf_counter()
    ok, detail = fn()
    return CheckResult(name, bool(ok), detail, time.perf_counter() - t0)


def random_scores(rng, n_pos=8, n_neg=20, lo=-10.0, hi=10.0):
    return rng.uniform(lo, hi, n_pos), rng.uniform(lo, hi, (n_pos, n_neg))


# -- kernels -----------------------------------------------------------------

def check_kernel_derivs(corrupt: Optional[str] = None) -> list[CheckResult]:
    out = []
    for name in ("hinge", "sigmoid", "exponential", "softplus"):
        k = make_kernel(name, 5.0, corrupt)

        def run(k=k):
            x = np.linspace(-20, 20, 4001)
            if k.kind is KernelKind.HINGE:
                x = x[np.abs(x + k.margin) > 2 * H]
            fd = (k.value(x + H) - k.value(x - H)) / (2 * H)
            d = k.deriv(x)
            err = float(np.max(np.abs(d - fd) / np.maximum(1.0, np.abs(d))))
            return err < 1e-5, f"max rel err {err:.2e}"

        out.append(_timed(f"kernel derivative {k.name}", run))
    return out


# -- special-case identities ------------------------------------------------

def check_identities(n_instances: int = 200, seed: int = 0, catalog_size: int = 21,
                     corrupt: Optional[str] = None) -> list[CheckResult]:
    """CROLoss reduces to softmax CE, triplet and BPR for the matching kernel and alpha.

    The softmax identity holds only while ``R`` stays inside the weighting's
    support, so it runs on a catalog large enough that no rank is clamped.
    The triplet and BPR identities are checked on ``catalog_size`` as given.
    """
    rng = np.random.default_rng(seed)
    instances = [GapBatch.from_scores(*random_scores(rng)) for _ in range(n_instances)]

    def softmax_case():
        big = 10 ** 12
        spec = LossSpec("croloss", kernel=make_kernel("exponential", corrupt=corrupt),
                        weighting=make_weighting(1.0, big))
        norm = math.log(big + 1)
        worst_v = worst_g = 0.0
        for b in instances:
            c, s = croloss_forward(spec, b), softmax_ce(b)
            worst_v = max(worst_v, abs(c.value * norm - s.value) / abs(s.value))
            g_c = np.concatenate([c.grad_pos, c.grad_neg.ravel()]) * norm
            g_s = np.concatenate([s.grad_pos, s.grad_neg.ravel()])
            worst_g = max(worst_g, float(np.max(np.abs(g_c - g_s) / np.abs(g_s))))
        ok = worst_v < 1e-10 and worst_g < 1e-10
        return ok, f"value rel err {worst_v:.1e}, grad rel err {worst_g:.1e}"

    def pairwise_case(kernel_name, baseline):
        w0 = make_weighting(0.0, catalog_size)
        spec = LossSpec("croloss", kernel=make_kernel(kernel_name, 5.0, corrupt), weighting=w0)
        worst = 0.0
        exact = True
        for b in instances:
            c, t = croloss_forward(spec, b), baseline(b)
            for a, e in ((c.grad_neg, t.grad_neg), (c.grad_pos, t.grad_pos)):
                scaled = a * catalog_size
                exact &= bool(np.array_equal(scaled, e))
                with np.errstate(invalid="ignore", divide="ignore"):
                    rel = np.abs(scaled - e) / np.abs(e)
                worst = max(worst, float(np.nanmax(np.where(e == 0, np.abs(scaled), rel))))
        # (x / n) * n round-trips bitwise only when n is a power of two;
        # otherwise the three roundings leave a few ulps
        ok = exact if catalog_size & (catalog_size - 1) == 0 else worst <= 4 * np.finfo(float).eps
        return ok, f"|I|={catalog_size}, bitwise={exact}, max rel err {worst:.1e}"

    return [
        _timed("identity softmax = croloss(exponential, alpha=1)", softmax_case),
        _timed("identity triplet = |I| * croloss(hinge, alpha=0) [grad]",
               lambda: pairwise_case("hinge", lambda b: triplet(b, 5.0))),
        _timed("identity bpr = |I| * croloss(softplus, alpha=0) [grad]",
               lambda: pairwise_case("softplus", bpr)),
    ]


# -- loss gradients ----------------------------------------------------------

def loss_grid(corrupt: Optional[str] = None) -> list[LossSpec]:
    specs = []
    for name in ("sigmoid", "softplus", "exponential", "hinge"):
        for alpha in (0.0, 0.6, 1.0, 1.4):
            specs.append(LossSpec("croloss", kernel=make_kernel(name, 5.0, corrupt),
                                  weighting=make_weighting(alpha, SUPPORT_FOR[name])))
    for k1, k2 in (("sigmoid", "softplus"), ("sigmoid", "exponential"), ("unit_step", "softplus"),
                   ("softplus", "softplus")):
        for alpha in (0.0, 1.0, 1.4):
            specs.append(LossSpec("croloss_lambda", kernel1=make_kernel(k1, corrupt=corrupt),
                                  kernel2=make_kernel(k2, corrupt=corrupt),
                                  weighting=make_weighting(alpha, SUPPORT_FOR[k1])))
    specs += [LossSpec("softmax_ce"), LossSpec("triplet", margin=5.0), LossSpec("bpr")]
    return specs


def _has_kink(spec: LossSpec, gaps: np.ndarray) -> bool:
    hinged = spec.family is LossFamily.TRIPLET or (
        spec.kernel is not None and spec.kernel.kind is KernelKind.HINGE)
    return hinged and bool(np.any(np.abs(gaps + spec.margin if spec.kernel is None
                                         else gaps + spec.kernel.margin) < 1e-3))


def _per_positive(spec: LossSpec, batch: GapBatch, lam) -> np.ndarray:
    if spec.family is LossFamily.CROLOSS_LAMBDA:
        return croloss_lambda_forward(spec, batch, lam).per_positive
    return compute_loss(spec, batch).per_positive


def loss_gradient_error(spec: LossSpec, pos: np.ndarray, neg: np.ndarray,
                        scale: np.ndarray) -> float:
    """Worst relative error of the score gradients against central differences.

    Positives are independent, so one perturbation of column ``j`` (or of all
    positive scores) yields the finite difference for every row at once.
    The Lambda multipliers are frozen at the base point.
    """
    base = GapBatch.from_scores(pos, neg, scale=scale)
    lam = lambda_weights(spec, base) if spec.family is LossFamily.CROLOSS_LAMBDA else None
    out = (croloss_lambda_forward(spec, base, lam) if lam is not None
           else compute_loss(spec, base))

    def f(p, n):
        return _per_positive(spec, GapBatch.from_scores(p, n, scale=scale), lam)

    num_pos = (f(pos + H, neg) - f(pos - H, neg)) / (2 * H)
    num_neg = np.empty_like(neg)
    for j in range(neg.shape[1]):
        up, down = neg.copy(), neg.copy()
        up[:, j] += H
        down[:, j] -= H
        num_neg[:, j] = (f(pos, up) - f(pos, down)) / (2 * H)
    floor = GRAD_FLOOR * np.maximum(1.0, np.abs(out.per_positive))
    a = np.column_stack([out.grad_pos, out.grad_neg])
    n = np.column_stack([num_pos, num_neg])
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor[:, None])
    return float(np.max(np.abs(a - n) / denom))


def check_loss_gradients(points: int = 100, seed: int = 1,
                         corrupt: Optional[str] = None) -> list[CheckResult]:
    """Score gradients of every family on random sampled batches (scale in [1, 4])."""
    results = []
    for spec in loss_grid(corrupt):
        rng = np.random.default_rng(seed)
        alpha = spec.weighting.alpha if spec.weighting is not None else None

        def run(spec=spec, rng=rng):
            worst = 0.0
            done = 0
            while done < points:
                pos, neg = random_scores(rng)
                if _has_kink(spec, neg - pos[:, None]):
                    continue
                scale = rng.uniform(1.0, 4.0, len(pos))
                worst = max(worst, loss_gradient_error(spec, pos, neg, scale))
                done += 1
            return worst < GRAD_TOL, f"max rel err {worst:.2e} over {points} points"

        tag = spec.label + (f" alpha={alpha:g}" if alpha is not None else "")
        results.append(_timed(f"loss gradient {tag}", run))
    return results


# -- end-to-end model --------------------------------------------------------

def tiny_problem(rng, catalog_size=30, dim=4, n_bs=4, n_rn=3, max_len=5):
    model = TwoTowerModel.init(catalog_size, dim, dim, dim, tau=10.0,
                               seed=int(rng.integers(1 << 31)))
    # spread the embeddings so the cosine scores are not all near zero
    model.params["item_emb"] = rng.normal(0.0, 1.0, model.params["item_emb"].shape)
    lengths = rng.integers(1, max_len + 1, n_bs)
    history = rng.integers(0, catalog_size, (n_bs, max_len))
    samples = SampleSet(history, lengths, rng.integers(0, catalog_size, n_bs),
                        np.arange(n_bs))
    batch = Batch(np.arange(n_bs), rng.integers(0, catalog_size, n_bs * n_rn), catalog_size)
    return model, samples, batch


def flatten(params: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([p.ravel() for p in params.values()])


def unflatten_into(model: TwoTowerModel, x: np.ndarray) -> None:
    at = 0
    for p in model.params.values():
        p[...] = x[at:at + p.size].reshape(p.shape)
        at += p.size


def model_gradient_error(spec: LossSpec, model: TwoTowerModel, samples: SampleSet,
                         batch: Batch) -> Optional[float]:
    """Relative error of :meth:`TwoTowerModel.backward` against finite differences.

    Returns ``None`` when a ReLU pre-activation sits too close to its kink for a
    finite difference to be meaningful.
    """
    out, cache, gaps = batch_loss(model, samples, batch, spec)
    if model.min_abs_preactivation(cache) < 1e-3:
        return None
    lam = lambda_weights(spec, gaps) if spec.family is LossFamily.CROLOSS_LAMBDA else None
    if _has_kink(spec, gaps.gaps):
        return None
    grads = model.backward(cache, out.grad_pos, out.grad_neg)
    x0 = flatten(model.params)
    probe = model.copy()

    def f(x):
        unflatten_into(probe, x)
        pos, neg, _ = probe.forward_batch(samples.history[batch.index], samples.length[batch.index],
                                          samples.target[batch.index], batch.negatives)
        g = GapBatch.from_scores(pos, neg, gaps.mask, gaps.scale)
        if lam is not None:
            return croloss_lambda_forward(spec, g, lam).value
        return compute_loss(spec, g).value

    res = finite_diff_check(f, x0, flatten(grads), h=H, floor=GRAD_FLOOR * max(1.0, abs(out.value)))
    return res.max_rel_error


def e2e_specs(catalog_size: int, corrupt: Optional[str] = None) -> list[LossSpec]:
    return [
        LossSpec("croloss", kernel=make_kernel("sigmoid", corrupt=corrupt),
                 weighting=make_weighting(1.0, catalog_size)),
        LossSpec("croloss_lambda", kernel1=make_kernel("sigmoid", corrupt=corrupt),
                 kernel2=make_kernel("softplus", corrupt=corrupt),
                 weighting=make_weighting(1.2, catalog_size)),
        LossSpec("softmax_ce"),
        LossSpec("triplet", margin=5.0),
        LossSpec("bpr"),
    ]


def check_model_gradients(points: int = 100, seed: int = 2,
                          corrupt: Optional[str] = None) -> list[CheckResult]:
    """Full model gradient (|I| = 30, d = 4) against central differences."""
    results = []
    for spec in e2e_specs(30, corrupt):
        def run(spec=spec):
            rng = np.random.default_rng(seed)
            worst, done, skipped = 0.0, 0, 0
            while done < points:
                err = model_gradient_error(spec, *tiny_problem(rng))
                if err is None:
                    skipped += 1
                    continue
                worst = max(worst, err)
                done += 1
            return worst < GRAD_TOL, f"max rel err {worst:.2e} over {points} points ({skipped} near kinks)"

        results.append(_timed(f"model gradient {spec.label}", run))
    return results


def run_battery(quick: bool = False, corrupt: Optional[str] = None) -> Iterator[CheckResult]:
    """Every check; ``quick`` cuts point counts so the battery runs in a few seconds."""
    yield from check_kernel_derivs(corrupt)
    yield from check_identities(20 if quick else 200, corrupt=corrupt)
    yield from check_loss_gradients(5 if quick else 100, corrupt=corrupt)
    yield from check_model_gradients(3 if quick else 100, corrupt=corrupt)
