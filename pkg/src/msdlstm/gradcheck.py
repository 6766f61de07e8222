"""Finite-difference verification of recorded gradients.

Central differences at double precision, step 1e-4 by default.  Analytic
gradients come from one taped forward/backward; numeric probes re-run the
same function forward-only with single entries perturbed in place.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .tensor import Parameter, Tape


@dataclass
class GradcheckEntry:
    name: str
    max_rel_err: float
    checked: int


@dataclass
class GradcheckReport:
    tol: float
    entries: list = field(default_factory=list)
    failure: str = None  # set when evaluation blew up (carries op identity)

    @property
    def max_rel_err(self):
        return max((e.max_rel_err for e in self.entries), default=0.0)

    @property
    def passed(self):
        return self.failure is None and self.max_rel_err <= self.tol

    def summary(self):
        lines = [f"{e.name}: max_rel_err={e.max_rel_err:.3e} ({e.checked} entries)"
                 for e in self.entries]
        status = "PASS" if self.passed else "FAIL"
        lines.append(f"{status}: max {self.max_rel_err:.3e} vs tol {self.tol:.3e}")
        if self.failure:
            lines.append(f"evaluation failed: {self.failure}")
        return "\n".join(lines)


def _named(params):
    out = []
    for idx, p in enumerate(params):
        if isinstance(p, tuple):
            out.append(p)
        else:
            out.append((p.name or f"param{idx}", p))
    return out


def gradcheck(f, params, eps=1e-4, tol=1e-4, rng=None, max_entries=100):
    """Compare recorded gradients of scalar ``f()`` against central differences.

    ``f`` must be deterministic and build its value from the given parameters;
    it is called once under a tape and then twice per probed entry without
    one.  Per tensor, all entries are probed when there are at most
    ``max_entries``, otherwise a random subsample of ``max_entries``.  The
    relative error is |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    rng = rng or np.random.default_rng(0)
    named = _named(params)
    report = GradcheckReport(tol=tol)

    for _, p in named:
        if not isinstance(p, Parameter):
            raise TypeError("gradcheck expects Parameter instances")
        p.zero_grad()

    try:
        with Tape() as tape:
            loss = f()
        tape.backward(loss)
        if not np.isfinite(loss.data):
            raise NumericError("non-finite loss", op="gradcheck")

        for name, p in named:
            analytic = p.grad.ravel()
            flat = p.data.reshape(-1)
            size = flat.shape[0]
            if size <= max_entries:
                idxs = np.arange(size)
            else:
                idxs = rng.choice(size, size=max_entries, replace=False)
            worst = 0.0
            for i in idxs:
                saved = flat[i]
                flat[i] = saved + eps
                hi = float(f().data)
                flat[i] = saved - eps
                lo = float(f().data)
                flat[i] = saved
                numeric = (hi - lo) / (2.0 * eps)
                a = analytic[i]
                rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
                if rel > worst:
                    worst = rel
            report.entries.append(GradcheckEntry(name, worst, len(idxs)))
    except NumericError as exc:
        report.failure = str(exc)
    return report
