"""Self-check suites: equivalence, gradients, eigenvalue disk, associativity.

Each suite returns a report entry dict {name, passed, measured, tolerance,
n, detail} so the command line can serialize a machine-readable report and
exit nonzero on any failure. The suites take an optional fault argument
that deliberately breaks the property under test; the test suite uses it
to prove the checks can actually fail.

Acceptance-level runs call the same functions with larger sample counts,
so the shipped verification and the acceptance evidence share one code
path.
"""

import numpy as np

from . import autodiff as ad
from . import engines, learn
from .init import InitSpec
from .models import LTI_KINDS, build_model
from .scaffold import SCAFFOLD_KINDS, make_scaffold, stack_forward
from .training import build_stack
from .types import ValidationError

__all__ = [
    "suite_equivalence", "suite_ltv", "suite_gradients",
    "suite_eig_disk", "suite_associativity", "run_all",
]

# |abar| <= 0.999 envelope: exp(-delta/2) <= 0.999 needs delta >= -2 ln 0.999
_DELTA_RANGE_CAPPED = (0.00201, 0.1)


def _entry(name, measured, tolerance, n, detail=""):
    ok = bool(measured <= tolerance)
    return {"name": name, "passed": ok, "measured": float(measured),
            "tolerance": float(tolerance), "n": int(n), "detail": detail}


def _rel_diff(a, b):
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-30)
    return float(np.max(np.abs(a - b)) / scale)


def random_lti_model(rng, p_max=64, q_max=8):
    """A random LTI core whose discrete spectrum stays inside |z| <= 0.999."""
    kind = str(rng.choice(LTI_KINDS))
    p = 2 * int(rng.integers(1, p_max // 2 + 1))
    q = int(rng.integers(1, q_max + 1))
    kw = {"kind": kind, "p": p, "q": q, "seed": int(rng.integers(2**31)),
          "delta_range": _DELTA_RANGE_CAPPED}
    if kind == "s5":
        kw["n_blocks"] = 1
    return build_model(InitSpec(**kw))


def suite_equivalence(seed=0, n_systems=20, lengths=(8, 257, 1024), tol=1e-8):
    """Recurrence, scan, and convolution agree on random LTI systems."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_systems):
        model = random_lti_model(rng)
        for T in lengths:
            u = rng.normal(size=(T, model.q))
            y_rec = model.forward(u, mode="recurrent")
            y_scan = model.forward(u, mode="scan")
            y_conv = model.forward(u, mode="conv")
            worst = max(worst, _rel_diff(y_rec, y_scan),
                        _rel_diff(y_rec, y_conv), _rel_diff(y_scan, y_conv))
    return _entry("mode_equivalence", worst, tol,
                  n_systems * len(lengths),
                  f"{n_systems} systems x T in {tuple(lengths)}")


def suite_ltv(seed=0, n_instances=10, max_T=512, tol=1e-10):
    """Input-varying kinds: scan output equals the sequential loop oracle."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        kind = str(rng.choice(("s6", "rglru")))
        q = int(rng.integers(1, 5))
        p = q if kind == "rglru" else int(rng.integers(1, 7))
        model = build_model(InitSpec(kind=kind, p=p, q=q,
                                     seed=int(rng.integers(2**31))))
        T = int(rng.integers(2, max_T + 1))
        u = rng.normal(size=(T, q))
        worst = max(worst, _rel_diff(model.forward(u, mode="scan"),
                                     model.forward(u, mode="recurrent")))
    return _entry("ltv_scan_vs_loop", worst, tol, n_instances,
                  f"{n_instances} instances, T <= {max_T}")


def _corrupting(t):
    # identity with a doubled vjp: poisons backward without touching values
    return ad._node(ad.val(t), (t, lambda g: 2.0 * g))


def suite_gradients(seed=0, pairs=None, T=8, tol=1e-4, fault=None):
    """finite_diff_check over small full stacks (core kind x scaffold kind)."""
    if pairs is None:
        pairs = (("s4d", "mlp"), ("lru", "h3"), ("s6", "mamba"), ("rglru", "mlp"))
    rng = np.random.default_rng(seed)
    worst, n = 0.0, 0
    for kind, sc_kind in pairs:
        cfg = {"seed": int(rng.integers(2**31)),
               "model": {"kind": kind, "p": 4, "q": 4, "n_layers": 1},
               "scaffold": {"kind": sc_kind, "norm": True}}
        stack, store = build_stack(cfg, vocab_size=5, n_classes=3)
        ids = rng.integers(0, 5, size=(2, T))
        labels = rng.integers(0, 3, size=2)

        def loss_fn():
            loss = ad.cross_entropy_mean(stack_forward(stack, ids), labels)
            return _corrupting(loss) if fault == "corrupt_gradient" else loss

        err, _ = learn.finite_diff_check(loss_fn, store, eps=1e-5)
        worst = max(worst, err)
        n += 1
    return _entry("gradient_fd", worst, tol, n,
                  ", ".join(f"{k}+{s}" for k, s in pairs))


def suite_eig_disk(seed=0, n_seeds=20, n_streams=5, T=64, fault=None):
    """Discrete eigenvalues stay in the closed unit disk for every kind.

    LTI kinds are checked at init; the input-varying kinds are checked per
    step over random input streams (their moduli must sit in (0, 1)).
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    n = 0
    for kind in LTI_KINDS + ("s6", "rglru"):
        for _ in range(n_seeds):
            q = int(rng.integers(1, 4)) if kind != "rglru" else 2
            p = {"rglru": q, "s5": 4, "s4": 4, "s4d": 4, "lru": 4, "s6": 4}[kind]
            model = build_model(InitSpec(kind=kind, p=p, q=q,
                                         seed=int(rng.integers(2**31))))
            if kind in LTI_KINDS:
                moduli = np.abs(model.discrete_system().abar)
            else:
                streams = [rng.normal(size=(T, q)) for _ in range(n_streams)]
                records = model.eigenvalue_records(streams)
                moduli = np.array([abs(z) for _, _, z in records])
                if moduli.size and (moduli.min() <= 0.0 or moduli.max() >= 1.0):
                    worst = max(worst, 2.0)  # outside the open interval
            if fault == "unstable_abar":
                moduli = np.append(moduli, 1.2)
            worst = max(worst, float(np.max(moduli)))
            n += 1
    return _entry("eigenvalues_in_unit_disk", worst, 1.0 + 1e-12, n,
                  "max modulus across all kinds, LTV per-step over inputs")


def suite_associativity(seed=0, n_triples=10_000, tol=1e-14,
                        worker_counts=(1, 2, 4, 8), scan_tol=1e-10):
    """The scan's combine is associative; output ignores worker count."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1, 1, size=(3, n_triples)) \
        + 1j * rng.uniform(-1, 1, size=(3, n_triples))
    a /= np.maximum(1.0, np.abs(a))  # keep |a| <= 1 so products stay O(1)
    d = rng.normal(size=(3, n_triples)) + 1j * rng.normal(size=(3, n_triples))
    e1, e2, e3 = ((a[i], d[i]) for i in range(3))
    left = engines.combine(engines.combine(e1, e2), e3)
    right = engines.combine(e1, engines.combine(e2, e3))
    assoc = max(float(np.max(np.abs(left[0] - right[0]))),
                float(np.max(np.abs(left[1] - right[1]))))

    T, width = 1024, 4
    a_seq = rng.uniform(0.2, 0.999, size=(T, width))
    d_seq = rng.normal(size=(T, width))
    base = engines.scan(a_seq, d_seq, workers=1)
    spread = 0.0
    for w in worker_counts[1:]:
        spread = max(spread, _rel_diff(base, engines.scan(a_seq, d_seq, workers=w)))
    entry = _entry("combine_associativity", assoc, tol, n_triples)
    entry["worker_invariance"] = {"measured": spread, "tolerance": scan_tol,
                                  "workers": list(worker_counts)}
    entry["passed"] = entry["passed"] and spread <= scan_tol
    return entry


def run_all(seed=0, fault=None):
    """Every suite once; `fault` breaks the matching suite on purpose."""
    checks = [
        suite_equivalence(seed),
        suite_ltv(seed),
        suite_gradients(seed, fault=fault),
        suite_eig_disk(seed, fault=fault),
        suite_associativity(seed),
    ]
    return {"passed": all(c["passed"] for c in checks), "checks": checks}
