"""Quick invariant checks runnable from the command line against an installed build."""

from __future__ import annotations

import traceback
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import io
from .aggregate import PoolNormConfig, hellinger_check, normalize, pool
from .codebook import Codebook, gmm_fit, kmeans_fit, log_likelihood
from .encoders import ENCODER_TAGS, EncoderSpec, LtcProjections, code_dim, encode, encode_llc
from .encoders.reconstruction import ReconConfig
from .errors import BovwError


@dataclass
class CheckResult:
    suite: str
    name: str
    ok: bool
    detail: str = ""


def _codebook(rng, K, D) -> Codebook:
    return Codebook(centroids=rng.normal(size=(K, D)), priors=np.full(K, 1.0 / K))


def _encoders_suite(rng) -> list[tuple[str, Callable[[], bool]]]:
    def dims():
        for K, D in [(4, 2), (8, 5), (16, 12)]:
            cb = _codebook(rng, K, D)
            g = gmm_fit(rng.normal(size=(20 * K, D)), K, max_iters=3)
            C = max(1, D // 2)
            proj = LtcProjections(np.tile(np.eye(D)[:, :C], (K, 1, 1)), np.zeros(K, bool))
            x = rng.normal(size=(3, D))
            for tag in ENCODER_TAGS:
                spec = EncoderSpec(tag, {"k": min(5, K)})
                out = encode(spec, x, g if tag == "fv" else cb, projections=proj)
                if out.values.shape != (3, code_dim(tag, K, D, C)):
                    return False
        return True

    def soft_k_equals_all():
        cb = _codebook(rng, 8, 4)
        x = rng.normal(size=(50, 4))
        pairs = [("sa-k", "sa"), ("vlad-k", "vlad-all"), ("svc-k", "svc-all")]
        return all(
            np.max(np.abs(encode(EncoderSpec(a, {"k": 8}), x, cb).values - encode(b, x, cb).values)) <= 1e-12
            for a, b in pairs
        )

    def llc_matches_dense():
        cb = _codebook(rng, 10, 6)
        cfg = ReconConfig(k=4)
        for x in rng.normal(size=(20, 6)):
            idx = np.argsort(np.sum((cb.centroids - x) ** 2, axis=1), kind="stable")[:4]
            B = cb.centroids[idx] - x
            Cm = B @ B.T
            Cm += cfg.ridge * np.trace(Cm) * np.eye(4)
            A = np.block([[2 * Cm, np.ones((4, 1))], [np.ones((1, 4)), np.zeros((1, 1))]])
            w = np.linalg.solve(A, np.r_[np.zeros(4), 1.0])[:4]
            s = encode_llc(x, cb, cfg)
            if np.max(np.abs(s[idx] - w)) > 1e-8:
                return False
        return True

    return [("dim contracts", dims), ("soft-k(k=K) == soft-all", soft_k_equals_all), ("LLC vs dense solve", llc_matches_dense)]


def _aggregate_suite(rng) -> list[tuple[str, Callable[[], bool]]]:
    def hellinger():
        return all(hellinger_check(rng.random(30) + 1e-3) for _ in range(100))

    def idempotent():
        cfg = PoolNormConfig(power_alpha=None, final_norm="l2")
        v = rng.normal(size=40)
        once = normalize(v, cfg).vector
        return np.max(np.abs(normalize(once, cfg).vector - once)) <= 1e-12

    def order_invariant():
        rows = rng.normal(size=(200, 16))
        return np.array_equal(pool(rows[rng.permutation(200)]), pool(rows))

    return [("Hellinger identity", hellinger), ("normalize idempotent", idempotent), ("sum pooling order", order_invariant)]


def _codebook_suite(rng) -> list[tuple[str, Callable[[], bool]]]:
    data = np.concatenate([rng.normal(m, 1.0, size=(300, 3)) for m in (-4, 0, 4)])

    def kmeans_monotone():
        h = kmeans_fit(data, 6, max_iters=20, seed=1).objective_history
        return all(b <= a + 1e-9 * abs(a) for a, b in zip(h, h[1:]))

    def em_monotone():
        h = gmm_fit(data, 3, max_iters=20, seed=1, tol=0.0).loglik_history
        return all(b >= a - 1e-9 * abs(a) for a, b in zip(h, h[1:]))

    def roundtrip():
        g = gmm_fit(data, 3, max_iters=5, seed=1)
        buf = io.model_bytes(g)
        back = io.parse_model(buf)
        return io.model_bytes(back) == buf and abs(log_likelihood(back, data) - log_likelihood(g, data)) < 1e-3

    return [("k-means objective non-increasing", kmeans_monotone), ("EM log-likelihood non-decreasing", em_monotone),
            ("model file round trip", roundtrip)]


SUITES = {"encoders": _encoders_suite, "aggregate": _aggregate_suite, "codebook": _codebook_suite}


def run_selftest(model_files=(), seed: int = 0, suites=tuple(SUITES)) -> list[CheckResult]:
    results = []
    for suite in suites:
        rng = np.random.default_rng(seed)
        for name, fn in SUITES[suite](rng):
            try:
                ok, detail = bool(fn()), ""
            except Exception as exc:  # a broken check is a failed check
                ok, detail = False, f"{type(exc).__name__}: {exc}"
                detail += "\n" + traceback.format_exc(limit=3)
            results.append(CheckResult(suite, name, ok, detail))
    for path in model_files:
        try:
            io.read_model(path)
            results.append(CheckResult("models", str(path), True))
        except (BovwError, OSError) as exc:
            results.append(CheckResult("models", str(path), False, f"load failed: {exc}"))
    return results


def format_results(results: list[CheckResult]) -> str:
    lines = []
    for r in results:
        lines.append(f"[{'PASS' if r.ok else 'FAIL'}] {r.suite}: {r.name}")
        if r.detail and not r.ok:
            lines.append("    " + r.detail.strip().splitlines()[0])
    by_suite: dict[str, bool] = {}
    for r in results:
        by_suite[r.suite] = by_suite.get(r.suite, True) and r.ok
    lines += [f"suite {s}: {'pass' if ok else 'FAIL'}" for s, ok in by_suite.items()]
    return "\n".join(lines)
