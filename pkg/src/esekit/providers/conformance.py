"""Wire-protocol conformance checks.

Runs golden request/response shape checks against any server claiming to
implement the provider protocol (the in-repo service or a sidecar), plus
the error-envelope contract. Each check is independent; the suite
reports all results rather than stopping at the first failure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import httpx

from .remote import ProviderEndpoint, RemoteProvider


@dataclass(frozen=True)
class ConformanceResult:
    name: str
    ok: bool
    detail: str = ""


def _check(name: str, fn) -> ConformanceResult:
    try:
        detail = fn() or ""
        return ConformanceResult(name, True, detail)
    except AssertionError as exc:
        return ConformanceResult(name, False, str(exc))
    except Exception as exc:
        return ConformanceResult(name, False, f"{type(exc).__name__}: {exc}")


def run_conformance(
    base_url: str,
    transport: httpx.BaseTransport | None = None,
    timeout: float = 10.0,
) -> list[ConformanceResult]:
    endpoint = ProviderEndpoint(base_url=base_url, timeout=timeout, retry=0)
    provider = RemoteProvider(endpoint, transport=transport)
    raw = httpx.Client(base_url=base_url, timeout=timeout, transport=transport)
    results: list[ConformanceResult] = []

    def embed_shape():
        vectors = provider.embed(["the quick brown fox", "jumped over"])
        assert len(vectors) == 2, f"expected 2 vectors, got {len(vectors)}"
        assert len(vectors[0]) == len(vectors[1]) > 0, "vector dims differ or are zero"
        again = provider.embed(["the quick brown fox", "jumped over"])
        assert all((a == b).all() for a, b in zip(vectors, again)), "embed is not deterministic"
        return f"dim={len(vectors[0])}"

    def logprob_distribution():
        allowed = ["alpha", "beta", "gamma"]
        logprobs = provider.next_token_logprobs(["hello"], allowed)
        assert set(logprobs) <= set(allowed), f"tokens outside allowed set: {set(logprobs) - set(allowed)}"
        assert logprobs, "empty logprob map"
        total = sum(math.exp(v) for v in logprobs.values())
        assert abs(total - 1.0) < 1e-6, f"probabilities over allowed sum to {total}, not 1"
        return ""

    def continuation_score():
        logprob, count = provider.score_continuation("alpha beta", "gamma")
        assert count >= 1, f"token_count {count} < 1"
        assert logprob <= 1e-9, f"logprob {logprob} is positive"
        again = provider.score_continuation("alpha beta", "gamma")
        assert (logprob, count) == again, "score_continuation is not deterministic"
        return ""

    def completion_text():
        text = provider.complete("alpha beta", max_tokens=4)
        assert isinstance(text, str)
        return ""

    def similarity_ranking():
        entities = provider.rank_similar(["alpha", "beta", "gamma"], ["alpha"], top=2)
        assert len(entities) <= 2, f"asked for 2, got {len(entities)}"
        assert set(entities) <= {"alpha", "beta", "gamma"}, "ranked entities outside candidates"
        return ""

    def error_envelope():
        response = raw.post("/v1/embed", json={"texts": "not-a-list"})
        assert response.status_code != 200, "malformed body accepted"
        body = response.json()
        assert isinstance(body.get("error"), str), "envelope missing string 'error'"
        assert isinstance(body.get("request_id"), str), "envelope missing string 'request_id'"
        return f"status={response.status_code}"

    for name, fn in (
        ("embed shape and determinism", embed_shape),
        ("next_token_logprobs renormalization", logprob_distribution),
        ("score_continuation contract", continuation_score),
        ("complete contract", completion_text),
        ("rank_similar contract", similarity_ranking),
        ("error envelope", error_envelope),
    ):
        results.append(_check(name, fn))
    provider.close()
    raw.close()
    return results


def assert_conformant(results: list[ConformanceResult]) -> None:
    failures = [r for r in results if not r.ok]
    if failures:
        lines = "\n".join(f"  {r.name}: {r.detail}" for r in failures)
        raise AssertionError(f"protocol conformance failures:\n{lines}")
