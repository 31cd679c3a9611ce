"""Verification of screening proposals with a multimodal completion model.

One request per series: the annotated full-series plot plus a prompt that
lists the proposals, asks the model to confirm, reject or add intervals, and
demands a bare JSON verdict with 1..3 confidence ratings. Intervals rated 1
are discarded. The model client is pluggable; the mock echo client makes
the whole pipeline runnable offline.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import re
import time
from dataclasses import dataclass, field

from .detections import Detections, clamp_interval, merge_intervals
from .errors import ConfigurationError, TransportError, VerificationParseError

log = logging.getLogger(__name__)

PROMPT_TEMPLATE = """You are an expert in both time-series analysis and multimodal (vision + language) reasoning. You will be shown:

1. A plot of raw time-series data
   - X-axis: time step index
   - Y-axis: signal value over time

2. Preliminary "vision-based" anomaly windows
   - A list of intervals detected by a coarse, purely visual model (may include false positives and false negatives)

Preliminary anomaly windows (inclusive [start, end] index pairs): {proposals}
The series spans time steps 0 to {t_max}.

Your goal is to integrate both sources—the visual plot and the preliminary windows—and produce a refined, final anomaly detection for the entire series. Specifically:
- Eliminate any preliminary windows that look anomalous in isolation but are consistent with the overall trend.
- Add any intervals that the visual model missed but which break temporal continuity or exhibit clear statistical irregularities (spikes, level shifts, abrupt changes).

Response format
Reply only with a JSON object containing these fields:
{{
  "interval_index": [[start1,end1],[start2,end2],...],
  "confidence":    [c1,c2,...],
  "abnormal_description": "..."
}}
where:
- "interval_index": an array of [start, end] pairs (inclusive indices).
- "confidence": a parallel array of integers (1-3 scale).
- "abnormal_description": a single paragraph (less than 100 words) summarizing why these intervals are anomalous.

Confidence scale:
- 1 = Low confidence: ambiguous or very subtle deviation.
- 2 = Medium confidence: clear local irregularity but moderate global uncertainty.
- 3 = High confidence: strong statistical or contextual evidence of anomaly.

Important:
- Estimate interval boundaries using the tick marks on the x-axis as precisely as possible.
- The very first segment may appear atypical due to slicing; do not flag it without clear anomaly evidence.
- Do not include any extra keys or commentary—only the JSON object above."""


@dataclass
class TokenStats:
    """Provider-reported usage for one or more completion calls."""

    prompt_tokens: int = 0
    completion_tokens: int = 0
    seconds: float = 0.0
    calls: int = 0

    def __add__(self, other: "TokenStats") -> "TokenStats":
        return TokenStats(
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
            self.seconds + other.seconds,
            self.calls + other.calls,
        )

    def to_json(self) -> dict:
        return {
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "seconds": self.seconds,
            "calls": self.calls,
        }


@dataclass
class VerificationRequest:
    image_png: bytes
    prompt: str
    proposals: Detections
    T: int


@dataclass
class VerificationResult:
    detections: Detections  # intervals with parallel 1..3 confidences
    description: str
    usage: TokenStats = field(default_factory=TokenStats)
    retries: int = 0
    fallback: bool = False  # true when the model reply was unparseable


def build_prompt(proposals: Detections, T: int) -> str:
    """Fill the verification prompt template with the proposal list.

    Single-channel only; a multivariate variant would list per-channel
    proposals against a stacked-subplot image, which this builder does not
    attempt.
    """
    pairs = json.dumps(proposals.to_json(), separators=(",", ":"))
    return PROMPT_TEMPLATE.format(proposals=pairs, t_max=T - 1)


class MockEchoClient:
    """Offline client that confirms every proposal at a fixed confidence.

    It reads the proposal list straight out of the prompt, so it exercises
    the same prompt/parse path as a live model. Token usage is a
    deterministic length-based estimate.
    """

    def __init__(self, confidence: int = 3):
        self.confidence = confidence

    def complete(self, image_png: bytes, prompt: str) -> tuple[str, TokenStats]:
        match = re.search(r"index pairs\): (\[.*\])$", prompt, re.MULTILINE)
        pairs = json.loads(match.group(1)) if match else []
        reply = json.dumps(
            {
                "interval_index": pairs,
                "confidence": [self.confidence] * len(pairs),
                "abnormal_description": "Echo of the screening proposals.",
            }
        )
        usage = TokenStats(len(prompt) // 4, len(reply) // 4, 0.0, 1)
        return reply, usage


class ScriptedClient:
    """Test client replaying canned replies; exceptions in the script are raised."""

    def __init__(self, script: list):
        self.script = list(script)
        self.calls = 0

    def complete(self, image_png: bytes, prompt: str) -> tuple[str, TokenStats]:
        if not self.script:
            raise AssertionError("scripted client exhausted")
        item = self.script.pop(0)
        self.calls += 1
        if isinstance(item, Exception):
            raise item
        return item, TokenStats(len(prompt) // 4, len(item) // 4, 0.0, 1)


class HttpVisionClient:
    """OpenAI-style chat-completions client sending one image and one prompt.

    Credentials come only from the environment; a missing key is a
    configuration error raised before any network traffic.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "VISTAD_API_KEY",
        temperature: float = 0.0,
        timeout: float = 120.0,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.temperature = temperature
        self.timeout = timeout

    def complete(self, image_png: bytes, prompt: str) -> tuple[str, TokenStats]:
        import requests

        key = os.environ.get(self.api_key_env)
        if not key:
            raise ConfigurationError(f"environment variable {self.api_key_env} is not set")
        b64 = base64.b64encode(image_png).decode("ascii")
        body = {
            "model": self.model,
            "temperature": self.temperature,
            "messages": [
                {
                    "role": "user",
                    "content": [
                        {"type": "text", "text": prompt},
                        {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}},
                    ],
                }
            ],
        }
        started = time.monotonic()
        try:
            resp = requests.post(
                f"{self.endpoint}/chat/completions",
                json=body,
                headers={"Authorization": f"Bearer {key}"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(f"completion endpoint unreachable: {exc}") from None
        if resp.status_code in (401, 403):
            raise ConfigurationError(f"completion endpoint rejected credentials ({resp.status_code})")
        if resp.status_code != 200:
            raise TransportError(f"completion endpoint returned {resp.status_code}")
        payload = resp.json()
        text = payload["choices"][0]["message"]["content"]
        usage = payload.get("usage", {})
        stats = TokenStats(
            int(usage.get("prompt_tokens", 0)),
            int(usage.get("completion_tokens", 0)),
            time.monotonic() - started,
            1,
        )
        return text, stats


def call(request: VerificationRequest, client, max_retries: int = 3, backoff: float = 0.5):
    """Invoke the client with bounded exponential-backoff retries on transport
    errors; configuration errors are never retried."""
    last: Exception | None = None
    for attempt in range(max_retries + 1):
        if attempt:
            time.sleep(backoff * (2 ** (attempt - 1)))
        try:
            text, usage = client.complete(request.image_png, request.prompt)
            return text, usage, attempt
        except TransportError as exc:
            last = exc
            log.warning("verification call failed (attempt %d): %s", attempt + 1, exc)
    raise TransportError(f"verification call failed after {max_retries + 1} attempts: {last}",
                         retries=max_retries)


_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def _first_json_object(text: str) -> dict:
    fenced = _FENCE_RE.search(text)
    if fenced:
        text = fenced.group(1)
    start = text.find("{")
    while start != -1:
        depth = 0
        for pos in range(start, len(text)):
            ch = text[pos]
            if ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    try:
                        obj = json.loads(text[start : pos + 1])
                        if isinstance(obj, dict):
                            return obj
                    except json.JSONDecodeError:
                        break
        start = text.find("{", start + 1)
    raise VerificationParseError("no parseable JSON object in model reply")


def parse_response(raw: str, T: int, usage: TokenStats | None = None) -> VerificationResult:
    """Extract and validate the JSON verdict from a raw completion.

    Code fences are stripped; intervals are clamped into [0, T-1] (tick-based
    boundary estimates are approximate) and a short confidence array is
    padded with 1, which destines the unpaired intervals for discard.
    """
    obj = _first_json_object(raw)
    for key in ("interval_index", "confidence", "abnormal_description"):
        if key not in obj:
            raise VerificationParseError(f"model reply is missing required field {key!r}")
    raw_pairs = obj["interval_index"]
    if not isinstance(raw_pairs, list):
        raise VerificationParseError("interval_index must be a list of [start, end] pairs")
    intervals = []
    for pair in raw_pairs:
        try:
            s, e = int(pair[0]), int(pair[1])
        except (TypeError, ValueError, IndexError):
            raise VerificationParseError(f"bad interval pair {pair!r}") from None
        intervals.append(clamp_interval(s, e, T - 1))
    confidences = [int(c) for c in obj["confidence"]][: len(intervals)]
    confidences += [1] * (len(intervals) - len(confidences))
    description = str(obj["abnormal_description"])
    return VerificationResult(
        detections=Detections(intervals, confidences),
        description=description,
        usage=usage or TokenStats(),
    )


def filter_confidence(result: VerificationResult, min_conf: int = 2) -> Detections:
    """Keep intervals rated at least min_conf, re-sorted with overlaps merged."""
    kept = [
        iv
        for iv, conf in zip(result.detections.intervals, result.detections.confidences or [])
        if conf >= min_conf
    ]
    return Detections(merge_intervals(kept, gap=0))


def verify_series(
    proposals: Detections,
    image_png: bytes,
    T: int,
    client,
    min_conf: int = 2,
    max_retries: int = 3,
    backoff: float = 0.5,
) -> tuple[Detections, VerificationResult]:
    """Run one series through prompting, the model call, parsing and filtering.

    An unparseable reply falls back to the screening proposals (the screen is
    the high-recall stage; losing the refinement beats losing the detection).
    """
    prompt = build_prompt(proposals, T)
    request = VerificationRequest(image_png=image_png, prompt=prompt, proposals=proposals, T=T)
    text, usage, retries = call(request, client, max_retries=max_retries, backoff=backoff)
    try:
        result = parse_response(text, T, usage)
        result.retries = retries
    except VerificationParseError as exc:
        log.warning("unparseable verification reply (%s); keeping proposals", exc)
        result = VerificationResult(
            detections=Detections(list(proposals.intervals), [3] * len(proposals)),
            description="",
            usage=usage,
            retries=retries,
            fallback=True,
        )
    final = filter_confidence(result, min_conf=min_conf)
    return final, result
