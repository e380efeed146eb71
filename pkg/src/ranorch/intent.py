"""Natural-language intent processing.

An intent like "Boost system throughput by 15%" becomes a typed record via
one of two routes: a few-shot prompt sent to a pluggable text-completion
backend, or a deterministic grammar used when no backend is configured or
the backend's answer cannot be parsed. Both routes end in the same
:class:`ProcessedIntent`.
"""

from __future__ import annotations

import logging
import re
import urllib.error
import urllib.request
import uuid
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from ranorch.config import KpiKind

log = logging.getLogger("ranorch.intent")

DEFAULT_TIMEOUT_S = 10.0
DEFAULT_MAX_RESPONSE_BYTES = 4096


class IntentError(Exception):
    """Base class for intent pipeline failures."""


class UnintelligibleIntent(IntentError):
    """The text does not express a recognizable KPI change request."""


class ParseFailure(IntentError):
    """The backend answered, but not in the expected Type/Keywords shape."""


class BackendUnavailable(IntentError):
    """Transport-level failure: connect, timeout, or HTTP error status."""


class BackendMisbehavior(IntentError):
    """The backend replied with something unusable: oversized or not UTF-8."""


@dataclass(frozen=True)
class IntentExample:
    """One few-shot record: raw text with its labeled type and keywords."""

    intent: str
    intent_type: KpiKind
    keywords: tuple[str, ...]


@dataclass(frozen=True)
class ProcessedIntent:
    raw_text: str
    intent_type: KpiKind
    keywords: tuple[str, ...]
    magnitude_pct: float  # signed: a delay reduction is negative
    source: str  # "llm" | "fallback"


@dataclass(frozen=True)
class LlmBackend:
    """Where and how to reach the completion endpoint."""

    url: str
    timeout_s: float = DEFAULT_TIMEOUT_S
    max_response_bytes: int = DEFAULT_MAX_RESPONSE_BYTES


# ---------------------------------------------------------------------------
# prompt assembly and response parsing


def create_prompt(examples: Sequence[IntentExample], intent: str) -> str:
    """Assemble the few-shot prompt, examples in order, then the request."""
    if not examples:
        raise ValueError("example store is empty; cannot build a few-shot prompt")
    if not intent or not intent.strip():
        raise ValueError("intent text is empty")
    blocks = []
    for ex in examples:
        blocks.append(
            "Example:\n"
            f"Intent: {ex.intent}\n"
            f"Type: {ex.intent_type.value}\n"
            f"Keywords: {', '.join(ex.keywords)}"
        )
    blocks.append(f"New Intent: {intent}")
    blocks.append("Type, Keywords")
    return "\n".join(blocks)


_TYPE_LINE = re.compile(r"^\s*Type\s*:\s*(.+?)\s*$", re.MULTILINE)
_KEYWORDS_LINE = re.compile(r"^\s*Keywords\s*:\s*(.+?)\s*$", re.MULTILINE)

_TYPE_LABELS = {
    "throughput": KpiKind.THROUGHPUT,
    "energy_efficiency": KpiKind.ENERGY_EFFICIENCY,
    "energy efficiency": KpiKind.ENERGY_EFFICIENCY,
    "delay": KpiKind.DELAY,
}


def parse_response(text: str) -> tuple[KpiKind, tuple[str, ...]]:
    """Extract the first Type/Keywords pair from a completion.

    The type label set is closed; anything else (including near-misses like
    "latency") raises :class:`ParseFailure`.
    """
    type_m = _TYPE_LINE.search(text)
    kw_m = _KEYWORDS_LINE.search(text)
    if not type_m or not kw_m:
        raise ParseFailure("completion lacks Type/Keywords lines")
    label = type_m.group(1).strip().lower().replace("-", " ").replace("_", " ")
    label = " ".join(label.split())
    normalized = label.replace(" ", "_") if label != "energy efficiency" else label
    kind = _TYPE_LABELS.get(label) or _TYPE_LABELS.get(normalized)
    if kind is None:
        raise ParseFailure(f"unknown intent type label {label!r}")
    keywords = tuple(k.strip() for k in kw_m.group(1).split(",") if k.strip())
    if not keywords:
        raise ParseFailure("empty keyword list")
    return kind, keywords


def query_llm(prompt: str, backend: LlmBackend) -> str:
    """Send the prompt as a UTF-8 POST body, return the completion text."""
    corr = uuid.uuid4().hex[:12]
    req = urllib.request.Request(
        backend.url,
        data=prompt.encode("utf-8"),
        headers={"Content-Type": "text/plain; charset=utf-8"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(req, timeout=backend.timeout_s) as resp:
            body = resp.read(backend.max_response_bytes + 1)
    except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
        log.warning("backend unavailable (corr=%s): %s", corr, exc)
        raise BackendUnavailable(str(exc)) from exc
    if len(body) > backend.max_response_bytes:
        log.warning("oversized completion (corr=%s)", corr)
        raise BackendMisbehavior(
            f"completion exceeds {backend.max_response_bytes} bytes"
        )
    try:
        return body.decode("utf-8")
    except UnicodeDecodeError as exc:
        log.warning("undecodable completion (corr=%s)", corr)
        raise BackendMisbehavior("completion is not valid UTF-8") from exc


# ---------------------------------------------------------------------------
# deterministic grammar

_UP_VERBS = r"(?:increase|boost|improve|raise|maximize|grow)"
_DOWN_VERBS = r"(?:reduce|decrease|lower|cut|minimize|drop)"
_METRICS = {
    "throughput": KpiKind.THROUGHPUT,
    "energy efficiency": KpiKind.ENERGY_EFFICIENCY,
    "delay": KpiKind.DELAY,
}
_METRIC_RE = re.compile(
    r"\b(throughput|energy[ _-]efficiency|delay)\b", re.IGNORECASE
)
_DIRECTION_RE = re.compile(
    rf"\b({_UP_VERBS})\b|\b({_DOWN_VERBS})\b", re.IGNORECASE
)
_BY_PCT_RE = re.compile(r"\bby\s+(\d+(?:\.\d+)?)\s*%", re.IGNORECASE)
_PCT_TOKEN_RE = re.compile(r"^(\d+(?:\.\d+)?)\s*%$")


def _fallback_parse(text: str) -> tuple[KpiKind, float, tuple[str, ...]]:
    direction = _DIRECTION_RE.search(text)
    metric = _METRIC_RE.search(text)
    pct = _BY_PCT_RE.search(text)
    missing = [
        name
        for name, m in (("direction verb", direction), ("metric", metric), ("'by N%'", pct))
        if m is None
    ]
    if missing:
        raise UnintelligibleIntent(f"cannot parse intent: missing {', '.join(missing)}")
    metric_norm = " ".join(metric.group(1).lower().replace("_", " ").replace("-", " ").split())
    kind = _METRICS[metric_norm]
    magnitude = float(pct.group(1))
    if direction.group(2):  # matched a decrease verb
        magnitude = -magnitude
    if magnitude == 0:
        raise UnintelligibleIntent("zero-magnitude intent")
    keywords = (metric_norm if kind != KpiKind.ENERGY_EFFICIENCY else "energy efficiency",
                f"{pct.group(1)}%")
    return kind, magnitude, keywords


def _magnitude_from_keywords(
    keywords: Sequence[str], raw_text: str
) -> Optional[float]:
    pct: Optional[float] = None
    for kw in keywords:
        m = _PCT_TOKEN_RE.match(kw.strip())
        if m:
            pct = float(m.group(1))
            break
    if pct is None:
        m = _BY_PCT_RE.search(raw_text)
        if m:
            pct = float(m.group(1))
    if pct is None or pct == 0:
        return None
    direction = _DIRECTION_RE.search(raw_text)
    if direction is None:
        return None
    return -pct if direction.group(2) else pct


def classify_and_extract(
    text: str,
    examples: Sequence[IntentExample],
    backend: Optional[LlmBackend] = None,
) -> ProcessedIntent:
    """Classify an intent and extract its signed magnitude.

    With a backend configured, the few-shot route is tried first; its answer
    is only trusted when both the type parses and a magnitude is recoverable.
    Everything else, including a dead or misbehaving backend, degrades to the
    deterministic grammar, so the only error callers see is
    :class:`UnintelligibleIntent`.
    """
    if not text or not text.strip():
        raise UnintelligibleIntent("empty intent text")
    if backend is not None:
        prompt = create_prompt(examples, text)
        try:
            completion = query_llm(prompt, backend)
            kind, keywords = parse_response(completion)
            magnitude = _magnitude_from_keywords(keywords, text)
            if magnitude is not None:
                return ProcessedIntent(text, kind, keywords, magnitude, "llm")
            log.info("backend answer had no usable magnitude; using fallback")
        except (BackendUnavailable, BackendMisbehavior) as exc:
            log.warning("backend failure (%s); using fallback", exc)
        except ParseFailure as exc:
            log.info("backend answer unparseable (%s); using fallback", exc)
    kind, magnitude, keywords = _fallback_parse(text)
    return ProcessedIntent(text, kind, keywords, magnitude, "fallback")


# ---------------------------------------------------------------------------
# example store

_STORE_FIELDS = ("Intent", "Type", "Keywords")


def parse_example_store(text: str) -> tuple[IntentExample, ...]:
    """Parse blank-line separated Intent/Type/Keywords records."""
    examples = []
    for i, block in enumerate(re.split(r"\n\s*\n", text.strip()), 1):
        if not block.strip():
            continue
        fields = {}
        for line in block.splitlines():
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            key, sep, value = line.partition(":")
            if not sep:
                raise ValueError(f"example {i}: line without ':' separator: {line!r}")
            fields[key.strip()] = value.strip()
        missing = [f for f in _STORE_FIELDS if f not in fields]
        if missing:
            raise ValueError(f"example {i}: missing field(s) {', '.join(missing)}")
        try:
            kind = KpiKind(fields["Type"])
        except ValueError:
            raise ValueError(f"example {i}: unknown type {fields['Type']!r}") from None
        keywords = tuple(k.strip() for k in fields["Keywords"].split(",") if k.strip())
        if not keywords:
            raise ValueError(f"example {i}: empty keywords")
        examples.append(IntentExample(fields["Intent"], kind, keywords))
    return tuple(examples)


def format_example_store(examples: Sequence[IntentExample]) -> str:
    blocks = [
        f"Intent: {ex.intent}\nType: {ex.intent_type.value}\n"
        f"Keywords: {', '.join(ex.keywords)}"
        for ex in examples
    ]
    return "\n\n".join(blocks) + "\n"


def load_example_store(path: str | Path) -> tuple[IntentExample, ...]:
    return parse_example_store(Path(path).read_text(encoding="utf-8"))


def load_default_examples() -> tuple[IntentExample, ...]:
    """The six curated examples shipped with the package, two per type."""
    text = (
        resources.files("ranorch").joinpath("data/intent_examples.txt").read_text("utf-8")
    )
    return parse_example_store(text)
