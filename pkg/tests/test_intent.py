"""Intent parsing: prompt format, grammar fallback, wire behaviour."""

from __future__ import annotations

import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ranorch.config import KpiKind
from ranorch.intent import (
    BackendMisbehavior,
    BackendUnavailable,
    IntentExample,
    LlmBackend,
    ParseFailure,
    ProcessedIntent,
    UnintelligibleIntent,
    classify_and_extract,
    create_prompt,
    format_example_store,
    load_default_examples,
    parse_example_store,
    parse_response,
    query_llm,
)

CANONICAL = [
    ("Increase overall energy efficiency by 10%", KpiKind.ENERGY_EFFICIENCY, 10.0),
    ("Boost system throughput by 15%", KpiKind.THROUGHPUT, 15.0),
    ("Reduce network delay by 13%", KpiKind.DELAY, -13.0),
]

ONE_EXAMPLE = (
    IntentExample(
        "Boost system throughput by 15%",
        KpiKind.THROUGHPUT,
        ("throughput", "15%"),
    ),
)


class _StubHandler(BaseHTTPRequestHandler):
    body: bytes = b""

    def do_POST(self):
        self.rfile.read(int(self.headers.get("Content-Length", 0)))
        self.send_response(200)
        self.send_header("Content-Type", "text/plain; charset=utf-8")
        self.send_header("Content-Length", str(len(self.body)))
        self.end_headers()
        self.wfile.write(self.body)

    def log_message(self, fmt, *args):
        pass


@pytest.fixture()
def stub_backend():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    backend = LlmBackend(url=f"http://127.0.0.1:{server.server_port}/", timeout_s=5.0)

    def configure(body: str) -> LlmBackend:
        _StubHandler.body = body.encode("utf-8")
        return backend

    yield configure
    server.shutdown()
    thread.join()


# -- prompt assembly ---------------------------------------------------------


def test_prompt_text_is_frozen():
    prompt = create_prompt(ONE_EXAMPLE, "Reduce network delay by 13%")
    assert prompt == (
        "Example:\n"
        "Intent: Boost system throughput by 15%\n"
        "Type: throughput\n"
        "Keywords: throughput, 15%\n"
        "New Intent: Reduce network delay by 13%\n"
        "Type, Keywords"
    )


def test_prompt_has_one_marker_per_example():
    examples = load_default_examples()[:3]
    prompt = create_prompt(examples, "Boost system throughput by 15%")
    assert prompt.count("Example:") == 3
    assert prompt.rstrip().endswith("Type, Keywords")


def test_prompt_requires_examples_and_text():
    with pytest.raises(ValueError):
        create_prompt((), "Boost system throughput by 15%")
    with pytest.raises(ValueError):
        create_prompt(ONE_EXAMPLE, "   ")


def test_prompt_is_deterministic():
    a = create_prompt(load_default_examples(), "Reduce network delay by 13%")
    b = create_prompt(load_default_examples(), "Reduce network delay by 13%")
    assert a == b


# -- completion parsing --------------------------------------------------------


def test_parse_response_extracts_fields():
    kind, kws = parse_response(
        "Type: energy_efficiency\nKeywords: energy efficiency, 10%"
    )
    assert kind is KpiKind.ENERGY_EFFICIENCY
    assert kws == ("energy efficiency", "10%")


def test_parse_response_rejects_gibberish():
    with pytest.raises(ParseFailure):
        parse_response("gibberish")


def test_parse_response_rejects_unknown_label():
    with pytest.raises(ParseFailure):
        parse_response("Type: latency\nKeywords: delay")


def test_parse_response_rejects_empty_keywords():
    with pytest.raises(ParseFailure):
        parse_response("Type: delay\nKeywords: , ,")


def test_parse_response_label_variants():
    for label in ("energy efficiency", "energy_efficiency", "Energy-Efficiency"):
        kind, _ = parse_response(f"Type: {label}\nKeywords: x")
        assert kind is KpiKind.ENERGY_EFFICIENCY


# -- fallback grammar ----------------------------------------------------------


@pytest.mark.parametrize("text, kind, magnitude", CANONICAL)
def test_canonical_intents_parse_via_fallback(text, kind, magnitude):
    got = classify_and_extract(text, load_default_examples(), backend=None)
    assert got.intent_type is kind
    assert got.magnitude_pct == magnitude
    assert got.source == "fallback"
    assert got.keywords


def test_direction_verbs_set_the_sign():
    up = classify_and_extract("Improve throughput by 5%", ())
    down = classify_and_extract("Cut delay by 20%", ())
    assert up.magnitude_pct == 5.0
    assert down.magnitude_pct == -20.0


def test_unintelligible_text_is_rejected_with_what_is_missing():
    with pytest.raises(UnintelligibleIntent, match="metric"):
        classify_and_extract("make the network nice", ())
    with pytest.raises(UnintelligibleIntent):
        classify_and_extract("", ())
    with pytest.raises(UnintelligibleIntent, match="zero"):
        classify_and_extract("Increase throughput by 0%", ())


@settings(max_examples=300, deadline=None)
@given(st.text(max_size=200))
def test_fallback_totality_over_arbitrary_text(text):
    try:
        got = classify_and_extract(text, ())
    except UnintelligibleIntent:
        return
    assert isinstance(got, ProcessedIntent)
    assert got.magnitude_pct != 0


# -- wire path -----------------------------------------------------------------


def test_echo_stub_round_trips_verbatim(stub_backend):
    backend = stub_backend("Type: throughput\nKeywords: throughput, 15%")
    out = query_llm("anything", backend)
    assert out == "Type: throughput\nKeywords: throughput, 15%"


def test_llm_path_parses_and_reports_source(stub_backend):
    backend = stub_backend("Type: throughput\nKeywords: throughput, 15%")
    got = classify_and_extract(
        "Boost system throughput by 15%", load_default_examples(), backend
    )
    assert got.intent_type is KpiKind.THROUGHPUT
    assert got.magnitude_pct == 15.0
    assert got.source == "llm"


@pytest.mark.parametrize("text, kind, magnitude", CANONICAL)
def test_canonical_intents_parse_via_llm_path(stub_backend, text, kind, magnitude):
    label = kind.value
    pct = f"{abs(magnitude):g}%"
    backend = stub_backend(f"Type: {label}\nKeywords: {label}, {pct}")
    got = classify_and_extract(text, load_default_examples(), backend)
    assert got.intent_type is kind
    assert got.magnitude_pct == magnitude
    assert got.source == "llm"


def test_unparseable_completion_degrades_to_fallback(stub_backend):
    backend = stub_backend("no structured fields here")
    got = classify_and_extract(
        "Boost system throughput by 15%", load_default_examples(), backend
    )
    assert got.intent_type is KpiKind.THROUGHPUT
    assert got.source == "fallback"  # source honesty: llm only when llm parsed


def test_oversized_completion_is_misbehavior(stub_backend):
    backend = stub_backend("x" * 5000)  # cap is 4096
    with pytest.raises(BackendMisbehavior):
        query_llm("p", backend)


def test_unreachable_backend_raises_within_timeout():
    backend = LlmBackend(url="http://127.0.0.1:1/", timeout_s=2.0)
    with pytest.raises(BackendUnavailable):
        query_llm("p", backend)


def test_dead_backend_still_classifies_via_fallback():
    backend = LlmBackend(url="http://127.0.0.1:1/", timeout_s=2.0)
    got = classify_and_extract(
        "Reduce network delay by 13%", load_default_examples(), backend
    )
    assert got.intent_type is KpiKind.DELAY
    assert got.source == "fallback"


# -- example store ---------------------------------------------------------------


def test_default_store_has_six_examples_two_per_type():
    examples = load_default_examples()
    assert len(examples) == 6
    by_type = {}
    for ex in examples:
        by_type.setdefault(ex.intent_type, []).append(ex)
        assert ex.keywords
    assert {k: len(v) for k, v in by_type.items()} == {
        KpiKind.THROUGHPUT: 2,
        KpiKind.ENERGY_EFFICIENCY: 2,
        KpiKind.DELAY: 2,
    }


def test_store_round_trips_through_text():
    examples = load_default_examples()
    assert parse_example_store(format_example_store(examples)) == examples


def test_every_shipped_example_classifies_to_its_own_type():
    examples = load_default_examples()
    for ex in examples:
        got = classify_and_extract(ex.intent, examples, backend=None)
        assert got.intent_type is ex.intent_type


def test_every_shipped_example_classifies_via_llm_path(stub_backend):
    examples = load_default_examples()
    for ex in examples:
        backend = stub_backend(
            f"Type: {ex.intent_type.value}\nKeywords: {', '.join(ex.keywords)}"
        )
        got = classify_and_extract(ex.intent, examples, backend)
        assert got.intent_type is ex.intent_type
        assert got.source == "llm"
