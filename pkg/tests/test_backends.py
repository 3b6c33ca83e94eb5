from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from groundcite.backends import (
    GenerationRequest,
    HttpGenerator,
    HttpScorer,
    MockGenerator,
    OracleScorer,
    ProtocolError,
    ScriptExhaustedError,
    TransportError,
    UsageMeter,
    estimate_tokens,
    generate,
    nli_score,
    nli_score_batch,
)


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length)
        self.server.requests.append({"body": body, "headers": dict(self.headers)})
        if self.server.responses:
            status, payload = self.server.responses.pop(0)
        else:
            status, payload = 200, {}
        raw = payload if isinstance(payload, (bytes, str)) else json.dumps(payload)
        if isinstance(raw, str):
            raw = raw.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def log_message(self, *args):
        pass


class BackendServer:
    def __init__(self):
        self.server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
        self.server.requests = []
        self.server.responses = []
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def url(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}/"

    @property
    def requests(self):
        return self.server.requests

    def enqueue(self, status, payload):
        self.server.responses.append((status, payload))

    def stop(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def server():
    srv = BackendServer()
    yield srv
    srv.stop()


class TestGenerationRequest:
    def test_zero_samples_rejected(self):
        with pytest.raises(ValueError):
            GenerationRequest(prompt="p", num_samples=0)

    def test_negative_temperature_rejected(self):
        with pytest.raises(ValueError):
            GenerationRequest(prompt="p", temperature=-0.1)

    def test_bad_top_p_rejected(self):
        with pytest.raises(ValueError):
            GenerationRequest(prompt="p", top_p=0.0)
        with pytest.raises(ValueError):
            GenerationRequest(prompt="p", top_p=1.5)


class TestMockGenerator:
    def test_scripted_texts_in_order(self):
        mock = MockGenerator(["a", "b", "c", "d"])
        result = generate(mock, GenerationRequest(prompt="p", num_samples=4))
        assert result.texts == ("a", "b", "c", "d")

    def test_consumption_is_sequential_and_exhausting(self):
        mock = MockGenerator(["a", "b", "c", "d", "e"])
        generate(mock, GenerationRequest(prompt="p", num_samples=2))
        assert mock.remaining == 3
        result = generate(mock, GenerationRequest(prompt="p", num_samples=1))
        assert result.texts == ("c",)
        assert mock.remaining == 2

    def test_exhausted_script_errors(self):
        mock = MockGenerator(["only"])
        with pytest.raises(ScriptExhaustedError):
            generate(mock, GenerationRequest(prompt="p", num_samples=2))

    def test_usage_is_estimated(self):
        mock = MockGenerator(["abcdefgh"])
        result = generate(mock, GenerationRequest(prompt="x" * 8, num_samples=1))
        assert result.usage.estimated
        assert result.usage.prompt_tokens == 2
        assert result.usage.completion_tokens == 2

    def test_meter_records_llm_event(self):
        meter = UsageMeter()
        mock = MockGenerator(["abcd"], meter=meter)
        generate(mock, GenerationRequest(prompt="abcd", num_samples=1))
        assert meter.count("llm") == 1
        assert meter.total("llm") == 2


class TestOracleScorer:
    def test_substring_gives_one(self):
        scorer = OracleScorer()
        assert nli_score(scorer, "Title\nThe wave was huge in Lituya Bay.", "The wave was huge in Lituya Bay.") == 1.0

    def test_normalization_ignores_case_and_punctuation(self):
        scorer = OracleScorer()
        assert nli_score(scorer, "the WAVE, was: huge", "The wave was huge!") == 1.0

    def test_no_overlap_gives_zero(self):
        scorer = OracleScorer()
        assert nli_score(scorer, "completely different text", "unrelated claim") == 0.0

    def test_override_table(self):
        scorer = OracleScorer(overrides={("premise one", "claim one"): 0.65})
        assert nli_score(scorer, "Premise one!", "Claim ONE.") == 0.65

    def test_not_symmetric(self):
        scorer = OracleScorer()
        assert nli_score(scorer, "a b c", "b") == 1.0
        assert nli_score(scorer, "b", "a b c") == 0.0

    def test_empty_inputs_rejected(self):
        scorer = OracleScorer()
        with pytest.raises(ValueError):
            nli_score(scorer, "", "h")
        with pytest.raises(ValueError):
            nli_score(scorer, "p", "")

    def test_meter_records_nli_event(self):
        meter = UsageMeter()
        scorer = OracleScorer(meter=meter)
        nli_score(scorer, "abcd", "efgh")
        assert meter.count("nli") == 1
        assert meter.total("nli") == 2


class TestBatchScoring:
    def test_batch_matches_singles(self):
        scorer = OracleScorer(overrides={("p one", "h one"): 0.4})
        pairs = [(f"premise {i} alpha beta", f"premise {i}") for i in range(20)]
        pairs.append(("p one", "h one"))
        singles = [nli_score(scorer, p, h) for p, h in pairs]
        assert nli_score_batch(scorer, pairs) == singles

    def test_empty_batch(self):
        assert nli_score_batch(OracleScorer(), []) == []

    def test_failure_names_index(self):
        scorer = OracleScorer()
        with pytest.raises(ValueError, match="pair 1"):
            nli_score_batch(scorer, [("p", "h"), ("", "h")])


class TestHttpGenerator:
    def test_success_with_reported_usage(self, server):
        server.enqueue(200, {"texts": ["one", "two"], "prompt_tokens": 10, "completion_tokens": 4})
        gen = HttpGenerator(server.url, backoff=0.0)
        result = gen.generate(GenerationRequest(prompt="hello", num_samples=2, seed=7))
        assert result.texts == ("one", "two")
        assert result.usage.prompt_tokens == 10
        assert not result.usage.estimated
        sent = json.loads(server.requests[0]["body"])
        assert sent == {
            "prompt": "hello",
            "temperature": 0.5,
            "top_p": 0.95,
            "n": 2,
            "max_tokens": 512,
            "seed": 7,
        }

    def test_missing_usage_falls_back_to_estimate(self, server):
        server.enqueue(200, {"texts": ["abcd"]})
        result = HttpGenerator(server.url, backoff=0.0).generate(GenerationRequest(prompt="abcd"))
        assert result.usage.estimated
        assert result.usage.completion_tokens == estimate_tokens("abcd")

    def test_wrong_text_count_is_protocol_error(self, server):
        server.enqueue(200, {"texts": ["only one", "two", "three"]})
        gen = HttpGenerator(server.url, backoff=0.0)
        with pytest.raises(ProtocolError, match="expected 4"):
            gen.generate(GenerationRequest(prompt="p", num_samples=4))

    def test_non_json_reply_is_protocol_error(self, server):
        server.enqueue(200, "this is not json")
        with pytest.raises(ProtocolError):
            HttpGenerator(server.url, backoff=0.0).generate(GenerationRequest(prompt="p"))

    def test_4xx_is_protocol_error_without_retry(self, server):
        server.enqueue(400, {"error": "bad"})
        with pytest.raises(ProtocolError):
            HttpGenerator(server.url, backoff=0.0).generate(GenerationRequest(prompt="p"))
        assert len(server.requests) == 1

    def test_5xx_retries_then_succeeds(self, server):
        server.enqueue(500, {})
        server.enqueue(503, {})
        server.enqueue(200, {"texts": ["ok"]})
        result = HttpGenerator(server.url, backoff=0.0).generate(GenerationRequest(prompt="p"))
        assert result.texts == ("ok",)
        assert len(server.requests) == 3

    def test_payload_identical_across_retries(self, server):
        server.enqueue(500, {})
        server.enqueue(500, {})
        server.enqueue(200, {"texts": ["ok"]})
        HttpGenerator(server.url, backoff=0.0).generate(GenerationRequest(prompt="p", num_samples=1))
        bodies = [r["body"] for r in server.requests]
        assert bodies[0] == bodies[1] == bodies[2]

    def test_exhausted_retries_is_transport_error(self, server):
        for _ in range(3):
            server.enqueue(500, {})
        with pytest.raises(TransportError):
            HttpGenerator(server.url, backoff=0.0).generate(GenerationRequest(prompt="p"))
        assert len(server.requests) == 3

    def test_connection_refused_is_transport_error(self):
        gen = HttpGenerator("http://127.0.0.1:1/", backoff=0.0)
        with pytest.raises(TransportError):
            gen.generate(GenerationRequest(prompt="p"))

    def test_api_key_header(self, server):
        server.enqueue(200, {"texts": ["ok"]})
        HttpGenerator(server.url, api_key="sekrit", backoff=0.0).generate(GenerationRequest(prompt="p"))
        assert server.requests[0]["headers"].get("Authorization") == "Bearer sekrit"


class TestHttpScorer:
    def test_success(self, server):
        server.enqueue(200, {"score": 0.65})
        scorer = HttpScorer(server.url, backoff=0.0)
        assert nli_score(scorer, "premise", "hypothesis") == 0.65
        sent = json.loads(server.requests[0]["body"])
        assert sent == {"premise": "premise", "hypothesis": "hypothesis"}

    def test_out_of_range_score_is_protocol_error(self, server):
        server.enqueue(200, {"score": 1.5})
        with pytest.raises(ProtocolError, match="outside"):
            nli_score(HttpScorer(server.url, backoff=0.0), "p", "h")

    def test_non_numeric_score_is_protocol_error(self, server):
        server.enqueue(200, {"score": "high"})
        with pytest.raises(ProtocolError):
            nli_score(HttpScorer(server.url, backoff=0.0), "p", "h")

    def test_meter_records_estimated_nli_usage(self, server):
        server.enqueue(200, {"score": 1.0})
        meter = UsageMeter()
        nli_score(HttpScorer(server.url, backoff=0.0, meter=meter), "abcd", "efgh")
        assert meter.total("nli") == 2


def test_estimate_tokens():
    assert estimate_tokens("") == 0
    assert estimate_tokens("abc") == 1
    assert estimate_tokens("abcd") == 1
    assert estimate_tokens("abcde") == 2
