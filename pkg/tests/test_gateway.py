import json
import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from flowmine.errors import FixtureMissError, GatewayError
from flowmine.gateway import (
    ChatMessage,
    ChatRequest,
    ChatResponse,
    EmbeddingRequest,
    EmbeddingVector,
    FixtureStore,
    Gateway,
    Usage,
    canonical_json,
    fingerprint,
    request_digest,
)


class StubTransport:
    """Counts calls; answers chats by echoing and embeddings with a fixed dim."""

    def __init__(self, dim: int = 4):
        self.dim = dim
        self.calls = 0
        self.lock = threading.Lock()

    def chat(self, request: ChatRequest) -> ChatResponse:
        with self.lock:
            self.calls += 1
        return ChatResponse(text=f"echo:{request.messages[-1].content}")

    def embed_one(self, request: EmbeddingRequest) -> EmbeddingVector:
        with self.lock:
            self.calls += 1
        base = float(len(request.text))
        return EmbeddingVector(values=tuple(base + i for i in range(self.dim)))


def chat_req(content: str, **kwargs) -> ChatRequest:
    return ChatRequest(model_id="m", messages=(ChatMessage("user", content),), **kwargs)


class TestFingerprint:
    def test_identical_requests_equal_digests(self):
        assert request_digest(chat_req("x")) == request_digest(chat_req("x"))

    def test_temperature_changes_digest(self):
        assert request_digest(chat_req("x")) != request_digest(chat_req("x", temperature=0.7))

    def test_explicit_defaults_do_not_change_digest(self):
        assert request_digest(chat_req("x")) == request_digest(
            chat_req("x", temperature=0.0, seed=None, max_output=None)
        )

    def test_digest_is_64_hex(self):
        fp = fingerprint(chat_req("x"))
        assert len(fp.digest) == 64
        int(fp.digest, 16)

    def test_reordered_map_keys_equal_digest(self):
        payload = chat_req("x").canonical()
        shuffled = json.loads(json.dumps(payload))
        reordered = {k: shuffled[k] for k in reversed(list(shuffled))}
        assert canonical_json(payload) == canonical_json(reordered)

    @given(st.text(min_size=1, max_size=50), st.floats(min_value=0, max_value=2, allow_nan=False))
    def test_round_trip_preserves_digest(self, content, temperature):
        req = chat_req(content, temperature=temperature)
        rebuilt = ChatRequest(
            model_id="m",
            messages=tuple(ChatMessage(**m) for m in [{"role": "user", "content": content}]),
            temperature=temperature,
        )
        assert request_digest(req) == request_digest(rebuilt)


class TestRequestValidation:
    def test_empty_messages_rejected(self):
        with pytest.raises(GatewayError):
            ChatRequest(model_id="m", messages=())

    def test_assistant_first_rejected(self):
        with pytest.raises(GatewayError):
            ChatRequest(model_id="m", messages=(ChatMessage("assistant", "hi"),))

    def test_stop_requires_text(self):
        with pytest.raises(GatewayError):
            ChatResponse(text="", finish_reason="stop")

    def test_negative_usage_rejected(self):
        with pytest.raises(GatewayError):
            Usage(prompt_units=-1)


class TestModes:
    def test_record_then_replay(self, tmp_path):
        transport = StubTransport()
        rec = Gateway("record", tmp_path, transport=transport)
        out = rec.chat(chat_req("hello"))
        assert out.text == "echo:hello"
        assert transport.calls == 1

        replay = Gateway("replay", tmp_path)
        again = replay.chat(chat_req("hello"))
        assert again == out
        assert replay.transport_calls == 0

    def test_replay_miss_names_digest(self, tmp_path):
        replay = Gateway("replay", tmp_path)
        req = chat_req("never recorded")
        with pytest.raises(FixtureMissError) as err:
            replay.chat(req)
        assert err.value.digest == request_digest(req)

    def test_replay_mode_requires_no_transport(self, tmp_path):
        Gateway("replay", tmp_path)

    def test_record_mode_requires_transport(self, tmp_path):
        with pytest.raises(GatewayError):
            Gateway("record", tmp_path)

    def test_same_request_twice_hits_cache(self, tmp_path):
        transport = StubTransport()
        gw = Gateway("record", tmp_path, transport=transport)
        first = gw.chat(chat_req("dup"))
        second = gw.chat(chat_req("dup"))
        assert first == second
        assert transport.calls == 1

    def test_live_mode_never_writes_fixtures(self, tmp_path):
        transport = StubTransport()
        gw = Gateway("live", tmp_path, transport=transport)
        gw.chat(chat_req("x"))
        assert list(tmp_path.glob("*.json")) == []


class TestFixtureStore:
    def test_no_silent_overwrite(self, tmp_path):
        store = FixtureStore(tmp_path)
        req = chat_req("x")
        digest = request_digest(req)
        store.save(digest, req, ChatResponse(text="one"))
        store.save(digest, req, ChatResponse(text="one"))
        with pytest.raises(GatewayError):
            store.save(digest, req, ChatResponse(text="two"))
        store.save(digest, req, ChatResponse(text="two"), overwrite=True)
        assert store.load(digest).text == "two"

    def test_fixture_file_shape(self, tmp_path):
        store = FixtureStore(tmp_path)
        req = chat_req("x")
        digest = request_digest(req)
        store.save(digest, req, ChatResponse(text="y"))
        record = json.loads((tmp_path / f"{digest}.json").read_text())
        assert set(record) == {"request", "response", "recorded_at"}

    def test_verify_flags_tampered_fixture(self, tmp_path):
        store = FixtureStore(tmp_path)
        req = chat_req("x")
        digest = request_digest(req)
        store.save(digest, req, ChatResponse(text="y"))
        path = tmp_path / f"{digest}.json"
        record = json.loads(path.read_text())
        record["request"]["temperature"] = 0.9
        path.write_text(json.dumps(record))
        assert store.verify() == [digest]


class TestEmbeddings:
    def test_order_aligned_and_uniform_dim(self, tmp_path):
        gw = Gateway("record", tmp_path, transport=StubTransport(dim=3))
        vectors = gw.embed(["a", "bb"])
        assert len(vectors) == 2
        assert all(len(v.values) == 3 for v in vectors)
        assert vectors[0].values[0] == 1.0
        assert vectors[1].values[0] == 2.0

    def test_same_text_twice_identical_vectors(self, tmp_path):
        gw = Gateway("record", tmp_path, transport=StubTransport())
        a, b = gw.embed(["same", "same"])
        assert a.values == b.values

    def test_dimension_mismatch_rejected(self, tmp_path):
        transport = StubTransport(dim=3)
        gw = Gateway("record", tmp_path, transport=transport)
        gw.embed(["a"])
        transport.dim = 5
        with pytest.raises(GatewayError):
            gw.embed(["a", "zz"])

    def test_per_text_fixture_granularity(self, tmp_path):
        transport = StubTransport()
        rec = Gateway("record", tmp_path, transport=transport)
        rec.embed(["a", "b"])
        assert transport.calls == 2

        rec2 = Gateway("record", tmp_path, transport=transport)
        rec2.embed(["a", "b", "c"])
        assert transport.calls == 3

    def test_nonfinite_values_rejected(self):
        with pytest.raises(GatewayError):
            EmbeddingVector(values=(1.0, float("nan")))


class TestConcurrency:
    def test_parallel_duplicate_requests_single_transport_call(self, tmp_path):
        transport = StubTransport()
        gw = Gateway("record", tmp_path, transport=transport, parallelism=8)
        results = gw.embed(["same text"] * 16)
        assert len(results) == 16
        assert len({r.values for r in results}) == 1
        assert transport.calls == 1

    def test_threaded_chat_consistency(self, tmp_path):
        transport = StubTransport()
        gw = Gateway("record", tmp_path, transport=transport, parallelism=4)
        outputs: list[str] = []

        def work():
            outputs.append(gw.chat(chat_req("race")).text)

        threads = [threading.Thread(target=work) for _ in range(12)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert set(outputs) == {"echo:race"}
        assert transport.calls == 1
