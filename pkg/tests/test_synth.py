"""Profile sampling, dialog parsing, and the synthesis grid."""

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from flowmine.corpus import load_corpus
from flowmine.errors import ResponseParseError, TransportError
from flowmine.gateway import ChatRequest, ChatResponse, Gateway
from flowmine.synth import (
    SynthSpec,
    UserProfile,
    conversation_id,
    make_profiles,
    parse_dialog_lines,
    pool_capacity,
    pool_sizes,
    run_synthesis,
    synthesize_conversation,
)

WORKFLOW = "1. Ask for the name.\n2. Cancel the plan if it is active.\n3. Otherwise explain it already ended."

DIALOG = (
    "Customer: Hi, I want to cancel my plan.\n"
    "Agent: Sure, may I have your name?\n"
    "Customer: Mina Park.\n"
    "Agent: Thanks, your plan was active and is now cancelled."
)


class DialogTransport:
    """Echoes a fixed well-formed dialog; optionally fails after n calls."""

    def __init__(self, text: str = DIALOG, fail_after: int | None = None):
        self.text = text
        self.fail_after = fail_after
        self.calls = 0

    def chat(self, request: ChatRequest) -> ChatResponse:
        self.calls += 1
        if self.fail_after is not None and self.calls > self.fail_after:
            raise TransportError("provider unreachable")
        return ChatResponse(text=self.text)

    def embed_one(self, request):  # pragma: no cover
        raise AssertionError


def gw(transport, tmp_path) -> Gateway:
    return Gateway("record", tmp_path / "fixtures", transport=transport)


def profile() -> UserProfile:
    return UserProfile("Mina Park", "florist", "Oslo", seed_index=7)


class TestPools:
    def test_minimum_sizes(self):
        names, professions, cities = pool_sizes()
        assert names >= 100
        assert professions >= 40
        assert cities >= 40

    def test_capacity_is_product(self):
        names, professions, cities = pool_sizes()
        assert pool_capacity() == names * professions * cities


class TestMakeProfiles:
    def test_fifty_distinct_and_repeatable(self):
        first = make_profiles(50, seed=1)
        assert len(set(first)) == 50
        assert make_profiles(50, seed=1) == first

    def test_single_profile_populated(self):
        (p,) = make_profiles(1, seed=3)
        assert p.name and p.profession and p.city

    def test_seeds_change_the_batch(self):
        assert make_profiles(50, seed=1) != make_profiles(50, seed=2)

    def test_capacity_exceeded_rejected(self):
        with pytest.raises(ValueError):
            make_profiles(pool_capacity() + 1, seed=0)

    def test_zero_rejected(self):
        with pytest.raises(ValueError):
            make_profiles(0, seed=0)

    @given(st.integers(min_value=1, max_value=200), st.integers(min_value=0, max_value=50))
    def test_always_distinct(self, n, seed):
        batch = make_profiles(n, seed)
        assert len({(p.name, p.profession, p.city) for p in batch}) == n

    def test_seed_indices_are_distinct_and_in_range(self):
        batch = make_profiles(20, seed=9)
        indices = [p.seed_index for p in batch]
        assert len(set(indices)) == 20
        assert all(0 <= i < pool_capacity() for i in indices)


class TestParseDialog:
    def test_labeled_lines(self):
        pairs = parse_dialog_lines(DIALOG)
        assert pairs[0] == ("customer", "Hi, I want to cancel my plan.")
        assert len(pairs) == 4

    def test_continuations_fold_to_one_line(self):
        raw = "Customer: Hello there,\nI have an issue.\nAgent: Sure."
        pairs = parse_dialog_lines(raw)
        assert pairs[0] == ("customer", "Hello there, I have an issue.")

    def test_preamble_dropped(self, caplog):
        import logging

        with caplog.at_level(logging.WARNING):
            pairs = parse_dialog_lines("Here is the dialog:\n" + DIALOG)
        assert len(pairs) == 4
        assert any("preamble" in rec.message for rec in caplog.records)

    def test_no_labels_rejected(self):
        with pytest.raises(ResponseParseError):
            parse_dialog_lines("no labels here at all")


class TestSynthesizeConversation:
    def test_customer_first_alternating(self, tmp_path):
        conv = synthesize_conversation(
            WORKFLOW, "plan active: cancel", profile(), gw(DialogTransport(), tmp_path),
            conversation_id="cancel-s00-p00-r1", intent="cancel_plan",
        )
        assert conv.id == "cancel-s00-p00-r1"
        assert conv.intent_label == "cancel_plan"
        assert [u.speaker for u in conv.utterances] == ["customer", "agent", "customer", "agent"]

    def test_agent_first_rejected(self, tmp_path):
        bad = "Agent: Hello!\nCustomer: Hi."
        with pytest.raises(ResponseParseError):
            synthesize_conversation(
                WORKFLOW, "sub", profile(), gw(DialogTransport(bad), tmp_path)
            )

    def test_broken_alternation_rejected(self, tmp_path):
        bad = "Customer: Hi.\nCustomer: Hi again.\nAgent: Hello."
        with pytest.raises(ResponseParseError):
            synthesize_conversation(
                WORKFLOW, "sub", profile(), gw(DialogTransport(bad), tmp_path)
            )

    def test_single_line_rejected(self, tmp_path):
        with pytest.raises(ResponseParseError):
            synthesize_conversation(
                WORKFLOW, "sub", profile(), gw(DialogTransport("Customer: Hi."), tmp_path)
            )

    def test_four_pairs_count_eight(self, tmp_path):
        text = "\n".join(
            f"{'Customer' if i % 2 == 0 else 'Agent'}: Utterance {i}." for i in range(8)
        )
        conv = synthesize_conversation(
            WORKFLOW, "sub", profile(), gw(DialogTransport(text), tmp_path)
        )
        assert len(conv.utterances) == 8

    def test_profile_fields_reach_the_prompt(self, tmp_path):
        transport = DialogTransport()
        prompts = []

        class Spy:
            def chat(self, request):
                prompts.append(request.messages[-1].content)
                return transport.chat(request)

            def embed_one(self, request):  # pragma: no cover
                raise AssertionError

        synthesize_conversation(WORKFLOW, "sub", profile(), gw(Spy(), tmp_path), replicate=2)
        assert "Mina Park" in prompts[0]
        assert "florist" in prompts[0]
        assert "Oslo" in prompts[0]
        assert "variation 2" in prompts[0]


def make_spec(**overrides) -> SynthSpec:
    base = dict(
        workflow_text=WORKFLOW,
        subflows=("active: cancel", "ended: inform", "unknown: escalate"),
        intent="cancel_plan",
        profiles_per_subflow=2,
        conversations_per_pairing=2,
        profile_seed=11,
    )
    base.update(overrides)
    return SynthSpec(**base)


class TestRunSynthesis:
    def test_grid_product_count(self, tmp_path):
        corpus, manifest = run_synthesis(make_spec(), gw(DialogTransport(), tmp_path))
        assert len(corpus) == 12
        assert manifest["status"] == "complete"
        assert len(manifest["conversations"]) == 12

    def test_ids_injective_over_grid(self, tmp_path):
        corpus, _ = run_synthesis(make_spec(), gw(DialogTransport(), tmp_path))
        ids = [c.id for c in corpus]
        assert len(set(ids)) == len(ids)
        assert "cancel_plan-s02-p01-r2" in ids

    def test_round_trips_through_corpus_loader(self, tmp_path):
        corpus, _ = run_synthesis(
            make_spec(), gw(DialogTransport(), tmp_path), output_dir=tmp_path / "out"
        )
        loaded = load_corpus(tmp_path / "out" / "synth_corpus.jsonl")
        assert [c.id for c in loaded] == [c.id for c in corpus]
        assert list(loaded)[0].utterances == list(corpus)[0].utterances

    def test_zero_subflows_rejected(self):
        with pytest.raises(ValueError):
            make_spec(subflows=())

    def test_failure_persists_partial_and_reraises(self, tmp_path):
        transport = DialogTransport(fail_after=5)
        with pytest.raises(TransportError):
            run_synthesis(make_spec(), gw(transport, tmp_path), output_dir=tmp_path / "out")
        manifest = json.loads((tmp_path / "out" / "synth_manifest.json").read_text())
        assert manifest["status"] == "failed"
        assert "TransportError" in manifest["error"]
        partial = load_corpus(tmp_path / "out" / "synth_corpus.jsonl")
        assert len(partial) == 5

    def test_manifest_provenance_matches(self, tmp_path):
        _, manifest = run_synthesis(make_spec(), gw(DialogTransport(), tmp_path))
        entry = manifest["conversations"][0]
        assert entry["id"] == "cancel_plan-s00-p00-r1"
        assert entry["subflow"] == "active: cancel"
        assert entry["replicate"] == 1
        assert entry["profile"]["name"]

    def test_replay_reproduces_everything(self, tmp_path):
        spec = make_spec()
        first, _ = run_synthesis(spec, gw(DialogTransport(), tmp_path))
        replay_gateway = Gateway("replay", tmp_path / "fixtures")
        second, _ = run_synthesis(spec, replay_gateway)
        assert [c.id for c in first] == [c.id for c in second]
        assert replay_gateway.transport_calls == 0


def test_conversation_id_format():
    assert conversation_id("x", 3, 1, 2) == "x-s03-p01-r2"
