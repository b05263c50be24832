"""Strategy chains: call counts, QA dialogues, shuffling, persistence."""

import json
import logging

import pytest

from flowmine.corpus import Conversation, Utterance
from flowmine.errors import ResponseParseError
from flowmine.extraction import (
    MAX_QA_EXCHANGES,
    QA_STOP_TOKEN,
    QATranscript,
    QATurn,
    Strategy,
    WorkflowArtifact,
    conversations_block,
    generate_workflow,
    parse_qa_discussion,
    reflect_qa_transcript,
    save_artifact,
    shuffled_conversations,
    simulate_qa_dialogue,
)
from flowmine.gateway import ChatRequest, ChatResponse, Gateway
from flowmine.prompts import load_template


def make_convs(n: int = 3) -> list[Conversation]:
    return [
        Conversation(
            id=f"conv-{i}",
            intent_label="returns",
            utterances=(
                Utterance("customer", f"I have problem number {i}."),
                Utterance("agent", f"Resolving problem number {i}."),
            ),
        )
        for i in range(n)
    ]


class QueueTransport:
    """Answers calls in order from a canned list; records every prompt."""

    def __init__(self, responses: list[str]):
        self.responses = list(responses)
        self.prompts: list[str] = []

    def chat(self, request: ChatRequest) -> ChatResponse:
        self.prompts.append(request.messages[-1].content)
        if not self.responses:
            raise AssertionError("transport queue exhausted")
        return ChatResponse(text=self.responses.pop(0))

    def embed_one(self, request):  # pragma: no cover - chat-only tests
        raise AssertionError("no embeddings expected")


class RoleTransport:
    """Routes on the QA role named in the prompt; the guide never stops."""

    def chat(self, request: ChatRequest) -> ChatResponse:
        prompt = request.messages[-1].content
        if prompt.startswith("You are the Guide"):
            return ChatResponse(text="Why did the agent check the account?")
        if prompt.startswith("You are the Implementer"):
            return ChatResponse(text="To confirm the customer's identity first.")
        return ChatResponse(text="1. Extracted step.")

    def embed_one(self, request):  # pragma: no cover
        raise AssertionError


def gw(transport, tmp_path) -> Gateway:
    return Gateway("record", tmp_path / "fixtures", transport=transport)


class TestStrategyValidation:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            Strategy("clever")

    def test_qa_kinds_require_mode(self):
        with pytest.raises(ValueError):
            Strategy("qa_cot")
        with pytest.raises(ValueError):
            Strategy("qa_cot_reflect", qa_mode="turbo")

    def test_non_qa_kinds_reject_mode(self):
        with pytest.raises(ValueError):
            Strategy("basic", qa_mode="single_pass")

    def test_describe(self):
        assert Strategy("basic").describe() == "basic"
        assert Strategy("qa_cot", qa_mode="multi_turn").describe() == "qa_cot:multi_turn"


class TestQATranscript:
    def test_multi_turn_must_alternate_guide_first(self):
        with pytest.raises(ValueError):
            QATranscript((QATurn("implementer", "a"),), mode="multi_turn")
        with pytest.raises(ValueError):
            QATranscript(
                (QATurn("guide", "q"), QATurn("guide", "q2")), mode="multi_turn"
            )

    def test_single_pass_order_is_free(self):
        QATranscript(
            (QATurn("implementer", "a"), QATurn("guide", "q")), mode="single_pass"
        )

    def test_message_ceiling(self):
        turns = tuple(
            QATurn("guide" if i % 2 == 0 else "implementer", f"t{i}")
            for i in range(2 * MAX_QA_EXCHANGES + 2)
        )
        with pytest.raises(ValueError):
            QATranscript(turns, mode="multi_turn")

    def test_render_and_exchanges(self):
        t = QATranscript(
            (QATurn("guide", "Why?"), QATurn("implementer", "Because.")),
            mode="multi_turn",
        )
        assert t.render() == "Guide: Why?\nImplementer: Because."
        assert t.exchanges() == 1


class TestParseDiscussion:
    def test_labeled_lines_split(self):
        raw = "Guide: What happens first?\nImplementer: The agent greets.\nGuide: Then?"
        t = parse_qa_discussion(raw, "single_pass")
        assert [x.role for x in t.turns] == ["guide", "implementer", "guide"]
        assert t.turns[1].text == "The agent greets."

    def test_continuation_lines_attach(self):
        raw = "Guide: A question\nthat spans lines.\nImplementer: Short."
        t = parse_qa_discussion(raw, "single_pass")
        assert t.turns[0].text == "A question\nthat spans lines."

    def test_preamble_dropped_with_warning(self, caplog):
        raw = "Here is the discussion you asked for.\nGuide: Q?\nImplementer: A."
        with caplog.at_level(logging.WARNING):
            t = parse_qa_discussion(raw, "single_pass")
        assert len(t.turns) == 2
        assert any("preamble" in rec.message for rec in caplog.records)

    def test_no_labels_is_error_with_raw(self):
        with pytest.raises(ResponseParseError) as exc_info:
            parse_qa_discussion("just prose, no labels", "single_pass")
        assert exc_info.value.raw == "just prose, no labels"


class TestSimulateQA:
    def test_single_pass_is_one_call(self, tmp_path):
        transport = QueueTransport(["Guide: Q1?\nImplementer: A1."])
        gateway = gw(transport, tmp_path)
        transcript, raw = simulate_qa_dialogue(make_convs(), "single_pass", gateway)
        assert gateway.transport_calls == 1
        assert transcript.exchanges() == 1
        assert raw == "Guide: Q1?\nImplementer: A1."

    def test_multi_turn_stop_after_six_questions(self, tmp_path):
        # 6 question/answer exchanges, then the guide signals completion:
        # 13 role calls produce 12 kept turns and no cap hit.
        responses = []
        for i in range(6):
            responses.append(f"Question {i}?")
            responses.append(f"Answer {i}.")
        responses.append(f"I have everything I need. {QA_STOP_TOKEN}")
        transport = QueueTransport(responses)
        gateway = gw(transport, tmp_path)
        transcript, _ = simulate_qa_dialogue(make_convs(), "multi_turn", gateway)
        assert gateway.transport_calls == 13
        assert len(transcript.turns) == 12
        assert transcript.turn_cap_hit is False
        assert all(t.text != f"I have everything I need. {QA_STOP_TOKEN}" for t in transcript.turns)

    def test_multi_turn_cap_at_fifty_messages(self, tmp_path):
        gateway = gw(RoleTransport(), tmp_path)
        transcript, _ = simulate_qa_dialogue(make_convs(), "multi_turn", gateway)
        assert len(transcript.turns) == 50
        assert transcript.turn_cap_hit is True
        assert gateway.transport_calls == 2 * MAX_QA_EXCHANGES

    def test_implementer_sees_prior_discussion_and_question(self, tmp_path):
        transport = QueueTransport(["Q0?", "A0.", "Q1?", "A1.", QA_STOP_TOKEN])
        gateway = gw(transport, tmp_path)
        simulate_qa_dialogue(make_convs(), "multi_turn", gateway)
        second_impl_prompt = transport.prompts[3]
        assert "Guide: Q0?" in second_impl_prompt
        assert "Q1?" in second_impl_prompt

    def test_empty_convs_rejected(self, tmp_path):
        gateway = gw(QueueTransport([]), tmp_path)
        with pytest.raises(ValueError):
            simulate_qa_dialogue([], "single_pass", gateway)
        assert gateway.transport_calls == 0


class TestReflectQA:
    def test_single_correction_call(self, tmp_path):
        transport = QueueTransport(["Guide: Better Q?\nImplementer: Better A."])
        gateway = gw(transport, tmp_path)
        original = parse_qa_discussion("Guide: Q?\nImplementer: A.", "single_pass")
        corrected, raw = reflect_qa_transcript(original, make_convs(), gateway)
        assert gateway.transport_calls == 1
        assert corrected.turns[0].text == "Better Q?"
        assert "Better A." in raw

    def test_empty_transcript_rejected(self, tmp_path):
        gateway = gw(QueueTransport([]), tmp_path)
        empty = QATranscript((), mode="single_pass")
        with pytest.raises(ValueError):
            reflect_qa_transcript(empty, make_convs(), gateway)


class TestCallCounts:
    """Each strategy issues exactly its advertised number of gateway calls."""

    def run(
        self, strategy: Strategy, responses: list[str], tmp_path, n_convs: int = 3
    ) -> tuple[Gateway, WorkflowArtifact]:
        transport = QueueTransport(responses)
        gateway = gw(transport, tmp_path)
        artifact = generate_workflow(make_convs(n_convs), strategy, gateway, order_seed=7)
        return gateway, artifact

    def test_basic_is_one(self, tmp_path):
        gateway, artifact = self.run(Strategy("basic"), ["1. Step."], tmp_path)
        assert gateway.transport_calls == 1
        assert len(gateway.call_log) == 1
        assert artifact.text == "1. Step."

    def test_plan_is_two(self, tmp_path):
        gateway, artifact = self.run(
            Strategy("plan"), ["First gather, then act.", "1. Gather.\n2. Act."], tmp_path
        )
        assert gateway.transport_calls == 2
        assert artifact.intermediates()["plan"] == "First gather, then act."

    def test_reflect_is_three(self, tmp_path):
        gateway, artifact = self.run(
            Strategy("reflect"), ["1. Draft.", "Missing the refund branch.", "1. Final."], tmp_path
        )
        assert gateway.transport_calls == 3
        assert artifact.intermediates() == {
            "draft": "1. Draft.",
            "feedback": "Missing the refund branch.",
        }
        assert artifact.text == "1. Final."

    def test_ensemble_is_five(self, tmp_path):
        # Six conversations keep the four sub-shuffles distinct, so the call
        # log and the transport both see all five requests.
        gateway, artifact = self.run(
            Strategy("ensemble"),
            ["1. C1.", "1. C2.", "1. C3.", "1. C4.", "1. Merged."],
            tmp_path,
            n_convs=6,
        )
        assert len(gateway.call_log) == 5
        assert gateway.transport_calls == 5
        assert artifact.text == "1. Merged."
        assert sorted(artifact.intermediates()) == [
            "candidate_1",
            "candidate_2",
            "candidate_3",
            "candidate_4",
        ]

    def test_ensemble_rejects_other_widths(self, tmp_path):
        gateway = gw(QueueTransport([]), tmp_path)
        with pytest.raises(ValueError):
            generate_workflow(
                make_convs(), Strategy("ensemble", ensemble_width=3), gateway, order_seed=1
            )
        assert gateway.transport_calls == 0

    def test_qa_cot_single_is_two(self, tmp_path):
        gateway, artifact = self.run(
            Strategy("qa_cot", qa_mode="single_pass"),
            ["Guide: Q?\nImplementer: A.", "1. Extracted."],
            tmp_path,
        )
        assert gateway.transport_calls == 2
        assert artifact.qa_transcript is not None
        assert artifact.qa_transcript.exchanges() == 1

    def test_qa_cot_reflect_single_is_three(self, tmp_path):
        gateway, artifact = self.run(
            Strategy("qa_cot_reflect", qa_mode="single_pass"),
            [
                "Guide: Q?\nImplementer: A.",
                "Guide: Q fixed?\nImplementer: A fixed.",
                "1. Extracted.",
            ],
            tmp_path,
        )
        assert gateway.transport_calls == 3
        assert artifact.intermediates()["qa_raw"] == "Guide: Q?\nImplementer: A."
        assert artifact.intermediates()["qa_corrected"] == "Guide: Q fixed?\nImplementer: A fixed."
        assert artifact.qa_transcript.turns[0].text == "Q fixed?"

    def test_empty_convs_zero_calls(self, tmp_path):
        gateway = gw(QueueTransport([]), tmp_path)
        with pytest.raises(ValueError):
            generate_workflow([], Strategy("basic"), gateway, order_seed=1)
        assert gateway.transport_calls == 0


class TestOrdering:
    def test_prompt_order_matches_seed_shuffle(self, tmp_path):
        convs = make_convs(5)
        transport = QueueTransport(["1. Step."])
        gateway = gw(transport, tmp_path)
        generate_workflow(convs, Strategy("basic"), gateway, order_seed=13)
        prompt = transport.prompts[0]
        expected = shuffled_conversations(convs, 13)
        positions = [prompt.index(f"problem number {c.id[-1]}") for c in expected]
        assert positions == sorted(positions)

    def test_seeds_change_order(self):
        convs = make_convs(8)
        orders = {tuple(c.id for c in shuffled_conversations(convs, s)) for s in range(20)}
        assert len(orders) > 1

    def test_ensemble_candidates_use_distinct_orders(self, tmp_path):
        convs = make_convs(6)
        transport = QueueTransport(["1. A.", "1. B.", "1. C.", "1. D.", "1. M."])
        gateway = gw(transport, tmp_path)
        generate_workflow(convs, Strategy("ensemble"), gateway, order_seed=3)
        candidate_prompts = transport.prompts[:4]
        assert len(set(candidate_prompts)) > 1
        # Sub-orders are seeded from the run seed, so reruns agree.
        again = shuffled_conversations(convs, "3/0")
        assert [c.id for c in again] == [c.id for c in shuffled_conversations(convs, "3/0")]

    def test_source_ids_record_shuffled_order(self, tmp_path):
        convs = make_convs(4)
        transport = QueueTransport(["1. Step."])
        gateway = gw(transport, tmp_path)
        artifact = generate_workflow(convs, Strategy("basic"), gateway, order_seed=2)
        assert artifact.source_conversation_ids == tuple(
            c.id for c in shuffled_conversations(convs, 2)
        )


class TestDeterminism:
    def test_record_then_replay_identical_artifact(self, tmp_path):
        convs = make_convs()
        strategy = Strategy("reflect")
        responses = ["1. Draft.", "Gap found.", "1. Final."]
        recorded = generate_workflow(
            convs, strategy, gw(QueueTransport(responses), tmp_path), order_seed=5
        )
        replay_gateway = Gateway("replay", tmp_path / "fixtures")
        replayed = generate_workflow(convs, strategy, replay_gateway, order_seed=5)
        assert replayed == recorded
        assert replay_gateway.transport_calls == 0

    def test_prompt_hashes_cover_used_templates(self, tmp_path):
        gateway = gw(QueueTransport(["Plan text.", "1. Step."]), tmp_path)
        artifact = generate_workflow(make_convs(), Strategy("plan"), gateway, order_seed=1)
        hashes = dict(artifact.prompt_hashes)
        assert set(hashes) == {"plan", "plan_generate"}
        assert hashes["plan"] == load_template("plan").sha256


class TestPersistence:
    def test_save_artifact_round_trip(self, tmp_path):
        gateway = gw(QueueTransport(["1. Only step."]), tmp_path)
        artifact = generate_workflow(make_convs(), Strategy("basic"), gateway, order_seed=9)
        json_path, text_path = save_artifact(artifact, tmp_path / "artifacts", "returns-basic")
        record = json.loads(json_path.read_text(encoding="utf-8"))
        assert record["text"] == "1. Only step."
        assert record["strategy"]["kind"] == "basic"
        assert record["order_seed"] == 9
        assert text_path.read_text(encoding="utf-8") == "1. Only step.\n"

    def test_empty_workflow_text_rejected(self):
        with pytest.raises(ResponseParseError):
            WorkflowArtifact(
                intent="x",
                text="  ",
                strategy=Strategy("basic"),
                source_conversation_ids=("a",),
                order_seed=0,
            )


def test_conversations_block_numbers_from_one():
    block = conversations_block(make_convs(2))
    assert block.startswith("Conversation 1:\nCustomer: ")
    assert "\n\nConversation 2:\n" in block
