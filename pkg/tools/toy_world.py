"""Deterministic scripted model world behind the bundled example experiment.

The transport answers every prompt the pipeline can emit — element mining,
embeddings, QA-style generation, scenario expansion, both dialog bots, the
success judge, conversation synthesis, and rule compliance — from fixed
rules keyed on the prompt text. Recording one run against it produces a
fixture set that replays byte-identically with zero network access.

Two intents, five ground-truth branches. The scripted prediction for
``dispute_charge`` covers its full policy; the one for
``cancel_subscription`` drops the already-inactive branch, so exactly one
of five simulated dialogs fails: per-intent accuracies 1.0 and 0.5, macro
0.75, micro 0.8.
"""

from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path

from flowmine.gateway import ChatRequest, ChatResponse, EmbeddingVector

ROOT = Path(__file__).resolve().parents[1]

DISPUTE_INTENT = "dispute_charge"
CANCEL_INTENT = "cancel_subscription"

GT_DISPUTE_TEXT = """\
1. Ask the customer for their full name.
2. Ask for the order id of the disputed charge.
3. Check the billing records for that order.
4. If the records show a billing error, correct the charge and refund the difference.
5. If there is no billing error, ask whether the customer has a premium or standard membership.
6. If the membership is premium, apply an account credit.
7. If the membership is standard, open a support ticket for review.
"""

GT_CANCEL_TEXT = """\
1. Ask the customer for their account id.
2. Ask why the customer wants to cancel.
3. Check whether the renewal is active.
4. If the renewal is active, cancel it and confirm the cancellation.
5. If the renewal is inactive, inform the customer the subscription has already ended.
"""

DISPUTE_GRAPH = {
    "nodes": [
        {"id": "start", "kind": "start"},
        {"id": "ask_name", "kind": "step", "label": "Ask the customer for their full name"},
        {"id": "ask_order", "kind": "step", "label": "Ask for the order id of the disputed charge"},
        {"id": "check_billing", "kind": "branch", "label": "Check the billing records for the order"},
        {"id": "fix_charge", "kind": "step", "label": "Correct the charge and refund the difference"},
        {"id": "ask_tier", "kind": "branch", "label": "Ask whether the membership is premium or standard"},
        {"id": "credit", "kind": "step", "label": "Apply an account credit"},
        {"id": "ticket", "kind": "step", "label": "Open a support ticket for review"},
        {"id": "end", "kind": "end"},
    ],
    "edges": [
        {"from": "start", "to": "ask_name"},
        {"from": "ask_name", "to": "ask_order"},
        {"from": "ask_order", "to": "check_billing"},
        {"from": "check_billing", "to": "fix_charge", "condition": "error found"},
        {"from": "check_billing", "to": "ask_tier", "condition": "no error"},
        {"from": "ask_tier", "to": "credit", "condition": "premium"},
        {"from": "ask_tier", "to": "ticket", "condition": "standard"},
        {"from": "fix_charge", "to": "end"},
        {"from": "credit", "to": "end"},
        {"from": "ticket", "to": "end"},
    ],
}

CANCEL_GRAPH = {
    "nodes": [
        {"id": "start", "kind": "start"},
        {"id": "ask_account", "kind": "step", "label": "Ask the customer for their account id"},
        {"id": "ask_reason", "kind": "step", "label": "Ask why the customer wants to cancel"},
        {"id": "check_renewal", "kind": "branch", "label": "Check whether the renewal is active"},
        {"id": "do_cancel", "kind": "step", "label": "Cancel the upcoming renewal and confirm the cancellation"},
        {"id": "inform_ended", "kind": "step", "label": "Inform the customer the subscription has already ended"},
        {"id": "end", "kind": "end"},
    ],
    "edges": [
        {"from": "start", "to": "ask_account"},
        {"from": "ask_account", "to": "ask_reason"},
        {"from": "ask_reason", "to": "check_renewal"},
        {"from": "check_renewal", "to": "do_cancel", "condition": "active"},
        {"from": "check_renewal", "to": "inform_ended", "condition": "inactive"},
        {"from": "do_cancel", "to": "end"},
        {"from": "inform_ended", "to": "end"},
    ],
}

# The cancel prediction omits the inactive branch, so its second scenario
# honestly fails dialog simulation.
DISPUTE_PRED = """\
1. Ask the customer for their full name.
2. Ask for the order id of the disputed charge.
3. Check the billing records for that order.
4. If the records show a billing error, correct the charge and refund the difference, then finish.
5. If there is no billing error, ask whether the customer has a premium or standard membership.
6. If the membership is premium, apply an account credit.
7. If the membership is standard, open a support ticket for review."""

CANCEL_PRED = """\
1. Ask the customer for their account id.
2. Ask why the customer wants to cancel.
3. Check whether the renewal is active.
4. Cancel the upcoming renewal and confirm the cancellation."""

QA_DISCUSSION = """\
Guide: What information does the agent collect before touching the system?
Implementer: The agent first gathers the customer's identifying details, then runs exactly one system check.
Guide: How do the conversations end once the check comes back?
Implementer: Each one follows the branch the check reveals — a correction, a credit, a ticket, or a cancellation — and then wraps up."""

SCENARIOS = {
    "[error found]": {
        "user information": ["full name: Alex Morgan", "order id: ORD-7001"],
        "system information": ["billing records: error found on ORD-7001"],
        "outcome": "The agent corrects the erroneous charge and refunds the difference.",
    },
    "[premium]": {
        "user information": ["full name: Jamie Lee", "order id: ORD-7002", "membership: premium"],
        "system information": ["billing records: no error on ORD-7002"],
        "outcome": "The agent applies an account credit for the premium member.",
    },
    "[standard]": {
        "user information": ["full name: Riley Chen", "order id: ORD-7003", "membership: standard"],
        "system information": ["billing records: no error on ORD-7003"],
        "outcome": "The agent opens a support ticket to review the disputed charge.",
    },
    "[active]": {
        "user information": ["account id: ACC-9001", "cancellation reason: too expensive"],
        "system information": ["renewal status: active"],
        "outcome": "The agent cancels the upcoming renewal and confirms the cancellation.",
    },
    "[inactive]": {
        "user information": ["account id: ACC-9002", "cancellation reason: moving abroad"],
        "system information": ["renewal status: inactive"],
        "outcome": "The agent informs the customer the subscription has already ended.",
    },
}

# criteria marker -> phrase the judge requires in the conversation
JUDGE_MARKERS = (
    ("corrects the erroneous charge", "corrected the charge"),
    ("account credit", "account credit"),
    ("support ticket", "support ticket"),
    ("already ended", "already ended"),
    ("confirms the cancellation", "cancellation is confirmed"),
)

# rule text -> phrase proving the rule was exercised in a conversation
RULE_MARKERS = {
    "Ask the customer for their full name.": "full name",
    "Ask for the order id of the disputed charge.": "order id",
    "Check the billing records for that order.": "billing records",
    "If the records show a billing error, correct the charge and refund the difference.": "corrected the charge",
    "If there is no billing error, ask whether the customer has a premium or standard membership.": "premium or standard",
    "If the membership is premium, apply an account credit.": "account credit",
    "If the membership is standard, open a support ticket for review.": "support ticket",
    "Ask the customer for their account id.": "account id",
    "Ask why the customer wants to cancel.": "why",
    "Check whether the renewal is active.": "renewal",
    "If the renewal is active, cancel it and confirm the cancellation.": "cancelled",
    "If the renewal is inactive, inform the customer the subscription has already ended.": "already ended",
}

_NAMES = (
    "Ada Park", "Ben Ortiz", "Cleo Vance", "Dev Patel", "Elif Demir", "Femi Ade",
    "Gus Romero", "Hana Sato", "Ira Novak", "Juno Reyes", "Kai Larsen", "Lena Brandt",
)
_REASONS = (
    "it is too expensive for me",
    "I no longer use the service",
    "I am switching providers",
    "I signed up by mistake",
)


def _dispute_conversation(i: int, variant: str) -> dict:
    name = _NAMES[i % len(_NAMES)]
    order_id = f"ORD-7{100 + i}"
    opening = [
        ("customer", "Hello, I want to dispute a charge on my bill."),
        ("agent", "I can help with that. Could I have your full name, please?"),
        ("customer", f"My name is {name}."),
        ("agent", "Thank you. What is the order id of the disputed charge?"),
        ("customer", f"It is {order_id}."),
    ]
    if variant == "error":
        tail = [
            ("agent", "Let me check the billing records for that order. I found a billing error, so I have corrected the charge and refunded the difference."),
            ("customer", "That is great, thank you!"),
            ("agent", "You're welcome. Anything else I can help with?"),
        ]
    elif variant == "premium":
        tail = [
            ("agent", "I checked the billing records and found no billing error on this order. Do you have a premium or standard membership?"),
            ("customer", "I am on the premium plan."),
            ("agent", "Since you are a premium member, I have applied an account credit to your account."),
            ("customer", "Thank you for sorting it out."),
            ("agent", "Happy to help."),
        ]
    else:
        tail = [
            ("agent", "I checked the billing records and found no billing error on this order. Do you have a premium or standard membership?"),
            ("customer", "Just the standard plan."),
            ("agent", "I have opened a support ticket so our billing team can review the charge."),
            ("customer", "Okay, I will wait to hear back."),
            ("agent", "They will reach out within two business days."),
        ]
    return {
        "id": f"dc-{i:02d}",
        "intent": DISPUTE_INTENT,
        "utterances": [{"speaker": s, "text": t} for s, t in opening + tail],
    }


def _cancel_conversation(i: int, variant: str) -> dict:
    account_id = f"ACC-9{100 + i}"
    reason = _REASONS[i % len(_REASONS)]
    turns = [
        ("customer", "Hi, I would like to cancel my subscription."),
        ("agent", "I can help with that. Could you share your account id?"),
        ("customer", f"Sure, it is {account_id}."),
        ("agent", "Thanks. May I ask why you want to cancel?"),
        ("customer", f"Honestly, {reason}."),
    ]
    if variant == "active":
        turns += [
            ("agent", "I checked and your renewal is active, so I have cancelled the upcoming renewal. The cancellation is confirmed."),
            ("customer", "Thanks for the quick help."),
            ("agent", "You're welcome."),
        ]
    else:
        turns += [
            ("agent", "I checked and your renewal is already inactive. The subscription has already ended, so there is nothing to cancel."),
            ("customer", "Oh, good to know. Thanks."),
            ("agent", "No problem at all."),
        ]
    return {
        "id": f"cs-{i:02d}",
        "intent": CANCEL_INTENT,
        "utterances": [{"speaker": s, "text": t} for s, t in turns],
    }


def build_corpus_records() -> list[dict]:
    records = []
    dispute_variants = ["error", "premium", "standard"] * 4
    for i, variant in enumerate(dispute_variants):
        records.append(_dispute_conversation(i, variant))
    cancel_variants = ["active", "inactive"] * 4
    for i, variant in enumerate(cancel_variants):
        records.append(_cancel_conversation(i, variant))
    return records


def embed_text(text: str, dim: int = 16) -> tuple[float, ...]:
    # sha256 token buckets: stable across processes, unlike builtin hash()
    values = [0.0] * dim
    for token in re.findall(r"[a-z0-9]+", text.lower()):
        bucket = int.from_bytes(hashlib.sha256(token.encode()).digest()[:4], "big") % dim
        values[bucket] += 1.0
    if not any(values):
        values[0] = 1.0
    return tuple(values)


def _slots(prompt: str) -> dict[str, str]:
    return {k.strip(): v.strip() for k, v in re.findall(r"^- ([^:\n]+): (.+)$", prompt, re.M)}


def _last_line(prompt: str, prefix: str) -> str:
    lines = [l for l in prompt.splitlines() if l.startswith(prefix)]
    return lines[-1] if lines else ""


def _customer_reply(prompt: str) -> str:
    if "(conversation has not started)" in prompt:
        if "dispute" in prompt:
            return "Hello, I want to dispute a charge on my bill."
        return "Hi, I would like to cancel my subscription."
    slots = _slots(prompt)
    last_agent = _last_line(prompt, "Agent: ")
    if "full name" in last_agent:
        return f"My name is {slots.get('full name', 'Alex Morgan')}."
    if "order id" in last_agent:
        return f"It is {slots.get('order id', 'ORD-0000')}."
    if "premium or standard" in last_agent:
        return f"I am on the {slots.get('membership', 'standard')} plan."
    if "account id" in last_agent:
        return f"Sure, it is {slots.get('account id', 'ACC-0000')}."
    if "why" in last_agent:
        return f"Because {slots.get('cancellation reason', 'it no longer fits my needs')}."
    return "Okay, thank you."


def _agent_reply(prompt: str) -> str:
    """Follow whatever policy the prompt carries; a state the policy does not
    cover ends the dialog, mirroring the agent instructions."""
    agent_turns = sum(1 for l in prompt.splitlines() if l.startswith("Agent: "))
    if "billing records" in prompt:
        if agent_turns == 0:
            return "Could I have your full name, please?"
        if agent_turns == 1:
            return "Thank you. What is the order id of the disputed charge?"
        if agent_turns == 2:
            if "error found" in prompt:
                return (
                    "I checked the billing records and found a billing error, so I have "
                    "corrected the charge and refunded the difference. DONE"
                )
            return (
                "I checked the billing records and found no billing error. "
                "Do you have a premium or standard membership?"
            )
        if "premium" in _last_line(prompt, "Customer: "):
            return "Thanks for confirming. I have applied an account credit to your account. DONE"
        return "Thanks for confirming. I have opened a support ticket for further review. DONE"
    if agent_turns == 0:
        return "I can help with that. Could you share your account id?"
    if agent_turns == 1:
        return "Thanks. May I ask why you want to cancel?"
    if "- renewal status: active" in prompt:
        return (
            "I checked and your renewal is active, so I have cancelled the upcoming "
            "renewal. The cancellation is confirmed. DONE"
        )
    if "already ended" in prompt:
        return (
            "I checked and your renewal is already inactive; the subscription has "
            "already ended, so there is nothing left to cancel. DONE"
        )
    return "DONE"


def _judge_reply(prompt: str) -> str:
    criteria = prompt.split("Success Criteria:", 1)[1].split("Conversation:", 1)[0]
    conversation = prompt.split("Conversation:", 1)[1]
    verdict = "no"
    for criteria_marker, conv_marker in JUDGE_MARKERS:
        if criteria_marker in criteria:
            verdict = "yes" if conv_marker in conversation else "no"
            break
    return json.dumps(
        {"successful": verdict, "explanation": "Outcome phrase matched against the transcript."}
    )


def _elements_reply(prompt: str) -> str:
    if "dispute a charge" in prompt:
        name = re.search(r"My name is (.+?)\.", prompt)
        order = re.search(r"(ORD-\d+)", prompt)
        slots = {
            "full name": name.group(1) if name else "unknown",
            "order id": order.group(1) if order else "unknown",
        }
        steps = ["ask full name", "ask order id", "check billing records"]
        if "corrected the charge" in prompt:
            steps.append("correct the charge and refund the difference")
        elif "account credit" in prompt:
            steps += ["ask membership tier", "apply an account credit"]
        else:
            steps += ["ask membership tier", "open a support ticket"]
        return json.dumps(
            {"intent": DISPUTE_INTENT, "slot_values": slots, "resolution_steps": steps}
        )
    account = re.search(r"(ACC-\d+)", prompt)
    slots = {"account id": account.group(1) if account else "unknown"}
    steps = ["ask account id", "ask cancellation reason", "check renewal status"]
    if "already ended" in prompt:
        steps.append("inform the subscription already ended")
    else:
        steps.append("cancel the upcoming renewal")
    return json.dumps({"intent": CANCEL_INTENT, "slot_values": slots, "resolution_steps": steps})


def _scenario_reply(prompt: str) -> str:
    for marker, payload in SCENARIOS.items():
        if marker in prompt:
            return json.dumps(payload)
    raise AssertionError("scenario prompt carries no known branch marker")


def _synth_reply(prompt: str) -> str:
    name = re.search(r"Name: (.+)", prompt).group(1).strip()
    replicate = re.search(r"variation (\d+)", prompt).group(1)
    digits = int(hashlib.sha256(prompt.encode()).hexdigest()[:6], 16) % 900 + 100
    greeting = "Hello" if replicate == "1" else "Hi there"
    if "[error found]" in prompt or "[premium]" in prompt or "[standard]" in prompt:
        lines = [
            f"Customer: {greeting}, I want to dispute a charge on my latest bill.",
            "Agent: I can help with that. May I have your full name?",
            f"Customer: {name}.",
            "Agent: Thanks. Could you give me the order id of the disputed charge?",
            f"Customer: It is ORD-8{digits}.",
        ]
        if "[error found]" in prompt:
            lines += [
                "Agent: I checked the billing records for that order and found a billing error, so I have corrected the charge and refunded the difference.",
                "Customer: Wonderful, thank you!",
            ]
        elif "[premium]" in prompt:
            lines += [
                "Agent: The billing records show no error on that order. Do you have a premium or standard membership?",
                "Customer: I am a premium member.",
                "Agent: In that case I have applied an account credit to your account.",
                "Customer: Much appreciated.",
            ]
        else:
            lines += [
                "Agent: The billing records show no error on that order. Do you have a premium or standard membership?",
                "Customer: Standard.",
                "Agent: I have opened a support ticket so the billing team can review the charge.",
                "Customer: Okay, thank you.",
            ]
        return "\n".join(lines)
    lines = [
        f"Customer: {greeting}, I would like to cancel my subscription.",
        "Agent: Sure, could you share your account id?",
        f"Customer: It is ACC-8{digits}.",
        "Agent: Thanks. May I ask why you are cancelling?",
        "Customer: I simply do not use it enough.",
    ]
    if "[active]" in prompt:
        lines += [
            "Agent: I checked the renewal and it is active, so I have cancelled it. The cancellation is confirmed.",
            "Customer: Great, thanks for the help.",
        ]
    else:
        lines += [
            "Agent: I checked the renewal and it is inactive; the subscription has already ended, so there is nothing more to do.",
            "Customer: Good to know, thanks.",
        ]
    return "\n".join(lines)


def _compliance_reply(prompt: str) -> str:
    guidelines = prompt.split("## Guidelines", 1)[1].split("## Conversation", 1)[0]
    conversation = prompt.split("## Conversation", 1)[1]
    verdicts = {}
    rule_no = 0
    for line in guidelines.splitlines():
        stripped = line.strip()
        if not re.match(r"^\d+[.)]\s+\S", stripped):
            continue
        rule_no += 1
        rule_text = re.sub(r"^\d+[.)]\s+", "", stripped)
        marker = RULE_MARKERS.get(rule_text, rule_text.lower()[:20])
        if marker in conversation:
            response = "followed"
        elif rule_text.startswith("If"):
            response = "not applicable"
        else:
            response = "not followed"
        verdicts[f"Rule_{rule_no}"] = {
            "response": response,
            "explanation": f"Checked the transcript for '{marker}'.",
        }
    return json.dumps(verdicts)


class ScriptedWorld:
    """Transport answering every pipeline prompt from deterministic rules."""

    def chat(self, request: ChatRequest) -> ChatResponse:
        prompt = request.messages[-1].content
        if prompt.startswith("Extract intent, slot values"):
            return ChatResponse(text=_elements_reply(prompt))
        if prompt.startswith("You are a QA simulator"):
            return ChatResponse(text=QA_DISCUSSION)
        if prompt.startswith(
            "Identify the steps necessary to resolve the customer's issue based on the "
            "provided conversations and the discussion"
        ):
            pred = DISPUTE_PRED if "dispute a charge" in prompt else CANCEL_PRED
            return ChatResponse(text=pred)
        if prompt.startswith("Identify the steps necessary"):
            pred = DISPUTE_PRED if "dispute a charge" in prompt else CANCEL_PRED
            return ChatResponse(text=pred)
        if prompt.startswith("You are given a dialog workflow and a specific user scenario"):
            return ChatResponse(text=_scenario_reply(prompt))
        if prompt.startswith("You are a customer talking to an agent"):
            return ChatResponse(text=_customer_reply(prompt))
        if prompt.startswith("You are a customer service agent trying to solve"):
            return ChatResponse(text=_agent_reply(prompt))
        if prompt.startswith("You are given a dialog policy and corresponding criteria"):
            return ChatResponse(text=_judge_reply(prompt))
        if prompt.startswith("You are given below a dialog policy"):
            return ChatResponse(text=_synth_reply(prompt))
        if prompt.startswith("You are a quality assurance manager"):
            return ChatResponse(text=_compliance_reply(prompt))
        raise AssertionError(f"unrouted prompt: {prompt[:80]!r}")

    def embed_one(self, request) -> EmbeddingVector:
        return EmbeddingVector(values=embed_text(request.text), model_id=request.model_id)


CONFIG_TOML = """\
[corpus]
path = "../corpora/toy_corpus.jsonl"
intents = "all"

[retrieval]
strategy = "proc_sim"
k = 6
seed = 17

[generation]
strategy = "qa_cot"
qa_mode = "single_pass"
order_seeds = [101, 202]

[evaluation]
gt_workflows_path = "../corpora/gt"
turn_cap = 30

[gateway]
mode = "replay"
fixture_dir = "../fixtures/toy"

[output]
dir = "../runs_out"
"""


def synth_specs():
    """The two synthesis jobs behind the bundled compliant corpus."""
    from flowmine.subflow import enumerate_paths, graph_from_record
    from flowmine.synth import SynthSpec

    dispute_flows = tuple(
        f.description for f in enumerate_paths(graph_from_record(DISPUTE_GRAPH))
    )
    cancel_flows = tuple(f.description for f in enumerate_paths(graph_from_record(CANCEL_GRAPH)))
    return (
        SynthSpec(
            workflow_text=GT_DISPUTE_TEXT,
            subflows=dispute_flows,
            intent=DISPUTE_INTENT,
            profiles_per_subflow=2,
            conversations_per_pairing=1,
            profile_seed=3,
        ),
        SynthSpec(
            workflow_text=GT_CANCEL_TEXT,
            subflows=cancel_flows,
            intent=CANCEL_INTENT,
            profiles_per_subflow=2,
            conversations_per_pairing=1,
            profile_seed=4,
        ),
    )


def write_world(root: Path = ROOT) -> None:
    """Materialize the corpus, ground truths, and config under the repo."""
    corpora = root / "corpora"
    corpora.mkdir(exist_ok=True)
    with (corpora / "toy_corpus.jsonl").open("w", encoding="utf-8") as handle:
        for record in build_corpus_records():
            handle.write(json.dumps(record, sort_keys=True) + "\n")
    gt_dir = corpora / "gt"
    gt_dir.mkdir(exist_ok=True)
    for intent, text, graph, issue in (
        (
            DISPUTE_INTENT,
            GT_DISPUTE_TEXT,
            DISPUTE_GRAPH,
            "A customer wants to dispute a charge on their bill that they believe is wrong.",
        ),
        (
            CANCEL_INTENT,
            GT_CANCEL_TEXT,
            CANCEL_GRAPH,
            "A customer wants to cancel their subscription.",
        ),
    ):
        payload = {"intent": intent, "workflow_text": text, "issue": issue, "graph": graph}
        (gt_dir / f"{intent}.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    configs = root / "configs"
    configs.mkdir(exist_ok=True)
    (configs / "toy_experiment.toml").write_text(CONFIG_TOML, encoding="utf-8")
