"""Report rendering: text table, CSV, and figure output."""

import csv

from flowmine.report import render_text_table, write_csv, write_figure

PAYLOAD = {
    "per_seed": {
        "101": {
            "per_intent": {
                "cancel_plan": {"outcomes": [True, False], "accuracy": 0.5},
                "dispute_charge": {"outcomes": [True, True, True], "accuracy": 1.0},
            },
            "macro": 0.75,
            "micro": 0.8,
            "avg_utt": 6.0,
        },
        "202": {
            "per_intent": {
                "cancel_plan": {"outcomes": [False, False], "accuracy": 0.0},
                "dispute_charge": {"outcomes": [True, True, True], "accuracy": 1.0},
            },
            "macro": 0.5,
            "micro": 0.6,
            "avg_utt": 6.5,
        },
    },
    "mean": {
        "macro": 0.625,
        "micro": 0.7,
        "avg_utt": 6.25,
        "per_intent_accuracy": {"cancel_plan": 0.25, "dispute_charge": 1.0},
    },
}


class TestTextTable:
    def test_contains_one_block_per_seed(self):
        table = render_text_table(PAYLOAD)
        assert "Order seed 101" in table
        assert "Order seed 202" in table

    def test_per_intent_rows(self):
        lines = render_text_table(PAYLOAD).splitlines()
        row = next(l for l in lines if l.startswith("dispute_charge"))
        columns = row.split()
        assert columns == ["dispute_charge", "3", "3", "1.0000"]

    def test_seed_footers_and_mean(self):
        table = render_text_table(PAYLOAD)
        assert "macro 0.7500 | micro 0.8000 | #utt 6.00" in table
        assert "Mean over 2 seed(s): macro 0.6250 | micro 0.7000 | #utt 6.25" in table

    def test_ends_with_newline(self):
        assert render_text_table(PAYLOAD).endswith("\n")


class TestCsv:
    def test_rows(self, tmp_path):
        path = tmp_path / "report.csv"
        write_csv(PAYLOAD, path)
        with path.open(newline="") as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["seed", "intent", "subflows", "correct", "accuracy"]
        assert rows[1] == ["101", "cancel_plan", "2", "1", "0.5000"]
        assert len(rows) == 1 + 4  # header + 2 seeds x 2 intents

    def test_creates_parent_directories(self, tmp_path):
        path = tmp_path / "deep" / "nested" / "report.csv"
        write_csv(PAYLOAD, path)
        assert path.exists()


class TestFigure:
    def test_writes_png(self, tmp_path):
        path = tmp_path / "accuracy.png"
        write_figure(PAYLOAD, path)
        assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_single_intent_payload(self, tmp_path):
        payload = {
            "per_seed": {
                "1": {
                    "per_intent": {"only": {"outcomes": [True], "accuracy": 1.0}},
                    "macro": 1.0,
                    "micro": 1.0,
                    "avg_utt": 2.0,
                }
            },
            "mean": {
                "macro": 1.0,
                "micro": 1.0,
                "avg_utt": 2.0,
                "per_intent_accuracy": {"only": 1.0},
            },
        }
        path = tmp_path / "one.png"
        write_figure(payload, path)
        assert path.stat().st_size > 0
