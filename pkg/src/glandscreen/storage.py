"""Single-file relational store for cases, dispositions, and model records.

All writes funnel through one lock so the store is the service's single
serialization point; reads share the same connection.
"""

from __future__ import annotations

import json
import sqlite3
import threading
from datetime import datetime, timezone
from pathlib import Path

_SCHEMA = """
CREATE TABLE IF NOT EXISTS models (
    id TEXT PRIMARY KEY,
    checkpoint_path TEXT NOT NULL,
    config_json TEXT NOT NULL,
    manifest_path TEXT,
    is_default INTEGER NOT NULL DEFAULT 0
);
CREATE TABLE IF NOT EXISTS cases (
    id TEXT PRIMARY KEY,
    created_at TEXT NOT NULL,
    image_path TEXT NOT NULL,
    model_id TEXT NOT NULL,
    threshold REAL NOT NULL,
    prediction_json TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS dispositions (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    case_id TEXT NOT NULL REFERENCES cases(id),
    disposition TEXT NOT NULL CHECK (disposition IN ('confirm', 'override')),
    note TEXT NOT NULL DEFAULT '',
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS explanations (
    case_id TEXT PRIMARY KEY REFERENCES cases(id),
    artifacts_json TEXT NOT NULL,
    created_at TEXT NOT NULL
);
"""

VALID_DISPOSITIONS = ("confirm", "override")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class CaseStore:
    def __init__(self, db_path: Path | str) -> None:
        Path(db_path).parent.mkdir(parents=True, exist_ok=True)
        self._conn = sqlite3.connect(str(db_path), check_same_thread=False)
        self._conn.row_factory = sqlite3.Row
        self._lock = threading.Lock()
        with self._lock:
            self._conn.executescript(_SCHEMA)
            self._conn.commit()

    def close(self) -> None:
        self._conn.close()

    # -- models ----------------------------------------------------------

    def upsert_model(
        self, model_id: str, checkpoint_path: str, config: dict,
        manifest_path: str | None, is_default: bool,
    ) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT INTO models (id, checkpoint_path, config_json, manifest_path, is_default)"
                " VALUES (?, ?, ?, ?, ?)"
                " ON CONFLICT(id) DO UPDATE SET checkpoint_path=excluded.checkpoint_path,"
                " config_json=excluded.config_json, manifest_path=excluded.manifest_path,"
                " is_default=excluded.is_default",
                (model_id, checkpoint_path, json.dumps(config), manifest_path, int(is_default)),
            )
            self._conn.commit()

    # -- cases -----------------------------------------------------------

    def insert_case(
        self, case_id: str, image_path: str, model_id: str, threshold: float, prediction: dict
    ) -> str:
        created = _now()
        with self._lock:
            self._conn.execute(
                "INSERT INTO cases (id, created_at, image_path, model_id, threshold, prediction_json)"
                " VALUES (?, ?, ?, ?, ?, ?)",
                (case_id, created, image_path, model_id, threshold, json.dumps(prediction)),
            )
            self._conn.commit()
        return created

    def get_case(self, case_id: str) -> dict | None:
        row = self._conn.execute("SELECT * FROM cases WHERE id = ?", (case_id,)).fetchone()
        if row is None:
            return None
        return self._case_payload(row)

    def list_cases(self, limit: int = 50) -> list[dict]:
        rows = self._conn.execute(
            "SELECT * FROM cases ORDER BY created_at DESC, id DESC LIMIT ?", (limit,)
        ).fetchall()
        return [self._case_payload(row) for row in rows]

    def _case_payload(self, row: sqlite3.Row) -> dict:
        dispositions = [
            dict(d)
            for d in self._conn.execute(
                "SELECT disposition, note, created_at FROM dispositions"
                " WHERE case_id = ? ORDER BY seq", (row["id"],)
            ).fetchall()
        ]
        return {
            "case_id": row["id"],
            "created_at": row["created_at"],
            "image_path": row["image_path"],
            "model_id": row["model_id"],
            "threshold": row["threshold"],
            "prediction": json.loads(row["prediction_json"]),
            "dispositions": dispositions,
        }

    def case_summary(self) -> dict:
        total = self._conn.execute("SELECT COUNT(*) AS n FROM cases").fetchone()["n"]
        by_label: dict[str, int] = {}
        for row in self._conn.execute(
            "SELECT json_extract(prediction_json, '$.label') AS label, COUNT(*) AS n"
            " FROM cases GROUP BY label"
        ).fetchall():
            by_label[row["label"]] = row["n"]
        reviewed = self._conn.execute(
            "SELECT COUNT(DISTINCT case_id) AS n FROM dispositions"
        ).fetchone()["n"]
        return {"total": total, "by_label": by_label, "reviewed": reviewed}

    # -- dispositions (append-only) ---------------------------------------

    def add_disposition(self, case_id: str, disposition: str, note: str = "") -> dict:
        if disposition not in VALID_DISPOSITIONS:
            raise ValueError(f"disposition must be one of {VALID_DISPOSITIONS}")
        created = _now()
        with self._lock:
            self._conn.execute(
                "INSERT INTO dispositions (case_id, disposition, note, created_at)"
                " VALUES (?, ?, ?, ?)",
                (case_id, disposition, note, created),
            )
            self._conn.commit()
        return {"disposition": disposition, "note": note, "created_at": created}

    # -- explanation cache -------------------------------------------------

    def get_explanation(self, case_id: str) -> dict | None:
        row = self._conn.execute(
            "SELECT artifacts_json FROM explanations WHERE case_id = ?", (case_id,)
        ).fetchone()
        return json.loads(row["artifacts_json"]) if row else None

    def put_explanation(self, case_id: str, artifacts: dict) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT OR REPLACE INTO explanations (case_id, artifacts_json, created_at)"
                " VALUES (?, ?, ?)",
                (case_id, json.dumps(artifacts), _now()),
            )
            self._conn.commit()
