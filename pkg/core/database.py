"""
SQLite Run Registry - Persists experiment runs, their status and final metrics
"""
import json
import os
import sqlite3
import threading
import time
import uuid
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional

REGISTRY_FILE = "runs.db"


class RunStatus(Enum):
    QUEUED = "Queued"
    RUNNING = "Running"
    COMPLETED = "Completed"
    ERROR = "Error"
    STOPPED = "Stopped"


@dataclass
class RunRecord:
    id: str
    command: str
    status: RunStatus = RunStatus.QUEUED
    config: Dict[str, Any] = field(default_factory=dict)
    out_dir: str = ''
    started_at: float = 0.0
    completed_at: float = 0.0
    error_msg: str = ''
    summary: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def new(cls, command: str, config: Dict[str, Any], out_dir: str) -> "RunRecord":
        return cls(id=uuid.uuid4().hex[:12], command=command, config=config, out_dir=out_dir)


class RunRegistry:
    _local = threading.local()

    def __init__(self, db_path: str = REGISTRY_FILE):
        self.db_path = db_path
        parent = os.path.dirname(os.path.abspath(db_path))
        os.makedirs(parent, exist_ok=True)
        self._init_db()

    def _get_conn(self) -> sqlite3.Connection:
        conns = getattr(self._local, 'conns', None)
        if conns is None:
            conns = self._local.conns = {}
        conn = conns.get(self.db_path)
        if conn is None:
            conn = sqlite3.connect(self.db_path, check_same_thread=False)
            conn.row_factory = sqlite3.Row
            conn.execute("PRAGMA journal_mode=WAL")
            conns[self.db_path] = conn
        return conn

    @property
    def conn(self):
        return self._get_conn()

    def _init_db(self):
        conn = sqlite3.connect(self.db_path)
        conn.execute("PRAGMA journal_mode=WAL")
        conn.executescript("""
            CREATE TABLE IF NOT EXISTS runs (
                id           TEXT PRIMARY KEY,
                command      TEXT NOT NULL,
                status       TEXT DEFAULT 'Queued',
                config_json  TEXT DEFAULT '{}',
                out_dir      TEXT DEFAULT '',
                started_at   REAL DEFAULT 0,
                completed_at REAL DEFAULT 0,
                error_msg    TEXT DEFAULT '',
                summary_json TEXT DEFAULT '{}'
            );
        """)
        conn.commit()
        conn.close()

    def close(self):
        conn = getattr(self._local, 'conns', {}).pop(self.db_path, None)
        if conn is not None:
            conn.close()

    @staticmethod
    def _to_record(row: sqlite3.Row) -> RunRecord:
        return RunRecord(
            id=row['id'],
            command=row['command'],
            status=RunStatus(row['status']),
            config=json.loads(row['config_json']),
            out_dir=row['out_dir'],
            started_at=row['started_at'],
            completed_at=row['completed_at'],
            error_msg=row['error_msg'],
            summary=json.loads(row['summary_json']),
        )

    # ── Runs CRUD ──────────────────────────────────────────────────────────

    def add_run(self, record: RunRecord) -> RunRecord:
        if not record.started_at:
            record.started_at = time.time()
        self.conn.execute("""
            INSERT OR REPLACE INTO runs
            (id, command, status, config_json, out_dir, started_at, completed_at,
             error_msg, summary_json)
            VALUES (:id, :command, :status, :config_json, :out_dir, :started_at,
                    :completed_at, :error_msg, :summary_json)
        """, {
            'id': record.id,
            'command': record.command,
            'status': record.status.value,
            'config_json': json.dumps(record.config, sort_keys=True),
            'out_dir': record.out_dir,
            'started_at': record.started_at,
            'completed_at': record.completed_at,
            'error_msg': record.error_msg,
            'summary_json': json.dumps(record.summary, sort_keys=True),
        })
        self.conn.commit()
        return record

    def update_run(self, run_id: str, status: Optional[RunStatus] = None,
                   error_msg: Optional[str] = None, summary: Optional[Dict[str, Any]] = None):
        fields: Dict[str, Any] = {}
        if status is not None:
            fields['status'] = status.value
            if status in (RunStatus.COMPLETED, RunStatus.ERROR, RunStatus.STOPPED):
                fields['completed_at'] = time.time()
        if error_msg is not None:
            fields['error_msg'] = error_msg
        if summary is not None:
            fields['summary_json'] = json.dumps(summary, sort_keys=True)
        if not fields:
            return
        sets = ", ".join(f"{k} = ?" for k in fields)
        vals = list(fields.values()) + [run_id]
        self.conn.execute(f"UPDATE runs SET {sets} WHERE id = ?", vals)
        self.conn.commit()

    def get_run(self, run_id: str) -> Optional[RunRecord]:
        row = self.conn.execute("SELECT * FROM runs WHERE id = ?", (run_id,)).fetchone()
        return self._to_record(row) if row else None

    def list_runs(self, status: Optional[RunStatus] = None) -> List[RunRecord]:
        if status is None:
            rows = self.conn.execute("SELECT * FROM runs ORDER BY started_at ASC").fetchall()
        else:
            rows = self.conn.execute(
                "SELECT * FROM runs WHERE status = ? ORDER BY started_at ASC", (status.value,)
            ).fetchall()
        return [self._to_record(r) for r in rows]

    def delete_run(self, run_id: str):
        self.conn.execute("DELETE FROM runs WHERE id = ?", (run_id,))
        self.conn.commit()
