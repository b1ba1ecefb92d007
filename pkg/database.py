"""
Decision log persistence
Every teacher query is recorded once so repeated estimation runs never re-query the oracle.
Backends: append-only JSON lines (default), SQL through SQLAlchemy, or in memory.
"""
import hashlib
import json
import logging
import os
import threading
from datetime import datetime, timezone
from functools import lru_cache
from typing import Dict, Optional, Tuple

from dotenv import load_dotenv
from sqlalchemy import create_engine, text as sa_text
from sqlalchemy.exc import IntegrityError, SQLAlchemyError
from sqlalchemy.orm import sessionmaker
from sqlalchemy.pool import StaticPool

from core import ConfigError, ContractViolation
from models import Base, DecisionRecord

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

DecisionKey = Tuple[str, str, int, str]


def text_hash(text: str) -> str:
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


def decision_key(oracle: str, input_id: str, draw_index: int, text: str) -> DecisionKey:
    return (str(oracle), str(input_id), int(draw_index), text_hash(text))


class DecisionLog:
    """Append-only decision log, JSON lines on disk or purely in memory when path is None"""

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self._lock = threading.Lock()
        self._index: Dict[DecisionKey, int] = {}
        if path and os.path.exists(path):
            self._load()

    def _load(self):
        with open(self.path, 'r', encoding='utf-8') as fh:
            for line_no, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                    key = (row['oracle'], row['input_id'], int(row['n']), row['text_hash'])
                    self._index[key] = int(row['label'])
                except (ValueError, KeyError, TypeError) as e:
                    raise ConfigError(f"{self.path}:{line_no}: malformed decision record: {e}") from e
        logger.info("loaded %d decisions from %s", len(self._index), self.path)

    def get_decision(self, key: DecisionKey) -> Optional[int]:
        with self._lock:
            return self._index.get(key)

    def record_decision(self, key: DecisionKey, label: int) -> Tuple[bool, str]:
        """Append one decision; an existing key is left untouched"""
        row = {
            'oracle': key[0],
            'input_id': key[1],
            'n': key[2],
            'text_hash': key[3],
            'label': int(label),
            'timestamp': datetime.now(timezone.utc).isoformat(),
        }
        with self._lock:
            existing = self._index.get(key)
            if existing is not None:
                if existing != int(label):
                    raise ContractViolation(f"decision log already holds label {existing} for {key[:3]}")
                return False, "Decision already recorded"
            if self.path:
                directory = os.path.dirname(os.path.abspath(self.path))
                os.makedirs(directory, exist_ok=True)
                with open(self.path, 'a', encoding='utf-8') as fh:
                    fh.write(json.dumps(row, sort_keys=True) + "\n")
                    fh.flush()
            self._index[key] = int(label)
        return True, "Decision recorded"

    def __len__(self):
        with self._lock:
            return len(self._index)

    def close(self):
        pass


class DatabaseManager:
    """Decision log stored in any SQLAlchemy database (sqlite, PostgreSQL through psycopg2)"""

    def __init__(self, database_url: Optional[str] = None):
        self.database_url = database_url or os.getenv('DATABASE_URL', 'sqlite:///decisions.db')
        self.engine = None
        self.SessionLocal = None
        self._lock = threading.Lock()
        self.init_database()

    def init_database(self):
        """Initialize database connection and create the table"""
        kwargs = {'echo': False}
        if self.database_url.startswith('sqlite'):
            kwargs['connect_args'] = {'check_same_thread': False}
            if self.database_url in ('sqlite://', 'sqlite:///:memory:'):
                kwargs['poolclass'] = StaticPool
        try:
            self.engine = create_engine(self.database_url, **kwargs)
            Base.metadata.create_all(self.engine)
            self.SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=self.engine)
            with self.engine.connect() as conn:
                conn.execute(sa_text("SELECT 1"))
            logger.info("decision database connected: %s", self.engine.url.render_as_string(hide_password=True))
        except SQLAlchemyError as e:
            raise ConfigError(f"Database connection failed: {e}") from e

    def get_session(self):
        """Get database session"""
        return self.SessionLocal()

    def get_decision(self, key: DecisionKey) -> Optional[int]:
        session = self.get_session()
        try:
            record = session.query(DecisionRecord).filter_by(
                oracle=key[0], input_id=key[1], draw_index=key[2], text_hash=key[3]).first()
            return None if record is None else int(record.label)
        finally:
            session.close()

    def record_decision(self, key: DecisionKey, label: int) -> Tuple[bool, str]:
        with self._lock:
            session = self.get_session()
            try:
                session.add(DecisionRecord(oracle=key[0], input_id=key[1], draw_index=key[2],
                                           text_hash=key[3], label=int(label)))
                session.commit()
                return True, "Decision recorded"
            except IntegrityError:
                session.rollback()
                existing = self.get_decision(key)
                if existing is not None and existing != int(label):
                    raise ContractViolation(f"decision log already holds label {existing} for {key[:3]}")
                return False, "Decision already recorded"
            except SQLAlchemyError as e:
                session.rollback()
                logger.error("error recording decision %s: %s", key[:3], e)
                return False, f"Error recording decision: {e}"
            finally:
                session.close()

    def __len__(self):
        session = self.get_session()
        try:
            return session.query(DecisionRecord).count()
        finally:
            session.close()

    def close(self):
        if self.engine is not None:
            self.engine.dispose()


@lru_cache(maxsize=8)
def _open_decision_log(target: str):
    if '://' in target:
        return DatabaseManager(target)
    return DecisionLog(target)


def get_decision_log(target: Optional[str] = None):
    """Database URL -> SQL backend, path -> JSON lines, None -> fresh in-memory log"""
    if target is None:
        return DecisionLog(None)
    return _open_decision_log(str(target))
