"""
Database models for the decision log
One row per teacher query: oracle, input, draw index, augmented text hash and label
"""
from datetime import datetime, timezone

from sqlalchemy import Column, DateTime, Integer, String, UniqueConstraint
from sqlalchemy.orm import declarative_base

Base = declarative_base()


def _utcnow():
    # stored naive, always UTC
    return datetime.now(timezone.utc).replace(tzinfo=None)


class DecisionRecord(Base):
    __tablename__ = 'decision_record'
    __table_args__ = (
        UniqueConstraint('oracle', 'input_id', 'draw_index', 'text_hash', name='uq_decision_key'),
    )

    id = Column(Integer, primary_key=True)
    oracle = Column(String(255), nullable=False, index=True)
    input_id = Column(String(255), nullable=False, index=True)
    draw_index = Column(Integer, nullable=False)
    text_hash = Column(String(64), nullable=False)
    label = Column(Integer, nullable=False)
    timestamp = Column(DateTime, default=_utcnow)
