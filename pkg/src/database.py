"""
Experiment run ledger and session management for Berezin Lab
"""

import json
import logging
from datetime import datetime

from sqlalchemy import Column, DateTime, Float, Integer, String, Text, create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

from src.config import Config

logger = logging.getLogger(__name__)

Base = declarative_base()


class ExperimentRun(Base):
    """One CLI invocation with its resolved config and result payload"""
    __tablename__ = 'experiment_runs'

    id = Column(Integer, primary_key=True)
    task = Column(String(50), nullable=False, index=True)
    config_json = Column(Text, nullable=False)
    result_json = Column(Text)
    headline = Column(Float)  # beta, residual or gap, depending on the task
    status = Column(String(20))  # 'ok', 'numerical_error', 'not_converged'
    exit_code = Column(Integer, default=0)
    created_at = Column(DateTime, default=datetime.utcnow)

    def to_dict(self):
        return {
            'id': self.id,
            'task': self.task,
            'config': json.loads(self.config_json),
            'headline': self.headline,
            'status': self.status,
            'exit_code': self.exit_code,
            'created_at': self.created_at.isoformat() if self.created_at else None,
        }


# Database initialization
engine = create_engine(Config.DATABASE_URL, echo=False)
SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)


def configure(url):
    """Point the ledger at another database URL"""
    global engine
    engine = create_engine(url, echo=False)
    SessionLocal.configure(bind=engine)
    return engine


def init_db():
    """Initialize database tables"""
    if str(engine.url).startswith('sqlite:///'):
        Config.DATA_DIR.mkdir(parents=True, exist_ok=True)
    Base.metadata.create_all(bind=engine)


def get_db_session():
    """Get a database session (direct access)"""
    return SessionLocal()


def _status(exit_code):
    return {0: 'ok', 2: 'numerical_error'}.get(exit_code, 'failed')


def record_run(task, config, payload, exit_code=0, headline=None):
    """Store a run and return its id"""
    init_db()
    db = get_db_session()
    try:
        run = ExperimentRun(
            task=task,
            config_json=json.dumps(config, sort_keys=True, default=float),
            result_json=json.dumps(payload, sort_keys=True, default=float),
            headline=headline,
            status=payload.get('status', _status(exit_code)) if isinstance(payload, dict) else _status(exit_code),
            exit_code=exit_code,
        )
        db.add(run)
        db.commit()
        logger.info(f"Recorded {task} run #{run.id} (exit {exit_code})")
        return run.id
    finally:
        db.close()


def recent_runs(task=None, limit=20):
    """Most recent runs, newest first"""
    db = get_db_session()
    try:
        query = db.query(ExperimentRun)
        if task is not None:
            query = query.filter(ExperimentRun.task == task)
        return [run.to_dict() for run in query.order_by(ExperimentRun.id.desc()).limit(limit).all()]
    finally:
        db.close()
