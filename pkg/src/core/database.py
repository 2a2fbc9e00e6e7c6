from contextlib import contextmanager
from sqlalchemy import create_engine, Column, Integer, String, DateTime, Text
from sqlalchemy.orm import declarative_base, sessionmaker
from datetime import datetime
from .config import settings

Base = declarative_base()


class RunRecord(Base):
    """运行记录表"""
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True)
    experiment = Column(String(50), nullable=False)
    config_digest = Column(String(64), nullable=False, index=True)
    seed = Column(Integer, nullable=True)
    output_dir = Column(String(500), nullable=False)
    status = Column(String(50), default="pending")  # pending, running, completed, failed
    created_at = Column(DateTime, default=datetime.now)
    updated_at = Column(DateTime, default=datetime.now, onupdate=datetime.now)
    started_at = Column(DateTime, nullable=True)
    completed_at = Column(DateTime, nullable=True)
    checkpoints = Column(Integer, default=0)
    exit_code = Column(Integer, nullable=True)
    error_message = Column(Text, nullable=True)


class ArtifactRecord(Base):
    """产出文件记录表"""
    __tablename__ = "artifacts"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(Integer, nullable=False, index=True)
    kind = Column(String(50), nullable=False)  # series, metadata, samples, snapshot, report
    path = Column(String(500), nullable=False)
    size = Column(Integer, default=0)
    sha256 = Column(String(64), nullable=True)
    created_at = Column(DateTime, default=datetime.now)


def get_engine(output_dir: str):
    """创建指向输出目录台账的数据库引擎"""
    return create_engine(settings.ledger_url(output_dir), echo=False)


def init_db(engine):
    """初始化数据库"""
    Base.metadata.create_all(bind=engine)


@contextmanager
def session_scope(engine):
    """获取数据库会话，出错时回滚"""
    db = sessionmaker(autocommit=False, autoflush=False, bind=engine)()
    try:
        yield db
        db.commit()
    except Exception:
        db.rollback()
        raise
    finally:
        db.close()
