import pytest

from src.core.config import Settings


@pytest.fixture
def clean_env(monkeypatch):
    for name in ("MAX_WORKERS", "PROGRESS", "LEDGER_NAME"):
        monkeypatch.delenv(name, raising=False)


def test_settings_read_dotenv(tmp_path, clean_env):
    env = tmp_path / ".env"
    env.write_text("MAX_WORKERS=3\nprogress=false\nPYTHONPATH=/elsewhere\n", encoding="utf-8")
    loaded = Settings(_env_file=str(env))
    assert loaded.max_workers == 3
    assert loaded.progress is False


def test_environment_overrides_dotenv(tmp_path, clean_env, monkeypatch):
    env = tmp_path / ".env"
    env.write_text("LEDGER_NAME=from_file.db\n", encoding="utf-8")
    monkeypatch.setenv("LEDGER_NAME", "from_env.db")
    assert Settings(_env_file=str(env)).ledger_name == "from_env.db"


def test_settings_config():
    assert Settings.model_config["env_file"] == ".env"
    assert Settings.model_config["case_sensitive"] is False


def test_set_workers_rejects_zero(clean_env):
    loaded = Settings(_env_file=None)
    with pytest.raises(ValueError):
        loaded.set_workers(0)
    loaded.set_workers(2)
    assert loaded.max_workers == 2
