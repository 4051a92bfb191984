#!/usr/bin/env python3
"""测试配置加载：默认值、YAML 覆盖与环境变量优先"""
import pytest

from src.config import load_settings


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ("RR_TEMPLATE_DIR", "RR_LOG_LEVEL", "RR_LOG_DIR", "RR_TEST_DIR"):
        monkeypatch.delenv(name, raising=False)


def test_defaults_without_file(tmp_path):
    settings = load_settings(str(tmp_path / "missing.yaml"))
    assert settings.templates.directory == "templates"
    assert settings.ransac.iterations == 25
    assert settings.ransac.tau_s == 0.1
    assert settings.bench.sigmas == [0.1, 0.5, 1.0, 2.0, 5.0]
    assert settings.solver.polish is True
    assert settings.logging.level == "INFO"


def test_yaml_values(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text(
        "solver:\n"
        "  newton_steps: 3\n"
        "  polish: false\n"
        "ransac:\n"
        "  iterations: 40\n"
        "bench:\n"
        "  sigmas: [1, 2]\n"
        "  motion: rigid\n"
        "templates:\n"
        "  directory: ${RR_TEST_DIR}\n",
        encoding="utf-8",
    )
    settings = load_settings(str(path))
    assert settings.solver.newton_steps == 3
    assert settings.solver.polish is False
    assert settings.ransac.iterations == 40
    assert settings.bench.sigmas == [1.0, 2.0]
    assert settings.bench.motion == "rigid"
    # 未设置的环境变量展开为空串
    assert settings.templates.directory == ""


def test_env_expansion_and_overrides(tmp_path, monkeypatch):
    path = tmp_path / "config.yaml"
    path.write_text("templates:\n  directory: ${RR_TEST_DIR}\nlogging:\n  level: DEBUG\n", encoding="utf-8")
    monkeypatch.setenv("RR_TEST_DIR", "/data/tpl")
    assert load_settings(str(path)).templates.directory == "/data/tpl"

    monkeypatch.setenv("RR_TEMPLATE_DIR", "/override")
    monkeypatch.setenv("RR_LOG_LEVEL", "WARNING")
    monkeypatch.setenv("RR_LOG_DIR", str(tmp_path / "logs"))
    settings = load_settings(str(path))
    assert settings.templates.directory == "/override"
    assert settings.logging.level == "WARNING"
    assert settings.logging.log_dir == str(tmp_path / "logs")
