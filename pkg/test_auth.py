#!/usr/bin/env python3
"""
Test bearer-token handling for the remote decision API
"""
import pytest

from auth import DEFAULT_TOKEN_ENV, auth_headers, get_api_token, redact


def test_token_comes_from_the_environment(monkeypatch):
    monkeypatch.setenv(DEFAULT_TOKEN_ENV, "  abc123token  ")
    assert get_api_token() == "abc123token"
    monkeypatch.setenv("OTHER_TOKEN", "xyz")
    assert get_api_token("OTHER_TOKEN") == "xyz"


def test_blank_or_missing_token_is_none(monkeypatch):
    monkeypatch.delenv(DEFAULT_TOKEN_ENV, raising=False)
    assert get_api_token() is None
    monkeypatch.setenv(DEFAULT_TOKEN_ENV, "   ")
    assert get_api_token() is None


def test_headers(monkeypatch):
    monkeypatch.delenv(DEFAULT_TOKEN_ENV, raising=False)
    headers = auth_headers()
    assert headers == {'Content-Type': 'application/json', 'Accept': 'application/json'}
    assert auth_headers("tok")["Authorization"] == "Bearer tok"
    monkeypatch.setenv(DEFAULT_TOKEN_ENV, "from-env")
    assert auth_headers()["Authorization"] == "Bearer from-env"
    # an explicit empty token disables the header
    assert "Authorization" not in auth_headers("")


def test_redact():
    assert redact(None) == "<none>"
    assert redact("short") == "***"
    assert redact("a-much-longer-token") == "a-mu..."


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
