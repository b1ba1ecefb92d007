"""
Authentication for the remote decision API
The bearer token comes from the environment (or a .env file), never from config files.
"""
import os
from typing import Dict, Optional

from dotenv import load_dotenv

load_dotenv()

DEFAULT_TOKEN_ENV = 'DBKD_API_TOKEN'


def get_api_token(token_env: str = DEFAULT_TOKEN_ENV) -> Optional[str]:
    """Token from the named environment variable, None when unset or blank"""
    token = os.getenv(token_env, '').strip()
    return token or None


def auth_headers(token: Optional[str] = None, token_env: str = DEFAULT_TOKEN_ENV) -> Dict[str, str]:
    token = token if token is not None else get_api_token(token_env)
    headers = {'Content-Type': 'application/json', 'Accept': 'application/json'}
    if token:
        headers['Authorization'] = f"Bearer {token}"
    return headers


def redact(token: Optional[str]) -> str:
    """Printable form of a token for logs"""
    if not token:
        return '<none>'
    return token[:4] + '...' if len(token) > 8 else '***'
