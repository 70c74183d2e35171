"""HTTP client for the gridlet RPC protocol.

Wraps the codec in requests-based transport: POST one `methodCall` per
request to `/rpc`, decode the `methodResponse`, and raise the carried
Fault on failure. Transport problems (refused connections, timeouts,
non-200 statuses) raise TransportError instead so callers can tell a dead
server from an unhappy one.

When a credential is configured the client logs in lazily via
`auth.login` and attaches the session token as the `X-Session` header,
re-logging in once if the server reports the session invalid. Requests
with `binary=True` add `X-Binary-Response: 1` and return raw bytes when
the server answers with octet-stream framing.
"""

from __future__ import annotations

import json
import threading
from typing import Any, Optional

import requests

from . import xrpc
from .faults import Fault, InvalidSession
from .xrpc import BINARY_CONTENT_TYPE, BINARY_REQUEST_HEADER, BINARY_STATUS_HEADER, RpcCall

OPEN_METHODS = frozenset({"auth.login", "echo.ping", "broker.role"})


class TransportError(Exception):
    """The server could not be reached or answered outside the protocol."""


class RpcClient:
    def __init__(
        self,
        base_url: str,
        credential: Optional[dict | str] = None,
        timeout: float = 15.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        if isinstance(credential, dict):
            credential = json.dumps(credential)
        self._credential = credential
        self._token: Optional[str] = None
        self._login_lock = threading.Lock()

    def login(self) -> str:
        """Authenticate and cache the session token."""
        if self._credential is None:
            raise TransportError("no credential configured")
        token = self._post("auth.login", [self._credential], binary=False, token=None)
        if not isinstance(token, str):
            raise TransportError("auth.login returned a non-string token")
        self._token = token
        return token

    def _ensure_token(self) -> Optional[str]:
        if self._credential is None:
            return None
        with self._login_lock:
            if self._token is None:
                self.login()
            return self._token

    def call(self, method: str, *params: Any, binary: bool = False) -> Any:
        token = None if method in OPEN_METHODS else self._ensure_token()
        try:
            return self._post(method, list(params), binary=binary, token=token)
        except InvalidSession:
            if self._credential is None:
                raise
            with self._login_lock:
                self._token = None
                self.login()
                token = self._token
            return self._post(method, list(params), binary=binary, token=token)

    def _post(self, method: str, params: list, binary: bool, token: Optional[str]) -> Any:
        body = xrpc.encode_call(RpcCall(method=method, params=params))
        headers = {"Content-Type": xrpc.XML_CONTENT_TYPE}
        if token:
            headers["X-Session"] = token
        if binary:
            headers[BINARY_REQUEST_HEADER] = "1"
        try:
            response = requests.post(
                f"{self.base_url}/rpc", data=body, headers=headers, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise TransportError(f"{self.base_url}: {exc}") from None
        if response.status_code != 200:
            raise TransportError(f"{self.base_url}: HTTP {response.status_code}")
        content_type = response.headers.get("Content-Type", "")
        if content_type.startswith(BINARY_CONTENT_TYPE):
            if response.headers.get(BINARY_STATUS_HEADER) != "ok":
                raise TransportError("binary response without ok status header")
            return response.content
        return xrpc.decode_response(response.content)


def probe(url: str, timeout: float = 1.0) -> bool:
    """Is a node alive at `url`? Cheap open-method check, short timeout."""
    try:
        RpcClient(url, timeout=timeout).call("broker.role")
        return True
    except (TransportError, Fault):
        return False


class RpcFileSource:
    """Adapts a node's file service to the transfer client's source protocol."""

    def __init__(self, client: RpcClient):
        self.client = client

    def size(self, remote_path: str) -> int:
        from .faults import NotFound

        clean = remote_path.strip("/")
        parent, _, name = clean.rpartition("/")
        entries = self.client.call("file.ls", parent or "/", name)
        for entry in entries:
            if entry.get("name") == name and not entry.get("is_dir"):
                return int(entry["size"])
        raise NotFound(f"no such file: {remote_path}")

    def md5(self, remote_path: str) -> str:
        return self.client.call("file.md5", remote_path)

    def read(self, remote_path: str, offset: int, length: int) -> bytes:
        blob = self.client.call("file.read", remote_path, offset, length, binary=True)
        if not isinstance(blob, bytes):
            raise TransportError("file.read did not return bytes")
        return blob
