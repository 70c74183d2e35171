"""Caller identity, sessions, and ACL authorization.

Authorization semantics are default-deny with deny-overrides: a call is
denied unless an allow entry matches, and any matching deny entry wins
regardless of ordering or scope specificity. Principals match either as a
contiguous case-sensitive substring of the caller's distinguished name or
as an exact virtual-organization name.

Credential verification is pluggable; the bundled SharedSecretVerifier
accepts a self-describing JSON credential {"dn", "vos", "secret"} checked
against a configured shared secret. A production deployment would slot a
certificate-based verifier behind the same interface.
"""

from __future__ import annotations

import hmac
import json
import os
import secrets
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional

from .faults import InvalidCredential, InvalidScope, InvalidSession, NotFound

KIND_DN_SUBSTRING = "dn-substring"
KIND_VO = "vo"
KINDS = (KIND_DN_SUBSTRING, KIND_VO)
EFFECTS = ("allow", "deny")


@dataclass(frozen=True)
class Identity:
    """An authenticated caller: distinguished name plus VO memberships."""

    dn: str
    vos: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if not self.dn:
            raise ValueError("identity dn must be non-empty")


@dataclass(frozen=True)
class AclEntry:
    entry_id: int
    kind: str  # dn-substring | vo
    effect: str  # allow | deny
    principal: str
    scope: str  # "service" or "service.method"

    def matches_identity(self, identity: Identity) -> bool:
        if self.kind == KIND_DN_SUBSTRING:
            return self.principal in identity.dn
        return self.principal in identity.vos

    def matches_scope(self, scope: str) -> bool:
        service = scope.split(".", 1)[0]
        return self.scope == scope or self.scope == service


class CredentialVerifier:
    """Interface: turn an opaque credential blob into an Identity."""

    def verify(self, credential: bytes | str) -> Identity:
        raise NotImplementedError


class SharedSecretVerifier(CredentialVerifier):
    """Test/default verifier: JSON credential carrying dn, vos, and a secret."""

    def __init__(self, secret: str):
        self._secret = secret

    def verify(self, credential: bytes | str) -> Identity:
        if isinstance(credential, bytes):
            try:
                credential = credential.decode("utf-8")
            except UnicodeDecodeError:
                raise InvalidCredential("credential is not UTF-8") from None
        try:
            payload = json.loads(credential)
        except (TypeError, json.JSONDecodeError):
            raise InvalidCredential("credential is not valid JSON") from None
        if not isinstance(payload, dict):
            raise InvalidCredential("credential must be a JSON object")
        secret = payload.get("secret")
        if not isinstance(secret, str) or not hmac.compare_digest(secret, self._secret):
            raise InvalidCredential("bad shared secret")
        dn = payload.get("dn")
        if not isinstance(dn, str) or not dn:
            raise InvalidCredential("credential dn must be a non-empty string")
        vos = payload.get("vos", [])
        if not isinstance(vos, list) or not all(isinstance(v, str) for v in vos):
            raise InvalidCredential("credential vos must be a list of strings")
        return Identity(dn=dn, vos=frozenset(vos))


class SessionManager:
    """In-memory session tokens handed out by auth.login."""

    def __init__(self):
        self._lock = threading.Lock()
        self._sessions: dict[str, Identity] = {}

    def open(self, identity: Identity) -> str:
        token = secrets.token_hex(16)
        with self._lock:
            self._sessions[token] = identity
        return token

    def lookup(self, token: Optional[str]) -> Identity:
        if not token:
            raise InvalidSession("missing session token")
        with self._lock:
            identity = self._sessions.get(token)
        if identity is None:
            raise InvalidSession("unknown or expired session token")
        return identity


def authorize(entries: Iterable[AclEntry], identity: Identity, scope: str) -> bool:
    """Deny-overrides evaluation over all matching entries; default deny."""
    allowed = False
    for entry in entries:
        if not entry.matches_scope(scope) or not entry.matches_identity(identity):
            continue
        if entry.effect == "deny":
            return False
        allowed = True
    return allowed


class AclStore:
    """File-backed ordered ACL entries.

    On-disk format: one entry per line, tab-separated
    ``id kind effect principal scope``, UTF-8. Mutations rewrite the whole
    file via write-temp-then-rename, so readers of the file never observe a
    half-written store and the in-memory list is republished atomically.
    """

    def __init__(self, path: Path | str):
        self._path = Path(path)
        self._lock = threading.Lock()
        self._entries: list[AclEntry] = []
        self._next_id = 1
        if self._path.exists():
            self._load()

    def _load(self) -> None:
        entries = []
        text = self._path.read_text(encoding="utf-8")
        for line_no, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise ValueError(f"{self._path}:{line_no}: expected 5 tab-separated fields")
            entry_id, kind, effect, principal, scope = parts
            if kind not in KINDS or effect not in EFFECTS:
                raise ValueError(f"{self._path}:{line_no}: bad kind or effect")
            entries.append(AclEntry(int(entry_id), kind, effect, principal, scope))
        self._entries = entries
        self._next_id = max((e.entry_id for e in entries), default=0) + 1

    def _save_locked(self) -> None:
        lines = [
            f"{e.entry_id}\t{e.kind}\t{e.effect}\t{e.principal}\t{e.scope}"
            for e in self._entries
        ]
        data = "\n".join(lines) + ("\n" if lines else "")
        tmp = self._path.with_name(self._path.name + ".tmp")
        tmp.write_text(data, encoding="utf-8")
        os.replace(tmp, self._path)

    def add(
        self,
        kind: str,
        effect: str,
        principal: str,
        scope: str,
        scope_ok: Optional[Callable[[str], bool]] = None,
    ) -> int:
        if kind not in KINDS:
            raise InvalidScope(f"unknown entry kind {kind!r}")
        if effect not in EFFECTS:
            raise InvalidScope(f"unknown effect {effect!r}")
        if "\t" in principal or "\n" in principal or not principal:
            raise InvalidScope("principal must be non-empty and tab/newline free")
        if scope_ok is not None and not scope_ok(scope):
            raise InvalidScope(f"scope {scope!r} names no known service or method")
        with self._lock:
            entry = AclEntry(self._next_id, kind, effect, principal, scope)
            self._next_id += 1
            self._entries = self._entries + [entry]
            self._save_locked()
            return entry.entry_id

    def remove(self, entry_id: int) -> None:
        with self._lock:
            remaining = [e for e in self._entries if e.entry_id != entry_id]
            if len(remaining) == len(self._entries):
                raise NotFound(f"no ACL entry with id {entry_id}")
            self._entries = remaining
            self._save_locked()

    def entries(self) -> list[AclEntry]:
        return list(self._entries)

    def authorize(self, identity: Identity, scope: str) -> bool:
        return authorize(self._entries, identity, scope)

    def seed(self, entries: Iterable[tuple[str, str, str, str]]) -> None:
        """Bulk-add (kind, effect, principal, scope) rows; used at first start."""
        with self._lock:
            for kind, effect, principal, scope in entries:
                self._entries = self._entries + [
                    AclEntry(self._next_id, kind, effect, principal, scope)
                ]
                self._next_id += 1
            self._save_locked()
