"""Authentication and authorization.

Interactive users present a signed claims assertion (subject, groups, expiry)
issued by the organization's identity provider; we verify the HMAC signature
with a configured key. Software projects authenticate with issued bearer
secrets of which only a SHA-256 hash is stored. Authorization is group
membership against a configured set.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import hmac
import json
import secrets as secrets_module
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

from .persistence import atomic_write_json, read_json

DEFAULT_TOKEN_TTL_SECONDS = 90 * 24 * 3600
_ASSERTION_HEADER = {"alg": "HS256", "typ": "claims"}


class PrincipalKind(str, Enum):
    USER = "user"
    PROJECT = "project"


class AuthFailureReason(str, Enum):
    BAD_SIGNATURE = "bad_signature"
    EXPIRED = "expired"
    MALFORMED = "malformed"
    UNKNOWN = "unknown"
    REVOKED = "revoked"


class AuthFailure(Exception):
    def __init__(self, reason: AuthFailureReason) -> None:
        super().__init__(reason.value)
        self.reason = reason


class UnknownProject(Exception):
    """Token requested for a project that is not registered."""


@dataclass(frozen=True)
class Principal:
    """Authenticated caller: an interactive user or a project API client."""

    principal_id: str
    kind: PrincipalKind
    display_name: str
    groups: frozenset[str]
    authorized: bool

    def __post_init__(self) -> None:
        if self.kind is PrincipalKind.PROJECT:
            project_groups = [g for g in self.groups if g.startswith("project:")]
            if len(project_groups) != 1:
                raise ValueError("a project principal must belong to exactly one project group")


@dataclass(frozen=True)
class ApiToken:
    token_id: str
    project_id: str
    secret_hash: str
    issued_at: float
    expires_at: float
    revoked: bool = False

    def __post_init__(self) -> None:
        if self.expires_at <= self.issued_at:
            raise ValueError("expires_at must be after issued_at")


def authorize(groups: Iterable[str], authorized_groups: Iterable[str]) -> bool:
    """Pure membership check; the whole authorization model."""
    return bool(frozenset(groups) & frozenset(authorized_groups))


def _b64url_encode(raw: bytes) -> str:
    return base64.urlsafe_b64encode(raw).rstrip(b"=").decode("ascii")


def _b64url_decode(part: str) -> bytes:
    padded = part + "=" * (-len(part) % 4)
    return base64.urlsafe_b64decode(padded.encode("ascii"))


def mint_assertion(
    key: bytes,
    subject: str,
    groups: Iterable[str],
    display_name: str = "",
    expires_at: Optional[float] = None,
) -> str:
    """Produce a signed claims assertion (test and stand-in IdP use)."""
    payload = {
        "sub": subject,
        "name": display_name or subject,
        "groups": sorted(groups),
        "exp": expires_at if expires_at is not None else time.time() + 3600,
    }
    header_part = _b64url_encode(json.dumps(_ASSERTION_HEADER, sort_keys=True).encode("utf-8"))
    payload_part = _b64url_encode(json.dumps(payload, sort_keys=True).encode("utf-8"))
    signing_input = f"{header_part}.{payload_part}".encode("ascii")
    signature = hmac.new(key, signing_input, hashlib.sha256).digest()
    return f"{header_part}.{payload_part}.{_b64url_encode(signature)}"


class ClaimsAuthenticator:
    """Verifies signed identity assertions and maps them to principals."""

    def __init__(self, key: bytes, authorized_groups: Iterable[str]) -> None:
        self._key = key
        self._authorized_groups = frozenset(authorized_groups)

    def authenticate_user(self, assertion: str, now: Optional[float] = None) -> Principal:
        now = time.time() if now is None else now
        parts = assertion.split(".")
        if len(parts) != 3:
            raise AuthFailure(AuthFailureReason.MALFORMED)
        header_part, payload_part, signature_part = parts
        try:
            header = json.loads(_b64url_decode(header_part))
            signature = _b64url_decode(signature_part)
        except (ValueError, binascii.Error):
            raise AuthFailure(AuthFailureReason.MALFORMED) from None
        if not isinstance(header, dict) or header.get("alg") != "HS256":
            raise AuthFailure(AuthFailureReason.MALFORMED)

        signing_input = f"{header_part}.{payload_part}".encode("ascii")
        expected = hmac.new(self._key, signing_input, hashlib.sha256).digest()
        if not hmac.compare_digest(expected, signature):
            raise AuthFailure(AuthFailureReason.BAD_SIGNATURE)

        try:
            payload = json.loads(_b64url_decode(payload_part))
        except (ValueError, binascii.Error):
            raise AuthFailure(AuthFailureReason.MALFORMED) from None
        subject = payload.get("sub")
        expiry = payload.get("exp")
        groups = payload.get("groups", [])
        if not isinstance(subject, str) or not subject or not isinstance(expiry, (int, float)):
            raise AuthFailure(AuthFailureReason.MALFORMED)
        if not isinstance(groups, list) or not all(isinstance(g, str) for g in groups):
            raise AuthFailure(AuthFailureReason.MALFORMED)
        if expiry <= now:
            raise AuthFailure(AuthFailureReason.EXPIRED)

        return Principal(
            principal_id=subject,
            kind=PrincipalKind.USER,
            display_name=str(payload.get("name", subject)),
            groups=frozenset(groups),
            authorized=authorize(groups, self._authorized_groups),
        )


class TokenStore:
    """Persistent project-token registry; secrets exist only as hashes at rest.

    Issuance and revocation serialize through a lock and rewrite the store
    file atomically; verification is a direct lookup keyed by the token id
    embedded in the secret, so it cannot depend on iteration order.
    """

    def __init__(self, path: Union[str, Path], projects: Union[Mapping[str, str], Iterable[str]]) -> None:
        self.path = Path(path)
        if isinstance(projects, Mapping):
            self._projects = dict(projects)
        else:
            self._projects = {p: p for p in projects}
        self._lock = threading.Lock()
        self._tokens: dict[str, ApiToken] = {}
        for token_id, row in read_json(self.path, {}).get("tokens", {}).items():
            self._tokens[token_id] = ApiToken(
                token_id=token_id,
                project_id=row["project_id"],
                secret_hash=row["secret_hash"],
                issued_at=row["issued_at"],
                expires_at=row["expires_at"],
                revoked=row["revoked"],
            )

    def _persist(self) -> None:
        atomic_write_json(
            self.path,
            {
                "tokens": {
                    t.token_id: {
                        "project_id": t.project_id,
                        "secret_hash": t.secret_hash,
                        "issued_at": t.issued_at,
                        "expires_at": t.expires_at,
                        "revoked": t.revoked,
                    }
                    for t in self._tokens.values()
                }
            },
        )

    def issue_token(
        self,
        project_id: str,
        ttl_seconds: float = DEFAULT_TOKEN_TTL_SECONDS,
        now: Optional[float] = None,
    ) -> tuple[ApiToken, str]:
        """Create a token; the returned secret is shown exactly once."""
        if project_id not in self._projects:
            raise UnknownProject(project_id)
        if ttl_seconds <= 0:
            raise ValueError("ttl_seconds must be positive")
        now = time.time() if now is None else now
        with self._lock:
            token_id = secrets_module.token_hex(8)
            while token_id in self._tokens:
                token_id = secrets_module.token_hex(8)
            secret = f"gw_{token_id}_{secrets_module.token_urlsafe(24)}"
            token = ApiToken(
                token_id=token_id,
                project_id=project_id,
                secret_hash=hashlib.sha256(secret.encode("utf-8")).hexdigest(),
                issued_at=now,
                expires_at=now + ttl_seconds,
            )
            self._tokens[token_id] = token
            self._persist()
            return token, secret

    def revoke_token(self, token_id: str) -> bool:
        """Mark a token revoked; returns False when the id is unknown."""
        with self._lock:
            token = self._tokens.get(token_id)
            if token is None:
                return False
            self._tokens[token_id] = ApiToken(
                token_id=token.token_id,
                project_id=token.project_id,
                secret_hash=token.secret_hash,
                issued_at=token.issued_at,
                expires_at=token.expires_at,
                revoked=True,
            )
            self._persist()
            return True

    def verify_token(self, secret: str, now: Optional[float] = None) -> Principal:
        now = time.time() if now is None else now
        presented_hash = hashlib.sha256(secret.encode("utf-8")).hexdigest()
        parts = secret.split("_", 2)
        if len(parts) != 3 or parts[0] != "gw":
            raise AuthFailure(AuthFailureReason.UNKNOWN)
        with self._lock:
            token = self._tokens.get(parts[1])
        if token is None or not hmac.compare_digest(presented_hash, token.secret_hash):
            raise AuthFailure(AuthFailureReason.UNKNOWN)
        if token.revoked:
            raise AuthFailure(AuthFailureReason.REVOKED)
        if token.expires_at <= now:
            raise AuthFailure(AuthFailureReason.EXPIRED)
        return Principal(
            principal_id=f"project:{token.project_id}",
            kind=PrincipalKind.PROJECT,
            display_name=self._projects.get(token.project_id, token.project_id),
            groups=frozenset({f"project:{token.project_id}"}),
            authorized=True,
        )

    def list_tokens(self) -> list[ApiToken]:
        with self._lock:
            return sorted(self._tokens.values(), key=lambda t: t.issued_at)
