"""HMAC-SHA256 webhook verification with no trust exceptions.

The request type has no source-address field on purpose: there is no way to
express "skip verification for loopback or a trusted proxy".
"""

from __future__ import annotations

import hashlib
import hmac
import re
from dataclasses import dataclass
from enum import Enum

__all__ = [
    "WebhookDecision",
    "WebhookReason",
    "WebhookVerificationRequest",
    "sign_payload",
    "verify_webhook",
]

DEFAULT_TOLERANCE_SECONDS = 300
_TIMESTAMP = re.compile(r"-?[0-9]{1,15}")


class WebhookReason(str, Enum):
    BAD_SIGNATURE = "bad_signature"
    STALE_TIMESTAMP = "stale_timestamp"
    MALFORMED_HEADER = "malformed_header"


@dataclass(frozen=True)
class WebhookVerificationRequest:
    body: bytes
    signature_header: str
    secret: bytes
    timestamp_header: str | None = None
    tolerance_seconds: int = DEFAULT_TOLERANCE_SECONDS

    def __post_init__(self) -> None:
        if not isinstance(self.secret, (bytes, bytearray)) or not self.secret:
            raise ValueError("webhook secret must be non-empty bytes")
        if not isinstance(self.body, (bytes, bytearray)):
            raise TypeError("body must be the raw transported bytes")
        if isinstance(self.tolerance_seconds, bool) or not isinstance(self.tolerance_seconds, int) \
                or self.tolerance_seconds < 0:
            raise ValueError("tolerance_seconds must be a non-negative integer")


@dataclass(frozen=True)
class WebhookDecision:
    authentic: bool
    reason: WebhookReason | None = None


def _signed_message(body: bytes, timestamp: str | None) -> bytes:
    if timestamp is None:
        return bytes(body)
    return timestamp.encode("ascii") + b"." + bytes(body)


def sign_payload(body: bytes, secret: bytes, timestamp: str | None = None) -> str:
    """Hex HMAC-SHA256 over ``timestamp.body`` (or ``body`` alone)."""
    return hmac.new(bytes(secret), _signed_message(body, timestamp), hashlib.sha256).hexdigest()


def _parse_signature(header: str) -> bytes | None:
    value = header.strip()
    if value.lower().startswith("sha256="):
        value = value[len("sha256="):]
    if not value or len(value) % 2:
        return None
    try:
        return bytes.fromhex(value)
    except ValueError:
        return None


def verify_webhook(req: WebhookVerificationRequest, now: int | float) -> WebhookDecision:
    """Authenticate ``req`` against its signature header.

    The MAC is computed on every path, including stale or malformed requests,
    and compared with :func:`hmac.compare_digest`.
    """
    ts_text = req.timestamp_header.strip() if req.timestamp_header is not None else None
    ts_value: int | None = None
    ts_ok = True
    if ts_text is not None:
        if _TIMESTAMP.fullmatch(ts_text):
            ts_value = int(ts_text)
        else:
            ts_ok = False
    signed_ts = ts_text if ts_ok else None
    expected = hmac.new(bytes(req.secret), _signed_message(req.body, signed_ts), hashlib.sha256).digest()

    provided = _parse_signature(req.signature_header) if isinstance(req.signature_header, str) else None
    if provided is None or not ts_ok:
        hmac.compare_digest(expected, expected)
        return WebhookDecision(False, WebhookReason.MALFORMED_HEADER)
    matches = hmac.compare_digest(expected, provided)
    if ts_value is not None and abs(now - ts_value) > req.tolerance_seconds:
        return WebhookDecision(False, WebhookReason.STALE_TIMESTAMP)
    if not matches:
        return WebhookDecision(False, WebhookReason.BAD_SIGNATURE)
    return WebhookDecision(True)
