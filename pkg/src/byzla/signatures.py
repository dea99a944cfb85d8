"""Signature schemes for the signature-based protocol.

A :class:`SignatureProvider` holds every process's key material and hands
each node a :class:`Signer` bound to that node's id only, so a Byzantine
node can sign as itself (twice, if it likes) but never as anyone else.
Verification is public.

Two schemes share the interface:

``ideal``
    HMAC-SHA256 with per-process keys derived from the run seed. The
    simulator holds the keys, so forging is impossible by construction.
    Fast and deterministic; used by the test sweeps.
``ed25519``
    Real public-key signatures from ``cryptography``. Keys are derived
    deterministically from the seed so traces stay replayable.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

__all__ = ["SignatureProvider", "Signer", "IdealSignatures", "Ed25519Signatures", "make_provider"]


class SignatureProvider:
    scheme = "abstract"

    def signer(self, node_id: int) -> Signer:
        return Signer(self, node_id)

    def sign(self, node_id: int, data: bytes) -> bytes:
        raise NotImplementedError

    def verify(self, node_id: int, data: bytes, sig: bytes) -> bool:
        raise NotImplementedError


@dataclass(frozen=True)
class Signer:
    """Signing capability for exactly one process."""

    provider: SignatureProvider
    node_id: int

    def sign(self, data: bytes) -> bytes:
        return self.provider.sign(self.node_id, data)

    def verify(self, node_id: int, data: bytes, sig: bytes) -> bool:
        return self.provider.verify(node_id, data, sig)


def _derive(seed: int, node_id: int, label: bytes) -> bytes:
    return hashlib.sha256(label + seed.to_bytes(8, "big", signed=True) + node_id.to_bytes(8, "big")).digest()


class IdealSignatures(SignatureProvider):
    scheme = "ideal"

    def __init__(self, seed: int = 0) -> None:
        self.seed = seed
        self._keys: dict[int, bytes] = {}
        # verification is a pure function of its inputs, so memoising it
        # changes nothing but the run time
        self.verify = lru_cache(maxsize=1 << 16)(self._verify)  # type: ignore[method-assign]

    def _key(self, node_id: int) -> bytes:
        key = self._keys.get(node_id)
        if key is None:
            key = self._keys[node_id] = _derive(self.seed, node_id, b"hmac")
        return key

    def sign(self, node_id: int, data: bytes) -> bytes:
        return hmac.new(self._key(node_id), data, hashlib.sha256).digest()

    def _verify(self, node_id: int, data: bytes, sig: bytes) -> bool:
        if node_id < 0:
            return False
        return hmac.compare_digest(self.sign(node_id, data), sig)


class Ed25519Signatures(SignatureProvider):
    scheme = "ed25519"

    def __init__(self, seed: int = 0) -> None:
        self.seed = seed
        self._private: dict[int, Ed25519PrivateKey] = {}
        self.verify = lru_cache(maxsize=1 << 16)(self._verify)  # type: ignore[method-assign]

    def _key(self, node_id: int) -> Ed25519PrivateKey:
        key = self._private.get(node_id)
        if key is None:
            key = self._private[node_id] = Ed25519PrivateKey.from_private_bytes(_derive(self.seed, node_id, b"ed25519"))
        return key

    def sign(self, node_id: int, data: bytes) -> bytes:
        return self._key(node_id).sign(data)

    def _verify(self, node_id: int, data: bytes, sig: bytes) -> bool:
        if node_id < 0:
            return False
        try:
            self._key(node_id).public_key().verify(sig, data)
        except InvalidSignature:
            return False
        return True


def make_provider(scheme: str, seed: int = 0) -> SignatureProvider:
    if scheme == "ideal":
        return IdealSignatures(seed)
    if scheme == "ed25519":
        return Ed25519Signatures(seed)
    raise ValueError(f"unknown signature scheme {scheme!r}")
