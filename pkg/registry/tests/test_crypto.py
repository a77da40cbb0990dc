import os

from django.test import SimpleTestCase
from hypothesis import given, settings
from hypothesis import strategies as st

from registry import crypto
from registry.crypto import (
    Signature,
    counters,
    digest,
    generate_keypair,
    key_id_for,
    sign,
    verify_signature,
)
from registry.exceptions import InvalidKey, InvalidSeed

# RFC 8032 section 7.1, tests 1 and 2
RFC8032_VECTORS = [
    (
        "9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60",
        "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a",
        "",
        "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e065224901555fb8821590a33bac"
        "c61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b",
    ),
    (
        "4ccd089b28ff96da9db6c346ec114e0f5b8a319f35aba624da8cf6ed4fb8a6fb",
        "3d4017c3e843895a92b70aa74d1b7ebc9c982ccf2ec4968cc0cd55f12af4660c",
        "72",
        "92a009a9f0d4cab8720e820b5f642540a2b27b5416503f8fb3762223ebdb69da085ac1e43e15996e"
        "458f3613d0f11d8c387b2eaeb4302aeeb00d291612bb0c00",
    ),
]

SHA256_EMPTY = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


class KeypairTests(SimpleTestCase):
    def test_fixed_seed_is_deterministic(self):
        first = generate_keypair(bytes(32))
        second = generate_keypair(bytes(32))
        self.assertEqual(first, second)

    def test_fresh_keys_differ(self):
        self.assertNotEqual(
            generate_keypair().verification_key, generate_keypair().verification_key
        )

    def test_seed_length(self):
        with self.assertRaises(InvalidSeed):
            generate_keypair(bytes(31))
        with self.assertRaises(InvalidSeed):
            generate_keypair("0" * 32)

    def test_key_id_is_truncated_digest(self):
        keypair = generate_keypair(bytes(32))
        self.assertEqual(keypair.key_id, digest(keypair.verification_key).value[:16].hex())
        self.assertEqual(keypair.key_id, key_id_for(keypair.verification_key))
        self.assertEqual(len(keypair.key_id), 32)

    def test_keypair_map_checks_consistency(self):
        keypair = generate_keypair(bytes(32))
        data = keypair.to_map()
        self.assertEqual(crypto.KeyPair.from_map(data), keypair)
        data["verification_key"] = generate_keypair(bytes([1] * 32)).verification_key.hex()
        with self.assertRaises(InvalidKey):
            crypto.KeyPair.from_map(data)

    def test_repr_hides_the_secret(self):
        keypair = generate_keypair(bytes(32))
        self.assertNotIn(keypair.signing_key.hex(), repr(keypair))


class SignatureTests(SimpleTestCase):
    def test_rfc8032_vectors(self):
        for secret, public, message, signature in RFC8032_VECTORS:
            keypair = generate_keypair(bytes.fromhex(secret))
            self.assertEqual(keypair.verification_key.hex(), public)
            sig = sign(bytes.fromhex(message), keypair.signing_key)
            self.assertEqual(sig.value.hex(), signature)
            self.assertTrue(
                verify_signature(bytes.fromhex(message), sig, bytes.fromhex(public))
            )

    def test_wrong_key_rejects(self):
        k1 = generate_keypair(bytes(32))
        k2 = generate_keypair(bytes([7] * 32))
        sig = sign(b"hello", k1.signing_key)
        self.assertFalse(verify_signature(b"hello", sig, k2.verification_key))

    def test_truncated_signature_rejects(self):
        keypair = generate_keypair(bytes(32))
        sig = sign(b"hello", keypair.signing_key)
        self.assertFalse(verify_signature(b"hello", sig.value[:63], keypair.verification_key))

    def test_malformed_inputs_reject(self):
        keypair = generate_keypair(bytes(32))
        sig = sign(b"hello", keypair.signing_key)
        self.assertFalse(verify_signature(b"hello", sig, b"short"))
        self.assertFalse(
            verify_signature(b"hello", Signature("rsa", sig.value), keypair.verification_key)
        )
        self.assertFalse(verify_signature(b"hello", None, keypair.verification_key))

    def test_malformed_signing_key(self):
        with self.assertRaises(InvalidKey):
            sign(b"hello", b"short")

    def test_signing_is_deterministic(self):
        keypair = generate_keypair(bytes(32))
        self.assertEqual(sign(b"m", keypair.signing_key), sign(b"m", keypair.signing_key))

    @settings(max_examples=50, deadline=None)
    @given(st.binary(min_size=1, max_size=256), st.data())
    def test_any_bit_flip_rejects(self, message, data):
        keypair = generate_keypair(bytes(32))
        sig = sign(message, keypair.signing_key)
        self.assertTrue(verify_signature(message, sig, keypair.verification_key))

        bit = data.draw(st.integers(min_value=0, max_value=len(message) * 8 - 1))
        flipped = bytearray(message)
        flipped[bit // 8] ^= 1 << (bit % 8)
        self.assertFalse(verify_signature(bytes(flipped), sig, keypair.verification_key))

        bit = data.draw(st.integers(min_value=0, max_value=511))
        raw = bytearray(sig.value)
        raw[bit // 8] ^= 1 << (bit % 8)
        self.assertFalse(
            verify_signature(message, Signature(sig.scheme, bytes(raw)), keypair.verification_key)
        )


class DigestTests(SimpleTestCase):
    def test_empty_input_vector(self):
        self.assertEqual(digest(b"").hex(), SHA256_EMPTY)

    def test_deterministic(self):
        self.assertEqual(digest(b"abc"), digest(b"abc"))

    def test_trailing_zero_changes_digest(self):
        for _ in range(1000):
            data = os.urandom(32)
            self.assertNotEqual(digest(data), digest(data + b"\x00"))

    def test_counters(self):
        before = counters.snapshot()
        keypair = generate_keypair(bytes(32))
        sig = sign(b"x", keypair.signing_key)
        verify_signature(b"x", sig, keypair.verification_key)
        after = counters.snapshot()
        self.assertGreaterEqual(after["signatures"] - before["signatures"], 1)
        self.assertGreaterEqual(
            after["signature_verifications"] - before["signature_verifications"], 1
        )
        self.assertGreaterEqual(after["hash_computations"] - before["hash_computations"], 1)
