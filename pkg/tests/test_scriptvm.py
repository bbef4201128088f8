import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cointoss.ledger import KeyRegistry, sign
from cointoss.scriptvm import (
    SHA1,
    SHA256,
    And,
    AtMostSha1,
    EmptyOperand,
    GreaterThanSha1,
    MalformedScript,
    Or,
    ParityEquals,
    PreimageSha256,
    Sig,
    Witness,
    XorBitsInRange,
    digest,
    encode_script,
    eval_script,
    low_bits,
    parity,
    parse_script,
    satisfiable_by_signature,
    slot_names,
)

# Frozen with coreutils: printf 'abc' | sha256sum / sha1sum.
SHA256_ABC = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
SHA1_ABC = "a9993e364706816aba3e25717850c26c9cd0d89d"

TXID = bytes(range(32))


@pytest.fixture
def keys():
    registry = KeyRegistry()
    sk_a, sk_b = b"\x0a" * 32, b"\x0b" * 32
    return registry, (sk_a, registry.register(sk_a)), (sk_b, registry.register(sk_b))


class TestDigest:
    def test_sha256_vector(self):
        assert digest(SHA256, b"abc").hex() == SHA256_ABC

    def test_sha1_vector(self):
        assert digest(SHA1, b"abc").hex() == SHA1_ABC

    def test_unknown_algorithm(self):
        with pytest.raises(ValueError):
            digest("md5", b"abc")


class TestParity:
    @pytest.mark.parametrize("data, expected", [(b"\x00", 0), (b"\x01", 1), (b"\x01\x00", 0)])
    def test_examples(self, data, expected):
        assert parity(data) == expected

    def test_empty(self):
        with pytest.raises(EmptyOperand):
            parity(b"")

    @given(st.binary(min_size=1, max_size=40))
    def test_matches_integer_reading(self, data):
        assert parity(data) == int.from_bytes(data, "big") % 2

    def test_low_bits(self):
        assert low_bits(b"\xff\x12\x34", 8) == 0x34
        assert low_bits(b"\x12\x34", 16) == 0x1234
        assert low_bits(b"\x07", 2) == 3


class TestEval:
    def test_preimage_leaf(self, keys):
        registry = keys[0]
        expr = PreimageSha256("A", bytes.fromhex(SHA256_ABC))
        assert eval_script(expr, Witness({"A": b"abc"}), TXID, registry)
        assert not eval_script(expr, Witness({"A": b"abd"}), TXID, registry)
        assert not eval_script(expr, Witness(), TXID, registry)

    def test_left_disjunct(self, keys):
        registry, (sk_a, pk_a), _ = keys
        expr = Or(Sig(pk_a), PreimageSha256("A", bytes(32)))
        assert eval_script(expr, Witness(signatures=(sign(sk_a, TXID),)), TXID, registry)

    def test_signature_bound_to_txid_and_key(self, keys):
        registry, (sk_a, pk_a), (sk_b, pk_b) = keys
        assert not eval_script(Sig(pk_a), Witness(signatures=(sign(sk_a, b"x" * 32),)), TXID, registry)
        assert not eval_script(Sig(pk_a), Witness(signatures=(sign(sk_b, TXID),)), TXID, registry)

    def test_forged_token_rejected(self, keys):
        registry, (_, pk_a), _ = keys
        forged = sign(b"\x0c" * 32, TXID)
        forged = type(forged)(pk_a, TXID, forged.tag)
        assert not eval_script(Sig(pk_a), Witness(signatures=(forged,)), TXID, registry)

    def test_undeclared_slot(self, keys):
        expr = ParityEquals(("A", "C"), 0)
        with pytest.raises(MalformedScript):
            eval_script(expr, Witness({"A": b"\x00", "C": b"\x00"}), TXID, keys[0], {"A", "B"})

    def test_empty_operand_is_false(self, keys):
        assert not eval_script(ParityEquals(("A",), 0), Witness({"A": b""}), TXID, keys[0])

    def test_sha1_leaves_complementary(self, keys):
        w = Witness({"A": b"a", "B": b"b"})
        value = int.from_bytes(digest(SHA1, b"ab"), "big")
        for threshold in (0, value - 1, value, (1 << 160) - 1):
            gt = eval_script(GreaterThanSha1(("A", "B"), threshold), w, TXID, keys[0])
            le = eval_script(AtMostSha1(("A", "B"), threshold), w, TXID, keys[0])
            assert gt == (value > threshold)
            assert gt != le

    def test_xor_bits_window(self, keys):
        w = Witness({"A": b"\x00\x06", "B": b"\x00\x03"})  # xor = 5, low 2 bits = 1
        assert eval_script(XorBitsInRange(("A", "B"), 2, 1, 2), w, TXID, keys[0])
        assert not eval_script(XorBitsInRange(("A", "B"), 2, 0, 1), w, TXID, keys[0])


class TestBetScriptTruthTable:
    """Every (parity A, parity B, signer) combination against a hand-written table."""

    # (parity of A, parity of B) -> which signer may take the pot
    EXPECTED = {(0, 0): "alice", (0, 1): "bob", (1, 0): "bob", (1, 1): "alice"}

    def test_exhaustive(self, keys):
        registry, (sk_a, pk_a), (sk_b, pk_b) = keys
        secrets = {0: b"\x10" * 31 + b"\x02", 1: b"\x20" * 31 + b"\x07"}
        for pa, pb in itertools.product((0, 1), repeat=2):
            a, b = secrets[pa], bytes(reversed(secrets[pb][:-1])) + secrets[pb][-1:]
            expr = Or(
                And(Sig(pk_a), Sig(pk_b)),
                And(
                    And(PreimageSha256("A", digest(SHA256, a)), PreimageSha256("B", digest(SHA256, b))),
                    Or(
                        And(ParityEquals(("A", "B"), 0), Sig(pk_a)),
                        And(ParityEquals(("A", "B"), 1), Sig(pk_b)),
                    ),
                ),
            )
            for who, sk in (("alice", sk_a), ("bob", sk_b)):
                w = Witness({"A": a, "B": b}, (sign(sk, TXID),))
                assert eval_script(expr, w, TXID, registry) == (self.EXPECTED[pa, pb] == who)


_names = st.sampled_from(["A", "B", "C", "x1", "slot_2"])
_labels = st.lists(_names, min_size=1, max_size=3).map(tuple)
_b32 = st.binary(min_size=32, max_size=32)
_SIGNERS = [bytes([i]) * 32 for i in range(1, 4)]
_KNOWN_PKS = [digest(SHA256, sk) for sk in _SIGNERS]


@st.composite
def _xor_range(draw):
    k = draw(st.integers(1, 16))
    low = draw(st.integers(0, 1 << k))
    high = draw(st.integers(low, 1 << k))
    return XorBitsInRange(draw(_labels), k, low, high)


_leaves = st.one_of(
    st.builds(PreimageSha256, _names, _b32),
    st.builds(Sig, st.one_of(st.sampled_from(_KNOWN_PKS), _b32)),
    st.builds(ParityEquals, _labels, st.integers(0, 1)),
    st.builds(GreaterThanSha1, _labels, st.integers(0, (1 << 160) - 1)),
    st.builds(AtMostSha1, _labels, st.integers(0, (1 << 160) - 1)),
    _xor_range(),
)
scripts = st.recursive(
    _leaves,
    lambda inner: st.one_of(st.builds(And, inner, inner), st.builds(Or, inner, inner)),
    max_leaves=12,
)


class TestTextForm:
    def test_parity_leaf(self):
        assert encode_script(ParityEquals(("A", "B"), 0)) == "(parity (xor A B) == 0)"

    def test_and_structure(self):
        x, y = Sig(bytes(32)), ParityEquals(("A",), 1)
        assert encode_script(And(x, y)) == f"({encode_script(x)} AND {encode_script(y)})"

    @settings(max_examples=1000)
    @given(scripts)
    def test_round_trip(self, expr):
        text = encode_script(expr)
        assert parse_script(text) == expr
        assert encode_script(parse_script(text)) == text

    @pytest.mark.parametrize("bad", ["", "sig(00)", "(sig(" + "00" * 32 + ") XOR sig(" + "00" * 32 + "))",
                                     "sig(" + "00" * 32 + ") trailing"])
    def test_malformed(self, bad):
        with pytest.raises(MalformedScript):
            parse_script(bad)


class TestMonotonicity:
    @settings(max_examples=300)
    @given(scripts, st.data())
    def test_extra_witness_never_hurts(self, expr, data):
        """Adding slots or signatures can turn a false script true, never the reverse."""
        registry = KeyRegistry()
        sks = _SIGNERS
        for sk in sks:
            registry.register(sk)
        names = ["A", "B", "C", "x1", "slot_2"]
        slots = data.draw(st.dictionaries(st.sampled_from(names), st.binary(min_size=1, max_size=4), max_size=3))
        extra = data.draw(st.dictionaries(st.sampled_from(names), st.binary(min_size=1, max_size=4), max_size=3))
        extra = {k: v for k, v in extra.items() if k not in slots}
        base = Witness(slots, (sign(sks[0], TXID),))
        more = Witness({**slots, **extra}, base.signatures + (sign(sks[1], TXID),))
        if eval_script(expr, base, TXID, registry):
            assert eval_script(expr, more, TXID, registry)


class TestHelpers:
    def test_slot_names(self):
        expr = And(PreimageSha256("A", bytes(32)), Or(ParityEquals(("A", "B"), 0), Sig(bytes(32))))
        assert slot_names(expr) == {"A", "B"}

    def test_satisfiable_by_signature(self):
        pk, other = b"\x01" * 32, b"\x02" * 32
        assert satisfiable_by_signature(Or(Sig(pk), PreimageSha256("A", bytes(32))), pk)
        assert not satisfiable_by_signature(And(Sig(pk), Sig(other)), pk)

    @pytest.mark.parametrize("make", [
        lambda: PreimageSha256("A", b"short"),
        lambda: Sig(b"\x00"),
        lambda: ParityEquals(("A",), 2),
        lambda: ParityEquals((), 0),
        lambda: ParityEquals(("bad name",), 0),
        lambda: XorBitsInRange(("A",), 17, 0, 1),
        lambda: XorBitsInRange(("A",), 2, 3, 2),
        lambda: GreaterThanSha1(("A",), 1 << 160),
    ])
    def test_node_validation(self, make):
        with pytest.raises(MalformedScript):
            make()
