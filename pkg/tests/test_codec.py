import random

import pytest
from hypothesis import given, settings, strategies as st

from noc_accel import codec
from noc_accel.codec import (
    Flit, HeadFields, Packet, PacketKind, encode_head, decode_head, segment, reassemble,
)
from oracles import HEAD_LAYOUT, head_word_from_bits, head_bits_from_word, pack_bytes_oracle

WIDTHS = dict(HEAD_LAYOUT)


def random_fields(rng, head=True):
    values = {name: rng.getrandbits(w) for name, w in HEAD_LAYOUT}
    if head:
        values["packet_head_tail"] |= codec.HEAD
    return values


head_strategy = st.fixed_dictionaries(
    {name: st.integers(0, (1 << w) - 1) for name, w in HEAD_LAYOUT}
).map(lambda d: {**d, "packet_head_tail": d["packet_head_tail"] | codec.HEAD})


class TestEncodeHead:
    def test_zero(self):
        assert encode_head(HeadFields()).raw == 0

    def test_hwa_id_placement(self):
        raw = encode_head(HeadFields(hwa_id=3)).raw
        assert raw == 3 << 120
        assert [i for i in range(137) if raw >> i & 1] == [120, 121]

    @pytest.mark.parametrize("name,width", HEAD_LAYOUT)
    def test_single_field_at_max(self, name, width):
        raw = encode_head(HeadFields(**{name: (1 << width) - 1})).raw
        lsb = codec.HEAD_FIELDS[name][0]
        assert raw == ((1 << width) - 1) << lsb

    def test_layout_covers_137_bits_exactly(self):
        spans = sorted(codec.HEAD_FIELDS.values())
        pos = 0
        for lsb, width in spans:
            assert lsb == pos
            pos += width
        assert pos == 137

    def test_agrees_with_bitstring_oracle(self):
        rng = random.Random(7)
        for _ in range(1000):
            values = random_fields(rng, head=False)
            assert encode_head(HeadFields(**values)).raw == head_word_from_bits(values)

    @pytest.mark.parametrize("name,width", HEAD_LAYOUT)
    def test_overflow_rejected(self, name, width):
        with pytest.raises(codec.FieldOverflow) as exc:
            HeadFields(**{name: 1 << width})
        assert exc.value.name == name

    def test_negative_rejected(self):
        with pytest.raises(codec.FieldOverflow):
            HeadFields(source_id=-1)

    def test_plain_tuple_is_checked(self):
        values = [0] * 14
        values[3] = 32
        with pytest.raises(codec.FieldOverflow):
            encode_head(tuple(values))


class TestDecodeHead:
    def test_raw_hwa_id(self):
        f = Flit(3 << 120 | codec.HEAD << 128)
        h = decode_head(f)
        assert h.hwa_id == 3
        assert h._replace(hwa_id=0, packet_head_tail=0) == HeadFields()

    def test_not_head(self):
        with pytest.raises(codec.NotHeadFlit):
            decode_head(Flit(3 << 120))

    def test_random_words_match_oracle(self):
        rng = random.Random(11)
        for _ in range(1000):
            raw = rng.getrandbits(137) | codec.HEAD << 128
            assert decode_head(Flit(raw))._asdict() == head_bits_from_word(raw)

    @settings(max_examples=300, deadline=None)
    @given(head_strategy)
    def test_round_trip(self, values):
        h = HeadFields(**values)
        assert decode_head(encode_head(h)) == h

    @settings(max_examples=200, deadline=None)
    @given(head_strategy, st.sampled_from([n for n, _ in HEAD_LAYOUT]), st.data())
    def test_field_reinsertion_is_identity(self, values, name, data):
        f = encode_head(HeadFields(**values))
        assert f.with_field(name, f.field(name)) == f
        new = data.draw(st.integers(0, (1 << WIDTHS[name]) - 1))
        g = f.with_field(name, new)
        assert g.field(name) == new


class TestFlit:
    def test_rejects_wide(self):
        with pytest.raises(codec.FieldOverflow):
            Flit(1 << 137)
        with pytest.raises(codec.FieldOverflow):
            Flit(-1)

    def test_tag_ignored_by_equality(self):
        assert Flit(5, tag="a") == Flit(5, tag="b")

    def test_hex_dump_round_trip(self):
        flits = [Flit(0), Flit(codec.FLIT_MASK), Flit(3 << 120)]
        text = codec.dump_hex(flits)
        lines = text.splitlines()
        assert all(len(line) == 35 for line in lines)
        assert lines[1] == "1" + "f" * 34
        assert codec.load_hex(text) == flits

    def test_hex_bad_length(self):
        with pytest.raises(codec.Malformed, match="line 1"):
            codec.load_hex("abc\n")


class TestBody:
    def test_body_fields(self):
        f = codec.encode_body(0x1FF, 0xABC)
        assert codec.decode_body(f) == (0x1FF, 0xABC)

    def test_body_overflow(self):
        with pytest.raises(codec.FieldOverflow):
            codec.encode_body(1 << 9, 0)
        with pytest.raises(codec.FieldOverflow):
            codec.encode_body(0, 1 << 128)


HDR = HeadFields(routing_info=codec.encode_routing(2, 2), source_id=5, hwa_id=9)


class TestSegment:
    def test_empty(self):
        p = segment(b"", HDR)
        assert len(p) == 1
        assert p.flits[0].head_tail == codec.HEAD_TAIL
        assert reassemble(p) == b""

    def test_sixteen_bytes(self):
        data = bytes(range(16))
        p = segment(data, HDR)
        assert len(p) == 2
        assert p.flits[1].head_tail == codec.TAIL
        assert codec.decode_body(p.flits[1])[1] == int.from_bytes(data, "little")

    def test_thirty_three_bytes(self):
        data = bytes(range(1, 34))
        p = segment(data, HDR)
        assert len(p) == 1 + 3
        chunks = [codec.decode_body(f)[1] for f in p.flits[1:]]
        assert chunks == pack_bytes_oracle(data)
        assert (p.flits[3].raw & ((1 << 128) - 1)).to_bytes(16, "little")[1:] == bytes(15)
        assert reassemble(p) == data

    def test_head_payload_zeroed(self):
        p = segment(b"x" * 40, HDR._replace(payload=123))
        assert decode_head(p.flits[0]).payload == 0
        assert decode_head(p.flits[0]).data_size == 40

    def test_oversize(self):
        with pytest.raises(codec.Oversize):
            segment(bytes(1024), HDR)

    def test_routing_shared(self):
        p = segment(bytes(100), HDR)
        assert {f.routing_info for f in p.flits} == {HDR.routing_info}

    def test_flit_count_formula(self):
        rng = random.Random(3)
        for _ in range(200):
            n = rng.randint(0, 1023)
            p = segment(rng.randbytes(n), HDR)
            expected = 1 if n == 0 else 1 + max(1, -(-n // 16))
            assert len(p) == expected

    def test_round_trip_200_lengths(self):
        rng = random.Random(5)
        for _ in range(200):
            data = rng.randbytes(rng.randint(0, 1023))
            assert reassemble(segment(data, HDR)) == data

    @settings(max_examples=100, deadline=None)
    @given(st.binary(max_size=1023))
    def test_round_trip_property(self, data):
        assert reassemble(segment(data, HDR)) == data


class TestPacket:
    def test_command_single_flit(self):
        p = codec.command_packet(HDR, PacketKind.GRANT)
        assert len(p) == 1
        assert p.head.packet_type == codec.PKT_COMMAND

    @pytest.mark.parametrize("kind", codec.SINGLE_FLIT_KINDS)
    def test_multi_flit_command_rejected(self, kind):
        flits = segment(bytes(32), HDR).flits
        with pytest.raises(codec.Malformed):
            Packet(flits, kind)

    def test_inconsistent_flags(self):
        flits = list(segment(bytes(32), HDR).flits)
        flits[1] = Flit(flits[1].raw | codec.TAIL << 128)
        with pytest.raises(codec.Malformed):
            Packet(flits, PacketKind.PAYLOAD)

    def test_routing_mismatch(self):
        flits = list(segment(bytes(32), HDR).flits)
        flits[2] = Flit(flits[2].raw ^ (1 << 131))
        with pytest.raises(codec.Malformed):
            Packet(flits, PacketKind.PAYLOAD)

    def test_data_size_mismatch(self):
        flits = list(segment(bytes(32), HDR).flits)
        flits[0] = flits[0].with_field("data_size", 50)
        with pytest.raises(codec.Malformed):
            reassemble(Packet(flits, PacketKind.PAYLOAD))


class TestChainIndex:
    def test_pack_and_shift(self):
        idx = codec.pack_chain_index([1, 2])
        assert codec.unpack_chain_index(idx, 2) == [1, 2]
        assert codec.chain_front(idx) == 1
        shifted = codec.shift_chain_index(idx)
        assert codec.unpack_chain_index(shifted, 1) == [2]
        assert codec.shift_chain_index(codec.shift_chain_index(shifted)) == 0

    def test_too_many_entries(self):
        with pytest.raises(codec.FieldOverflow):
            codec.pack_chain_index([0, 1, 2, 3])

    def test_routing_round_trip(self):
        for x in range(8):
            for y in range(8):
                for sub in (0, 1):
                    assert codec.decode_routing(codec.encode_routing(x, y, sub)) == (x, y, sub)
