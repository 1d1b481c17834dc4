"""Canonical byte encoding of epoch batches and the fault-tolerance envelope.

Layout (big endian)::

    batch   := origin:u32 cen:u64 seq:u32 eof:u8 count:u32 update*
    update  := sen:u64 csn_time:u64 csn_node:u32 cen:u64 nrecords:u32 record*
    record  := op:u8 keylen:u32 key vallen:u32 val

The transmitted ``lsn`` of an update is not part of the frame; decoders set
it to 0, which no merge or validation rule reads on the receiving side.
"""

from __future__ import annotations

import enum
import struct

from .core import Csn, OpKind, TxnMeta, WriteRecord

_HDR = struct.Struct(">IQIBI")
_UPD = struct.Struct(">QQIQI")
_U32 = struct.Struct(">I")


class WireError(ValueError):
    pass


class MsgKind(enum.IntEnum):
    BATCH = 1
    BACKUP = 2
    ACK = 3
    COMMIT_REQUEST = 4
    VIEW = 5


def encode_batch(batch) -> bytes:
    out = [_HDR.pack(batch.origin, batch.cen, batch.mini_batch_seq, int(batch.eof), len(batch.updates))]
    for u in batch.updates:
        m = u.meta
        out.append(_UPD.pack(m.sen, m.csn.local_time, m.csn.node, m.cen, len(u.ws)))
        for r in u.ws:
            out.append(bytes([int(r.op_kind)]))
            out.append(_U32.pack(len(r.key)) + r.key)
            out.append(_U32.pack(len(r.data)) + r.data)
    return b"".join(out)


def batch_size_bytes(batch) -> int:
    """Length of :func:`encode_batch` output without building it."""
    n = _HDR.size
    for u in batch.updates:
        n += _UPD.size
        for r in u.ws:
            n += 9 + len(r.key) + len(r.data)
    return n


def decode_batch(buf: bytes):
    from .coordinator import EpochBatch, Update

    try:
        origin, cen, seq, eof, count = _HDR.unpack_from(buf, 0)
        pos = _HDR.size
        updates = []
        for _ in range(count):
            sen, t, node, ucen, nrec = _UPD.unpack_from(buf, pos)
            pos += _UPD.size
            recs = []
            for _ in range(nrec):
                op = OpKind(buf[pos])
                pos += 1
                (kl,) = _U32.unpack_from(buf, pos)
                key = bytes(buf[pos + 4:pos + 4 + kl])
                pos += 4 + kl
                (vl,) = _U32.unpack_from(buf, pos)
                val = bytes(buf[pos + 4:pos + 4 + vl])
                pos += 4 + vl
                if len(key) != kl or len(val) != vl:
                    raise WireError("truncated record")
                recs.append(WriteRecord(key, op, val))
            updates.append(Update(TxnMeta(sen, 0, Csn(t, node), ucen), tuple(recs)))
    except (struct.error, IndexError) as exc:
        raise WireError(f"truncated batch: {exc}") from exc
    if pos != len(buf):
        raise WireError(f"{len(buf) - pos} trailing bytes")
    return EpochBatch(origin, cen, tuple(updates), seq, bool(eof))


def encode_message(kind: MsgKind, payload: bytes) -> bytes:
    return bytes([int(kind)]) + payload


def decode_message(buf: bytes) -> tuple[MsgKind, bytes]:
    if not buf:
        raise WireError("empty message")
    try:
        kind = MsgKind(buf[0])
    except ValueError as exc:
        raise WireError(f"unknown message kind {buf[0]}") from exc
    return kind, buf[1:]
