#!/usr/bin/env python3
"""Regenerates the wire fixtures using only the Python standard library."""
import hashlib
import json
import pathlib
import struct

MAGIC = bytes.fromhex("f9beb4d9")
HERE = pathlib.Path(__file__).parent


def dsha(b):
    return hashlib.sha256(hashlib.sha256(b).digest()).digest()


def frame(command, payload, checksum=None):
    cmd = command.encode().ljust(12, b"\0")
    cs = dsha(payload)[:4] if checksum is None else checksum
    return MAGIC + cmd + struct.pack("<I", len(payload)) + cs + payload


def inventory(entries):
    out = bytes([len(entries)])
    for kind, h in entries:
        out += struct.pack("<I", kind) + h
    return out


def header(version, prev, merkle, time, bits, nonce):
    return struct.pack("<i", version) + prev + merkle + struct.pack("<III", time, bits, nonce)


def write(name, raw, expect):
    (HERE / f"{name}.hex").write_text(raw.hex() + "\n")
    (HERE / f"{name}.json").write_text(json.dumps(expect, indent=2, sort_keys=True) + "\n")


def describe(command, payload, raw, valid, **extra):
    d = {
        "command": command,
        "length": len(payload),
        "checksum": raw[20:24].hex(),
        "valid_checksum": valid,
    }
    d.update(extra)
    return d


h42 = bytes(range(32))
h30 = bytes(31 - i for i in range(32))
tx = hashlib.sha256(b"tx#123").digest()

p = inventory([(2, h42)])
raw = frame("getdata", p)
write("getdata_block", raw, describe("getdata", p, raw, True, inventory=[{"type": 2, "hash": h42.hex()}]))

flipped = bytearray(raw)
flipped[24 + 10] ^= 0x04
flipped = bytes(flipped)
write("getdata_flipped", flipped, describe("getdata", p, flipped, False))

p = inventory([(1, tx), (2, h30)])
raw = frame("inv", p)
write("inv_two", raw, describe("inv", p, raw, True,
      inventory=[{"type": 1, "hash": tx.hex()}, {"type": 2, "hash": h30.hex()}]))

hdr = header(1, h30, hashlib.sha256(b"merkle").digest(), 1_700_000_000, 42, 7)
p = hdr + b"\0"
raw = frame("block", p)
write("block_42", raw, describe("block", p, raw, True, block_hash=dsha(hdr).hex(), height=42, miner=7,
      prev=h30.hex()))

raw = frame("verack", b"")
write("verack_empty", raw, describe("verack", b"", raw, True))

raw = frame("getdata", inventory([(2, h42)]))[:30]
write("truncated", raw, {"error": "truncated"})
