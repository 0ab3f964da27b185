"""Byte-addressable kernel memory.

Every kernel object lives in a single :class:`KernelImage`.  Faults act on
the image only: a transient fault XOR-toggles one stored bit, a permanent
fault installs a :class:`StuckMask` that the write path re-applies after
every store.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterator, Optional

__all__ = [
    "KernelImage",
    "ObjectRecord",
    "StuckMask",
    "ImageError",
    "OutOfImage",
    "DuplicateMask",
    "ImageOverflow",
    "OBJECT_KINDS",
]

# The last four are not kernel objects proper but still need extents so that
# handle validation and offset checks can see them.
OBJECT_KINDS = frozenset({
    "scalar", "handle", "list", "list_item", "tcb", "queue", "name_string",
    "array", "stack", "timer",
})

_U32 = struct.Struct("<I")


class ImageError(Exception):
    """Base class for image access errors."""


class OutOfImage(ImageError):
    def __init__(self, offset, width):
        super().__init__(f"access [{offset:#x}, +{width}) outside image")
        self.offset = offset
        self.width = width


class DuplicateMask(ImageError):
    pass


class ImageOverflow(ImageError):
    pass


@dataclass(frozen=True)
class ObjectRecord:
    name: str
    base: int
    size: int
    kind: str
    parent: Optional[str] = None

    @property
    def end(self):
        return self.base + self.size


@dataclass(frozen=True)
class StuckMask:
    offset: int
    bit: int
    value: int


class KernelImage:
    """Fixed-capacity little-endian memory with an object table.

    Offset 0 is never allocated, so a zero handle is always NULL.
    """

    def __init__(self, capacity: int = 0x10000, reserved: int = 0x40):
        if capacity <= 0 or capacity & (capacity - 1):
            raise ValueError("capacity must be a positive power of two")
        self.capacity = capacity
        self.data = bytearray(capacity)
        self.objects: dict[str, ObjectRecord] = {}
        self._by_base: dict[int, dict[str, ObjectRecord]] = {}
        self.masks: dict[tuple[int, int], StuckMask] = {}
        # offset -> (and_mask, or_mask), folded from self.masks
        self._forced: dict[int, tuple[int, int]] = {}
        self._brk = reserved

    # -- object table -------------------------------------------------------

    def allocate(self, name: str, size: int, kind: str, parent: Optional[str] = None,
                 align: int = 4) -> ObjectRecord:
        """Bump-allocate a top-level region and register it."""
        base = (self._brk + align - 1) & ~(align - 1)
        if base + size > self.capacity:
            raise ImageOverflow(f"cannot fit {name!r} ({size} bytes) at {base:#x}")
        self._brk = base + size
        return self._register(ObjectRecord(name, base, size, kind, parent))

    def register(self, name: str, base: int, size: int, kind: str,
                 parent: str) -> ObjectRecord:
        """Register a sub-object nested inside an existing record."""
        owner = self.objects[parent]
        if base < owner.base or base + size > owner.end:
            raise ImageError(f"{name!r} does not lie inside {parent!r}")
        return self._register(ObjectRecord(name, base, size, kind, parent))

    def _register(self, rec: ObjectRecord) -> ObjectRecord:
        if rec.kind not in OBJECT_KINDS:
            raise ValueError(f"unknown object kind {rec.kind!r}")
        if rec.name in self.objects:
            raise ImageError(f"duplicate object name {rec.name!r}")
        slot = self._by_base.setdefault(rec.base, {})
        if rec.kind in slot:
            raise ImageError(f"two {rec.kind} objects at {rec.base:#x}")
        slot[rec.kind] = rec
        self.objects[rec.name] = rec
        return rec

    @property
    def used(self) -> int:
        return self._brk

    def is_valid(self, raw: int, kind: str) -> bool:
        slot = self._by_base.get(raw)
        return slot is not None and kind in slot

    def object_at(self, raw: int, kind: str) -> Optional[ObjectRecord]:
        slot = self._by_base.get(raw)
        return None if slot is None else slot.get(kind)

    def count(self, kind: str) -> int:
        return sum(1 for r in self.objects.values() if r.kind == kind)

    # -- field access -------------------------------------------------------

    def _check(self, offset, width):
        if offset < 0 or offset + width > self.capacity:
            raise OutOfImage(offset, width)

    def read_field(self, offset: int, width: int) -> int:
        if width not in (1, 2, 4):
            raise ValueError(f"unsupported width {width}")
        self._check(offset, width)
        value = int.from_bytes(self.data[offset:offset + width], "little")
        if self._forced:
            for i in range(width):
                f = self._forced.get(offset + i)
                if f is not None:
                    byte = (value >> (8 * i)) & 0xFF
                    byte = (byte & f[0]) | f[1]
                    value = (value & ~(0xFF << (8 * i))) | (byte << (8 * i))
        return value

    def write_field(self, offset: int, width: int, value: int) -> None:
        if width not in (1, 2, 4):
            raise ValueError(f"unsupported width {width}")
        self._check(offset, width)
        self.data[offset:offset + width] = (value & ((1 << (8 * width)) - 1)).to_bytes(width, "little")
        if self._forced:
            self._reapply(offset, width)

    # Fast paths used by the kernel; same semantics as the generic accessors.
    # Stored bytes already honour every mask, so reads need no masking.

    def read32(self, offset: int) -> int:
        if offset < 0 or offset > self.capacity - 4:
            raise OutOfImage(offset, 4)
        return _U32.unpack_from(self.data, offset)[0]

    def write32(self, offset: int, value: int) -> None:
        if offset < 0 or offset > self.capacity - 4:
            raise OutOfImage(offset, 4)
        _U32.pack_into(self.data, offset, value & 0xFFFFFFFF)
        if self._forced:
            self._reapply(offset, 4)

    def read8(self, offset: int) -> int:
        if offset < 0 or offset >= self.capacity:
            raise OutOfImage(offset, 1)
        return self.data[offset]

    def write8(self, offset: int, value: int) -> None:
        if offset < 0 or offset >= self.capacity:
            raise OutOfImage(offset, 1)
        self.data[offset] = value & 0xFF
        if self._forced:
            self._reapply(offset, 1)

    def read_bytes(self, offset: int, size: int) -> bytes:
        self._check(offset, size)
        return bytes(self.data[offset:offset + size])

    def write_bytes(self, offset: int, payload: bytes) -> None:
        self._check(offset, len(payload))
        self.data[offset:offset + len(payload)] = payload
        if self._forced:
            self._reapply(offset, len(payload))

    def _reapply(self, offset, width):
        forced = self._forced
        data = self.data
        for o in range(offset, offset + width):
            f = forced.get(o)
            if f is not None:
                data[o] = (data[o] & f[0]) | f[1]

    # -- fault primitives ---------------------------------------------------

    def flip_bit(self, offset: int, bit: int) -> None:
        if not 0 <= bit < 8:
            raise ValueError(f"bit index {bit} outside 0..7")
        self._check(offset, 1)
        self.data[offset] ^= 1 << bit
        if self._forced:
            self._reapply(offset, 1)

    def install_stuck_mask(self, offset: int, bit: int, value: int) -> StuckMask:
        """Force one bit to ``value`` now and after every later write."""
        if not 0 <= bit < 8:
            raise ValueError(f"bit index {bit} outside 0..7")
        if value not in (0, 1):
            raise ValueError("stuck value must be 0 or 1")
        self._check(offset, 1)
        if (offset, bit) in self.masks:
            raise DuplicateMask(f"mask already installed at {offset:#x} bit {bit}")
        mask = StuckMask(offset, bit, value)
        self.masks[(offset, bit)] = mask
        and_m, or_m = self._forced.get(offset, (0xFF, 0x00))
        if value:
            or_m |= 1 << bit
        else:
            and_m &= ~(1 << bit) & 0xFF
        self._forced[offset] = (and_m, or_m)
        self._reapply(offset, 1)
        return mask

    # -- snapshots ----------------------------------------------------------

    def snapshot(self) -> bytes:
        return bytes(self.data)

    @staticmethod
    def diff(snap_a: bytes, snap_b: bytes) -> list[tuple[int, int]]:
        """(offset, bit) pairs where two snapshots differ, in address order."""
        if len(snap_a) != len(snap_b):
            raise ValueError("snapshots of different capacity")
        out = []
        a = int.from_bytes(snap_a, "little")
        b = int.from_bytes(snap_b, "little")
        x = a ^ b
        while x:
            low = x & -x
            pos = low.bit_length() - 1
            out.append((pos >> 3, pos & 7))
            x ^= low
        return out

    # -- misc ---------------------------------------------------------------

    def records(self) -> Iterator[ObjectRecord]:
        return iter(self.objects.values())

    def clone(self) -> "KernelImage":
        """Fully independent copy (records themselves are immutable)."""
        other = KernelImage.__new__(KernelImage)
        other.capacity = self.capacity
        other.data = bytearray(self.data)
        other.objects = dict(self.objects)
        other._by_base = {k: dict(v) for k, v in self._by_base.items()}
        other.masks = dict(self.masks)
        other._forced = dict(self._forced)
        other._brk = self._brk
        return other
