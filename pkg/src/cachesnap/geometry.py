"""Cache geometry and physical-address bit-field decomposition.

A set-associative PIPT cache splits every physical address into three
fields: the low `offset_bits` select a byte inside a line, the next
`index_bits` select the set, and the remaining bits up to
`phys_addr_bits` form the tag stored next to the cached data.
"""

from __future__ import annotations

from dataclasses import dataclass


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


class AddressRangeError(ValueError):
    """Physical address does not fit in the configured address width."""


@dataclass(frozen=True)
class CacheGeometry:
    """Shape of a set-associative cache plus the derived bit fields.

    Defaults model a 2 MB, 16-way, 64 B/line shared L2 with a 44-bit
    physical address space: 2048 sets, offset bits [0,5], index bits
    [6,16], tag bits [17,43].
    """

    total_size: int = 2 * 1024 * 1024
    ways: int = 16
    line_size: int = 64
    phys_addr_bits: int = 44

    def __post_init__(self) -> None:
        for name in ("total_size", "ways", "line_size"):
            if not _is_pow2(getattr(self, name)):
                raise ValueError(f"{name} must be a power of two, got {getattr(self, name)}")
        if self.total_size % (self.ways * self.line_size) != 0:
            raise ValueError("ways * line_size must divide total_size")
        if self.phys_addr_bits <= self.offset_bits + self.index_bits:
            raise ValueError("phys_addr_bits leaves no room for tag bits")

    @property
    def way_size(self) -> int:
        return self.total_size // self.ways

    @property
    def sets(self) -> int:
        return self.total_size // (self.ways * self.line_size)

    @property
    def num_lines(self) -> int:
        return self.sets * self.ways

    @property
    def offset_bits(self) -> int:
        return self.line_size.bit_length() - 1

    @property
    def index_bits(self) -> int:
        return self.sets.bit_length() - 1

    @property
    def tag_bits(self) -> int:
        return self.phys_addr_bits - self.offset_bits - self.index_bits

    @property
    def max_address(self) -> int:
        return (1 << self.phys_addr_bits) - 1


DEFAULT_GEOMETRY = CacheGeometry()


def decompose_address(addr: int, geom: CacheGeometry = DEFAULT_GEOMETRY) -> tuple[int, int, int]:
    """Split a physical address into (tag, set index, byte offset)."""
    if addr < 0 or addr > geom.max_address:
        raise AddressRangeError(
            f"address {addr:#x} outside {geom.phys_addr_bits}-bit physical space"
        )
    offset = addr & (geom.line_size - 1)
    set_index = (addr >> geom.offset_bits) & (geom.sets - 1)
    tag = addr >> (geom.offset_bits + geom.index_bits)
    return tag, set_index, offset


def recompose_address(
    tag: int, set_index: int, offset: int, geom: CacheGeometry = DEFAULT_GEOMETRY
) -> int:
    """Inverse of decompose_address."""
    if not 0 <= tag < (1 << geom.tag_bits):
        raise AddressRangeError(f"tag {tag:#x} wider than {geom.tag_bits} bits")
    if not 0 <= set_index < geom.sets:
        raise AddressRangeError(f"set index {set_index} out of range (sets={geom.sets})")
    if not 0 <= offset < geom.line_size:
        raise AddressRangeError(f"offset {offset} out of range (line={geom.line_size})")
    return (tag << (geom.offset_bits + geom.index_bits)) | (set_index << geom.offset_bits) | offset
