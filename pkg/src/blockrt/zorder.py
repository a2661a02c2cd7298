"""Morton (Z-order) index for block coordinates."""


def zorder_index(coords) -> int:
    """Bit-interleave coordinates: x contributes bit 0, y bit 1, z bit 2, ...

    Each coordinate must fit in 32 bits.
    """
    ndim = len(coords)
    out = 0
    for axis, c in enumerate(coords):
        c = int(c)
        if c < 0 or c >= 1 << 32:
            raise ValueError(f"coordinate {c} out of the 32-bit range")
        bit = 0
        while c:
            if c & 1:
                out |= 1 << (bit * ndim + axis)
            c >>= 1
            bit += 1
    return out
