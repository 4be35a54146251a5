import struct

import numpy as np
import pytest


def hand_built_nifti(values, shape=(2, 2, 2), endian="<", datatype=16, bitpix=32,
                     fmt="f", magic=b"n+1\x00", slope=1.0, inter=0.0, vox_offset=352.0):
    """Assemble a single-file NIfTI-1 volume byte by byte from the header layout."""
    e = endian
    hdr = bytearray(348)
    hdr[0:4] = struct.pack(e + "i", 348)              # sizeof_hdr
    dims = (3, *shape, 1, 1, 1, 1)
    for i, d in enumerate(dims):                       # dim[8] at offset 40
        hdr[40 + 2 * i: 42 + 2 * i] = struct.pack(e + "h", d)
    hdr[70:72] = struct.pack(e + "h", datatype)        # datatype
    hdr[72:74] = struct.pack(e + "h", bitpix)          # bitpix
    pixdim = (1.0, 0.5, 0.75, 2.0, 1.0, 1.0, 1.0, 1.0)
    for i, p in enumerate(pixdim):                     # pixdim[8] at offset 76
        hdr[76 + 4 * i: 80 + 4 * i] = struct.pack(e + "f", p)
    hdr[108:112] = struct.pack(e + "f", vox_offset)    # vox_offset
    hdr[112:116] = struct.pack(e + "f", slope)         # scl_slope
    hdr[116:120] = struct.pack(e + "f", inter)         # scl_inter
    hdr[344:348] = magic
    payload = b"".join(struct.pack(e + fmt, v) for v in values)
    return bytes(hdr) + b"\x00" * 4 + payload


@pytest.fixture
def nifti_2x2x2(tmp_path):
    path = tmp_path / "vol.nii"
    path.write_bytes(hand_built_nifti([float(i) for i in range(8)]))
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion and return the verdict."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'}  criterion {number}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
