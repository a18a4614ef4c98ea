#!/usr/bin/env python3
"""Writes the NIfTI-1 test fixtures and nibabel's float64 conversion of each.

Usage: python3 tools/make_nifti_fixtures.py tests/data/nifti

For every fixture <name> the directory gets the image file(s) plus
<name>.expected.f64: little-endian float64 voxels after scl_slope/scl_inter,
ordered depth (k) major, then row (j), then column (i).
"""
import pathlib
import struct
import sys

import nibabel as nib
import numpy as np


def save_expected(img, out, name):
    data = img.get_fdata(dtype=np.float64)
    # nibabel indexes (i, j, k); the loader stores k-major, j, i.
    ordered = np.ascontiguousarray(np.transpose(data, (2, 1, 0)))
    ordered.astype("<f8").tofile(out / f"{name}.expected.f64")


def main():
    out = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "tests/data/nifti")
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20240611)
    affine = np.diag([0.9, 0.9, 3.0, 1.0])

    # All-zero float32 volume.
    zeros = nib.Nifti1Image(np.zeros((8, 8, 8), dtype=np.float32), affine)
    nib.save(zeros, out / "zeros_f32.nii")
    save_expected(nib.load(out / "zeros_f32.nii"), out, "zeros_f32")

    # uint8, no scaling, non-cubic.
    u8 = nib.Nifti1Image(rng.integers(0, 256, size=(12, 10, 7), dtype=np.uint8), affine)
    u8.header.set_slope_inter(None, None)
    nib.save(u8, out / "noise_u8.nii")
    save_expected(nib.load(out / "noise_u8.nii"), out, "noise_u8")

    # int16 with scl_slope / scl_inter. nibabel rewrites the scaling fields
    # on save, so they are patched into the header bytes afterwards.
    i16 = nib.Nifti1Image(rng.integers(-2000, 2000, size=(9, 11, 6), dtype=np.int16), affine)
    i16.header.set_data_dtype(np.int16)
    i16.header.set_slope_inter(None, None)
    nib.save(i16, out / "scaled_i16.nii")
    with open(out / "scaled_i16.nii", "r+b") as f:
        f.seek(112)
        f.write(struct.pack("<ff", 0.25, -12.5))
    loaded = nib.load(out / "scaled_i16.nii")
    assert loaded.dataobj.slope == 0.25 and loaded.dataobj.inter == -12.5
    save_expected(loaded, out, "scaled_i16")

    # float32, gzip-compressed.
    f32 = nib.Nifti1Image(rng.normal(100.0, 30.0, size=(10, 8, 9)).astype(np.float32), affine)
    nib.save(f32, out / "noise_f32.nii.gz")
    save_expected(nib.load(out / "noise_f32.nii.gz"), out, "noise_f32")

    # Header/image pair.
    pair = nib.Nifti1Pair(rng.integers(0, 200, size=(6, 7, 5), dtype=np.uint8), affine)
    pair.header.set_slope_inter(None, None)
    nib.save(pair, out / "pair_u8.hdr")
    save_expected(nib.load(out / "pair_u8.hdr"), out, "pair_u8")

    # Big-endian int16.
    be_hdr = nib.Nifti1Header(endianness=">")
    be = nib.Nifti1Image(rng.integers(-300, 300, size=(7, 6, 5)).astype(">i2"), affine, header=be_hdr)
    be.header.set_slope_inter(None, None)
    nib.save(be, out / "bigendian_i16.nii")
    loaded = nib.load(out / "bigendian_i16.nii")
    assert loaded.header.endianness == ">"
    save_expected(loaded, out, "bigendian_i16")


if __name__ == "__main__":
    main()
