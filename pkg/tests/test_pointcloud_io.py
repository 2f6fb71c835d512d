"""Tests for PLY round-trips, parser error reporting, and synthetic shapes."""

import numpy as np
import pytest

from pclink.pointcloud_io import (
    DEFAULT_PRECISION_B,
    PlyParseError,
    PointCloud,
    gen_shape,
    read_ply,
    write_ply,
)


def random_cloud(rng, n=200, b=9):
    pts = rng.integers(0, 1 << b, size=(n, 3))
    pts = np.unique(pts, axis=0)
    return PointCloud(pts, b)


class TestRoundTrip:
    @pytest.mark.parametrize("binary", [False, True])
    def test_geometry_round_trip(self, binary):
        rng = np.random.default_rng(0)
        pc = random_cloud(rng)
        back = read_ply(write_ply(pc, binary=binary), precision_b=pc.precision_b)
        assert back.same_points(pc)
        assert back.precision_b == pc.precision_b

    @pytest.mark.parametrize("binary", [False, True])
    def test_normals_round_trip(self, binary):
        rng = np.random.default_rng(1)
        pc = random_cloud(rng, n=50)
        normals = rng.normal(size=(len(pc), 3))
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        pc = PointCloud(pc.points, pc.precision_b, normals)
        back = read_ply(write_ply(pc, binary=binary), precision_b=pc.precision_b)
        assert back.normals is not None
        # writer emits float32, so representation noise stays below 1e-6
        order_a = np.lexsort(pc.points.T)
        order_b = np.lexsort(back.points.T)
        np.testing.assert_allclose(
            back.normals[order_b], pc.normals[order_a], atol=1e-6
        )

    def test_write_is_deterministic(self):
        pc = random_cloud(np.random.default_rng(2))
        assert write_ply(pc) == write_ply(pc)
        assert write_ply(pc, binary=True) == write_ply(pc, binary=True)


class TestParser:
    def test_rounding_half_up_and_dedup_order(self):
        body = "\n".join([
            "ply", "format ascii 1.0", "element vertex 4",
            "property float x", "property float y", "property float z",
            "end_header",
            "1.5 0.4 2.5",     # rounds to (2, 0, 3)
            "0.0 0.0 0.0",
            "2.0 0.0 3.0",     # duplicate of row 1 after rounding
            "0.2 0.2 0.2",     # rounds to duplicate of row 2
        ]).encode() + b"\n"
        pc = read_ply(body, precision_b=4)
        np.testing.assert_array_equal(pc.points, [[2, 0, 3], [0, 0, 0]])

    def test_color_properties_skipped(self):
        body = "\n".join([
            "ply", "format ascii 1.0", "element vertex 1",
            "property float x", "property float y", "property float z",
            "property uchar red", "property uchar green", "property uchar blue",
            "end_header",
            "1 2 3 255 0 ０".replace("０", "0"),
        ]).encode() + b"\n"
        pc = read_ply(body)
        np.testing.assert_array_equal(pc.points, [[1, 2, 3]])

    def test_binary_with_extra_properties(self):
        import struct
        header = "\n".join([
            "ply", "format binary_little_endian 1.0", "element vertex 2",
            "property float x", "property float y", "property float z",
            "property uchar red",
            "end_header", "",
        ]).encode()
        rows = b"".join(
            struct.pack("<fffB", *xyz, c) for xyz, c in [((1, 2, 3), 9), ((4, 5, 6), 7)]
        )
        pc = read_ply(header + rows)
        np.testing.assert_array_equal(pc.points, [[1, 2, 3], [4, 5, 6]])

    def test_truncated_ascii_body_reports_offset(self):
        data = "\n".join([
            "ply", "format ascii 1.0", "element vertex 2",
            "property float x", "property float y", "property float z",
            "end_header",
            "1 2 3",
        ]).encode() + b"\n"
        with pytest.raises(PlyParseError, match="byte offset"):
            read_ply(data)

    def test_truncated_binary_body_reports_offset(self):
        header = "\n".join([
            "ply", "format binary_little_endian 1.0", "element vertex 2",
            "property float x", "property float y", "property float z",
            "end_header", "",
        ]).encode()
        data = header + b"\x00" * 13  # needs 24 bytes
        with pytest.raises(PlyParseError, match="byte offset"):
            read_ply(data)

    def test_big_endian_rejected(self):
        data = b"ply\nformat binary_big_endian 1.0\nend_header\n"
        with pytest.raises(PlyParseError):
            read_ply(data)

    def test_fuzz_truncations_error_cleanly(self):
        pc = random_cloud(np.random.default_rng(3), n=40)
        rng = np.random.default_rng(4)
        for binary in (False, True):
            data = write_ply(pc, binary=binary)
            cuts = rng.integers(0, len(data) - 1, size=60)
            for cut in cuts:
                try:
                    got = read_ply(bytes(data[:cut]), precision_b=pc.precision_b)
                except PlyParseError:
                    continue
                # a cut landing on a row boundary can still parse; then the
                # parsed rows must be a prefix of the original cloud
                assert len(got) <= len(pc)


class TestGenShape:
    def test_sphere_distance_oracle(self):
        # oracle: every quantized point lies within one voxel of the ideal radius
        pc = gen_shape("sphere", 5000, 9, 7)
        extent = (1 << 9) - 1
        center = extent / 2.0
        radius = 0.35 * extent
        dist = np.linalg.norm(pc.points - center, axis=1)
        assert np.max(np.abs(dist - radius)) <= 1.0

    def test_single_point(self):
        pc = gen_shape("sphere", 1, 4, 0)
        assert len(pc) == 1

    def test_deterministic(self):
        a = gen_shape("blob", 1000, 6, 5)
        b = gen_shape("blob", 1000, 6, 5)
        assert a.same_points(b)

    @pytest.mark.parametrize("kind", ["sphere", "box", "torus", "blob"])
    def test_kinds_in_bounds(self, kind):
        pc = gen_shape(kind, 2000, 6, 11)
        assert len(pc) > 100
        assert pc.points.min() >= 0
        assert pc.points.max() < (1 << 6)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            gen_shape("plane", 10, 9, 0)

    def test_default_precision(self):
        assert gen_shape("box", 100, seed=1).precision_b == DEFAULT_PRECISION_B


class TestPointCloudValidation:
    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            PointCloud(np.array([[0, 0, 16]]), precision_b=4)

    def test_rejects_duplicates(self):
        with pytest.raises(ValueError):
            PointCloud(np.array([[1, 1, 1], [1, 1, 1]]), precision_b=4)

    def test_rejects_non_unit_normals(self):
        with pytest.raises(ValueError):
            PointCloud(np.array([[1, 1, 1]]), 4, np.array([[1.0, 1.0, 0.0]]))
