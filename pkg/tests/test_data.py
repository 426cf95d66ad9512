import numpy as np
import pytest
from PIL import Image

from isocore.data import (
    as_observation,
    axis_angle_quaternion,
    decode_images,
    dh_area_weights,
    dh_grid,
    load_image_stack,
    quat_multiply,
    quat_to_matrix,
    random_quaternion,
    rotate_sphere,
    sphere_rotation_pair,
    sphere_norm,
    spherical_texture,
    synthetic_texture,
    toric_shift_pair,
)
from isocore.errors import ConfigError, InputError, UsageError


def test_toric_shift_examples(rng):
    stack = rng.standard_normal((16, 16, 3))
    psi, tpsi = toric_shift_pair(stack, rng, shift=(0, 0))
    assert np.array_equal(psi.values, tpsi.values)
    psi, tpsi, t2 = toric_shift_pair(stack, rng, triple=True, shift=(8, 0))
    assert np.array_equal(t2.values, psi.values)
    assert t2.metadata["shift"] == (0, 0)


def test_toric_shift_is_a_permutation(rng):
    stack = rng.standard_normal((8, 8, 4))
    psi, tpsi, t2 = toric_shift_pair(stack, rng, triple=True)
    assert np.linalg.norm(tpsi.values) == np.linalg.norm(psi.values)
    assert np.array_equal(np.sort(tpsi.values.ravel()), np.sort(psi.values.ravel()))
    sy, sx = tpsi.metadata["shift"]
    assert t2.metadata["shift"] == ((2 * sy) % 8, (2 * sx) % 8)


def test_generators_are_deterministic():
    a = toric_shift_pair(synthetic_texture(8, 8, 2, 3.0, np.random.default_rng([1, 2])), np.random.default_rng([1, 3]))
    b = toric_shift_pair(synthetic_texture(8, 8, 2, 3.0, np.random.default_rng([1, 2])), np.random.default_rng([1, 3]))
    assert all(np.array_equal(x.values, y.values) for x, y in zip(a, b))


def test_dh_grid_layout():
    theta, phi = dh_grid(4, 8)
    assert np.allclose(theta, np.pi * np.arange(4) / 4)
    assert np.allclose(phi, 2 * np.pi * np.arange(8) / 8)


def test_sphere_identity_rotation(rng):
    stack = spherical_texture(16, 16, 3, 3, rng)
    psi, tpsi = sphere_rotation_pair(stack, rng, quaternion=[0.0, 0.0, 0.0, 1.0])
    assert np.allclose(tpsi.values, psi.values, atol=1e-12)


def test_sphere_half_turn_about_pole_is_exact_shift(rng):
    q = axis_angle_quaternion([0, 0, 1], np.pi)
    values = spherical_texture(16, 16, 2, 4, rng).values
    assert np.allclose(rotate_sphere(values, q), np.roll(values, 8, axis=1), atol=1e-12)
    # away from the pole row (a single point) arbitrary grid data moves as a pure shift too
    noise = rng.standard_normal((16, 16, 2))
    assert np.allclose(rotate_sphere(noise, q)[1:], np.roll(noise, 8, axis=1)[1:], atol=1e-12)


def test_sphere_rotation_nearly_isometric(rng):
    for _ in range(20):
        stack = spherical_texture(16, 16, 16, 3, rng)
        psi, tpsi = sphere_rotation_pair(stack, rng)
        assert abs(sphere_norm(tpsi.values) / sphere_norm(psi.values) - 1) <= 0.15


def test_sphere_area_weights():
    w = dh_area_weights(16)
    assert abs(w.sum() - (1 + np.cos(np.pi / 32)) / 2) < 1e-12
    assert w[0] < w[4] < w[8]
    assert abs(sphere_norm(np.ones((16, 16, 1))) ** 2 - w.sum()) < 1e-12


def test_rotation_matches_direction_transform(rng):
    # a degree-1 field f(d) = a . d rotates to a . (R^T d)
    a = rng.standard_normal(3)
    from isocore.data import dh_directions

    d = dh_directions(32, 32)
    values = (d @ a)[..., None]
    q = random_quaternion(rng)
    out = rotate_sphere(values, q)[..., 0]
    expect = d @ (quat_to_matrix(q) @ a)
    assert np.abs(out - expect).max() < 0.05


def test_quaternion_helpers(rng):
    q = random_quaternion(rng)
    assert abs(np.linalg.norm(q) - 1) < 1e-12
    r = quat_to_matrix(q)
    assert np.allclose(r.T @ r, np.eye(3)) and abs(np.linalg.det(r) - 1) < 1e-12
    assert np.allclose(quat_to_matrix(quat_multiply(q, q)), r @ r)
    _, _, t2 = sphere_rotation_pair(spherical_texture(8, 8, 1, 2, rng), rng, triple=True, quaternion=q)
    assert np.allclose(t2.metadata["quaternion"], quat_multiply(q, q))


def test_quaternions_uniform_on_so3():
    rng = np.random.default_rng(3)
    qs = np.array([random_quaternion(rng) for _ in range(20000)])
    # uniform rotations have E[q_i^2] = 1/4 for every component and a uniform first axis direction
    assert np.allclose((qs**2).mean(axis=0), 0.25, atol=0.01)
    z = np.array([quat_to_matrix(q)[2, 2] for q in qs[:5000]])
    assert abs(z.mean()) < 0.03 and abs(np.mean(z**2) - 1 / 3) < 0.02


def test_synthetic_texture_dc_only(rng):
    obs = synthetic_texture(8, 8, 3, 0.0, rng)
    for c in range(3):
        assert np.allclose(obs.values[:, :, c], obs.values[0, 0, c])
    with pytest.raises(ConfigError):
        synthetic_texture(8, 8, 1, 5.0, rng)


def test_synthetic_texture_unit_variance():
    rng = np.random.default_rng(11)
    var = np.mean([synthetic_texture(8, 8, 4, 3.0, rng).values.var(axis=(0, 1)) for _ in range(1000)], axis=0)
    # the spatial variance excludes the DC term, so compare against the full second moment instead
    rng = np.random.default_rng(11)
    second = np.mean([np.mean(synthetic_texture(8, 8, 4, 3.0, rng).values ** 2, axis=(0, 1)) for _ in range(1000)], axis=0)
    assert np.all(np.abs(second - 1) <= 0.05)
    assert np.all(var < second)


def test_synthetic_texture_is_periodic():
    rng = np.random.default_rng(5)
    seam, inner = [], []
    for _ in range(200):
        v = synthetic_texture(16, 16, 1, 4.0, rng).values[..., 0]
        seam.append(np.abs(v[:, 0] - v[:, -1]))
        inner.append(np.abs(np.diff(v[:, 1:-1], axis=1)).ravel())
    seam, inner = np.concatenate(seam), np.concatenate(inner)
    assert abs(seam.mean() / inner.mean() - 1) < 0.1


def _write_images(directory, count, size=(20, 12), mode="RGB", fmt="PPM"):
    directory.mkdir(exist_ok=True)
    rng = np.random.default_rng(0)
    for i in range(count):
        shape = (size[1], size[0], 3) if mode == "RGB" else (size[1], size[0])
        arr = rng.integers(0, 256, shape, dtype=np.uint8)
        Image.fromarray(arr, mode).save(directory / f"img{i:03d}.{'ppm' if fmt == 'PPM' else 'png'}", fmt)


def test_load_image_stack_channel_count(tmp_path):
    _write_images(tmp_path / "imgs", 86)
    obs = load_image_stack(tmp_path / "imgs", 16, 16, 86)
    assert obs.values.shape == (16, 16, 258)
    assert 0 <= obs.values.min() and obs.values.max() <= 1


def test_grayscale_duplicates_to_three_channels(tmp_path):
    _write_images(tmp_path / "g", 1, mode="L", fmt="PNG")
    obs = load_image_stack(tmp_path / "g", 8, 8, 1)
    assert obs.values.shape == (8, 8, 3)
    assert np.array_equal(obs.values[..., 0], obs.values[..., 2])


def test_lexicographic_order_and_rejection(tmp_path):
    d = tmp_path / "mix"
    _write_images(d, 2)
    (d / "b_bad.txt").write_text("not an image")
    Image.fromarray(np.zeros((4, 4, 3), np.uint8)).save(d / "c.jpg", "JPEG")
    arrays, ok, bad = decode_images(d, 4, 4)
    assert [p.name for p in ok] == ["img000.ppm", "img001.ppm"]
    assert sorted(p.name for p in bad) == ["b_bad.txt", "c.jpg"]
    with pytest.raises(InputError) as exc:
        load_image_stack(d, 4, 4, 3)
    assert "c.jpg" in str(exc.value)


def test_as_observation_checks():
    assert as_observation(np.zeros((3, 4))).values.shape == (3, 4, 1)
    with pytest.raises(UsageError):
        as_observation(np.zeros(5))
