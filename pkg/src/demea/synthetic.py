"""Synthetic deformation datasets generated through the embedded deformation layer."""
import numpy as np

from .edl import EmbeddedDeformation, euler_to_rotation


def bend_twist_transforms(node_positions, bend, twist, axis=0):
    """Node transforms that bend a bar in the xy-plane and twist it about its long axis.

    The bar runs along ``axis`` (x by default). A node at normalized length
    ``s`` gets rotation ``R_z(bend * s) R_x(twist * s)`` and is carried to the
    bent centerline.
    Returns ``(angles, translations)`` with angles in the package's
    ``(alpha, beta, gamma)`` convention.
    """
    g = np.asarray(node_positions, dtype=np.float64)
    if axis != 0:
        raise ValueError("only bars along x are supported")
    x0, x1 = g[:, 0].min(), g[:, 0].max()
    length = x1 - x0
    s = (g[:, 0] - x0) / length
    theta = bend * s
    if abs(bend) < 1e-12:
        center = np.stack([x0 + s * length, np.zeros_like(s), np.zeros_like(s)], 1)
    else:
        r = length / bend
        center = np.stack([x0 + r * np.sin(theta), r * (1 - np.cos(theta)), np.zeros_like(s)], 1)
    angles = np.stack([twist * s, np.zeros_like(s), theta], 1)
    rot = euler_to_rotation(angles)
    cross = g.copy()
    cross[:, 0] = 0.0
    moved = center + np.einsum("lij,lj->li", rot, cross)
    return angles, moved - g


def smooth_field(points, rng, n_waves=3, scale=1.0, wavelength=1.0):
    """Sum of random low-frequency sinusoids evaluated at ``points``, (N, 3) output."""
    pts = np.asarray(points, dtype=np.float64)
    out = np.zeros((len(pts), 3))
    for _ in range(n_waves):
        k = rng.normal(size=3) * (2 * np.pi / wavelength)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.normal(size=3)
        out += amp[None, :] * np.sin(pts @ k + phase)[:, None]
    return scale * out / np.sqrt(n_waves)


def random_transforms(node_positions, rng, angle_scale=0.3, translation_scale=0.05,
                      wavelength=None):
    """Smooth random per-node Euler angles and translations."""
    g = np.asarray(node_positions, dtype=np.float64)
    if wavelength is None:
        wavelength = 2.0 * float(np.linalg.norm(g.max(0) - g.min(0)))
    return (smooth_field(g, rng, scale=angle_scale, wavelength=wavelength),
            smooth_field(g, rng, scale=translation_scale, wavelength=wavelength))


def bar_dataset(mesh, graph, binding, count, rng, max_bend=0.6, max_twist=0.6, noise=0.01):
    """``count`` bent and twisted copies of a bar template, plus smooth node noise."""
    layer = EmbeddedDeformation(mesh, graph, binding)
    out = np.empty((count, mesh.n_vertices, 3))
    for i in range(count):
        bend = rng.uniform(-max_bend, max_bend)
        twist = rng.uniform(-max_twist, max_twist)
        angles, trans = bend_twist_transforms(graph.node_positions, bend, twist)
        if noise:
            da, dt = random_transforms(graph.node_positions, rng, noise, noise)
            angles, trans = angles + da, trans + dt
        out[i] = layer.forward(angles, trans)
    return out


def random_dataset(mesh, graph, binding, count, rng, angle_scale=0.3, translation_scale=0.05):
    """``count`` meshes deformed by smooth random node fields."""
    layer = EmbeddedDeformation(mesh, graph, binding)
    out = np.empty((count, mesh.n_vertices, 3))
    for i in range(count):
        angles, trans = random_transforms(graph.node_positions, rng, angle_scale, translation_scale)
        out[i] = layer.forward(angles, trans)
    return out
