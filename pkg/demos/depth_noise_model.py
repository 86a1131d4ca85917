"""
Depth noise and 3-D point uncertainty
=====================================

Depth noise grows with the square of the depth. Backprojecting a pixel
turns pixel and depth noise into a 3-D covariance, which we compare
with a Monte Carlo estimate.
"""

import numpy as np

from dynseg.geometry import (CameraIntrinsics, NoiseParams, Observation, backproject_pixels,
                             depth_stddev, point_covariance)

intr, noise = CameraIntrinsics.kinect(), NoiseParams()

# standard deviation of the depth at a few ranges
for d in (0.5, 1.0, 2.0, 3.0, 4.0):
    print(f"depth {d:.1f} m: sigma_z = {1000 * depth_stddev(d, intr, noise):.2f} mm")

# analytic covariance of one off-center pixel against 200k noisy samples
rng = np.random.default_rng(0)
u, v, d = 90.0, 400.0, 2.5
n = 200_000
P = backproject_pixels(u + noise.sigma_u * rng.standard_normal(n),
                       v + noise.sigma_v * rng.standard_normal(n),
                       d + depth_stddev(d, intr, noise) * rng.standard_normal(n), intr)
mc = np.cov(P.T)
C = point_covariance(Observation(0, 0, u, v, d), intr, noise).matrix
np.set_printoptions(precision=3, suppress=False)
print("analytic covariance (mm^2):\n", C * 1e6)
print("Monte Carlo covariance (mm^2):\n", mc * 1e6)
print(f"largest difference relative to the trace: {np.abs(C - mc).max() / np.trace(mc):.3%}")

# the uncertainty ellipsoid is stretched along the viewing ray
w, V = np.linalg.eigh(C)
ray = np.ravel(backproject_pixels(u, v, 1.0, intr))
ray /= np.linalg.norm(ray)
print(f"major axis vs viewing ray: {np.degrees(np.arccos(abs(V[:, -1] @ ray))):.2f} degrees")
