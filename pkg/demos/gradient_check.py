"""Check every layer's backward pass against central differences."""

import numpy as np

from sparse_seg.gradcheck import OPS, finite_difference_check, kink_free, network_gradient_check
from sparse_seg.model import ArchitectureSpec, build_network

for op in OPS:
    worst = max(finite_difference_check(op, seed=s).max_error for s in range(5))
    print(f"{op:<24} worst relative error {worst:.1e}")

# whole networks: biases are moved off zero so relus sit away from their kink
for kind in ("unet", "segnet-lite"):
    net = kink_free(build_network(ArchitectureSpec(kind, 1, 2, 1, 2), seed=0))
    rng = np.random.default_rng(0)
    report = network_gradient_check(net, rng.random((1, 1, 8, 8)), rng.integers(0, 2, (1, 8, 8)))
    print(f"{kind:<24} worst relative error {report.max_error:.1e}, "
          f"{sum(report.skipped.values())} of {net.num_parameters()} coordinates at a kink")

# a deliberately wrong backward is caught
bad = finite_difference_check("relu", backward=lambda dy, mask: {"input": -dy * mask})
print("sign-flipped relu backward -> error", round(bad.max_error, 3), "passed:", bad.passed)
