import numpy as np


def three_point_derivative(t, y):
    """Centred derivative at interior samples of a nonuniform series (exact for quadratics)."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    h1, h2 = t[1:-1] - t[:-2], t[2:] - t[1:-1]
    return (h1**2 * y[2:] - h2**2 * y[:-2] + (h2**2 - h1**2) * y[1:-1]) / (h1 * h2 * (h1 + h2))
