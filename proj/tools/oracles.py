"""Independent reference values for the unit tests.

Run once with `python3 tools/oracles.py`; the printed numbers are pasted into
tests/test_*.cpp as frozen constants. Nothing here imports the C++ code.
"""
import math

from mpmath import mp, mpf, quad, npdf, sqrt, pi, erfinv

mp.dps = 40


def keys(x, a=-0.5):
    x = abs(x)
    if x <= 1:
        return (a + 2) * x**3 - (a + 3) * x**2 + 1
    if x < 2:
        return a * x**3 - 5 * a * x**2 + 8 * a * x - 4 * a
    return 0.0


def bicubic_1d(src, out_len):
    n = len(src)
    res = []
    for i in range(out_len):
        # half-pixel centres, replicated border
        x = (i + 0.5) * n / out_len - 0.5
        base = math.floor(x)
        acc = 0.0
        for t in range(base - 1, base + 3):
            acc += keys(x - t) * src[min(max(t, 0), n - 1)]
        res.append(acc)
    return res


def bilinear_1d_weights(n_in, n_out):
    rows = []
    for i in range(n_out):
        x = max((i + 0.5) * n_in / n_out - 0.5, 0.0)
        i0 = min(int(math.floor(x)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        f = x - i0
        rows.append((i0, i1, f))
    return rows


def gauss_mass(y, mu, sigma):
    return quad(lambda t: npdf(t, mu, sigma), [y - mpf("0.5"), y + mpf("0.5")])


def main():
    print("bicubic ramp x2:", bicubic_1d([0, 1, 2, 3], 8))
    print("bicubic ramp x2 (5 pts -> 10):", bicubic_1d([0, 1, 4, 9, 16], 10))
    print("bilinear taps 4->8:", bilinear_1d_weights(4, 8))
    print("mass(0 | 0, 1e6): %.17g" % gauss_mass(0, 0, mpf(10) ** 6))
    print("pdf-width approx: %.17g" % (1 / (mpf(10) ** 6 * sqrt(2 * pi))))
    for y, mu, s in [(0, 0, 1), (3, 0.25, 0.7), (-2, 1.5, 2.0), (40, -3, 9)]:
        print("mass(%s | %s, %s): %.17g" % (y, mu, s, gauss_mass(mpf(y), mpf(mu), mpf(s))))
    print("sigma with mass 1/2 on [-0.5, 0.5]: %.17g" % (mpf("0.5") / (sqrt(2) * erfinv(mpf("0.5")))))
    print("miou [0,0,1,1] vs [0,1,1,1]:", (0.5 + 2 / 3) / 2)
    print("rmse [1,3] vs [0,0]:", math.sqrt(5))


if __name__ == "__main__":
    main()
