"""Pure-Python secp256k1 arithmetic (fallback for the compiled ``_ec`` kernel).

Points are affine ``(x, y)`` tuples; the point at infinity is ``None``.
"""

P = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEFFFFFC2F
N = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141
GX = 0x79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798
GY = 0x483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8


def point_add(p1, p2):
    if p1 is None:
        return p2
    if p2 is None:
        return p1
    x1, y1 = p1
    x2, y2 = p2
    if x1 == x2:
        if (y1 + y2) % P == 0:
            return None
        lam = 3 * x1 * x1 * pow(2 * y1, -1, P) % P
    else:
        lam = (y2 - y1) * pow(x2 - x1, -1, P) % P
    x3 = (lam * lam - x1 - x2) % P
    return (x3, (lam * (x1 - x3) - y1) % P)


def _jdouble(X, Y, Z):
    if Y == 0 or Z == 0:
        return 0, 1, 0
    yy = Y * Y % P
    s = 4 * X * yy % P
    m = 3 * X * X % P
    x3 = (m * m - 2 * s) % P
    y3 = (m * (s - x3) - 8 * yy * yy) % P
    return x3, y3, 2 * Y * Z % P


def _jadd_affine(X1, Y1, Z1, x2, y2):
    if Z1 == 0:
        return x2, y2, 1
    zz = Z1 * Z1 % P
    u2 = x2 * zz % P
    s2 = y2 * zz * Z1 % P
    h = (u2 - X1) % P
    r = (s2 - Y1) % P
    if h == 0:
        if r == 0:
            return _jdouble(X1, Y1, Z1)
        return 0, 1, 0
    hh = h * h % P
    hhh = h * hh % P
    v = X1 * hh % P
    x3 = (r * r - hhh - 2 * v) % P
    y3 = (r * (v - x3) - Y1 * hhh) % P
    return x3, y3, Z1 * h % P


def point_mul(k, x, y):
    """Return ``k * (x, y)`` for ``0 <= k < 2**256``; ``None`` for infinity."""
    X, Y, Z = 0, 1, 0
    for bit in bin(k)[2:] if k else ():
        X, Y, Z = _jdouble(X, Y, Z)
        if bit == "1":
            X, Y, Z = _jadd_affine(X, Y, Z, x, y)
    if Z == 0:
        return None
    zinv = pow(Z, -1, P)
    zinv2 = zinv * zinv % P
    return (X * zinv2 % P, Y * zinv2 * zinv % P)
