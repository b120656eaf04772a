# cython: language_level=3, boundscheck=False, wraparound=False
"""GMP-backed secp256k1 scalar multiplication.

Same contract as :func:`pitpm._ec_py.point_mul`; Jacobian coordinates with
mixed affine addition, all temporaries preallocated per call.
"""

from libc.string cimport memset

cdef extern from "gmp.h":
    ctypedef struct __mpz_struct:
        pass
    ctypedef __mpz_struct mpz_t[1]
    ctypedef __mpz_struct *mpz_ptr
    void mpz_init(mpz_ptr)
    void mpz_clear(mpz_ptr)
    void mpz_set(mpz_ptr, mpz_ptr)
    void mpz_set_ui(mpz_ptr, unsigned long)
    void mpz_add(mpz_ptr, mpz_ptr, mpz_ptr)
    void mpz_sub(mpz_ptr, mpz_ptr, mpz_ptr)
    void mpz_mul(mpz_ptr, mpz_ptr, mpz_ptr)
    void mpz_mul_ui(mpz_ptr, mpz_ptr, unsigned long)
    void mpz_mul_2exp(mpz_ptr, mpz_ptr, unsigned long)
    void mpz_mod(mpz_ptr, mpz_ptr, mpz_ptr)
    int mpz_invert(mpz_ptr, mpz_ptr, mpz_ptr)
    int mpz_sgn(mpz_ptr)
    int mpz_tstbit(mpz_ptr, unsigned long)
    size_t mpz_sizeinbase(mpz_ptr, int)
    void mpz_import(mpz_ptr, size_t, int, size_t, int, size_t, const void *)
    void *mpz_export(void *, size_t *, int, size_t, int, size_t, mpz_ptr)

cdef enum:
    WIDTH = 32

cdef mpz_t FIELD
mpz_init(FIELD)
_field_bytes = (2**256 - 2**32 - 977).to_bytes(WIDTH, "big")
mpz_import(FIELD, WIDTH, 1, 1, 1, 0, <const char *>_field_bytes)


cdef inline void _load(mpz_ptr z, object value):
    cdef bytes raw = value.to_bytes(WIDTH, "big")
    mpz_import(z, WIDTH, 1, 1, 1, 0, <const char *>raw)


cdef inline object _store(mpz_ptr z):
    cdef unsigned char buf[WIDTH]
    cdef size_t count = 0
    cdef size_t nbytes
    memset(buf, 0, WIDTH)
    if mpz_sgn(z) != 0:
        nbytes = (mpz_sizeinbase(z, 2) + 7) // 8
        mpz_export(buf + WIDTH - nbytes, &count, 1, 1, 1, 0, z)
    return int.from_bytes(buf[:WIDTH], "big")


cdef inline void _modp(mpz_ptr z):
    mpz_mod(z, z, FIELD)


cdef void _jdouble(mpz_ptr X, mpz_ptr Y, mpz_ptr Z, mpz_ptr t1, mpz_ptr t2, mpz_ptr t3):
    if mpz_sgn(Y) == 0 or mpz_sgn(Z) == 0:
        mpz_set_ui(Z, 0)
        return
    mpz_mul(t1, Y, Y); _modp(t1)                      # Y^2
    mpz_mul(t2, X, t1); mpz_mul_2exp(t2, t2, 2); _modp(t2)  # S = 4XY^2
    mpz_mul(t1, t1, t1); mpz_mul_2exp(t1, t1, 3); _modp(t1)  # 8Y^4
    mpz_mul(t3, X, X); mpz_mul_ui(t3, t3, 3); _modp(t3)     # M = 3X^2
    mpz_mul(Z, Z, Y); mpz_mul_2exp(Z, Z, 1); _modp(Z)
    mpz_mul(X, t3, t3); mpz_sub(X, X, t2); mpz_sub(X, X, t2); _modp(X)
    mpz_sub(Y, t2, X); mpz_mul(Y, Y, t3); mpz_sub(Y, Y, t1); _modp(Y)


cdef void _jadd(mpz_ptr X, mpz_ptr Y, mpz_ptr Z, mpz_ptr x2, mpz_ptr y2,
                mpz_ptr t1, mpz_ptr t2, mpz_ptr t3, mpz_ptr t4, mpz_ptr t5, mpz_ptr t6):
    if mpz_sgn(Z) == 0:
        mpz_set(X, x2)
        mpz_set(Y, y2)
        mpz_set_ui(Z, 1)
        return
    mpz_mul(t1, Z, Z); _modp(t1)                      # Z^2
    mpz_mul(t2, x2, t1); _modp(t2)                    # U2
    mpz_mul(t3, y2, t1); mpz_mul(t3, t3, Z); _modp(t3)  # S2
    mpz_sub(t2, t2, X); _modp(t2)                     # H
    mpz_sub(t3, t3, Y); _modp(t3)                     # r
    if mpz_sgn(t2) == 0:
        if mpz_sgn(t3) == 0:
            _jdouble(X, Y, Z, t1, t4, t5)
        else:
            mpz_set_ui(Z, 0)
        return
    mpz_mul(t4, t2, t2); _modp(t4)                    # H^2
    mpz_mul(t5, t4, t2); _modp(t5)                    # H^3
    mpz_mul(t6, X, t4); _modp(t6)                     # V
    mpz_mul(Z, Z, t2); _modp(Z)
    mpz_mul(X, t3, t3); mpz_sub(X, X, t5); mpz_sub(X, X, t6); mpz_sub(X, X, t6); _modp(X)
    mpz_mul(Y, Y, t5)
    mpz_sub(t6, t6, X); mpz_mul(t6, t6, t3)
    mpz_sub(Y, t6, Y); _modp(Y)


def point_mul(k, x, y):
    """Return ``k * (x, y)`` for ``0 <= k < 2**256``; ``None`` for infinity."""
    if k == 0:
        return None
    cdef mpz_t K, PX, PY, X, Y, Z, t1, t2, t3, t4, t5, t6
    cdef long i
    cdef object result
    mpz_init(K); mpz_init(PX); mpz_init(PY)
    mpz_init(X); mpz_init(Y); mpz_init(Z)
    mpz_init(t1); mpz_init(t2); mpz_init(t3); mpz_init(t4); mpz_init(t5); mpz_init(t6)
    try:
        _load(K, k)
        _load(PX, x)
        _load(PY, y)
        mpz_set_ui(X, 0); mpz_set_ui(Y, 1); mpz_set_ui(Z, 0)
        for i in range(<long>mpz_sizeinbase(K, 2) - 1, -1, -1):
            _jdouble(X, Y, Z, t1, t2, t3)
            if mpz_tstbit(K, i):
                _jadd(X, Y, Z, PX, PY, t1, t2, t3, t4, t5, t6)
        if mpz_sgn(Z) == 0:
            return None
        mpz_invert(t1, Z, FIELD)
        mpz_mul(t2, t1, t1); _modp(t2)
        mpz_mul(t3, t2, t1); _modp(t3)
        mpz_mul(X, X, t2); _modp(X)
        mpz_mul(Y, Y, t3); _modp(Y)
        result = (_store(X), _store(Y))
        return result
    finally:
        mpz_clear(K); mpz_clear(PX); mpz_clear(PY)
        mpz_clear(X); mpz_clear(Y); mpz_clear(Z)
        mpz_clear(t1); mpz_clear(t2); mpz_clear(t3); mpz_clear(t4); mpz_clear(t5); mpz_clear(t6)
