"""Column kernels of the double-layer norm network.

Every kernel absorbs one lattice column (boundary tensor above, ket and bra
site tensors, boundary tensor below) into a left or right environment.
Environments have axes ``(top bond, ket bond, bra bond, bottom bond)``;
boundary tensors have axes ``(left, ket, bra, right)``; site tensors have
axes ``(p, u, l, d, r)``.  ``bra`` arguments are already complex conjugated.

The contraction order is fixed by hand so that the leading costs are
``O(d D^6 D'^2) + O(D^4 D'^3)`` for boundary bond ``D'``.
"""

from __future__ import annotations

from .backend import tdot as td


def absorb_core(env, top, ket, bra):
    """Contract env, top, ket and bra; returns ``(s, t', dk, rk, db, rb)``."""
    x = td(env, top, ([0], [0]))  # lk lb s uk ub t'
    x = td(x, ket, ([0, 3], [2, 1]))  # lb s ub t' p dk rk
    return td(x, bra, ([0, 2, 4], [2, 1, 0]))  # s t' dk rk db rb


def absorb_left(env, top, ket, bra, bot):
    """Left environment of columns ``<= c`` from the one of columns ``< c``."""
    x = absorb_core(env, top, ket, bra)
    return td(x, bot, ([0, 2, 4], [0, 1, 2]))  # t' rk rb s'


def absorb_right(env, top, ket, bra, bot):
    """Right environment of columns ``>= c`` from the one of columns ``> c``."""
    x = td(env, top, ([0], [3]))  # rk rb s' t uk ub
    x = td(x, ket, ([0, 4], [4, 1]))  # rb s' t ub p lk dk
    x = td(x, bra, ([0, 3, 4], [4, 1, 0]))  # s' t lk dk lb db
    return td(x, bot, ([0, 3, 5], [3, 1, 2]))  # t lk lb s


def open_bottom(env_l, top, ket, bra, env_r):
    """Column contraction with the lower boundary tensor left out: ``(s, dk, db, s')``."""
    x = absorb_core(env_l, top, ket, bra)
    return td(x, env_r, ([1, 3, 5], [0, 1, 2]))


def exact_column(top, ket, bra):
    """Exact product of a boundary tensor with one column of the double layer.

    Returns ``(t lk lb, dk, db, t' rk rb)`` with the grouped legs fused.
    """
    x = td(top, ket, ([1], [1]))  # t ub t' p lk dk rk
    x = td(x, bra, ([1, 3], [1, 0]))  # t t' lk dk rk lb db rb
    x = x.transpose(0, 2, 5, 3, 6, 1, 4, 7)
    s = x.shape
    return x.reshape(s[0] * s[1] * s[2], s[3], s[4], s[5] * s[6] * s[7])


def half_left_open(env_l, top, ket, bra, bot):
    """Left half of a pair with physical legs open: ``(t', p, rk, p', rb, s')``."""
    x = td(env_l, top, ([0], [0]))  # lk lb s uk ub t'
    x = td(x, ket, ([0, 3], [2, 1]))  # lb s ub t' p dk rk
    x = td(x, bra, ([0, 2], [2, 1]))  # s t' p dk rk p' db rb
    return td(x, bot, ([0, 3, 6], [0, 1, 2]))


def half_right_open(env_r, top, ket, bra, bot):
    """Right half of a pair with physical legs open: ``(t, q, lk, q', lb, s)``."""
    x = td(env_r, top, ([0], [3]))  # rk rb s' t uk ub
    x = td(x, ket, ([0, 4], [4, 1]))  # rb s' t ub q lk dk
    x = td(x, bra, ([0, 3], [4, 1]))  # s' t q lk dk q' lb db
    return td(x, bot, ([0, 4, 7], [3, 1, 2]))


# -- bond-one (separable) boundaries ------------------------------------------
#
# Here the boundary tensors are matrices ``m[k, b]`` and the left/right
# environments are matrices ``e[k, b]``; every kernel costs ``O(d D^5)``.


def _sep_common(env_l, m, ket):
    x = td(ket, env_l, ([2], [0]))  # p uk dk rk lb
    return td(x, m, ([1], [0]))  # p dk rk lb ub


def sep_open(env_l, m, ket, bra, env_r):
    x = _sep_common(env_l, m, ket)
    x = td(x, env_r, ([2], [0]))  # p dk lb ub rb
    return td(x, bra, ([0, 3, 2, 4], [0, 1, 2, 4]))  # dk db


def sep_left(env_l, m, ket, bra, f):
    x = _sep_common(env_l, m, ket)
    x = td(x, f, ([1], [0]))  # p rk lb ub db
    return td(x, bra, ([0, 3, 2, 4], [0, 1, 2, 3]))  # rk rb


def sep_right(env_r, m, ket, bra, f):
    x = td(ket, env_r, ([4], [0]))  # p uk lk dk rb
    x = td(x, m, ([1], [0]))  # p lk dk rb ub
    x = td(x, f, ([2], [0]))  # p lk rb ub db
    return td(x, bra, ([0, 3, 4, 2], [0, 1, 3, 4]))  # lk lb
