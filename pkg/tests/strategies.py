"""Hypothesis strategies for random field expressions."""

from hypothesis import strategies as st

from magheat.fields import Add, Const, Func, Mul, Pow, Sub, Var


def field_exprs(d=2, max_leaves=6):
    leaves = st.one_of(
        st.integers(0, d - 1).map(Var),
        st.integers(-3, 3).map(lambda v: Const(float(v))),
        st.sampled_from([0.5, -1.5, 0.25]).map(Const),
    )

    def extend(children):
        return st.one_of(
            st.tuples(children, children).map(lambda ab: Add(ab)),
            st.tuples(children, children).map(lambda ab: Mul(ab)),
            st.tuples(children, children).map(lambda ab: Sub(*ab)),
            st.tuples(children, st.integers(0, 3)).map(lambda an: Pow(*an)),
            st.tuples(st.sampled_from(["sin", "cos", "exp"]), children).map(lambda fa: Func(*fa)),
        )

    return st.recursive(leaves, extend, max_leaves=max_leaves)


def points(d=2, bound=1.0):
    return st.lists(st.floats(-bound, bound, allow_nan=False), min_size=d, max_size=d)
