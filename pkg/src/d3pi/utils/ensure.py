"""
Precondition Checks
^^^^^^^^^^^^^^^^^^^

.. contents:: Table of Contents
    :backlinks: none
    :local:

Introduction
------------

Shape, symmetry and stability preconditions throughout the library are
written as one-line `ensure` calls that raise a member of the
:mod:`d3pi.error` family.
"""

from typing import Callable, Union

from ..error import D3piError


class EnsureError(D3piError):
    """
    Precondition failed without a more specific error.
    """


def ensure(
    value: object,
    exception: Union[D3piError, Callable[[], D3piError]] = EnsureError,
) -> None:
    """
    Raise `exception` unless `value` is truthy.

    Parameters
    ----------
    value :
        Condition that must hold.
    exception :
        An error instance, raised as is so it keeps its message, or an
        error class constructed without arguments.
    """
    if value:
        return
    if isinstance(exception, D3piError):
        raise exception
    raise exception()
