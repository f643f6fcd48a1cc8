"""Pick the compiled kernels when available, else the numpy fallbacks.

Set ``LIPSORT_PURE=1`` to force the fallbacks.
"""
import os

from . import _reference

BACKEND = "python"
groupsort = _reference.groupsort
jacobi_singular_values = _reference.jacobi_singular_values
project_rows_l1 = _reference.project_rows_l1

if os.environ.get("LIPSORT_PURE") != "1":
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        BACKEND = "compiled"
        groupsort = _kernels.groupsort
        jacobi_singular_values = _kernels.jacobi_singular_values
        project_rows_l1 = _kernels.project_rows_l1

# insertion sort is quadratic in the group size; numpy's stable sort wins past this
COMPILED_SORT_MAX_GROUP = 32


def sort_groups(z, k):
    if k > COMPILED_SORT_MAX_GROUP:
        return _reference.groupsort(z, k)
    return groupsort(z, k)
