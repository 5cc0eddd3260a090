"""Import the kernel module before anything else pulls in numba.

The kernels size the numba thread pool through an environment variable that
must be in place before numba first loads; importing here guarantees the
order no matter which test module pytest collects first.
"""

import linevox._kernels  # noqa: F401
