"""Common error base.

Every exception raised by hdb itself derives from :class:`HdbError`, so the
request layer can distinguish expected application failures (rendered as an
error page plus a diagnostic) from genuine bugs.
"""


class HdbError(Exception):
    pass
