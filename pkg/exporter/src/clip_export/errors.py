class ExportError(Exception):
    """Anything that stops an export: missing data, bad spec, bad pair source.

    Messages should tell the user what to fix, not just what broke.
    """
