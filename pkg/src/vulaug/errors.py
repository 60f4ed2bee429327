class PipelineError(Exception):
    """Run-fatal pipeline failure (maps to CLI exit code 2)."""
