"""Policy enforcement and audit checks for AI-agent execution runtimes."""

__version__ = "0.1.0"
