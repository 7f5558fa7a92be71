"""Signed-XML e-document platform.

A small e-administration stack: a strict XML subset with deterministic
canonical bytes, a minimal certificate/signature layer, a trustworthy
display core that refuses anything it cannot show completely, a signed
command protocol, the document platform server, and an exam-admission
scenario built on top of it.
"""

__version__ = "0.1.0"
