"""gridlet: a miniature grid job-brokering suite.

A resource broker routes jobs to the least-loaded worker peer using a
monitoring-derived load coefficient; workers stage and execute jobs per
input file; clients submit, monitor, and kill jobs and retrieve outputs
over an XML-RPC-style protocol with resumable chunked file transfer and
ACL authorization. Brokers fail over automatically to a surviving peer.
"""

__version__ = "0.1.0"
