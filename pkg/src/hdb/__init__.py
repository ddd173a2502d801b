"""hdb: a schema-transparent web administration service for relational databases.

Every page is generated at request time from the database catalog: the
overview of data sources, per-database table listings, per-table metadata
pages, and the five standard operations (input, update, delete, query, all).
Nothing about a particular schema is hard-coded; sites extend behaviour
through a hook registry and named multi-table views, and derived columns can
be auto-filled by driving an external analysis process over its standard
streams.
"""

__version__ = "0.1.0"

SERVED_BY = f"hdb {__version__}"
