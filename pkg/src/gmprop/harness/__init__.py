"""Dataset ingestion, metrics, training loops, checkpoints, and the CLI."""
