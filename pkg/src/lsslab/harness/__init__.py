"""Dataset ingestion, configuration, training, evaluation and ablation."""
