"""Memory-efficient class-incremental learning."""
