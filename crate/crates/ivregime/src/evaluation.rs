//! Replication harness (stub during bring-up).
