//! CSV and results-document I/O (stub during bring-up).
