# Utility helpers: configuration, logging, file I/O
