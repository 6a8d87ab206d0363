"""Enhancement-aware adaptive bitrate streaming simulator."""
