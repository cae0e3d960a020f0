from .seeding import STREAMS, substream

__all__ = ["STREAMS", "substream"]
