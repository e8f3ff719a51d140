"""Camera-LiDAR BEV fusion with adapters, contrastive alignment and SCA attention."""

__version__ = "0.1.0"
