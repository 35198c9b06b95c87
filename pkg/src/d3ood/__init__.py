"""Distribution-disparity OoD scoring over paired (input, generation) representations."""

__version__ = "0.1.0"
