"""Language-grounded 3D shape retrieval.

Voxelized shapes live in a learned low-dimensional subspace; a regressor
maps single depth images into that subspace, and a two-branch network
embeds shape vectors and sentence vectors jointly so that cosine
similarity ranks candidate objects against a description.
"""

__version__ = "0.1.0"
