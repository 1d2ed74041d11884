"""Comparison methods: the Voronoi coverage planner and two independent learners."""
