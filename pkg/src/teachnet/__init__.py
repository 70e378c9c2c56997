"""Human-to-robot hand retargeting, paired depth dataset synthesis and
teacher-student joint regression for a 17-DOF dexterous hand."""

__version__ = "0.1.0"
