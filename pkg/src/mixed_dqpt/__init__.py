"""Dynamical quantum phase transitions of mixed states in two-band fermion chains."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .model import (KGrid, QuenchProtocol, TwoBandModel, band_energy, bloch_vector,
                    make_k_grid, overlap_coefficients, unit_bloch)
from .evolution import (DissipationSpec, Liouvillian, ModeTrajectory, TimeGrid,
                        build_liouvillian, closed_form_mode_gloa, evolve_mode,
                        evolve_protocol, initial_state, steady_state)
from .amplitude import (AmplitudeSeries, RateSeries, confirm_cusps, fidelity_series,
                        find_cusp_candidates, geometric_phase_profile, gloa_series,
                        interferometric_series, pure_state_loa, total_rate_function)
from .topology import (PseudoSpinField, critical_times, dtop, dtop_jump_prediction,
                       dtop_series, pseudo_spin_field, winding_number)
