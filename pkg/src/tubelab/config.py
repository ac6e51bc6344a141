"""Tunable constants.

Implicit comparability factors ("up to a constant", "up to polylog") are
realized as explicit numbers so audits can print measured-vs-allowed pairs.
Every value here is a default: operations accept an ``overrides`` mapping and
scenario files may override any key.  Log factors are base-2 throughout.
"""

from __future__ import annotations

DEFAULTS: dict[str, float | int] = {
    # Two same-shape bodies count as essentially distinct when their overlap
    # is at most this fraction of the smaller body's voxel volume.
    "distinctness_overlap_fraction": 0.5,
    # Boxes are "comparable" when each sits inside the other's c-dilate.
    "comparability_dilate": 10.0,
    # Cover bodies produced by greedy factoring must have per-block densities
    # within this factor of each other.
    "density_comparability_factor": 4.0,
    # Greedy factoring must keep at least (log2(1/delta))**-k of the mass.
    "mass_retention_log_exp": 6,
    # Constant-multiplicity pipeline: per-site polylog exponents.
    "pipeline_retention_log_exp": 8,
    "induced_density_log_exp": 8,
    "two_scale_log_exp": 6,
    # Dyadic "constant multiplicity" tolerance factor.
    "multiplicity_dyadic_factor": 2.0,
    # Small-ball mass must be constant within this factor after equalization.
    "ball_mass_factor": 4.0,
    # A lattice cell of a slab is dense when its shading density is at least
    # this fraction of the slab's.
    "dense_cell_fraction": 0.01,
    # Per-voxel greedy loops sample at most this many voxels (seeded).
    "voxel_sample_cap": 4096,
    # Plank reduction refuses shadings thinner than this density.
    "plank_lambda_min": 1e-3,
    # Random subsets drawn per sampled voxel in the angle-stability audit.
    "typical_angle_subset_trials": 20,
    # Amplification audit: kept count >= J*N/(c*log2(1/delta)) and spread
    # constant <= c * (log2(1/delta))**k.
    "amplify_count_log_factor": 8,
    "amplify_cf_factor": 8,
    "amplify_cf_log_exp": 4,
    "amplify_motion_cap": 512,
    # In-tube scatter audit factor A = c * log2(rho/delta).
    "scatter_log_factor": 8,
    # Multi-scale translation audit: spread error <= delta**(-k*eps) * polylog.
    "stickify_eps_exp": 6,
    "stickify_log_exp": 4,
    # Per-scale spread audits measure at most this many cover tubes (seeded).
    "stickify_host_sample": 16,
    # Containment-probability audit: P[motion lands in the dilated tube]
    # <= this constant times |tube|^2.
    "rigid_containment_constant": 1.0e8,
    # Submultiplicativity constant C(3).
    "submult_base_constant": 64.0,
    # Exponent ladder default ratio: eta_j = eps * ratio**(j - N).
    "eta_ladder_ratio": 4.0,
    # Case classifier default scale exponent.
    "eps_scale": 0.05,
    # Case classifier thresholds: thick cutoff delta**(1 - tau) and the
    # transverse/tangential split at delta**(-tau_prime) * a / b.
    "classify_tau": 0.1,
    "classify_tau_prime": 0.05,
    # Scale profiles measure per-parent clustering on at most this many
    # cover tubes per scale (seeded).
    "profile_host_sample": 6,
    # Every-scale outcomes of the dividing-scales scan allow a polylog
    # factor (log2(1/delta))**k on top of the delta power.
    "dividing_polylog_exp": 4,
    # Angular profiles sample at most this many support cells and this many
    # (cell, reference tube) pairs (seeded).
    "angular_cell_sample": 256,
    "angular_pair_cap": 2048,
    # Exponent fits require each family to satisfy its hypothesis bound
    # (worst density or clustering constant) <= delta**(-eta).
    "exponent_hypothesis_eta": 0.75,
    # Voxel grid budget (total cells).
    "grid_budget": 2**25,
    # Catalog scan caps.
    "oracle_candidate_cap": 2_000_000,
    "pair_candidate_cap": 200_000,
    # Search-mode pruning: dilate/center caps and the family size at which
    # the coarser center cap kicks in.
    "dilate_cap": 4096,
    "search_center_cap": 64,
    "search_center_cap_large": 32,
    "large_family_threshold": 8192,
    # Shared direction net size for density search.
    "direction_net_size": 98,
    # Bodies thinner than h/10 trigger an UnderResolved warning.
    "under_resolved_fraction": 0.1,
    # Slack multiplier applied to measured-vs-allowed checks in multi-scale
    # scans (number of dyadic log factors).
    "scan_slack_log_exp": 2,
}


def get(overrides: dict | None, key: str) -> float:
    """Look up a tunable, preferring ``overrides`` over the defaults."""
    if overrides and key in overrides:
        return overrides[key]
    return DEFAULTS[key]


def merged(overrides: dict | None) -> dict:
    """Full config dict with ``overrides`` applied."""
    out = dict(DEFAULTS)
    if overrides:
        unknown = set(overrides) - set(DEFAULTS)
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
        out.update(overrides)
    return out
