COMMAND_RESOLVENT = "resolvent"
COMMAND_GROUNDSTATE = "groundstate"
COMMAND_EVOLVE = "evolve"
COMMAND_MC_ORACLE = "mc-oracle"
COMMAND_VERIFY = "verify"

COMMANDS = [
    COMMAND_RESOLVENT,
    COMMAND_GROUNDSTATE,
    COMMAND_EVOLVE,
    COMMAND_MC_ORACLE,
    COMMAND_VERIFY,
]

EXIT_OK = 0
EXIT_VERDICT_FAILED = 1
EXIT_USAGE = 2

RUN_STATE_FAILED = -1
RUN_STATE_COMPLETE = 1
RUN_STATE_PROCESSING = 4

# fewest walks a Monte Carlo pass/fail check is drawn from
MIN_VERDICT_WALKS = 1000

# CSV fields are written with 17 significant digits
CSV_FLOAT_FORMAT = "%.17g"

# default tolerances an experiment config may override by name
DEFAULT_TOLERANCES = {
    "neumann_tol": 1e-8,
    "eigen_tol": 1e-10,
    "stationary_agreement": 1e-9,
    "comparison_slack": 1e-9,
    "envelope_factor": 1.01,
    "exponent_tol": 0.15,
    "stationary_exponent_tol": 0.2,
    "rate_rel_tol": 0.03,
    "amplitude_rel_tol": 0.05,
    "slope_tol": 0.05,
    "polynomial_slope_slack": 0.25,
    "mc_sigma": 3.0,
    "mc_cell_share": 0.99,
}
