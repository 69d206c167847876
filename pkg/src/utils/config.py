# Environment rewards (grid and graph share the same scale)
REWARD_STEP = -1
REWARD_DROPOFF = 20
REWARD_ILLEGAL = -10
STEP_COST_SCALE = 1.0  # graph movement reward = -edge_length * scale

# Generated grids: one short vertical wall segment per 25 cells
WALL_CELLS_PER_SEGMENT = 25
WALL_SEGMENT_LENGTH = 2

# Random-walk sampling
TAXI_WALK_STEPS = 500_000        # taxi structure discovery walk
GRAPH_WALK_STEPS = 1_000_000  # road-graph walk

# Structure discovery (augmented Lagrangian)
L1_PENALTY = 0.05
EDGE_THRESHOLD = 0.3
H_TOLERANCE = 1e-8
MAX_OUTER_ITERATIONS = 100
RHO_INIT = 1.0
RHO_MAX = 1e16
RHO_GROWTH = 10.0
H_SHRINK_FACTOR = 0.25  # rho grows unless h shrinks by 4x

# Goal-indicator events are rare in a random walk, so their linear effects are
# small; the taxi preset lowers the penalty and the edge threshold
TAXI_DISCOVERY_L1 = 0.001
TAXI_DISCOVERY_THRESHOLD = 0.01

# Bayesian network
CPD_SMOOTHING = 1.0
MAX_CARDINALITY = 1024
CPD_SUM_TOLERANCE = 1e-12

# Learner hyperparameters
EPISODES = 1000
LEARNING_RATE = 0.1
DISCOUNT = 0.99
EPSILON_START = 1.0
EPSILON_MIN = 0.05
EPSILON_DECAY = 0.999
INFER_THRESHOLD = 0.5
GOAL_ADVANCE_MODE = "literal"
REWARD_ADJUSTMENT = "all"
DEFAULT_GOALS = ("pax_in_taxi_next", "dropoff_next")

# Graph experiment
GRAPH_EPISODES = 100_000
GRAPH_DISCOUNT = 1.0
GRAPH_NODES = 64
GRAPH_TRIPS = 100

# Scaling study
SCALING_SIZES = (8, 16, 32, 64)
SCALING_MAX_NODES = 4096
SCALING_TIME_BUDGET_S = 300.0  # per learner cell; bench-scaling --budget or budget= in a config file
SCALING_EPISODE_CHUNK = 50
SCALING_BN_WALK_STEPS = 200_000

# Logging
LOG_LEVEL = 'INFO'  # --log-level or log_level= in a config file
PROGRESS_LOG_INTERVAL = 5  # seconds between throttled progress lines
PROGRESS_EVERY_EPISODES = 100
