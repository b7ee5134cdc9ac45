# Wavelength grid parameters
GRID_START_NM = 250.0  # nm
GRID_STOP_NM = 2500.0  # nm
GRID_STEP_NM = 5.0  # nm (451 points over 250-2500 nm)

# Solar absorber target
SOLAR_BAND_NM = (250.0, 800.0)  # nm, target absorption 1 inside, 0 outside
SOLAR_IRRADIANCE = 1000  # W/m² (standard solar irradiance, black-body total)
SUN_TEMPERATURE_K = 5778.0  # K, black-body approximation of the solar spectrum
SUCCESS_BAND_ABSORPTION = 0.95  # band-average absorption that counts as "meets the target"

# Incidence
INCIDENCE_ANGLES_DEG = (0.0,)  # normal incidence
POLARIZATION = "Unpolarized"
INCIDENT_INDEX = 1.0  # vacuum / air

# Numerical tolerances
ABSORPTION_CLAMP_TOL = 1e-12  # tiny negative A from round-off is clamped to 0
TIE_TOL = 1e-12  # distance tolerance for nearest-material ties

# Genetic algorithm parameters
GA_POPULATION_SIZE = 100
GA_GENERATIONS = 500
GA_SELECTION_RATE = 0.3
GA_MUTATION_RATE = 0.1
GA_CROSSOVER_RATE = 0.5
GA_ELITISM_RATE = 0.1
GA_THICKNESS_BOUNDS_NM = (10.0, 200.0)  # nm
GA_CACHE_DECIMALS = 2  # chromosomes are cached on a 0.01 nm grid

# Environment space
GRID_CELLS = 100  # positions per axis, 0.01 steps over [0, 0.99]

# Variational autoencoder parameters
VAE_INPUT_POINTS = 121  # resampling points per material
VAE_LATENT_DIM = 20
VAE_HIDDEN_DIMS = (128, 64)
VAE_EPOCHS = 1000
VAE_LEARNING_RATE = 1e-3
VAE_KL_WEIGHT = 1e-3

# t-SNE parameters
TSNE_PERPLEXITY = 30.0
TSNE_ITERATIONS = 1000
TSNE_EARLY_EXAGGERATION = 12.0
TSNE_EXAGGERATION_ITERATIONS = 250
TSNE_LEARNING_RATE = 200.0
TSNE_INIT_STD = 1e-4

# A3C parameters
A3C_ACTOR_HIDDEN = (32, 16)
A3C_CRITIC_HIDDEN = (32, 16, 16)
A3C_LEARNING_RATE = 1e-4  # shared by actor and critic
A3C_ENTROPY_BETA = 0.01
A3C_GAMMA = 0.99
A3C_N_STEPS = 8
A3C_MAX_EPISODE_STEPS = 50
A3C_WORKERS = 4
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

# Reward values
STALL_THRESHOLD = 20  # steps without improvement before the -1 penalty
STALL_PENALTY = -1.0
NO_IMPROVE_PENALTY = -0.01
SUCCESS_REWARD = 1.0
OBSERVATION_SCALE = 1.0

# Search parameters
EPOCH_BUDGET = 1000  # completed worker episodes

# Run parameters
SEED = 0
LOG_LEVEL = "WARNING"
SHOW_PROGRESS = False
