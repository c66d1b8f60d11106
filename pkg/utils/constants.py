# utils/constants.py

ALGORITHMS = ('sac', 'ppo')
ENV_IDS = ('pendulum', 'pointmass', 'chain3')
ENERGY_MODES = ('abs_torque', 'mech_power')
COMBINERS = ('pegrad', 'pcgrad_plus', 'scalarized')
ACTIVATIONS = ('relu', 'tanh')

# λ grid used by the sweep when none is given on the command line
DEFAULT_LAMBDAS = (0.001, 0.01, 0.1, 0.5)
DEFAULT_EVAL_EPISODES = 50

METRICS_COLUMNS = (
    'global_step',
    'episode_return_task',
    'episode_energy_sum',
    'critic_loss_task',
    'critic_loss_energy',
    'actor_loss_task',
    'actor_loss_energy',
    'beta_scale',
    'cos_g',
    'norm_gR',
    'norm_gE',
    'norm_gE_perp',
    'projected',
    'eval_return_mean',
    'eval_energy_mean',
)
EVAL_COLUMNS = ('eval_return_mean', 'eval_energy_mean')

# exit codes of the command-line interface
EXIT_OK = 0
EXIT_RUN_FAILURE = 1
EXIT_CONFIG_ERROR = 2

FAILURE_MARKER = 'FAILED'
INDEX_FILE = 'index.json'
