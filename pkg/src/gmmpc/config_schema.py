from gmmpc.config import SchemaDict

SCHEMA: list[SchemaDict] = [
    {
        "key": "graph",
        "title": "Graph file",
        "help": "Path to a JSON graph file, or the name of a builtin graph.",
        "type": "string",
        "default": "",
    },
    {
        "key": "data",
        "title": "Data file",
        "help": "Path to a numeric CSV with a column per graph node.",
        "type": "string",
        "default": "",
    },
    {
        "key": "output_dir",
        "title": "Output directory",
        "help": "Where checkpoints and reports are written.",
        "type": "string",
        "default": "runs",
    },
    {
        "key": "seed",
        "title": "Random seed",
        "help": "Seeds folds, mini-batches and sampling.",
        "type": "integer",
        "default": 0,
    },
    {
        "key": "model",
        "title": "Model settings",
        "type": "object",
        "fields": [
            {
                "key": "kind",
                "title": "Model family",
                "help": "Linear Gaussian, ordinary GMM, or GMM with a branch per maximal parental clique.",
                "type": "choices",
                "default": "gmm-mpc",
                "choices": ["lg", "gmm", "gmm-mpc"],
            },
            {
                "key": "link",
                "title": "Mean link",
                "help": "How a branch mean depends on its inputs.",
                "type": "choices",
                "default": "linear",
                "choices": ["linear", "sigmoid"],
            },
            {
                "key": "gmm_branches",
                "title": "Ordinary GMM branches",
                "help": "Branches per node for the ordinary GMM family.",
                "type": "integer",
                "default": 3,
            },
            {
                "key": "gmm_bias_spread",
                "title": "Ordinary GMM bias spread",
                "help": "Initial biases of ordinary GMM branches are spread over [-spread, spread].",
                "type": "number",
                "default": 1.0,
            },
            {
                "key": "mpc_backend",
                "title": "MPC backend",
                "type": "choices",
                "default": "fast",
                "choices": ["paper", "fast", "brute"],
            },
        ],
    },
    {
        "key": "train",
        "title": "Training settings",
        "type": "object",
        "fields": [
            {
                "key": "outer_iterations",
                "title": "Outer iterations",
                "help": "Coefficient updates (outer epochs).",
                "type": "integer",
                "default": 4,
            },
            {
                "key": "inner_iterations",
                "title": "Inner iterations",
                "help": "Passes of mini-batch gradient descent per outer epoch.",
                "type": "integer",
                "default": 20,
            },
            {
                "key": "batch_size",
                "title": "Mini-batch size",
                "type": "integer",
                "default": 3000,
            },
            {
                "key": "learning_rate",
                "title": "Learning rate",
                "type": "number",
                "default": 0.005,
            },
            {
                "key": "epsilon",
                "title": "Epsilon",
                "help": "Constant added inside the mixture logarithm while training.",
                "type": "number",
                "default": 1e-8,
            },
            {
                "key": "adam_beta1",
                "title": "Adam beta 1",
                "type": "number",
                "default": 0.9,
            },
            {
                "key": "adam_beta2",
                "title": "Adam beta 2",
                "type": "number",
                "default": 0.999,
            },
            {
                "key": "adam_eps",
                "title": "Adam epsilon",
                "type": "number",
                "default": 1e-8,
            },
            {
                "key": "optimizer",
                "title": "Optimizer",
                "help": "Mini-batch Adam, or closed-form updates (linear link only).",
                "type": "choices",
                "default": "adam",
                "choices": ["adam", "full-em"],
            },
            {
                "key": "early_stopping",
                "title": "Early stopping?",
                "help": "Stop when the held-out likelihood stops improving, and keep the best epoch.",
                "type": "boolean",
                "default": True,
            },
            {
                "key": "patience",
                "title": "Early stopping patience",
                "help": "Outer epochs without improvement before stopping.",
                "type": "integer",
                "default": 3,
            },
        ],
    },
    {
        "key": "eval",
        "title": "Evaluation settings",
        "type": "object",
        "fields": [
            {
                "key": "folds",
                "title": "Folds",
                "help": "Number of cross validation folds.",
                "type": "integer",
                "default": 5,
            },
            {
                "key": "epsilon",
                "title": "Evaluation epsilon",
                "help": "Constant added inside the mixture logarithm when evaluating.",
                "type": "number",
                "default": 0.0,
            },
            {
                "key": "jobs",
                "title": "Concurrent folds",
                "type": "integer",
                "default": 1,
            },
        ],
    },
]
