"""
Configuración global del verificador de cotas gaussianas y convergencia renormalizada
"""
from pathlib import Path

# ==================== RUTAS DEL PROYECTO ====================
BASE_DIR = Path(__file__).resolve().parent.parent
DATA_DIR = BASE_DIR / "data"
CONFIG_DIR = DATA_DIR / "configs"
GRAPHS_DIR = DATA_DIR / "graphs"
OUTPUT_DIR = BASE_DIR / "resultados"
LOGS_DIR = BASE_DIR / "logs"

# ==================== ARCHIVOS POR DEFECTO ====================
BOUND_SWEEP_CONFIG = CONFIG_DIR / "bound_sweep.ini"
CONVERGE_CONFIG = CONFIG_DIR / "converge_abs.ini"
SANDWICH_CONFIG = CONFIG_DIR / "sandwich.ini"
REDUCE_DEMO_CONFIG = CONFIG_DIR / "reduce_demo.ini"
LOG_FILE = LOGS_DIR / "toolkit.log"

# ==================== CUADRATURA ====================
QUADRATURE_PARAMS = {
    # puntos por eje de la regla del punto medio, según la dimensión
    'midpoint_resolution': {1: 2 ** 10, 2: 2 ** 7, 3: 2 ** 5},
    'normalization_tol': 1e-6,
    'gauss_hermite_nodes': 512,
    # submuestreo por eje para promediar celdas singulares en d >= 2
    'cell_subsamples': 4,
}

# ==================== ÁLGEBRA GAUSSIANA ====================
GAUSSIAN_PARAMS = {
    'leg_cap': 16,
    # lado derecho de la cota: K*(m+1) patas
    'rhs_leg_cap': 24,
    'point_cap': 8,
    'theta_degree_cap': 64,
    # normalización de tasas gaussianas en ThetaExpr
    'rate_decimals': 12,
}

# ==================== MODELOS DE COVARIANZA ====================
COVARIANCE_PARAMS = {
    'psd_tol': 1e-9,
    'probe_count': 64,
    'probe_max': 10.0,
    'probe_min_positive': 1e-3,
    'limit_l1_tol': 0.05,
    # paso de la tabla de autocorrelación del mollificador (unidades de referencia)
    'reference_step': 1.0 / 128,
}

# ==================== BARRIDO DE COTAS ====================
BOUND_PARAMS = {
    'families': ['coincident', 'two_clusters', 'singleton_pair', 'random_ball'],
    'separations': [10.0, 100.0, 1000.0],
    'ball_radius': 1000.0,
    'near_window': 5.0,
    'far_window': 20.0,
    'uniformity_tol': 1e-6,
    'zero_tol': 1e-12,
    'theta_step': 0.05,
    'theta_max': 50.0,
}

# ==================== CERTIFICADOS DE REESCRITURA ====================
CERTIFICATE_PARAMS = {
    'relative_tol': 1e-12,
    'max_extra_degree': 3,
}

# ==================== SIMULACIÓN DE CAMPOS ====================
FIELD_PARAMS = {
    'max_doublings': 3,
    'dense_fallback_sites': 4096,
    'embedding_tol': 1e-9,
    'csv_max_sites': 100_000,
    'binary_magic': b'LFLD',
}

# ==================== CONVERGENCIA RENORMALIZADA ====================
CONVERGENCE_PARAMS = {
    'alpha': 0.4,
    'm': 2,
    'n': 1,
    'kappa': 0.1,
    'eps_list': [2.0 ** -k for k in range(3, 8)],
    'lambda_list': [0.5, 0.25, 0.125],
    'samples': 400,
    'grid_exponent': 11,
    'bootstrap_resamples': 200,
    'confidence_z': 1.959963984540054,
    'probe_limit': 50.0,
    'growth_probes': 2001,
    'domain_margin': 1.25,
    'max_sites': 2 ** 22,
    'min_samples': 10,
    'operator_point_cap': 256,
}

# ==================== CÓDIGOS DE SALIDA ====================
EXIT_CODES = {
    'ok': 0,
    'config_error': 1,
    'check_failed': 2,
}

# ==================== MENSAJES DEL SISTEMA ====================
MESSAGES = {
    'ok': "✅ VERIFICACIÓN SUPERADA",
    'config_error': "❌ ERROR DE CONFIGURACIÓN",
    'check_failed': "⚠️ VERIFICACIÓN FALLIDA - la comprobación numérica no se cumple",
}

# ==================== CONFIGURACIÓN DE LOGGING ====================
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_LEVEL = 'INFO'
