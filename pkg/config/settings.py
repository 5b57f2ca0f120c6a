import os
from dotenv import load_dotenv
from typing import Dict, List

load_dotenv()


def _floats(raw: str) -> List[float]:
    return [float(x) for x in raw.split(',') if x.strip()]


# --- Paths ---
PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CYCLES_DIR = os.getenv("CYCLES_DIR", os.path.join(PROJECT_ROOT, "resources/cycles"))
DEFAULT_OUT_DIR = os.getenv("OUT_DIR", os.path.join(PROJECT_ROOT, "storage/results"))
CHECKPOINT_PATH = os.getenv("CHECKPOINT_PATH", os.path.join(PROJECT_ROOT, "storage/checkpoints/ddpg.npz"))

# --- Logging ---
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()

# --- ACC 参数 ---
ACC_TIME_GAP = float(os.getenv("ACC_TIME_GAP", "1.0"))
ACC_TAU = float(os.getenv("ACC_TAU", "0.1"))
ACC_DT = float(os.getenv("ACC_DT", "0.1"))
ACC_U_MAX = float(os.getenv("ACC_U_MAX", "2.0"))
ACC_U_MIN = float(os.getenv("ACC_U_MIN", "-3.0"))
ACC_E_NMAX = float(os.getenv("ACC_E_NMAX", "15.0"))
ACC_ALPHA = float(os.getenv("ACC_ALPHA", str(1 / 3)))
ACC_BETA = float(os.getenv("ACC_BETA", str(1 / 3)))
ACC_GAMMA = float(os.getenv("ACC_GAMMA", str(1 / 3)))
ACC_EPS = float(os.getenv("ACC_EPS", "1e-8"))
# 只影响绝对车距
ACC_STANDSTILL = float(os.getenv("ACC_STANDSTILL", "2.0"))
ACC_BODY_LENGTH = float(os.getenv("ACC_BODY_LENGTH", "4.5"))

# --- 代理高保真车辆模型 (SHFM) ---
SHFM_MASS = float(os.getenv("SHFM_MASS", "1530"))
SHFM_DRAG_AREA = float(os.getenv("SHFM_DRAG_AREA", "0.36"))
SHFM_C_RR = float(os.getenv("SHFM_C_RR", "0.008"))
SHFM_P_MAX = float(os.getenv("SHFM_P_MAX", "73000"))
SHFM_CONTROL_DELAY = float(os.getenv("SHFM_CONTROL_DELAY", "0.2"))
SHFM_PI_KP = float(os.getenv("SHFM_PI_KP", "2.0"))
SHFM_PI_KI = float(os.getenv("SHFM_PI_KI", "1.0"))
SHFM_INNER_DT = float(os.getenv("SHFM_INNER_DT", "0.01"))
SHFM_ACTUATOR_TAU = float(os.getenv("SHFM_ACTUATOR_TAU", "0.05"))

# --- 内点法求解器 ---
SOLVER_MU_INIT = float(os.getenv("SOLVER_MU_INIT", "1e-2"))
SOLVER_MU_WARM = float(os.getenv("SOLVER_MU_WARM", "1e-5"))
SOLVER_MU_FINAL = float(os.getenv("SOLVER_MU_FINAL", "1e-8"))
SOLVER_MU_FACTOR = float(os.getenv("SOLVER_MU_FACTOR", "0.2"))
SOLVER_MAX_OUTER = int(os.getenv("SOLVER_MAX_OUTER", "10"))
SOLVER_MAX_INNER = int(os.getenv("SOLVER_MAX_INNER", "50"))
SOLVER_MAX_INNER_QN = int(os.getenv("SOLVER_MAX_INNER_QN", "200"))
SOLVER_TOL = float(os.getenv("SOLVER_TOL", "1e-6"))
SOLVER_NEWTON_MAX_HORIZON = int(os.getenv("SOLVER_NEWTON_MAX_HORIZON", "256"))
MPC_WARM_START = os.getenv("MPC_WARM_START", "true").lower() == "true"

# --- DDPG ---
DDPG_GAMMA = float(os.getenv("DDPG_GAMMA", "0.99"))
DDPG_TAU_TARGET = float(os.getenv("DDPG_TAU_TARGET", "0.001"))
DDPG_LR_ACTOR = float(os.getenv("DDPG_LR_ACTOR", "1e-4"))
DDPG_LR_CRITIC = float(os.getenv("DDPG_LR_CRITIC", "1e-3"))
DDPG_BUFFER_SIZE = int(os.getenv("DDPG_BUFFER_SIZE", "500000"))
DDPG_BATCH = int(os.getenv("DDPG_BATCH", "64"))
DDPG_NOISE_MEAN = float(os.getenv("DDPG_NOISE_MEAN", "0.0"))
DDPG_NOISE_STD = float(os.getenv("DDPG_NOISE_STD", "0.02"))
DDPG_TOTAL_STEPS = int(os.getenv("DDPG_TOTAL_STEPS", "1000000"))
DDPG_SEEDS = [int(s) for s in os.getenv("DDPG_SEEDS", "0,1,2").split(',') if s.strip()]
DDPG_HIDDEN = int(os.getenv("DDPG_HIDDEN", "64"))

# --- 实验 ---
EPISODE_STEPS = int(os.getenv("EPISODE_STEPS", "200"))
MPC_HORIZON = int(os.getenv("MPC_HORIZON", "50"))
SWEEP_HORIZONS = [int(h) for h in os.getenv("SWEEP_HORIZONS", "25,27,28,30,50").split(',') if h.strip()]
DELAY_VALUES = _floats(os.getenv("DELAY_VALUES", "0.1,0.2,0.4"))
SHFM_SPEEDS = _floats(os.getenv("SHFM_SPEEDS", "0,5,10,15,20,25"))
SINGLE_IC = tuple(_floats(os.getenv("SINGLE_IC", "5,5,0")))

# EPA 公开工况（秒, mph）
CYCLE_URLS: Dict[str, str] = {
    name: url
    for name, url in (
        item.split('|', 1)
        for item in os.getenv(
            "CYCLE_URLS",
            "hwfet|https://www.epa.gov/sites/default/files/2015-10/hwycol.txt;"
            "ftp75|https://www.epa.gov/sites/default/files/2015-10/ftpcol.txt;"
            "us06|https://www.epa.gov/sites/default/files/2015-10/us06col.txt",
        ).split(';')
        if '|' in item
    )
}
