"""
Unfitted Multigrid Dashboard
A Streamlit front end for the solve, table and ghost-sweep experiments
"""
import streamlit as st
import pandas as pd
from typing import Dict, Optional
import sys
import os
import time
import traceback
from datetime import datetime
from dotenv import load_dotenv

# Load environment variables from .env file if it exists
load_dotenv(override=False)  # Don't override existing environment variables

# Add src to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from config import GHOST_SWEEP_VALUES, ConfigError, ExperimentConfig, parse_floats, parse_levels
from harness import TABLE_PRESETS, run_ghost_sweep, run_solve, run_table, verify
from multigrid import LevelSetupCache


# Page configuration
st.set_page_config(
    page_title="Unfitted Multigrid",
    page_icon="🧮",
    layout="wide"
)


# ============================================================================
# CONSTANTS
# ============================================================================
DEFAULT_LEVELS_TEXT = "2-4"  # Small default so a click finishes in seconds
MAX_LOG_ENTRIES = 200


# ============================================================================
# DEBUG LOG FUNCTIONS FOR DEVELOPER MODE
# ============================================================================

def init_debug_log():
    """
    Initialize debug log structure for Developer Mode
    """
    if 'debug_log' not in st.session_state:
        st.session_state['debug_log'] = {
            'enabled': False,
            'entries': [],
            'timings': {},
            'errors': []
        }


def log_debug(category: str, message: str, data: Optional[Dict] = None):
    """Add an entry to the debug log when Developer Mode is on"""
    debug_log = st.session_state.get('debug_log', {})
    if not debug_log.get('enabled', False):
        return
    debug_log['entries'].append({
        'timestamp': datetime.now().strftime('%H:%M:%S.%f')[:-3],
        'category': category,
        'message': message,
        'data': data or {},
    })
    del debug_log['entries'][:-MAX_LOG_ENTRIES]


def log_timing(step: str, duration: float):
    if st.session_state.get('debug_log', {}).get('enabled', False):
        st.session_state['debug_log']['timings'][step] = duration
        log_debug('timing', f'{step}: {duration:.3f}s')


def log_error(context: str, error: Exception):
    if st.session_state.get('debug_log', {}).get('enabled', False):
        st.session_state['debug_log']['errors'].append({
            'context': context,
            'error': str(error),
            'traceback': traceback.format_exc(),
        })
        log_debug('error', f'Error in {context}: {error}')


def clear_debug_log():
    """Clear all debug log entries"""
    if 'debug_log' in st.session_state:
        st.session_state['debug_log']['entries'] = []
        st.session_state['debug_log']['timings'] = {}
        st.session_state['debug_log']['errors'] = []


# ============================================================================
# SIDEBAR
# ============================================================================

def sidebar_config() -> Optional[ExperimentConfig]:
    """
    Build an ExperimentConfig from the sidebar widgets

    Returns:
        The config, or None (with an error shown) when the inputs are invalid
    """
    with st.sidebar:
        st.header("Configuration")

        st.subheader("1️⃣ Geometry & Discretization")
        geometry = st.selectbox("Geometry", ["circle", "square"],
                                help="Unfitted circle of radius 1 or the fitted square box")
        degree = st.selectbox("Degree p", [1, 2, 3])
        levels_text = st.text_input("Levels", value=DEFAULT_LEVELS_TEXT,
                                    help="Range like '2-4' or list like '2,3,4'; level l has 2^(l+1) cells per side")

        st.subheader("2️⃣ Smoother & Solver")
        smoother = st.selectbox("Smoother", ["mvs", "chebyshev"])
        n_c = st.slider("Cut-patch sweeps n_c", min_value=1, max_value=4, value=2)
        solver = st.selectbox("Solver", ["gmres", "vcycle"])
        tol = st.select_slider("Tolerance", options=[1e-6, 1e-8, 1e-9, 1e-10], value=1e-9)

        st.subheader("3️⃣ Penalties")
        use_default_gamma_d = st.checkbox("Default Nitsche penalty (5 p²)", value=True)
        gamma_d = None
        if not use_default_gamma_d:
            gamma_d = st.number_input("γ_D", min_value=0.1, value=20.0, step=1.0)
        gamma_k_text = st.text_input("γ_k list", value="0.08",
                                     help="Comma-separated; a short list repeats its last value")

        st.markdown("---")
        developer_mode = st.checkbox("🛠️ Developer Mode", value=False)
        st.session_state['debug_log']['enabled'] = developer_mode
        if developer_mode and st.button("Clear Debug Log"):
            clear_debug_log()
        if st.button("Clear Setup Cache", help=f"{LevelSetupCache.size()} cached level setups"):
            LevelSetupCache.clear()
            log_debug('cache', 'Setup cache cleared')

    try:
        config = ExperimentConfig(
            geometry=geometry, degree=degree, levels=parse_levels(levels_text), smoother=smoother,
            n_c=n_c, solver=solver, tol=tol, gamma_d=gamma_d, gamma_k=parse_floats(gamma_k_text),
        )
    except ConfigError as e:
        st.sidebar.error(f"❌ {e}")
        log_error('config', e)
        return None
    log_debug('config', 'Configuration built', config.to_dict())
    return config


# ============================================================================
# RESULT DISPLAY
# ============================================================================

def show_frame(key: str, title: str):
    """Render a stored result frame with a CSV download button"""
    frame = st.session_state.get(key)
    if frame is None:
        return
    st.subheader(title)
    st.dataframe(frame, use_container_width=True, hide_index=True)
    st.download_button(
        label="📥 Download CSV",
        data=frame.to_csv(index=False),
        file_name=f"{key}.csv",
        mime="text/csv",
        key=f"download_{key}",
    )


def run_and_store(key: str, label: str, fn):
    """Run one harness operation under a spinner and keep its frame in session state"""
    start = time.perf_counter()
    try:
        with st.spinner(f"Running {label}..."):
            st.session_state[key] = fn()
    except ValueError as e:
        st.error(f"❌ {label} failed: {e}")
        log_error(label, e)
        return
    log_timing(label, time.perf_counter() - start)


def render_debug_log():
    debug_log = st.session_state['debug_log']
    if not debug_log['enabled']:
        return
    st.markdown("---")
    st.header("🛠️ Debug Log")
    if debug_log['timings']:
        timing_df = pd.DataFrame([{'step': k, 'seconds': v} for k, v in debug_log['timings'].items()])
        st.dataframe(timing_df, use_container_width=True, hide_index=True)
    for error in debug_log['errors']:
        with st.expander(f"⚠️ {error['context']}", expanded=False):
            st.code(error['traceback'])
    if debug_log['entries']:
        with st.expander("View Detailed Log Entries", expanded=False):
            for entry in debug_log['entries']:
                st.json(entry)
    else:
        st.info("No log entries yet.")


def main():
    init_debug_log()
    st.title("🧮 Unfitted Multigrid")
    st.caption("Poisson with Nitsche boundary conditions and ghost penalties, "
               "solved by GMRES with a vertex-patch multigrid preconditioner")

    config = sidebar_config()
    if config is None:
        render_debug_log()
        return

    col_solve, col_table, col_sweep, col_verify = st.columns(4)
    with col_solve:
        if st.button("▶️ Solve", type="primary", use_container_width=True):
            run_and_store('solve', 'solve', lambda: run_solve(config, write=False))
    with col_table:
        preset = st.selectbox("Table preset", TABLE_PRESETS)
        if st.button("📋 Table", use_container_width=True):
            run_and_store('table', 'table', lambda: run_table(config, preset=preset, write=False))
    with col_sweep:
        if st.button("🎚️ Ghost Sweep", use_container_width=True):
            run_and_store('ghost_sweep', 'ghost sweep',
                          lambda: run_ghost_sweep(config, gammas=GHOST_SWEEP_VALUES, write=False))
    with col_verify:
        if st.button("✅ Verify", use_container_width=True):
            run_and_store('verify', 'verify', lambda: verify(config, write=False).to_frame())

    st.header("Results")
    if not any(k in st.session_state for k in ('solve', 'table', 'ghost_sweep', 'verify')):
        st.info("👆 Pick a configuration in the sidebar and run an experiment.")
    show_frame('solve', "Solve")
    show_frame('table', "Iteration Counts")
    show_frame('ghost_sweep', "Ghost Penalty Sweep (fractional iterations)")
    show_frame('verify', "Verification")

    render_debug_log()


if __name__ == "__main__":
    main()
