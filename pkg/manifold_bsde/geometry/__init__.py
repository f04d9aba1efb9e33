"""Riemannian geometry on coordinate charts."""
from .charts import (
    CLOSED_FORM,
    FINITE_DIFFERENCE,
    ManifoldChart,
    check_metric,
    exp_interval_chart,
    expression_function,
    flat_chart,
    half_plane_chart,
    interval_chart,
    load_chart,
    product_chart,
    sphere_cap_chart,
    stereographic_to_sphere,
)
from .kernels import (
    christoffel,
    distance,
    distance_batch,
    geodesic_shoot,
    geodesic_speeds,
    log_map,
    manifold_hessian,
    manifold_hessian_batch,
    norm_equivalence_constant,
    parallel_transport,
    riemannian_norm,
    riemannian_norm_batch,
    sample_box,
)
