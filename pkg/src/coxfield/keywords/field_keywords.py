import numpy as np
from robot.api.deco import keyword

from ..commands import edge_fields, initial_params
from ..influence import kernel_value
from ..kernels.influence_kernel import kernel_class
from ..runtime.context import context
from ..utils.logging_mixin import LoggingMixin
from ..utils.verify_helpers import should_ignore, to_float, verify_close, verify_yes_no


def peaks_at_corners(matrix: np.ndarray, rtol: float = 1e-9) -> bool:
    """True, wenn das Maximum der Matrix in einer Ecke liegt und die Mitte unter jeder Ecke bleibt."""
    m = np.asarray(matrix, dtype=float)
    corners = np.array([m[0, 0], m[0, -1], m[-1, 0], m[-1, -1]])
    centre = m[m.shape[0] // 2, m.shape[1] // 2]
    return bool(corners.max() >= m.max() * (1.0 - rtol) and np.all(corners > centre))


class FieldKeywords(LoggingMixin):
    @keyword("ComputeEdgeField")
    def compute_edge_field(self, plot_id: str):
        """Berechnet beobachtetes, aeusseres (erwartetes) und korrigiertes Einflussfeld eines Plots.

        Die Intensitaetsfelder verwenden die Startwerte der Konfiguration (``init``).
        """
        cfg = context.get_config()
        plots = context.get_plots()
        plot = context.get_plot(plot_id)
        params = initial_params(cfg, plots)
        k = [p.id for p in plots].index(plot_id)
        fields = edge_fields(cfg, plot, params, k)
        context.set_edge_fields(plot_id, fields)
        self.log_info(f"Plot '{plot_id}': Aussenfeld max {fields.exterior.values.max():.4f}, "
                      f"korrigiert max {fields.corrected.values.max():.4f}")

    @keyword("VerifyExteriorFieldMaximalAtCorners")
    def verify_exterior_field_maximal_at_corners(self, plot_id: str, expected: str = "YES"):
        """Prueft, dass das erwartete Aussenfeld in den Ecken des Fensters am groessten ist."""
        if should_ignore(expected):
            self.log_info(f"'{plot_id}' ignored ($IGNORE)")
            return
        fields = context.get_edge_fields(plot_id)
        verify_yes_no(peaks_at_corners(fields.exterior.matrix), expected,
                      f"[VerifyExteriorFieldMaximalAtCorners] '{plot_id}'")

    @keyword("VerifyKernelValue")
    def verify_kernel_value(self, variant: str, h, expected, mark=None, tolerance="0.001", **params):
        """Prueft einen Kernwert an der Distanz ``h`` (Parameter als ``name=wert``).

        Beispiel:
        | VerifyKernelValue    gaussian     2.1    0.368    tolerance=0.001    theta=2.1
        | VerifyKernelValue    mark_full    0      4.0      mark=4    theta=2    delta=0.5    alpha=1
        """
        if should_ignore(expected):
            self.log_info(f"'{variant}' ignored ($IGNORE)")
            return
        kernel = kernel_class(variant)(**{k: to_float(v, k) for k, v in params.items()})
        m = None if mark in (None, "") else to_float(mark, "mark")
        actual = kernel_value(kernel, to_float(h, "h"), m)
        verify_close(actual, to_float(expected, "expected"), to_float(tolerance, "tolerance"),
                     f"[VerifyKernelValue] {kernel!r} at h={h}")
