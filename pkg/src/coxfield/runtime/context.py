from __future__ import annotations

from dataclasses import replace
from coxfield.utils.logging_mixin import LoggingMixin


class Context(LoggingMixin):
    """Zentraler Laufzeitkontext der Keyword-Bibliothek.

    Haelt die geladene Lauf-Konfiguration, die Plots der Sitzung sowie die
    Ergebnisse von Anpassung, Envelopes und Randkorrektur. Keywords greifen
    ueber diesen Kontext aufeinander zu (``FitModel`` vor ``BuildEnvelopes``).
    """

    def __init__(self):
        """Initialisiert einen leeren Kontext (keine Konfiguration, keine Plots)."""
        self.reset()

    def reset(self):
        self._config = None
        self._plots = {}
        self._truths = {}
        self._chains = []
        self._envelopes = {}
        self._edge_fields = {}

    # === KONFIGURATION ===
    def set_config(self, config):
        """Setzt die Konfiguration; Plots und Ergebnisse werden verworfen."""
        self.reset()
        self._config = config
        self.log_info(f"Konfiguration '{config.source}' geladen (mode {config.mode}, seed {config.seed}).")

    def get_config(self):
        if self._config is None:
            raise RuntimeError("[Context] Keine Konfiguration geladen - zuerst 'LoadRunConfig' ausfuehren.")
        return self._config

    def update_config(self, **updates):
        """Ersetzt einzelne Felder der Konfiguration (z.B. ``seed``)."""
        self._config = replace(self.get_config(), **updates)

    # === PLOTS ===
    def add_plot(self, plot, truth=None):
        self._plots[plot.id] = plot
        if truth is not None:
            self._truths[plot.id] = truth
        self._chains = []
        self._envelopes = {}
        self.log_info(f"Plot '{plot.id}' mit {len(plot.parents)} Eltern hinzugefuegt.")

    def get_plots(self) -> list:
        if not self._plots:
            raise RuntimeError("[Context] Keine Plots geladen - 'LoadPlot' oder 'SimulatePlot' ausfuehren.")
        return list(self._plots.values())

    def get_plot(self, plot_id: str):
        if plot_id not in self._plots:
            raise KeyError(f"[Context] Plot '{plot_id}' nicht vorhanden (bekannt: {', '.join(self._plots)}).")
        return self._plots[plot_id]

    def get_truth(self, plot_id: str):
        return self._truths.get(plot_id)

    # === ERGEBNISSE ===
    def set_chains(self, chains):
        self._chains = list(chains)
        self._envelopes = {}

    def has_chains(self) -> bool:
        return bool(self._chains)

    def get_chains(self) -> list:
        if not self._chains:
            raise RuntimeError("[Context] Kein Modell angepasst - zuerst 'FitModel' ausfuehren.")
        return self._chains

    def set_envelopes(self, results: dict):
        self._envelopes.update(results)

    def get_envelope(self, plot_id: str, statistic: str):
        key = (plot_id, statistic.upper())
        if key not in self._envelopes:
            raise RuntimeError(f"[Context] Keine Envelope fuer {plot_id}/{statistic} - 'BuildEnvelopes' ausfuehren.")
        return self._envelopes[key]

    def get_envelopes(self) -> dict:
        return dict(self._envelopes)

    def set_edge_fields(self, plot_id: str, fields):
        self._edge_fields[plot_id] = fields

    def get_edge_fields(self, plot_id: str):
        if plot_id not in self._edge_fields:
            raise RuntimeError(f"[Context] Kein Randfeld fuer Plot '{plot_id}' - 'ComputeEdgeField' ausfuehren.")
        return self._edge_fields[plot_id]

    def get_all_edge_fields(self) -> dict:
        return dict(self._edge_fields)

    # === DIAGNOSE ===
    def describe(self):
        """Kurzuebersicht des aktuellen Kontextes fuer Diagnose und Logging."""
        return {
            "config": self._config.source if self._config else None,
            "plots": list(self._plots),
            "chains": len(self._chains),
            "envelopes": sorted(f"{p}/{s}" for p, s in self._envelopes),
            "edge_fields": list(self._edge_fields),
        }


context = Context()
