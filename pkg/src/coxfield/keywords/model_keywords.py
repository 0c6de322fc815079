from pathlib import Path

from robot.api.deco import keyword

from ..commands import fit_chains, load_plot, loaded_from_simulation
from ..config import PlotSpec
from ..experiment import simulate_plot
from ..mcmc import summarize
from ..runtime.context import context
from ..simulators import simulation_rng
from ..utils.logging_mixin import LoggingMixin
from ..utils.verify_helpers import should_ignore, to_float, verify_close


class ModelKeywords(LoggingMixin):
    @keyword("LoadPlot")
    def load_plot(self, plot_id: str, parents: str, children: str, extended_parents: str = None,
                  extended_window: str = None):
        """Laedt einen Plot (Eltern- und Kindmuster) in die Sitzung.

        Beispiel:
        | LoadPlot    A    data/parents_A.csv    data/children_A.csv

        ``extended_window`` wird als ``x_min,x_max,y_min,y_max`` angegeben und
        ist nur zusammen mit ``extended_parents`` sinnvoll.
        """
        cfg = context.get_config()
        entry = {"id": plot_id, "parents": parents, "children": children}
        if extended_parents:
            entry["extended_parents"] = extended_parents
        if extended_window:
            entry["extended_window"] = [float(v) for v in str(extended_window).split(",")]
        spec = PlotSpec.from_mapping(entry, base=Path("."))
        context.add_plot(load_plot(cfg, spec))

    @keyword("SimulatePlot")
    def simulate_plot(self, plot_id: str, process: str = "poisson", regime: str = "estimated",
                      target_count: str = None):
        """Simuliert einen Plot (Eltern nach ``process``, Kinder nach ``regime``) und legt ihn in der Sitzung ab.

        Der Seed ergibt sich aus dem Konfigurations-Seed und der Anzahl
        bereits vorhandener Plots; gleiche Abfolge ergibt gleiche Muster.
        """
        cfg = context.get_config()
        target = float(target_count) if target_count is not None else cfg.experiment.target_count
        index = len(context.describe()["plots"])
        sim = simulate_plot(cfg, process.lower(), regime.lower(), target, simulation_rng(cfg.seed, index))
        context.add_plot(loaded_from_simulation(cfg, plot_id, sim), truth=sim.truth)
        self.log_info(f"Plot '{plot_id}': {len(sim.children)} Kinder (Wahrheit {sim.truth.named_values()})")

    @keyword("FitModel")
    def fit_model(self):
        """Passt das Modell an alle Plots der Sitzung an (Ketten laut Konfiguration)."""
        chains = fit_chains(context.get_config(), context.get_plots())
        context.set_chains(chains)
        for k, chain in enumerate(chains, start=1):
            self.log_info(f"Kette {k}: {len(chain)} Stichproben, Akzeptanz {chain.acceptance_rate:.3f}")

    @keyword("VerifyAcceptanceRate")
    def verify_acceptance_rate(self, low, high):
        """Prueft, dass jede Kette eine Akzeptanzrate in ``[low, high]`` hat."""
        if should_ignore(low) and should_ignore(high):
            self.log_info("ignored ($IGNORE)")
            return
        lo = 0.0 if should_ignore(low) else to_float(low, "low")
        hi = 1.0 if should_ignore(high) else to_float(high, "high")
        for k, chain in enumerate(context.get_chains(), start=1):
            rate = chain.acceptance_rate
            if not lo <= rate <= hi:
                raise AssertionError(f"[VerifyAcceptanceRate] chain {k}: {rate:.4f} outside [{lo:g}, {hi:g}]")

    @keyword("VerifyPosteriorMean")
    def verify_posterior_mean(self, parameter: str, expected, tolerance="0.5"):
        """Prueft den Posterior-Mittelwert eines Parameters (ueber alle Ketten gepoolt).

        Beispiel:
        | VerifyPosteriorMean    beta1    -0.7    0.4

        ``expected`` = ``TRUTH`` vergleicht mit dem wahren Wert eines simulierten Plots.
        """
        if should_ignore(expected):
            self.log_info(f"'{parameter}' ignored ($IGNORE)")
            return
        table = summarize(context.get_chains())
        if parameter not in table.names:
            raise ValueError(f"Unknown parameter '{parameter}' (known: {', '.join(table.names)})")
        if str(expected).strip().upper() == "TRUTH":
            expected = self._truth_of(parameter)
        verify_close(table.value(parameter, "mean"), to_float(expected, "expected"),
                     to_float(tolerance, "tolerance"), f"[VerifyPosteriorMean] '{parameter}'")

    @staticmethod
    def _truth_of(parameter: str) -> float:
        for plot in context.get_plots():
            truth = context.get_truth(plot.id)
            if truth is None:
                continue
            values = truth.named_values()
            if parameter in values:
                return values[parameter]
            # simulierte Wahrheiten fuehren den einzigen Achsenabschnitt als beta0_1
            if parameter == f"beta0_{plot.id}" and "beta0_1" in values:
                return values["beta0_1"]
        raise ValueError(f"No simulated truth for parameter '{parameter}'")
