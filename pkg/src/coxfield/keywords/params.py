from dataclasses import replace
from pathlib import Path

from robot.api.deco import keyword

from ..config import load_run_config
from ..runtime.context import context
from ..utils.logging_mixin import LoggingMixin


class ParamsKeywords(LoggingMixin):
    @keyword("LoadRunConfig")
    def load_run_config(self, name: str):
        """Laedt eine Lauf-Konfiguration (Pfad, ``./configs/<name>.yaml`` oder mitgeliefertes Preset).

        Beispiel:
        | LoadRunConfig    smoke

        Plots und Ergebnisse einer frueheren Konfiguration werden verworfen.
        """
        context.set_config(load_run_config(name))

    @keyword("SetCoxfieldParameter")
    def set_coxfield_parameter(self, name: str, value):
        """Setzt einen Laufparameter der geladenen Konfiguration.

        Unterstuetzte Namen (Gross-/Kleinschreibung egal):
        - Seed, Out, NIter, BurnIn, Thin, NChains, NSims

        ``BurnIn`` darf ``NIter`` nicht uebersteigen; bei kuerzeren Laeufen
        zuerst ``NIter`` setzen.
        """
        key = str(name or "").strip().upper().replace("_", "")
        cfg = context.get_config()
        chain_keys = {"NITER": "n_iter", "BURNIN": "burn_in", "THIN": "thin", "NCHAINS": "n_chains"}
        if key == "SEED":
            context.update_config(seed=int(value))
        elif key == "OUT":
            context.update_config(output_dir=Path(str(value)))
        elif key in chain_keys:
            context.update_config(chain=replace(cfg.chain, **{chain_keys[key]: int(value)}))
        elif key == "NSIMS":
            context.update_config(envelope=replace(cfg.envelope, n_sims=int(value)))
        else:
            raise ValueError(f"Unsupported coxfield parameter: {name}")
        self.log_info(f"{name} = {value}")
