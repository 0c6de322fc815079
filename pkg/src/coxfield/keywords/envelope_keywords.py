from robot.api.deco import keyword

from ..commands import plot_envelopes
from ..mcmc import pool_chains
from ..runtime.context import context
from ..summaries import STATISTICS
from ..utils.logging_mixin import LoggingMixin
from ..utils.verify_helpers import should_ignore, verify_yes_no


class EnvelopeKeywords(LoggingMixin):
    @keyword("BuildEnvelopes")
    def build_envelopes(self, *statistics):
        """Berechnet Posterior-Predictive-Envelopes fuer alle Plots der Sitzung.

        Ohne Argumente werden die Statistiken der Konfiguration verwendet.

        Beispiel:
        | BuildEnvelopes    L    G

        Grundlage sind alle Ketten von ``FitModel``, zu einer Stichprobe zusammengefasst.
        """
        stats = tuple(s.upper() for s in statistics) or None
        unknown = [s for s in stats or () if s not in STATISTICS]
        if unknown:
            raise ValueError(f"Unknown statistic(s) {', '.join(unknown)} (known: {', '.join(STATISTICS)})")
        cfg = context.get_config()
        chains = context.get_chains()
        pooled = pool_chains(chains)
        if len(chains) > 1:
            self.log_info(f"Envelopes aus {len(chains)} zusammengefassten Ketten")
        for plot in context.get_plots():
            context.set_envelopes(plot_envelopes(cfg, pooled, plot, stats))

    @keyword("VerifyEnvelopePasses")
    def verify_envelope_passes(self, plot_id: str, statistic: str, expected: str):
        """Prueft das Ergebnis des globalen Envelope-Tests (``YES`` = Datenkurve liegt innerhalb).

        ``$IGNORE`` ueberspringt die Pruefung.
        """
        if should_ignore(expected):
            self.log_info(f"'{plot_id}/{statistic}' ignored ($IGNORE)")
            return
        result = context.get_envelope(plot_id, statistic)
        verify_yes_no(result.passed, expected, f"[VerifyEnvelopePasses] '{plot_id}/{statistic.upper()}' "
                                               f"(data rank {result.data_rank})")
